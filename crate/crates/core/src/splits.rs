//! Train / validation / test splits: balanced (B), imbalanced (IB) and
//! patched (P), plus Monte-Carlo resampling.
//!
//! Validation pixels are drawn from the training pool and then removed from
//! it, so the three roles are always disjoint.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsio::{LabelMap, Role, SplitRecord};
use crate::seed;

/// A labeled pixel coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: u32,
    pub col: u32,
    pub label: u16,
}

impl Pixel {
    fn coord(&self) -> (u32, u32) {
        (self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    B,
    IB,
    P,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::B => "B",
            ScenarioKind::IB => "IB",
            ScenarioKind::P => "P",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" | "b" => Ok(ScenarioKind::B),
            "IB" | "ib" => Ok(ScenarioKind::IB),
            "P" | "p" => Ok(ScenarioKind::P),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Split scenario together with its size parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    Balanced {
        train_total: usize,
        val_total: usize,
    },
    Imbalanced {
        train_total: usize,
        val_total: usize,
    },
    Patched {
        patch_rows: usize,
        patch_cols: usize,
        train_fraction: f64,
        val_fraction: f64,
    },
}

impl Scenario {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Scenario::Balanced { .. } => ScenarioKind::B,
            Scenario::Imbalanced { .. } => ScenarioKind::IB,
            Scenario::Patched { .. } => ScenarioKind::P,
        }
    }

    pub fn split(&self, labels: &LabelMap, seed: u64) -> Result<SplitSet> {
        match *self {
            Scenario::Balanced {
                train_total,
                val_total,
            } => split_balanced(labels, train_total, val_total, seed),
            Scenario::Imbalanced {
                train_total,
                val_total,
            } => split_imbalanced(labels, train_total, val_total, seed),
            Scenario::Patched {
                patch_rows,
                patch_cols,
                train_fraction,
                val_fraction,
            } => split_patched(labels, patch_rows, patch_cols, train_fraction, val_fraction, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub fold: usize,
    pub train: Vec<Pixel>,
    pub val: Vec<Pixel>,
    pub test: Vec<Pixel>,
    /// Non-fatal conditions found while splitting (empty test set, classes
    /// missing from training tiles, ...).
    pub warnings: Vec<String>,
}

impl SplitSet {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn records(&self) -> Vec<SplitRecord> {
        let tag = |role: Role| {
            move |p: &Pixel| SplitRecord {
                row: p.row,
                col: p.col,
                label: p.label,
                role,
            }
        };
        self.train
            .iter()
            .map(tag(Role::Train))
            .chain(self.val.iter().map(tag(Role::Val)))
            .chain(self.test.iter().map(tag(Role::Test)))
            .collect()
    }

    pub fn from_records(records: &[SplitRecord], scenario: ScenarioKind, seed: u64, fold: usize) -> Self {
        let mut set = SplitSet {
            scenario,
            seed,
            fold,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            warnings: Vec::new(),
        };
        for r in records {
            let p = Pixel {
                row: r.row,
                col: r.col,
                label: r.label,
            };
            match r.role {
                Role::Train => set.train.push(p),
                Role::Val => set.val.push(p),
                Role::Test => set.test.push(p),
            }
        }
        set
    }

    /// Checks the split invariants against `labels`: roles pairwise disjoint
    /// and every listed pixel carrying its (nonzero) label.
    pub fn validate(&self, labels: &LabelMap) -> Result<()> {
        let mut seen = HashSet::new();
        for p in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(p.coord()) {
                return Err(Error::Data(format!(
                    "pixel ({}, {}) appears in more than one role",
                    p.row, p.col
                )));
            }
            let (r, c) = (p.row as usize, p.col as usize);
            if r >= labels.height() || c >= labels.width() {
                return Err(Error::Data(format!("pixel ({r}, {c}) is outside the label map")));
            }
            let actual = labels.get(r, c);
            if actual == 0 || actual != p.label {
                return Err(Error::Data(format!(
                    "pixel ({r}, {c}) listed as class {} but map has {actual}",
                    p.label
                )));
            }
        }
        Ok(())
    }
}

fn pixels_by_class(labels: &LabelMap) -> Vec<Vec<Pixel>> {
    let mut by_class = vec![Vec::new(); labels.num_classes()];
    for (row, col, label) in labels.labeled_pixels() {
        by_class[usize::from(label) - 1].push(Pixel { row, col, label });
    }
    by_class
}

/// Splits `total` into per-class quotas: `total / C` each, with the
/// remainder going one apiece to the most numerous classes (lower class id
/// first on equal counts).
pub fn class_quotas(total: usize, counts: &[usize]) -> Vec<usize> {
    let c = counts.len();
    if c == 0 {
        return Vec::new();
    }
    let mut quotas = vec![total / c; c];
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    for &k in order.iter().take(total % c) {
        quotas[k] += 1;
    }
    quotas
}

fn empty_set(scenario: ScenarioKind, seed: u64) -> SplitSet {
    SplitSet {
        scenario,
        seed,
        fold: 0,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    }
}

/// Balanced random split: every class contributes the same number of
/// training and validation pixels (up to the remainder rule of
/// [`class_quotas`]); the rest of the labeled pixels form the test set.
///
/// Each class draws a pool of `train_c + val_c` pixels uniformly; the
/// validation pixels are a uniform subset of that pool.
pub fn split_balanced(labels: &LabelMap, train_total: usize, val_total: usize, seed: u64) -> Result<SplitSet> {
    let mut by_class = pixels_by_class(labels);
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    if counts.is_empty() {
        return Err(Error::Degenerate("label map has no labeled pixels".into()));
    }
    let train_q = class_quotas(train_total, &counts);
    let val_q = class_quotas(val_total, &counts);
    let mut rng = seed::rng(seed);
    let mut set = empty_set(ScenarioKind::B, seed);
    for (k, pixels) in by_class.iter_mut().enumerate() {
        let need = train_q[k] + val_q[k];
        if pixels.len() < need {
            return Err(Error::InsufficientClass {
                class: (k + 1) as u16,
                available: pixels.len(),
                needed: need,
            });
        }
        pixels.shuffle(&mut rng);
        set.val.extend_from_slice(&pixels[..val_q[k]]);
        set.train.extend_from_slice(&pixels[val_q[k]..need]);
        set.test.extend_from_slice(&pixels[need..]);
    }
    set.test.sort();
    if set.test.is_empty() {
        set.warn("balanced split left the test set empty".into());
    }
    Ok(set)
}

/// Imbalanced random split: the training pool is drawn uniformly from all
/// labeled pixels, so class proportions follow the scene.
pub fn split_imbalanced(labels: &LabelMap, train_total: usize, val_total: usize, seed: u64) -> Result<SplitSet> {
    let mut pixels: Vec<Pixel> = labels
        .labeled_pixels()
        .into_iter()
        .map(|(row, col, label)| Pixel { row, col, label })
        .collect();
    let need = train_total + val_total;
    if need > pixels.len() {
        return Err(Error::Config(format!(
            "requested {need} training+validation pixels but only {} are labeled",
            pixels.len()
        )));
    }
    let mut rng = seed::rng(seed);
    pixels.shuffle(&mut rng);
    let mut set = empty_set(ScenarioKind::IB, seed);
    set.val = pixels[..val_total].to_vec();
    set.train = pixels[val_total..need].to_vec();
    set.test = pixels[need..].to_vec();
    set.test.sort();
    if set.test.is_empty() {
        set.warn("imbalanced split used every labeled pixel; test set is empty".into());
    }
    Ok(set)
}

/// Index of the tile holding `(row, col)` when the image is cut into a
/// `patch_rows x patch_cols` grid of near-equal rectangles.
pub fn tile_of(row: usize, col: usize, height: usize, width: usize, patch_rows: usize, patch_cols: usize) -> usize {
    let tr = row * patch_rows / height;
    let tc = col * patch_cols / width;
    tr * patch_cols + tc
}

/// Patched split: the image is tiled into a `patch_rows x patch_cols` grid
/// and whole tiles go to training or test, so no tile mixes the two roles.
///
/// `round(train_fraction * tiles)` tiles (at least one) are chosen for
/// training; `round(val_fraction * pool)` validation pixels are then drawn
/// from the training-tile pixels.
pub fn split_patched(
    labels: &LabelMap,
    patch_rows: usize,
    patch_cols: usize,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitSet> {
    if patch_rows == 0 || patch_cols == 0 {
        return Err(Error::Config("patch grid dimensions must be >= 1".into()));
    }
    for (name, f) in [("train_fraction", train_fraction), ("val_fraction", val_fraction)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")));
        }
    }
    let tiles = patch_rows * patch_cols;
    let n_train = ((train_fraction * tiles as f64).round() as usize).clamp(1, tiles);
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..tiles).collect();
    order.shuffle(&mut rng);
    let mut is_train = vec![false; tiles];
    for &t in &order[..n_train] {
        is_train[t] = true;
    }

    let (h, w) = (labels.height(), labels.width());
    let mut set = empty_set(ScenarioKind::P, seed);
    let mut pool = Vec::new();
    for (row, col, label) in labels.labeled_pixels() {
        let p = Pixel { row, col, label };
        if is_train[tile_of(row as usize, col as usize, h, w, patch_rows, patch_cols)] {
            pool.push(p);
        } else {
            set.test.push(p);
        }
    }
    pool.shuffle(&mut rng);
    let n_val = ((val_fraction * pool.len() as f64).round() as usize).min(pool.len());
    set.val = pool[..n_val].to_vec();
    set.train = pool[n_val..].to_vec();
    set.train.sort();
    set.val.sort();

    if n_train == tiles {
        set.warn(format!("all {tiles} tiles assigned to training; test set is empty"));
    }
    let mut present = vec![false; labels.num_classes()];
    for p in &set.train {
        present[usize::from(p.label) - 1] = true;
    }
    for (k, _) in present.iter().enumerate().filter(|(_, &p)| !p) {
        set.warn(format!("class {} has no pixels in the training tiles", k + 1));
    }
    Ok(set)
}

/// `runs` independent splits with seeds `base_seed + i` and fold index `i`.
pub fn monte_carlo(labels: &LabelMap, scenario: &Scenario, runs: usize, base_seed: u64) -> Result<Vec<SplitSet>> {
    if runs == 0 {
        return Err(Error::Config("Monte-Carlo runs must be >= 1".into()));
    }
    (0..runs)
        .map(|i| {
            let mut set = scenario.split(labels, base_seed.wrapping_add(i as u64))?;
            set.fold = i;
            Ok(set)
        })
        .collect()
}
