//! Test-time augmentation: each incoming spectrum is classified together
//! with `A` synthetic variants, and the ensemble decides by majority vote.
//!
//! When two or more classes share the top vote count the tie is resolved by
//! soft voting: the probability vectors of all `A + 1` members are averaged
//! and the class with the highest mean probability wins, even one that got
//! fewer votes (lowest class id on an exact tie).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::Augment;
use crate::error::{Error, Result};
use crate::hsio::Spectrum;
use crate::seed;

/// A probabilistic classifier over classes `1..=classes()`.
pub trait Classifier: Sync {
    fn classes(&self) -> usize;

    /// One probability vector per input, in input order.
    fn predict_proba_batch(&self, xs: &[Spectrum]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtaConfig {
    /// Synthetic samples per incoming spectrum; 0 means plain inference.
    pub augmentations: usize,
    /// Base seed; each test spectrum gets its own counter-derived stream.
    pub seed: u64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            augmentations: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtaResult {
    pub label: u16,
    /// `votes[k]` counts members voting for class `k + 1`.
    pub votes: Vec<usize>,
    pub mean_proba: Vec<f64>,
    pub soft_vote_used: bool,
    /// Hard label of every member; the original spectrum comes first.
    pub member_labels: Vec<u16>,
}

fn argmax_among(values: &[f64], candidates: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for k in candidates {
        if best.map_or(true, |b| values[k] > values[b]) {
            best = Some(k);
        }
    }
    best.expect("at least one candidate")
}

/// Combines member probability vectors by majority vote with soft-vote
/// fallback on a tie for first place.
pub fn vote(member_probas: &[Vec<f64>]) -> Result<TtaResult> {
    let classes = member_probas
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Degenerate("cannot vote over zero members".into()))?;
    if classes == 0 {
        return Err(Error::Degenerate("probability vectors are empty".into()));
    }
    let mut votes = vec![0usize; classes];
    let mut mean_proba = vec![0.0; classes];
    let mut member_labels = Vec::with_capacity(member_probas.len());
    for p in member_probas {
        if p.len() != classes {
            return Err(Error::dim(classes, p.len()));
        }
        let k = argmax_among(p, 0..classes);
        votes[k] += 1;
        member_labels.push(k as u16 + 1);
        for (m, &v) in mean_proba.iter_mut().zip(p) {
            *m += v;
        }
    }
    let members = member_probas.len() as f64;
    mean_proba.iter_mut().for_each(|m| *m /= members);

    let top = *votes.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..classes).filter(|&k| votes[k] == top).collect();
    // Soft vote looks at every class, not only the tied ones.
    let (winner, soft_vote_used) = if tied.len() == 1 {
        (tied[0], false)
    } else {
        (argmax_among(&mean_proba, 0..classes), true)
    };
    Ok(TtaResult {
        label: winner as u16 + 1,
        votes,
        mean_proba,
        soft_vote_used,
        member_labels,
    })
}

/// Classifies `x` with an ensemble of itself and `A` synthetic variants.
///
/// The true label of `x` is never shown to the augmenter: variants are
/// synthesized from a copy of `x` labeled with the plain prediction, so
/// class-conditional augmenters (noise injection) stay usable at test time.
pub fn tta_classify(
    model: &dyn Classifier,
    augmenter: &dyn Augment,
    x: &Spectrum,
    config: &TtaConfig,
    rng: &mut dyn rand::RngCore,
) -> Result<TtaResult> {
    let mut probas = model.predict_proba_batch(std::slice::from_ref(x))?;
    if config.augmentations > 0 {
        let plain = argmax_among(&probas[0], 0..probas[0].len()) as u16 + 1;
        let mut guide = x.clone();
        guide.label = Some(plain);
        let variants = (0..config.augmentations)
            .map(|_| augmenter.synthesize(&guide, rng))
            .collect::<Result<Vec<_>>>()?;
        probas.extend(model.predict_proba_batch(&variants)?);
    }
    vote(&probas)
}

/// Seed of the TTA stream for one test spectrum: keyed by its coordinate
/// when known, so results do not depend on where it sits in the test list.
pub fn sample_seed(config: &TtaConfig, x: &Spectrum, index: usize) -> u64 {
    match x.coord {
        Some((r, c)) => seed::derive(config.seed, &[seed::stage::TTA, u64::from(r), u64::from(c)]),
        None => seed::derive(config.seed, &[seed::stage::TTA, u64::MAX, index as u64]),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TtaSetResult {
    pub results: Vec<TtaResult>,
    /// Sum of per-sample wall times.
    pub total_seconds: f64,
    /// Mean per-sample wall time in milliseconds (0 for an empty set).
    pub per_sample_ms: f64,
}

/// Runs [`tta_classify`] over a test set. Samples may be processed in
/// parallel; each is timed individually.
pub fn tta_classify_set(
    model: &dyn Classifier,
    augmenter: &dyn Augment,
    test: &[Spectrum],
    config: &TtaConfig,
) -> Result<TtaSetResult> {
    let timed: Vec<(TtaResult, f64)> = test
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = seed::rng(sample_seed(config, x, i));
            let started = Instant::now();
            let r = tta_classify(model, augmenter, x, config, &mut rng)?;
            Ok((r, started.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let total_seconds: f64 = timed.iter().map(|(_, t)| t).sum();
    let per_sample_ms = if test.is_empty() {
        0.0
    } else {
        total_seconds * 1e3 / test.len() as f64
    };
    Ok(TtaSetResult {
        results: timed.into_iter().map(|(r, _)| r).collect(),
        total_seconds,
        per_sample_ms,
    })
}

/// Plain (non-augmented) inference over a set, timed per sample.
pub fn classify_set(model: &dyn Classifier, test: &[Spectrum]) -> Result<TtaSetResult> {
    let timed: Vec<(TtaResult, f64)> = test
        .par_iter()
        .map(|x| {
            let started = Instant::now();
            let probas = model.predict_proba_batch(std::slice::from_ref(x))?;
            let r = vote(&probas)?;
            Ok((r, started.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let total_seconds: f64 = timed.iter().map(|(_, t)| t).sum();
    let per_sample_ms = if test.is_empty() {
        0.0
    } else {
        total_seconds * 1e3 / test.len() as f64
    };
    Ok(TtaSetResult {
        results: timed.into_iter().map(|(r, _)| r).collect(),
        total_seconds,
        per_sample_ms,
    })
}

/// One row of the prediction export.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub row: u32,
    pub col: u32,
    pub true_label: u16,
    pub pred_label: u16,
    pub soft_vote_used: bool,
    pub votes: Vec<usize>,
}

/// CSV with header `row,col,true_label,pred_label,soft_vote_used,votes_1..votes_C`.
pub fn write_predictions(path: impl AsRef<Path>, test: &[Spectrum], results: &[TtaResult]) -> Result<()> {
    let path = path.as_ref();
    if test.len() != results.len() {
        return Err(Error::dim(test.len(), results.len()));
    }
    let classes = results.first().map_or(0, |r| r.votes.len());
    let mut out = Vec::new();
    let io = |e| Error::io(path, e);
    write!(out, "row,col,true_label,pred_label,soft_vote_used").map_err(io)?;
    for k in 1..=classes {
        write!(out, ",votes_{k}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for (x, r) in test.iter().zip(results) {
        let (row, col) = x.coord.unwrap_or((0, 0));
        write!(
            out,
            "{row},{col},{},{},{}",
            x.label.unwrap_or(0),
            r.label,
            u8::from(r.soft_vote_used)
        )
        .map_err(io)?;
        for v in &r.votes {
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    fs::write(path, out).map_err(io)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("row,col,true_label,pred_label,soft_vote_used") {
        return Err(Error::Format("bad prediction header".into()));
    }
    let bad = |line: &str| Error::Format(format!("bad prediction line {line:?}"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 5 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad(line));
            Ok(PredictionRow {
                row: num(f[0])? as u32,
                col: num(f[1])? as u32,
                true_label: num(f[2])? as u16,
                pred_label: num(f[3])? as u16,
                soft_vote_used: num(f[4])? == 1,
                votes: f[5..].iter().map(|s| num(s).map(|v| v as usize)).collect::<Result<_>>()?,
            })
        })
        .collect()
}
