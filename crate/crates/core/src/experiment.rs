//! End-to-end Monte-Carlo experiment driver.
//!
//! For every run: split → optional offline enlargement → per-band
//! normalization (fitted on the original training pixels) → CNN training →
//! plain or test-time-augmented inference → scoring. Augmentation always
//! operates on raw reflectances; the classifier normalizes its inputs.
//!
//! Seeds: the split seeds are `derive(master, [SPLIT]) + run`; every other
//! stream uses `derive(master, [run, stage])` (see [`crate::seed`]).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{Augment, AugmentConfig, EnlargePolicy, Method, NoiseAugmenter, PcaAugmenter};
use crate::cnn::{self, CnnConfig, CnnModel};
use crate::error::{Error, Result};
use crate::eval::{self, AggregateReport, EvaluationReport, RunMeta, Scores, Timings};
use crate::hsio::{self, HsiCube, LabelMap, Normalizer, Spectrum};
use crate::pca::PcaModel;
use crate::seed::{self, stage};
use crate::splits::{self, Pixel, Scenario, SplitSet};
use crate::tta::{self, Classifier, TtaConfig};

/// Augmentation variants compared by the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Without,
    Noise,
    Pca,
    NoiseOn,
    PcaOn,
    PcaPcaOn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Without,
        Variant::Noise,
        Variant::Pca,
        Variant::NoiseOn,
        Variant::PcaOn,
        Variant::PcaPcaOn,
    ];

    pub fn offline(&self) -> Option<Method> {
        match self {
            Variant::Noise => Some(Method::Noise),
            Variant::Pca | Variant::PcaPcaOn => Some(Method::Pca),
            _ => None,
        }
    }

    pub fn online(&self) -> Option<Method> {
        match self {
            Variant::NoiseOn => Some(Method::Noise),
            Variant::PcaOn | Variant::PcaPcaOn => Some(Method::Pca),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Without => "without",
            Variant::Noise => "noise",
            Variant::Pca => "pca",
            Variant::NoiseOn => "noise-on",
            Variant::PcaOn => "pca-on",
            Variant::PcaPcaOn => "pca/pca-on",
        }
    }

    /// File-name-safe form of [`name`](Self::name).
    pub fn slug(&self) -> String {
        self.name().replace('/', "_")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Everything a Monte-Carlo experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub cube: PathBuf,
    pub labels: PathBuf,
    pub scenario: Scenario,
    pub runs: usize,
    pub variants: Vec<Variant>,
    pub augment: AugmentConfig,
    pub tta_augmentations: usize,
    /// Template; bands, classes and seed are filled in per run.
    pub cnn: CnnConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key `{key}`")))
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format. Blank lines and `#` comments are
    /// ignored; relative paths resolve against `base_dir`.
    ///
    /// Keys: `cube`, `labels`, `out_dir`, `scenario` (B/IB/P), `train_total`,
    /// `val_total`, `patch_rows`, `patch_cols`, `train_fraction`,
    /// `val_fraction`, `runs`, `variants` (comma list), `augmentations`,
    /// `alpha_min`, `alpha_max`, `noise_scale`, `enlarge_policy`
    /// (`cap` | `double-majority`), `kernels`, `kernel_len`, `dense1`,
    /// `dense2`, `learning_rate`, `beta1`, `beta2`, `batch_size`,
    /// `patience`, `max_epochs`, `seed`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{}`", k.trim())));
            }
        }
        let mut take = |key: &str| kv.remove(key);
        let path = |v: String| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let cube = path(take("cube").ok_or_else(|| Error::Config("missing key `cube`".into()))?);
        let labels = path(take("labels").ok_or_else(|| Error::Config("missing key `labels`".into()))?);
        let out_dir = path(take("out_dir").unwrap_or_else(|| "out".into()));

        macro_rules! opt {
            ($key:literal, $default:expr) => {
                match take($key) {
                    Some(v) => parse_value($key, &v)?,
                    None => $default,
                }
            };
        }

        let kind: splits::ScenarioKind = opt!("scenario", splits::ScenarioKind::B);
        let scenario = match kind {
            splits::ScenarioKind::B => Scenario::Balanced {
                train_total: opt!("train_total", 0),
                val_total: opt!("val_total", 0),
            },
            splits::ScenarioKind::IB => Scenario::Imbalanced {
                train_total: opt!("train_total", 0),
                val_total: opt!("val_total", 0),
            },
            splits::ScenarioKind::P => Scenario::Patched {
                patch_rows: opt!("patch_rows", 2),
                patch_cols: opt!("patch_cols", 2),
                train_fraction: opt!("train_fraction", 0.5),
                val_fraction: opt!("val_fraction", 0.1),
            },
        };
        let variants = match take("variants") {
            Some(v) => v.split(',').map(str::parse).collect::<Result<Vec<Variant>>>()?,
            None => vec![Variant::Without],
        };
        let policy = match take("enlarge_policy").as_deref() {
            None | Some("cap") => EnlargePolicy::CapToMajority,
            Some("double-majority") => EnlargePolicy::DoubleMajority,
            Some(other) => return Err(Error::Config(format!("unknown enlarge_policy {other:?}"))),
        };
        let defaults = AugmentConfig::default();
        let augment = AugmentConfig {
            alpha_min: opt!("alpha_min", defaults.alpha_min),
            alpha_max: opt!("alpha_max", defaults.alpha_max),
            noise_scale: opt!("noise_scale", defaults.noise_scale),
            policy,
            ..defaults
        };
        let base = CnnConfig::new(1, 1);
        let cnn = CnnConfig {
            kernels: opt!("kernels", base.kernels),
            kernel_len: opt!("kernel_len", base.kernel_len),
            dense1: opt!("dense1", base.dense1),
            dense2: opt!("dense2", base.dense2),
            learning_rate: opt!("learning_rate", base.learning_rate),
            beta1: opt!("beta1", base.beta1),
            beta2: opt!("beta2", base.beta2),
            batch_size: opt!("batch_size", base.batch_size),
            patience: opt!("patience", base.patience),
            max_epochs: opt!("max_epochs", base.max_epochs),
            ..base
        };
        let config = ExperimentConfig {
            cube,
            labels,
            scenario,
            runs: opt!("runs", 1),
            variants,
            augment,
            tta_augmentations: opt!("augmentations", 4),
            cnn,
            out_dir,
            seed: opt!("seed", 0),
        };
        if let Some(key) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        self.augment.validate()
    }
}

/// Spectra of the listed pixels, in list order.
pub fn gather(cube: &HsiCube, pixels: &[Pixel]) -> Vec<Spectrum> {
    pixels
        .iter()
        .map(|p| cube.spectrum(p.row as usize, p.col as usize, Some(p.label)))
        .collect()
}

/// A CNN that scales its inputs with a training-set normalizer first.
#[derive(Clone, Debug)]
pub struct NormalizedCnn {
    pub normalizer: Normalizer,
    pub model: CnnModel,
}

impl NormalizedCnn {
    pub fn predict(&self, x: &Spectrum) -> Result<u16> {
        self.model.predict(&self.normalizer.apply(x))
    }
}

impl Classifier for NormalizedCnn {
    fn classes(&self) -> usize {
        self.model.config.classes
    }

    fn predict_proba_batch(&self, xs: &[Spectrum]) -> Result<Vec<Vec<f64>>> {
        let scaled: Vec<Spectrum> = xs.iter().map(|x| self.normalizer.apply(x)).collect();
        self.model.predict_proba_batch(&scaled)
    }
}

/// Fits an augmenter of the given kind on the original training spectra.
pub fn fit_augmenter(method: Method, train: &[Spectrum], config: &AugmentConfig) -> Result<Box<dyn Augment>> {
    Ok(match method {
        Method::Pca => Box::new(PcaAugmenter::new(PcaModel::fit(train)?, config.clone())?),
        Method::Noise => Box::new(NoiseAugmenter::fit(train, config.noise_scale)?),
    })
}

/// Outcome of one (run, variant) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub report: EvaluationReport,
    pub train_size: usize,
    pub synthetic_added: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub soft_votes: usize,
}

/// Trains and evaluates one variant on one split.
pub fn run_variant(
    cube: &HsiCube,
    classes: usize,
    split: &SplitSet,
    variant: Variant,
    config: &ExperimentConfig,
) -> Result<RunOutcome> {
    let run = split.fold as u64;
    let train_raw = gather(cube, &split.train);
    let val_raw = gather(cube, &split.val);
    let test_raw = gather(cube, &split.test);
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(Error::Degenerate("split has an empty training or validation set".into()));
    }

    let mut timings = Timings::default();
    let mut pca_once: Option<PcaModel> = None;
    let mut train_set = train_raw.clone();
    if let Some(method) = variant.offline() {
        let mut rng = seed::rng(seed::derive(config.seed, &[run, stage::OFFLINE_AUGMENT]));
        let (enlarged, secs) = eval::timed(|| -> Result<Vec<Spectrum>> {
            let augmenter: Box<dyn Augment> = match method {
                Method::Pca => {
                    let model = PcaModel::fit(&train_raw)?;
                    pca_once = Some(model.clone());
                    Box::new(PcaAugmenter::new(model, config.augment.clone())?)
                }
                Method::Noise => fit_augmenter(method, &train_raw, &config.augment)?,
            };
            crate::augment::offline_enlarge(&train_raw, augmenter.as_ref(), config.augment.policy, &mut rng)
        });
        train_set = enlarged?;
        timings.offline_augment_s = secs;
    }
    let synthetic_added = train_set.len() - train_raw.len();

    let normalizer = Normalizer::fit(&train_raw)?;
    let train_norm: Vec<Spectrum> = train_set.iter().map(|s| normalizer.apply(s)).collect();
    let val_norm: Vec<Spectrum> = val_raw.iter().map(|s| normalizer.apply(s)).collect();
    let cnn_config = CnnConfig {
        bands: cube.bands(),
        classes,
        seed: seed::derive(config.seed, &[run, stage::TRAIN]),
        ..config.cnn.clone()
    };
    let (trained, secs) = eval::timed(|| -> Result<_> { cnn::train(CnnModel::new(cnn_config)?, &train_norm, &val_norm) });
    let (model, history) = trained?;
    timings.train_s = secs;
    let classifier = NormalizedCnn { normalizer, model };

    let inference = match variant.online() {
        Some(method) => {
            let augmenter: Box<dyn Augment> = match (method, pca_once) {
                (Method::Pca, Some(model)) => Box::new(PcaAugmenter::new(model, config.augment.clone())?),
                (m, _) => fit_augmenter(m, &train_raw, &config.augment)?,
            };
            let tta_config = TtaConfig {
                augmentations: config.tta_augmentations,
                seed: seed::derive(config.seed, &[run, stage::TTA]),
            };
            tta::tta_classify_set(&classifier, augmenter.as_ref(), &test_raw, &tta_config)?
        }
        None => tta::classify_set(&classifier, &test_raw)?,
    };
    timings.per_sample_infer_ms = inference.per_sample_ms;

    let truth: Vec<u16> = split.test.iter().map(|p| p.label).collect();
    let predicted: Vec<u16> = inference.results.iter().map(|r| r.label).collect();
    let scores = if truth.is_empty() {
        return Err(Error::Degenerate("split has an empty test set".into()));
    } else {
        eval::score(&truth, &predicted, classes)?
    };
    Ok(RunOutcome {
        report: EvaluationReport {
            meta: RunMeta {
                scenario: split.scenario,
                variant: variant.name().to_string(),
                seed: split.seed,
                fold: split.fold,
            },
            scores,
            timings,
        },
        train_size: train_set.len(),
        synthetic_added,
        epochs: history.epochs.len(),
        best_epoch: history.best_epoch,
        best_val_accuracy: history.best_val_accuracy,
        soft_votes: inference.results.iter().filter(|r| r.soft_vote_used).count(),
    })
}

/// Per-run record persisted as JSON. Wall times are kept out of it so the
/// file is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub scores: Scores,
    pub train_size: usize,
    pub synthetic_added: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub soft_votes: usize,
}

impl From<&RunOutcome> for RunRecord {
    fn from(o: &RunOutcome) -> Self {
        RunRecord {
            meta: o.report.meta.clone(),
            scores: o.report.scores.clone(),
            train_size: o.train_size,
            synthetic_added: o.synthetic_added,
            epochs: o.epochs,
            best_epoch: o.best_epoch,
            best_val_accuracy: o.best_val_accuracy,
            soft_votes: o.soft_votes,
        }
    }
}

/// Wilcoxon comparison of a variant against `without` over per-class mean
/// accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant: String,
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub outcomes: Vec<RunOutcome>,
    pub aggregates: Vec<AggregateReport>,
    pub comparisons: Vec<Comparison>,
    pub failures: Vec<String>,
}

/// Runs every (run, variant) pair. A failing pair is recorded in
/// `failures` and the remaining pairs still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let cube = hsio::load_cube(&config.cube)?;
    let labels = hsio::load_labels(&config.labels)?;
    run_experiment_on(config, &cube, &labels)
}

pub fn run_experiment_on(config: &ExperimentConfig, cube: &HsiCube, labels: &LabelMap) -> Result<ExperimentOutcome> {
    if !labels.matches(cube) {
        return Err(Error::Data("label map and cube dimensions differ".into()));
    }
    let classes = labels.num_classes();
    let base_seed = seed::derive(config.seed, &[stage::SPLIT]);
    let mut out = ExperimentOutcome::default();
    let mut by_variant: BTreeMap<Variant, Vec<EvaluationReport>> = BTreeMap::new();
    for run in 0..config.runs {
        // Same seeds as `splits::monte_carlo`, but a failed split only
        // loses its own run.
        let split = match config.scenario.split(labels, base_seed.wrapping_add(run as u64)) {
            Ok(mut s) => {
                s.fold = run;
                s
            }
            Err(e) => {
                let msg = format!("run {run}: split failed: {e}");
                log::error!("{msg}");
                out.failures.push(msg);
                continue;
            }
        };
        let split = &split;
        for &variant in &config.variants {
            match run_variant(cube, classes, split, variant, config) {
                Ok(o) => {
                    log::info!(
                        "run {} {}: OA {:.4} AA {:.4}",
                        split.fold,
                        variant,
                        o.report.scores.overall,
                        o.report.scores.average
                    );
                    by_variant.entry(variant).or_default().push(o.report.clone());
                    out.outcomes.push(o);
                }
                Err(e) => {
                    let msg = format!("run {} variant {variant}: {e}", split.fold);
                    log::error!("{msg}");
                    out.failures.push(msg);
                }
            }
        }
    }
    for variant in &config.variants {
        if let Some(reports) = by_variant.get(variant) {
            out.aggregates.push(eval::aggregate(reports)?);
        }
    }
    out.comparisons = compare_to_baseline(&out.aggregates);
    Ok(out)
}

fn compare_to_baseline(aggregates: &[AggregateReport]) -> Vec<Comparison> {
    let Some(base) = aggregates.iter().find(|a| a.variant == Variant::Without.name()) else {
        return Vec::new();
    };
    aggregates
        .iter()
        .filter(|a| a.variant != base.variant)
        .map(|a| {
            let (x, y): (Vec<f64>, Vec<f64>) = a
                .per_class_mean
                .iter()
                .zip(&base.per_class_mean)
                .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
                .unzip();
            match eval::wilcoxon_two_tailed(&x, &y) {
                Ok(r) => Comparison {
                    variant: a.variant.clone(),
                    p_value: Some(r.p_value),
                    note: None,
                },
                Err(e) => Comparison {
                    variant: a.variant.clone(),
                    p_value: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Timing-free aggregate, persisted in `summary.json`.
#[derive(Clone, Debug, Serialize)]
struct AccuracySummary<'a> {
    variant: &'a str,
    scenario: splits::ScenarioKind,
    runs: usize,
    per_class_mean: &'a [Option<f64>],
    per_class_std: &'a [Option<f64>],
    overall_mean: f64,
    overall_std: f64,
    average_mean: f64,
    average_std: f64,
}

/// Writes `run_<i>_<variant>.json` per pair, `summary.json`,
/// `accuracy.csv` and `wilcoxon.csv` (all deterministic), plus
/// `timing.csv` (wall times).
pub fn write_outputs(outcome: &ExperimentOutcome, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for o in &outcome.outcomes {
        let name = format!(
            "run_{:03}_{}.json",
            o.report.meta.fold,
            o.report.meta.variant.replace('/', "_")
        );
        eval::write_json(out_dir.join(name), &RunRecord::from(o))?;
    }
    let summary: Vec<AccuracySummary<'_>> = outcome
        .aggregates
        .iter()
        .map(|a| AccuracySummary {
            variant: &a.variant,
            scenario: a.scenario,
            runs: a.runs,
            per_class_mean: &a.per_class_mean,
            per_class_std: &a.per_class_std,
            overall_mean: a.overall_mean,
            overall_std: a.overall_std,
            average_mean: a.average_mean,
            average_std: a.average_std,
        })
        .collect();
    eval::write_json(out_dir.join("summary.json"), &summary)?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("accuracy.csv", eval::accuracy_table_csv(&outcome.aggregates))?;
    write("timing.csv", eval::timing_table_csv(&outcome.aggregates))?;
    let mut wil = String::from("variant,p_value,note\n");
    for c in &outcome.comparisons {
        wil.push_str(&format!(
            "{},{},{}\n",
            c.variant,
            c.p_value.map_or(String::new(), |p| format!("{p:.6}")),
            c.note.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    write("wilcoxon.csv", wil)
}
