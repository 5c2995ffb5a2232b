//! `hyperaug` command-line front end. Every subcommand is a thin wrapper
//! over library calls; see `hyperaug <cmd> --help`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hyperaug::augment::{self, AugmentConfig, EnlargePolicy, Method, NoiseAugmenter, PcaAugmenter};
use hyperaug::cnn::{self, CnnConfig, CnnModel};
use hyperaug::eval;
use hyperaug::experiment::{self, ExperimentConfig, NormalizedCnn};
use hyperaug::hsio::{self, Normalizer, SyntheticParams};
use hyperaug::pca::PcaModel;
use hyperaug::seed::{self, stage};
use hyperaug::splits::{self, Scenario, ScenarioKind, SplitSet};
use hyperaug::tta::{self, TtaConfig};

#[derive(Parser)]
#[command(name = "hyperaug", version, about = "Hyperspectral CNN training with PCA and noise augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate or generate a cube/label pair and print a dataset summary.
    Ingest(IngestArgs),
    /// Draw Monte-Carlo train/val/test splits from a label map.
    Split(SplitArgs),
    /// Enlarge the training part of a split with synthetic samples.
    Augment(AugmentArgs),
    /// Train the spectral CNN on a split.
    Train(TrainArgs),
    /// Classify the test part of a split, optionally with test-time augmentation.
    Infer(InferArgs),
    /// Score a predictions file.
    Evaluate(EvaluateArgs),
    /// Run a full experiment described by a config file.
    Run(ConfigArgs),
    /// Run an experiment and print its timing table.
    Bench(ConfigArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Generate a synthetic scene from key=value pairs
    /// (classes, bands, per-class, spread, shape).
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE", conflicts_with_all = ["cube", "labels"])]
    synthetic: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input cube file.
    #[arg(long, requires = "labels")]
    cube: Option<PathBuf>,
    /// Input label file.
    #[arg(long, requires = "cube")]
    labels: Option<PathBuf>,
    /// Output directory for `cube.hsr` and `labels.hsl`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the dataset summary (always on for loaded files).
    #[arg(long)]
    summary: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "B")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    train_total: usize,
    #[arg(long, default_value_t = 0)]
    val_total: usize,
    #[arg(long, default_value_t = 2)]
    patch_rows: usize,
    #[arg(long, default_value_t = 2)]
    patch_cols: usize,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Base seed; run `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; writes `split_<i>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pca,
    Noise,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pca => Method::Pca,
            MethodArg::Noise => Method::Noise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Cap,
    DoubleMajority,
}

#[derive(Args)]
struct AugmentKnobs {
    #[arg(long, default_value_t = 0.9)]
    alpha_min: f64,
    #[arg(long, default_value_t = 1.1)]
    alpha_max: f64,
    #[arg(long, default_value_t = 0.25)]
    noise_scale: f64,
}

impl AugmentKnobs {
    fn config(&self, method: Method, policy: EnlargePolicy, seed: u64) -> Result<AugmentConfig> {
        let cfg = AugmentConfig {
            method,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            noise_scale: self.noise_scale,
            policy,
            seed,
            ..AugmentConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "cap")]
    policy: PolicyArg,
    #[command(flatten)]
    knobs: AugmentKnobs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output sample CSV (originals followed by synthetic samples).
    #[arg(long)]
    out: PathBuf,
    /// Also save the fitted PCA model here.
    #[arg(long)]
    pca_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Training samples to use instead of the split's train pixels
    /// (for example the output of `augment`).
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    kernels: usize,
    #[arg(long, default_value_t = 5)]
    kernel_len: usize,
    #[arg(long, default_value_t = 512)]
    dense1: usize,
    #[arg(long, default_value_t = 128)]
    dense2: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 15)]
    patience: usize,
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; the normalizer is written to `<out>.norm`.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON training history.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TtaArg {
    None,
    Pca,
    Noise,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Checkpoint written by `train` (its `.norm` sidecar must exist).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    tta: TtaArg,
    /// Synthetic samples per test spectrum.
    #[arg(long, default_value_t = 4)]
    augmentations: usize,
    #[command(flatten)]
    knobs: AugmentKnobs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Predictions CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Class count; defaults to the number of vote columns.
    #[arg(long)]
    classes: Option<usize>,
    /// Optional JSON score output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (flat key = value file).
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn norm_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".norm");
    PathBuf::from(s)
}

fn load_split(path: &Path) -> Result<SplitSet> {
    let records = hsio::load_split(path)?;
    Ok(SplitSet::from_records(&records, ScenarioKind::B, 0, 0))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (cube, labels) = if let Some(pairs) = &a.synthetic {
        let (mut classes, mut bands, mut per_class) = (3, 20, 50);
        let mut params = SyntheticParams::default();
        for pair in pairs {
            let (k, v) = pair.split_once('=').with_context(|| format!("expected key=value, got {pair:?}"))?;
            match k {
                "classes" => classes = v.parse()?,
                "bands" => bands = v.parse()?,
                "per-class" => per_class = v.parse()?,
                "spread" => params.spread = v.parse()?,
                "shape" => params.shape_amplitude = v.parse()?,
                _ => bail!("unknown synthetic key {k:?}"),
            }
        }
        hsio::generate_synthetic_with(classes, bands, per_class, a.seed, params)?
    } else {
        let (Some(c), Some(l)) = (&a.cube, &a.labels) else {
            bail!("either --synthetic or --cube with --labels is required");
        };
        let cube = hsio::load_cube(c)?;
        let labels = hsio::load_labels(l)?;
        if !labels.matches(&cube) {
            bail!(
                "label map is {}x{} but cube is {}x{}",
                labels.height(),
                labels.width(),
                cube.height(),
                cube.width()
            );
        }
        (cube, labels)
    };
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        hsio::save_cube(dir.join("cube.hsr"), &cube)?;
        hsio::save_labels(dir.join("labels.hsl"), &labels)?;
    }
    if a.summary || a.synthetic.is_none() || a.out.is_none() {
        println!("height {}", cube.height());
        println!("width {}", cube.width());
        println!("bands {}", cube.bands());
        println!("classes {}", labels.num_classes());
        println!("label,count");
        for (label, count) in hsio::class_histogram(&labels) {
            println!("{label},{count}");
        }
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let labels = hsio::load_labels(&a.labels)?;
    let scenario = match a.scenario.parse::<ScenarioKind>()? {
        ScenarioKind::B => Scenario::Balanced {
            train_total: a.train_total,
            val_total: a.val_total,
        },
        ScenarioKind::IB => Scenario::Imbalanced {
            train_total: a.train_total,
            val_total: a.val_total,
        },
        ScenarioKind::P => Scenario::Patched {
            patch_rows: a.patch_rows,
            patch_cols: a.patch_cols,
            train_fraction: a.train_fraction,
            val_fraction: a.val_fraction,
        },
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for s in splits::monte_carlo(&labels, &scenario, a.runs, a.seed)? {
        let path = a.out.join(format!("split_{:03}.csv", s.fold));
        hsio::save_split(&path, &s.records())?;
        println!(
            "{} train {} val {} test {}",
            path.display(),
            s.train.len(),
            s.val.len(),
            s.test.len()
        );
    }
    Ok(())
}

fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let cube = hsio::load_cube(&a.cube)?;
    let split = load_split(&a.split)?;
    let train = experiment::gather(&cube, &split.train);
    let policy = match a.policy {
        PolicyArg::Cap => EnlargePolicy::CapToMajority,
        PolicyArg::DoubleMajority => EnlargePolicy::DoubleMajority,
    };
    let cfg = a.knobs.config(a.method.into(), policy, a.seed)?;
    let augmenter: Box<dyn augment::Augment> = match a.method {
        MethodArg::Pca => {
            let model = PcaModel::fit(&train)?;
            if let Some(p) = &a.pca_out {
                model.save(p)?;
            }
            Box::new(PcaAugmenter::new(model, cfg.clone())?)
        }
        MethodArg::Noise => Box::new(NoiseAugmenter::fit(&train, cfg.noise_scale)?),
    };
    let mut rng = seed::rng(seed::derive(a.seed, &[stage::OFFLINE_AUGMENT]));
    let (enlarged, secs) = eval::timed(|| augment::offline_enlarge(&train, augmenter.as_ref(), policy, &mut rng));
    let enlarged = enlarged?;
    hsio::save_samples(&a.out, &enlarged)?;
    println!(
        "originals {} synthetic {} seconds {secs:.6}",
        train.len(),
        enlarged.len() - train.len()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cube = hsio::load_cube(&a.cube)?;
    let split = load_split(&a.split)?;
    let originals = experiment::gather(&cube, &split.train);
    let train = match &a.samples {
        Some(p) => hsio::load_samples(p)?,
        None => originals.clone(),
    };
    let classes = train
        .iter()
        .chain(&originals)
        .filter_map(|s| s.label)
        .chain(split.val.iter().chain(&split.test).map(|p| p.label))
        .max()
        .context("split has no labeled pixels")? as usize;
    let normalizer = Normalizer::fit(&originals)?;
    let train: Vec<_> = train.iter().map(|s| normalizer.apply(s)).collect();
    let val: Vec<_> = experiment::gather(&cube, &split.val)
        .iter()
        .map(|s| normalizer.apply(s))
        .collect();
    let config = CnnConfig {
        kernels: a.kernels,
        kernel_len: a.kernel_len,
        dense1: a.dense1,
        dense2: a.dense2,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        patience: a.patience,
        max_epochs: a.max_epochs,
        seed: seed::derive(a.seed, &[stage::TRAIN]),
        ..CnnConfig::new(cube.bands(), classes)
    };
    let ((model, history), secs) = {
        let (r, s) = eval::timed(|| cnn::train(CnnModel::new(config)?, &train, &val));
        (r?, s)
    };
    model.save(&a.out)?;
    normalizer.save(norm_path(&a.out))?;
    if let Some(p) = &a.history {
        eval::write_json(p, &history)?;
    }
    println!(
        "epochs {} best_epoch {} best_val_accuracy {:.6} seconds {secs:.3}",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_accuracy
    );
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let cube = hsio::load_cube(&a.cube)?;
    let split = load_split(&a.split)?;
    let model = CnnModel::load(&a.model)?;
    let normalizer = Normalizer::load(norm_path(&a.model))
        .with_context(|| format!("loading normalizer for {}", a.model.display()))?;
    let classifier = NormalizedCnn { normalizer, model };
    let test = experiment::gather(&cube, &split.test);
    let result = match a.tta {
        TtaArg::None => tta::classify_set(&classifier, &test)?,
        TtaArg::Pca | TtaArg::Noise => {
            let method = if matches!(a.tta, TtaArg::Pca) { Method::Pca } else { Method::Noise };
            let cfg = a.knobs.config(method, EnlargePolicy::default(), a.seed)?;
            let train = experiment::gather(&cube, &split.train);
            let augmenter = experiment::fit_augmenter(method, &train, &cfg)?;
            let tta_cfg = TtaConfig {
                augmentations: a.augmentations,
                seed: seed::derive(a.seed, &[stage::TTA]),
            };
            tta::tta_classify_set(&classifier, augmenter.as_ref(), &test, &tta_cfg)?
        }
    };
    tta::write_predictions(&a.out, &test, &result.results)?;
    println!("samples {} per_sample_ms {:.6}", test.len(), result.per_sample_ms);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let rows = tta::read_predictions(&a.predictions)?;
    let classes = match a.classes {
        Some(c) => c,
        None => rows.first().map_or(0, |r| r.votes.len()),
    };
    let truth: Vec<u16> = rows.iter().map(|r| r.true_label).collect();
    let pred: Vec<u16> = rows.iter().map(|r| r.pred_label).collect();
    let scores = eval::score(&truth, &pred, classes)?;
    for (k, acc) in scores.per_class.iter().enumerate() {
        match acc {
            Some(v) => println!("class {} {:.6}", k + 1, v),
            None => println!("class {} absent", k + 1),
        }
    }
    println!("OA {:.6}", scores.overall);
    println!("AA {:.6}", scores.average);
    if let Some(p) = &a.out {
        eval::write_json(p, &scores)?;
    }
    Ok(())
}

fn load_config(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Returns whether every (run, variant) pair succeeded.
fn run(a: ConfigArgs, bench: bool) -> Result<bool> {
    let cfg = load_config(&a)?;
    let outcome = experiment::run_experiment(&cfg)?;
    experiment::write_outputs(&outcome, &cfg.out_dir)?;
    if bench {
        print!("{}", eval::timing_table_csv(&outcome.aggregates));
    } else {
        print!("{}", eval::accuracy_table_csv(&outcome.aggregates));
    }
    for f in &outcome.failures {
        eprintln!("failed: {f}");
    }
    Ok(outcome.failures.is_empty())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HYPERAUG_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("HYPERAUG_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Ingest(a) => ingest(a).map(|()| true),
        Command::Split(a) => split(a).map(|()| true),
        Command::Augment(a) => augment_cmd(a).map(|()| true),
        Command::Train(a) => train_cmd(a).map(|()| true),
        Command::Infer(a) => infer(a).map(|()| true),
        Command::Evaluate(a) => evaluate(a).map(|()| true),
        Command::Run(a) => run(a, false),
        Command::Bench(a) => run(a, true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut parts = Vec::new();
            for cause in e.chain() {
                parts.push(cause.to_string());
                if cause.is::<hyperaug::Error>() {
                    break;
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(2)
        }
    }
}
