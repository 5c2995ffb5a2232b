//! Acceptance suite: one PASS/FAIL/SKIP line per criterion; exits non-zero
//! if any criterion fails. Runs as part of `cargo test`, or alone with
//! `cargo test -p hyperaug --test acceptance`.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use hyperaug::augment::{self, AugmentConfig, EnlargePolicy, PcaAugmenter};
use hyperaug::cnn::{CnnConfig, CnnModel};
use hyperaug::experiment::{self, ExperimentConfig, NormalizedCnn, Variant};
use hyperaug::hsio::Normalizer;
use hyperaug::splits::Scenario;
use hyperaug::tta::{self, TtaConfig};
use hyperaug::Spectrum;
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn pca_correctness() -> Outcome {
    let started = Instant::now();
    let (mut values, mut vectors, mut round_trip) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..200 {
        let (v, e, r) = common::pca_oracle_case(1000 + seed);
        values = values.max(v);
        vectors = vectors.max(e);
        round_trip = round_trip.max(r);
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        values < 1e-8 && vectors < 1e-8 && round_trip < 1e-9 && secs < 5.0,
        format!("200 instances, eigenvalue err {values:.1e}, eigenvector err {vectors:.1e}, round trip {round_trip:.1e}, {secs:.2} s"),
    )
}

fn pca_augmentation_identity() -> Outcome {
    let (ident, others) = common::pca_identity_errors(2024, 1000);
    check(
        ident < 1e-9 && others < 1e-9,
        format!("1000 samples, alpha=1 err {ident:.1e}, PC 2..b drift {others:.1e}"),
    )
}

fn noise_statistics() -> Outcome {
    let dev = common::noise_variance_deviation(100_000, 0.25);
    check(dev < 0.05, format!("10^5 draws, worst relative variance deviation {:.2}%", dev * 100.0))
}

fn voting_oracle() -> Outcome {
    let bad = common::vote_mismatches(10_000, 99);
    check(bad == 0, format!("10^4 random tables, {bad} mismatches"))
}

fn gradient_check() -> Outcome {
    let (model, batch, labels) = common::micro_model(7);
    let (worst, at) = common::gradient_check(&model, &batch, &labels, 1e-5, 1e-10);
    check(worst < 1e-4, format!("worst relative error {worst:.1e} ({at})"))
}

fn learning_sanity() -> Outcome {
    let started = Instant::now();
    let accs: Vec<f64> = (0..5).map(common::learning_sanity_run).collect();
    let secs = started.elapsed().as_secs_f64();
    let good = accs.iter().filter(|&&a| a >= 0.95).count();
    check(
        good >= 4 && secs < 120.0,
        format!("{good}/5 seeds >= 95% val accuracy {accs:?}, {secs:.1} s"),
    )
}

fn augmentation_trend() -> Outcome {
    let (without, pca, pca_on) = common::augmentation_trend(0);
    check(
        pca >= without - 0.5 && pca_on >= without - 0.5,
        format!("mean OA without {without:.2}, pca {pca:.2}, pca-on {pca_on:.2}"),
    )
}

fn full_data() -> Outcome {
    let Some(dir) = std::env::var_os("HYPERAUG_BENCH_DATA").map(PathBuf::from) else {
        return Outcome::Skip("set HYPERAUG_BENCH_DATA to a directory with paviaU.hsr and paviaU.hsl".into());
    };
    let (cube_path, labels_path) = (dir.join("paviaU.hsr"), dir.join("paviaU.hsl"));
    if !cube_path.exists() || !labels_path.exists() {
        return Outcome::Skip(format!("paviaU.hsr / paviaU.hsl not found in {}", dir.display()));
    }
    let started = Instant::now();
    let config = ExperimentConfig {
        cube: cube_path,
        labels: labels_path,
        scenario: Scenario::Balanced { train_total: 2025, val_total: 225 },
        runs: 5,
        variants: vec![Variant::Without, Variant::Pca],
        augment: AugmentConfig::default(),
        tta_augmentations: 4,
        cnn: CnnConfig::new(1, 1),
        out_dir: dir.join("acceptance_out"),
        seed: 0,
    };
    let out = match experiment::run_experiment(&config) {
        Ok(o) => o,
        Err(e) => return Outcome::Fail(format!("pipeline error: {e}")),
    };
    let secs = started.elapsed().as_secs_f64();
    let test_sizes_ok = out
        .outcomes
        .iter()
        .all(|o| o.report.scores.confusion.iter().flatten().sum::<u64>() == 40526);
    let oa = |v: Variant| {
        out.aggregates
            .iter()
            .find(|a| a.variant == v.name())
            .map_or(f64::NAN, |a| 100.0 * a.overall_mean)
    };
    let (base, pca) = (oa(Variant::Without), oa(Variant::Pca));
    check(
        out.failures.is_empty() && test_sizes_ok && (base - 88.42).abs() <= 5.0 && pca >= base - 1.0 && secs < 7200.0,
        format!("OA without {base:.2}, pca {pca:.2}, |test| ok {test_sizes_ok}, {secs:.0} s"),
    )
}

fn timing_shape() -> Outcome {
    let mut rng = common::rng(55);
    let mut sample_set = |n: usize, b: usize, classes: u16| -> Vec<Spectrum> {
        (0..n)
            .map(|i| {
                let label = (i % usize::from(classes)) as u16 + 1;
                let mut s = Spectrum::labeled((0..b).map(|_| rng.gen_range(0.0..1.0)).collect(), label);
                s.coord = Some((i as u32, 0));
                s
            })
            .collect()
    };
    // Offline PCA augmentation (fit + enlarge) of a Pavia-scale and a larger train set.
    let mut offline = Vec::new();
    for (n, b) in [(2025, 103), (4995, 200)] {
        let train = sample_set(n, b, 9);
        let started = Instant::now();
        let aug = PcaAugmenter::fit(&train, AugmentConfig::default()).unwrap();
        let out = augment::offline_enlarge(&train, &aug, EnlargePolicy::default(), &mut hyperaug::seed::rng(1)).unwrap();
        offline.push(started.elapsed().as_secs_f64());
        assert_eq!(out.len(), 2 * n);
    }
    // TTA latency against plain inference with the full-size network.
    let train = sample_set(500, 103, 9);
    let test = sample_set(400, 103, 9);
    let classifier = NormalizedCnn {
        normalizer: Normalizer::fit(&train).unwrap(),
        model: {
            let mut m = CnnModel::new(CnnConfig { seed: 3, ..CnnConfig::new(103, 9) }).unwrap();
            m.set_mode(hyperaug::cnn::Mode::Inference);
            m
        },
    };
    let aug = PcaAugmenter::fit(&train, AugmentConfig::default()).unwrap();
    let plain = tta::classify_set(&classifier, &test).unwrap().per_sample_ms;
    let cfg = TtaConfig { augmentations: 4, seed: 8 };
    let online = tta::tta_classify_set(&classifier, &aug, &test, &cfg).unwrap().per_sample_ms;
    let ratio = online / plain;
    check(
        offline.iter().all(|&s| s < 1.0) && ratio <= 50.0,
        format!(
            "offline PCA {:.3} s (2025x103), {:.3} s (4995x200); TTA {online:.3} ms vs plain {plain:.3} ms per sample = {ratio:.1}x",
            offline[0], offline[1]
        ),
    )
}

fn wilcoxon() -> Outcome {
    let mut worst = 0.0f64;
    let cases = common::wilcoxon_cases(77, 20);
    for d in &cases {
        worst = worst.max((hyperaug::eval::wilcoxon_exact_p(d) - common::wilcoxon_enumerate(d)).abs());
        if d.len() >= 5 {
            let r = hyperaug::eval::wilcoxon_two_tailed(d, &vec![0.0; d.len()]).unwrap();
            worst = worst.max((r.p_value - common::wilcoxon_enumerate(d)).abs());
        }
    }
    let x = [0.81, 0.92, 0.77, 0.64, 0.99];
    let same = hyperaug::eval::wilcoxon_two_tailed(&x, &x).unwrap().p_value;
    check(
        worst < 1e-12 && same == 1.0,
        format!("{} cases n<=10, max |p - enumeration| {worst:.1e}; x=y gives p={same}", cases.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("PCA correctness", pca_correctness),
        ("PCA augmentation identity", pca_augmentation_identity),
        ("Noise augmentation statistics", noise_statistics),
        ("Voting oracle", voting_oracle),
        ("CNN gradient check", gradient_check),
        ("Learning sanity", learning_sanity),
        ("Augmentation trend", augmentation_trend),
        ("Optional full-data check", full_data),
        ("Timing shape", timing_shape),
        ("Wilcoxon", wilcoxon),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Outcome::Pass(d) => println!("PASS  {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP  {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {} criteria, {failed} failed", criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
