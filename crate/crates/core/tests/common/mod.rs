//! Independent reference implementations used by the integration and
//! acceptance tests. None of them call into the library's numerics.
#![allow(dead_code)]

use hyperaug::cnn::CnnModel;
use hyperaug::Spectrum;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Eigen-decomposition through the characteristic polynomial.

/// Population covariance, (1/N) Σ (x - mean)(x - mean)^T.
pub fn covariance(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = samples.len() as f64;
    let b = samples[0].len();
    let mut mean = vec![0.0; b];
    for s in samples {
        for j in 0..b {
            mean[j] += s[j] / n;
        }
    }
    let mut cov = vec![vec![0.0; b]; b];
    for s in samples {
        for i in 0..b {
            for j in 0..b {
                cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Coefficients c_0..c_n of det(λI - A) = Σ c_k λ^k (Faddeev–LeVerrier).
pub fn char_poly(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = vec![vec![0.0; n]; n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I
        let mut next = matmul(a, &m);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] += coeffs[n - k + 1];
        }
        m = next;
        let am = matmul(a, &m);
        let trace: f64 = (0..n).map(|i| am[i][i]).sum();
        coeffs[n - k] = -trace / k as f64;
    }
    coeffs
}

fn eval_poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &v)| v * k as f64).collect()
}

fn bisect(c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = eval_poly(c, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval_poly(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All real roots of a polynomial with only real roots, inside
/// `[-bound, bound]`, ascending. The roots of the derivative split the
/// interval into pieces holding at most one root each.
pub fn real_roots(c: &[f64], bound: f64) -> Vec<f64> {
    let degree = c.len() - 1;
    if degree == 1 {
        return vec![-c[0] / c[1]];
    }
    let crit = real_roots(&derivative(c), bound);
    let mut edges = vec![-bound];
    edges.extend(crit);
    edges.push(bound);
    let mut roots = Vec::new();
    for w in edges.windows(2) {
        let (fa, fb) = (eval_poly(c, w[0]), eval_poly(c, w[1]));
        if fa == 0.0 {
            roots.push(w[0]);
        } else if (fa < 0.0) != (fb < 0.0) {
            roots.push(bisect(c, w[0], w[1]));
        }
    }
    if eval_poly(c, bound) == 0.0 {
        roots.push(bound);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    // Double roots never change sign; pick them up at the critical points.
    while roots.len() < degree {
        let crit = real_roots(&derivative(c), bound);
        let best = crit
            .iter()
            .copied()
            .min_by(|a, b| eval_poly(c, *a).abs().total_cmp(&eval_poly(c, *b).abs()))
            .expect("critical point");
        roots.push(best);
        roots.sort_by(f64::total_cmp);
    }
    roots
}

fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    match n {
        0 => 1.0,
        1 => m[0][0],
        _ => (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][j] * det(&minor)
            })
            .sum(),
    }
}

/// Eigenvector of a simple eigenvalue: the largest column of adj(A - λI).
pub fn adjugate_eigenvector(a: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    let n = a.len();
    if n == 1 {
        return vec![1.0];
    }
    let shifted: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[i][j] - if i == j { lambda } else { 0.0 }).collect())
        .collect();
    let mut best = vec![0.0; n];
    let mut best_norm = -1.0;
    for col in 0..n {
        let v: Vec<f64> = (0..n)
            .map(|row| {
                // adj[row][col] = (-1)^(row+col) * minor(col, row)
                let minor: Vec<Vec<f64>> = shifted
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| *r != col)
                    .map(|(_, r)| r.iter().enumerate().filter(|(c, _)| *c != row).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if (row + col) % 2 == 0 { 1.0 } else { -1.0 };
                sign * det(&minor)
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = v;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Eigenvalues (descending) and unit eigenvectors of a small symmetric matrix.
pub fn oracle_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let bound = 1.0 + a.iter().flatten().map(|v| v.abs()).sum::<f64>();
    let mut values = real_roots(&char_poly(a), bound);
    values.reverse();
    let vectors = values.iter().map(|&l| adjugate_eigenvector(a, l)).collect();
    (values, vectors)
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank, by enumerating all sign patterns.

/// Two-sided exact p-value of the signed-rank statistic, zeros dropped,
/// average ranks for ties.
pub fn wilcoxon_enumerate(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let centre = total / 2.0;
    let dev = (observed - centre).abs();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (w - centre).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}

// ---------------------------------------------------------------------------
// Voting reference.

/// Winner of a member vote: classes ordered by (votes desc, mean probability
/// desc, id asc); returns (1-based label, whether the vote was tied).
pub fn reference_vote(probas: &[Vec<f64>]) -> (u16, bool) {
    let c = probas[0].len();
    let mut votes = vec![0usize; c];
    for p in probas {
        let mut top = 0;
        for k in 0..c {
            if p[k] > p[top] {
                top = k;
            }
        }
        votes[top] += 1;
    }
    let mut mean = vec![0.0; c];
    for p in probas {
        for k in 0..c {
            mean[k] += p[k];
        }
    }
    for m in &mut mean {
        *m /= probas.len() as f64;
    }
    let max_votes = *votes.iter().max().unwrap();
    let tied = votes.iter().filter(|&&v| v == max_votes).count() > 1;
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        if tied {
            mean[b].total_cmp(&mean[a]).then(a.cmp(&b))
        } else {
            votes[b].cmp(&votes[a])
        }
    });
    (order[0] as u16 + 1, tied)
}

/// Random probability table, `members x classes`. With `coarse` the entries
/// are drawn from a small grid so ties are frequent.
pub fn random_table<R: Rng>(rng: &mut R, members: usize, classes: usize, coarse: bool) -> Vec<Vec<f64>> {
    (0..members)
        .map(|_| {
            let raw: Vec<f64> = (0..classes)
                .map(|_| {
                    if coarse {
                        f64::from(rng.gen_range(1u8..=4))
                    } else {
                        rng.gen::<f64>() + 1e-3
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Finite differences.

/// Largest relative error between the analytic gradient and central
/// differences over every parameter. Pairs where both sides are below
/// `zero` in magnitude count as agreeing.
pub fn gradient_check(model: &CnnModel, batch: &[Spectrum], labels: &[u16], h: f64, zero: f64) -> (f64, String) {
    let (_, grads) = model.loss_and_gradients(batch, labels).unwrap();
    let names = hyperaug::cnn::Params::NAMES;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst = 0.0;
    let mut worst_at = String::new();
    let mut probe = model.clone();
    for (t, name) in names.iter().enumerate() {
        for i in 0..analytic[t].len() {
            let original = probe.params.tensors()[t][i];
            probe.params.tensors_mut()[t][i] = original + h;
            let up = probe.loss(batch, labels).unwrap();
            probe.params.tensors_mut()[t][i] = original - h;
            let down = probe.loss(batch, labels).unwrap();
            probe.params.tensors_mut()[t][i] = original;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t][i];
            if a.abs() < zero && numeric.abs() < zero {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            if rel > worst {
                worst = rel;
                worst_at = format!("{name}[{i}] analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    (worst, worst_at)
}

// ---------------------------------------------------------------------------
// Misc.

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn random_samples<R: Rng>(rng: &mut R, n: usize, b: usize) -> Vec<Vec<f64>> {
    // Per-band scales keep the eigenvalues apart.
    let scales: Vec<f64> = (0..b).map(|j| 1.0 + j as f64 * 0.7 + rng.gen::<f64>() * 0.3).collect();
    (0..n)
        .map(|_| scales.iter().map(|s| (rng.gen::<f64>() * 2.0 - 1.0) * s).collect())
        .collect()
}

/// Worst deviations of the library PCA from the characteristic-polynomial
/// oracle on one random instance: (eigenvalues, eigenvectors up to sign,
/// full-basis project/backproject round trip).
pub fn pca_oracle_case(seed: u64) -> (f64, f64, f64) {
    let mut r = rng(seed);
    let b = r.gen_range(1..=4usize);
    // N > b keeps the covariance full rank, so every eigenvalue is simple.
    let n = r.gen_range(b + 1..=20usize);
    let samples = random_samples(&mut r, n, b);
    let model = hyperaug::pca::PcaModel::fit(&samples).unwrap();
    let (_, cov) = covariance(&samples);
    let (values, vectors) = oracle_eigen(&cov);
    let mut value_err: f64 = 0.0;
    let mut vector_err: f64 = 0.0;
    for k in 0..b {
        value_err = value_err.max((model.eigenvalues()[k] - values[k]).abs());
        let got = model.component(k);
        let same: f64 = got.iter().zip(&vectors[k]).map(|(a, o)| (a - o).abs()).fold(0.0, f64::max);
        let flipped: f64 = got.iter().zip(&vectors[k]).map(|(a, o)| (a + o).abs()).fold(0.0, f64::max);
        vector_err = vector_err.max(same.min(flipped));
    }
    let x: Vec<f64> = (0..b).map(|_| r.gen_range(-5.0..5.0)).collect();
    let back = model.backproject(&model.project(&x).unwrap()).unwrap();
    let round_trip = x.iter().zip(&back).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    (value_err, vector_err, round_trip)
}

/// Worst deviations over `n` random samples: (alpha = 1 identity, PC
/// coordinates 2..b under a random alpha).
pub fn pca_identity_errors(seed: u64, n: usize) -> (f64, f64) {
    let mut rng = rng(seed);
    let b = 8;
    let train = random_samples(&mut rng, 40, b);
    let model = hyperaug::pca::PcaModel::fit(&train).unwrap();
    let (mut ident, mut others) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let x = Spectrum::labeled((0..b).map(|_| rng.gen_range(-4.0..4.0)).collect(), 1);
        let same = hyperaug::augment::pca_augment(&model, &x, 1.0).unwrap();
        for (a, c) in same.values.iter().zip(&x.values) {
            ident = ident.max((a - c).abs());
        }
        let alpha = rng.gen_range(0.5..1.5);
        let moved = hyperaug::augment::pca_augment(&model, &x, alpha).unwrap();
        let (p_in, p_out) = (model.project(&x.values).unwrap(), model.project(&moved.values).unwrap());
        for k in 1..b {
            others = others.max((p_in[k] - p_out[k]).abs());
        }
    }
    (ident, others)
}

/// Relative deviation of the per-band perturbation variance from
/// `scale · σ²`, worst band, over `draws` samples.
pub fn noise_variance_deviation(draws: usize, scale: f64) -> f64 {
    let sigma = [0.5, 1.0, 2.0];
    let mut train = Vec::new();
    // Two samples at mean ± σ give a population σ of exactly σ per band.
    for sign in [-1.0, 1.0] {
        train.push(Spectrum::labeled(sigma.iter().map(|s| 10.0 + sign * s).collect(), 1));
    }
    let aug = hyperaug::augment::NoiseAugmenter::fit(&train, scale).unwrap();
    let x = Spectrum::labeled(vec![3.0, 4.0, 5.0], 1);
    let mut rng = hyperaug::seed::rng(17);
    let mut deltas = vec![Vec::with_capacity(draws); 3];
    for _ in 0..draws {
        let y = hyperaug::augment::Augment::synthesize(&aug, &x, &mut rng).unwrap();
        for j in 0..3 {
            deltas[j].push(y.values[j] - x.values[j]);
        }
    }
    (0..3)
        .map(|j| {
            let target = scale * sigma[j] * sigma[j];
            (sample_variance(&deltas[j]) - target).abs() / target
        })
        .fold(0.0, f64::max)
}

/// Micro-model for the gradient check: b = 12, three kernels, two classes,
/// small dense layers, with a random batch.
pub fn micro_model(seed: u64) -> (CnnModel, Vec<Spectrum>, Vec<u16>) {
    let config = hyperaug::cnn::CnnConfig {
        kernels: 3,
        dense1: 8,
        dense2: 6,
        seed,
        ..hyperaug::cnn::CnnConfig::new(12, 2)
    };
    let mut model = CnnModel::new(config).unwrap();
    let mut r = rng(seed);
    // Non-trivial BN affine parameters and biases so every path is exercised.
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += r.gen_range(-0.1..0.1);
        }
    }
    let batch: Vec<Spectrum> = (0..6)
        .map(|_| Spectrum::new((0..12).map(|_| r.gen_range(0.0..1.0)).collect()))
        .collect();
    let labels = vec![1, 2, 1, 2, 2, 1];
    (model, batch, labels)
}

/// Trains the default CNN on the synthetic 3-class, 20-band, 50-per-class
/// scene (balanced split, 90 train / 30 val) for at most 200 epochs and
/// returns the best validation accuracy.
pub fn learning_sanity_run(seed: u64) -> f64 {
    let (cube, labels) = hyperaug::hsio::generate_synthetic(3, 20, 50, seed).unwrap();
    let split = hyperaug::splits::split_balanced(&labels, 90, 30, seed).unwrap();
    let train = hyperaug::experiment::gather(&cube, &split.train);
    let val = hyperaug::experiment::gather(&cube, &split.val);
    let norm = hyperaug::hsio::Normalizer::fit(&train).unwrap();
    let train: Vec<Spectrum> = train.iter().map(|s| norm.apply(s)).collect();
    let val: Vec<Spectrum> = val.iter().map(|s| norm.apply(s)).collect();
    let config = hyperaug::cnn::CnnConfig {
        max_epochs: 200,
        seed,
        ..hyperaug::cnn::CnnConfig::new(20, 3)
    };
    let (_, history) = hyperaug::cnn::train(CnnModel::new(config).unwrap(), &train, &val).unwrap();
    history.best_val_accuracy
}

/// Number of disagreements between the library vote and the reference over
/// `cases` random tables (A ≤ 8, C ≤ 6); half of them use coarse entries so
/// vote and probability ties are common.
pub fn vote_mismatches(cases: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..cases)
        .filter(|i| {
            let members = r.gen_range(1..=9usize);
            let classes = r.gen_range(1..=6usize);
            let table = random_table(&mut r, members, classes, i % 2 == 0);
            let got = hyperaug::tta::vote(&table).unwrap();
            let (label, tied) = reference_vote(&table);
            got.label != label || got.soft_vote_used != tied
        })
        .count()
}

/// Random difference vectors with n = 1..=10 non-zero entries; every other
/// case draws small integers so tied ranks occur.
pub fn wilcoxon_cases(seed: u64, per_n: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for n in 1..=10usize {
        for i in 0..per_n {
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let sign = if r.gen::<bool>() { 1.0 } else { -1.0 };
                    if i % 2 == 0 {
                        sign * f64::from(r.gen_range(1u8..=4))
                    } else {
                        sign * r.gen_range(0.01..10.0)
                    }
                })
                .collect();
            out.push(d);
        }
    }
    out
}

/// Mean test OA (percent) of `without`, `pca` and `pca-on` over five seeds.
/// Each seed draws its own overlapping synthetic scene (10 training pixels
/// per class) and runs one split of the experiment pipeline.
pub fn augmentation_trend(base_seed: u64) -> (f64, f64, f64) {
    use hyperaug::experiment::{self, ExperimentConfig, Variant};
    let params = hyperaug::hsio::SyntheticParams { spread: 0.12, shape_amplitude: 0.1 };
    let mut sums = (0.0, 0.0, 0.0);
    let seeds = 5;
    for seed in base_seed..base_seed + seeds {
        let (cube, labels) = hyperaug::hsio::generate_synthetic_with(3, 20, 120, seed, params).unwrap();
        let config = ExperimentConfig {
            cube: "unused".into(),
            labels: "unused".into(),
            scenario: hyperaug::splits::Scenario::Balanced { train_total: 30, val_total: 15 },
            runs: 1,
            variants: vec![Variant::Without, Variant::Pca, Variant::PcaOn],
            augment: hyperaug::augment::AugmentConfig::default(),
            tta_augmentations: 4,
            cnn: hyperaug::cnn::CnnConfig { max_epochs: 200, ..hyperaug::cnn::CnnConfig::new(1, 1) },
            out_dir: "unused".into(),
            seed,
        };
        let out = experiment::run_experiment_on(&config, &cube, &labels).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let oa = |v: Variant| {
            100.0
                * out
                    .aggregates
                    .iter()
                    .find(|a| a.variant == v.name())
                    .expect("variant aggregate")
                    .overall_mean
        };
        sums.0 += oa(Variant::Without);
        sums.1 += oa(Variant::Pca);
        sums.2 += oa(Variant::PcaOn);
    }
    let n = seeds as f64;
    (sums.0 / n, sums.1 / n, sums.2 / n)
}
