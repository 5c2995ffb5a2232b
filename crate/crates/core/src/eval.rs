//! Accuracy metrics, run aggregation, the two-tailed Wilcoxon signed-rank
//! test and timing helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::splits::ScenarioKind;

/// Largest number of non-zero differences handled by the exact branch.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

/// Confusion matrix and accuracies of one labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub classes: usize,
    /// `confusion[t][p]` counts pixels of true class `t + 1` predicted as `p + 1`.
    pub confusion: Vec<Vec<u64>>,
    /// Recall per class; `None` for classes with no true samples.
    pub per_class: Vec<Option<f64>>,
    pub overall: f64,
    pub average: f64,
    pub absent_classes: Vec<u16>,
}

/// Scores `predicted` against `truth`; labels are 1-based and at most `classes`.
pub fn score(truth: &[u16], predicted: &[u16], classes: usize) -> Result<Scores> {
    if truth.len() != predicted.len() {
        return Err(Error::dim(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::Degenerate("cannot score an empty labeling".into()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for l in [t, p] {
            if l == 0 || usize::from(l) > classes {
                return Err(Error::Class(l));
            }
        }
        confusion[usize::from(t) - 1][usize::from(p) - 1] += 1;
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut absent_classes = Vec::new();
    let mut correct = 0u64;
    for (k, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        correct += row[k];
        if total == 0 {
            per_class.push(None);
            absent_classes.push(k as u16 + 1);
        } else {
            per_class.push(Some(row[k] as f64 / total as f64));
        }
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(Scores {
        classes,
        confusion,
        overall: correct as f64 / truth.len() as f64,
        average: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        absent_classes,
    })
}

/// The three execution-time categories of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub offline_augment_s: f64,
    pub train_s: f64,
    pub per_sample_infer_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: ScenarioKind,
    pub variant: String,
    pub seed: u64,
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: RunMeta,
    pub scores: Scores,
    pub timings: Timings,
}

/// Mean and sample standard deviation over Monte-Carlo runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub scenario: ScenarioKind,
    pub variant: String,
    pub runs: usize,
    pub classes: usize,
    /// Mean recall per class over the runs in which the class was present.
    pub per_class_mean: Vec<Option<f64>>,
    pub per_class_std: Vec<Option<f64>>,
    pub overall_mean: f64,
    pub overall_std: f64,
    pub average_mean: f64,
    pub average_std: f64,
    pub timings_mean: Timings,
    pub timings_std: Timings,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn aggregate(reports: &[EvaluationReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Degenerate("no reports to aggregate".into()))?;
    let classes = first.scores.classes;
    for r in reports {
        if r.meta.scenario != first.meta.scenario {
            return Err(Error::Config(format!(
                "cannot aggregate scenarios {} and {}",
                first.meta.scenario, r.meta.scenario
            )));
        }
        if r.scores.classes != classes {
            return Err(Error::Config("cannot aggregate reports with different class counts".into()));
        }
    }
    let collect = |f: &dyn Fn(&EvaluationReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (overall_mean, overall_std) = collect(&|r| r.scores.overall);
    let (average_mean, average_std) = collect(&|r| r.scores.average);
    let (off_m, off_s) = collect(&|r| r.timings.offline_augment_s);
    let (tr_m, tr_s) = collect(&|r| r.timings.train_s);
    let (inf_m, inf_s) = collect(&|r| r.timings.per_sample_infer_ms);

    let mut per_class_mean = Vec::with_capacity(classes);
    let mut per_class_std = Vec::with_capacity(classes);
    for k in 0..classes {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.scores.per_class[k]).collect();
        if vals.is_empty() {
            per_class_mean.push(None);
            per_class_std.push(None);
        } else {
            let (m, s) = mean_std(&vals);
            per_class_mean.push(Some(m));
            per_class_std.push(Some(s));
        }
    }
    Ok(AggregateReport {
        scenario: first.meta.scenario,
        variant: first.meta.variant.clone(),
        runs: reports.len(),
        classes,
        per_class_mean,
        per_class_std,
        overall_mean,
        overall_std,
        average_mean,
        average_std,
        timings_mean: Timings {
            offline_augment_s: off_m,
            train_s: tr_m,
            per_sample_infer_ms: inf_m,
        },
        timings_std: Timings {
            offline_augment_s: off_s,
            train_s: tr_s,
            per_sample_infer_ms: inf_s,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// `min(W+, W−)`.
    pub statistic: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Average ranks (1-based) of `|d|`, ties sharing the mean of their ranks.
pub fn signed_ranks(diffs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut ranks = vec![0.0; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn nonzero_diffs(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::dim(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("Wilcoxon inputs must be finite".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a - b).filter(|&d| d != 0.0).collect())
}

fn w_plus(diffs: &[f64], ranks: &[f64]) -> f64 {
    diffs
        .iter()
        .zip(ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum()
}

/// Exact two-tailed p-value of the signed-rank statistic for non-zero
/// differences `diffs`, computed from the null distribution of `W+` over all
/// `2ⁿ` sign assignments of the (tie-averaged) ranks.
pub fn wilcoxon_exact_p(diffs: &[f64]) -> f64 {
    let ranks = signed_ranks(diffs);
    // Doubled ranks are integers even with tie averaging.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed = (2.0 * w_plus(diffs, &ranks)).round() as i64;
    let center = total as i64;
    // Compare |2·W2 − total| to avoid halves.
    let obs_dev = (2 * observed - center).abs();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - center).abs() >= obs_dev)
        .map(|(_, c)| c)
        .sum();
    (extreme as f64 / 2f64.powi(diffs.len() as i32)).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
pub fn wilcoxon_normal_p(diffs: &[f64]) -> f64 {
    let n = diffs.len() as f64;
    let ranks = signed_ranks(diffs);
    let mut abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < abs.len() {
        let mut j = i;
        while j + 1 < abs.len() && abs[j + 1] == abs[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((w_plus(diffs, &ranks) - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

/// Two-tailed Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. With all differences zero the result is
/// `p = 1` flagged as degenerate; otherwise at least 5 non-zero differences
/// are required. Up to [`WILCOXON_EXACT_MAX_N`] the exact null distribution
/// is used, beyond that the normal approximation.
pub fn wilcoxon_two_tailed(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    let diffs = nonzero_diffs(x, y)?;
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            statistic: 0.0,
            n: 0,
            method: WilcoxonMethod::Degenerate,
        });
    }
    if n < 5 {
        return Err(Error::Degenerate(format!(
            "Wilcoxon test needs at least 5 non-zero differences, got {n}"
        )));
    }
    let ranks = signed_ranks(&diffs);
    let wp = w_plus(&diffs, &ranks);
    let total = (n * (n + 1)) as f64 / 2.0;
    let (p_value, method) = if n <= WILCOXON_EXACT_MAX_N {
        (wilcoxon_exact_p(&diffs), WilcoxonMethod::Exact)
    } else {
        (wilcoxon_normal_p(&diffs), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        p_value,
        w_plus: wp,
        statistic: wp.min(total - wp),
        n,
        method,
    })
}

/// Runs `f` and returns its output with the elapsed monotonic wall time in
/// seconds. Reportable numbers should be measured without concurrent load.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let started = Instant::now();
    let out = f();
    (out, started.elapsed().as_secs_f64())
}

/// A named measurement, as collected by [`TimingLog`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLog {
    pub entries: Vec<Timing>,
}

impl TimingLog {
    pub fn measure<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let (out, seconds) = timed(f);
        self.entries.push(Timing {
            label: label.to_string(),
            seconds,
        });
        out
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|t| t.seconds).sum()
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|t| t.label == label).map(|t| t.seconds)
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{:.4}", 100.0 * v))
}

/// Accuracy table with one row per variant: `variant,C1..CC,OA,AA`, in
/// percent; classes absent from every run are left blank.
pub fn accuracy_table_csv(rows: &[AggregateReport]) -> String {
    let classes = rows.iter().map(|r| r.classes).max().unwrap_or(0);
    let mut out = String::from("variant");
    for k in 1..=classes {
        let _ = write!(out, ",C{k}");
    }
    out.push_str(",OA,AA\n");
    for r in rows {
        out.push_str(&r.variant);
        for k in 0..classes {
            let _ = write!(out, ",{}", pct(r.per_class_mean.get(k).copied().flatten()));
        }
        let _ = writeln!(out, ",{},{}", pct(Some(r.overall_mean)), pct(Some(r.average_mean)));
    }
    out
}

/// Timing table: `variant,offline_augment_s,train_s,per_sample_infer_ms`.
pub fn timing_table_csv(rows: &[AggregateReport]) -> String {
    let mut out = String::from("variant,offline_augment_s,train_s,per_sample_infer_ms\n");
    for r in rows {
        let t = r.timings_mean;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            r.variant, t.offline_augment_s, t.train_s, t.per_sample_infer_ms
        );
    }
    out
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()))
}
