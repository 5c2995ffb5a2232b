//! 1D spectral CNN: Conv → BN → ReLU → MaxPool → FC → ReLU → FC → ReLU →
//! FC → Softmax, trained with softmax cross-entropy and ADAM.
//!
//! Activations are kept channel-last: the convolution output of a batch of
//! `B` spectra is a `(B·L) x n` matrix (row `s·L + i` is position `i` of
//! sample `s`), and the pooled features are flattened position-major,
//! channel-minor.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsio::Spectrum;
use crate::seed;
use crate::tta::Classifier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub bands: usize,
    pub classes: usize,
    pub kernels: usize,
    pub kernel_len: usize,
    pub pool: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl CnnConfig {
    /// Defaults: 200 kernels of length 5, pool 2, dense 512 and 128, ADAM
    /// with lr 1e-4 / β₁ 0.9 / β₂ 0.999, batch 64, patience 15.
    pub fn new(bands: usize, classes: usize) -> Self {
        Self {
            bands,
            classes,
            kernels: 200,
            kernel_len: 5,
            pool: 2,
            dense1: 512,
            dense2: 128,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            batch_size: 64,
            patience: 15,
            max_epochs: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bands", self.bands),
            ("classes", self.classes),
            ("kernels", self.kernels),
            ("kernel_len", self.kernel_len),
            ("pool", self.pool),
            ("dense1", self.dense1),
            ("dense2", self.dense2),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.bands < self.kernel_len {
            return Err(Error::Config(format!(
                "bands ({}) must be >= kernel length ({})",
                self.bands, self.kernel_len
            )));
        }
        if self.pooled_len() == 0 {
            return Err(Error::Config("pooling leaves no features".into()));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("invalid ADAM hyper-parameters".into()));
        }
        Ok(())
    }

    /// Length of the valid convolution output.
    pub fn conv_len(&self) -> usize {
        self.bands + 1 - self.kernel_len
    }

    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool
    }

    pub fn flat_len(&self) -> usize {
        self.pooled_len() * self.kernels
    }
}

macro_rules! param_tensors {
    ($($name:ident),* $(,)?) => {
        /// Trainable tensors; the same layout holds gradients and ADAM moments.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Params {
            $(pub $name: Vec<f64>,)*
        }

        impl Params {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn tensors(&self) -> Vec<&[f64]> {
                vec![$(&self.$name),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
                vec![$(&mut self.$name),*]
            }

            pub fn zeros_like(other: &Params) -> Params {
                Params { $($name: vec![0.0; other.$name.len()],)* }
            }
        }
    };
}

param_tensors!(conv_w, conv_b, bn_gamma, bn_beta, fc1_w, fc1_b, fc2_w, fc2_b, out_w, out_b);

impl Params {
    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub params: Params,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub adam_m: Params,
    pub adam_v: Params,
    pub step: u64,
    pub mode: Mode,
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    batch: usize,
    patches: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    relu: Array2<f64>,
    pool_pick: Vec<usize>,
    pooled: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    probs: Array2<f64>,
}

fn view(v: &[f64], rows: usize, cols: usize) -> ndarray::ArrayView2<'_, f64> {
    ndarray::ArrayView2::from_shape((rows, cols), v).expect("tensor shape")
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl CnnModel {
    /// Fresh model: He-scaled Gaussian weights (plain `1/fan_in` variance for
    /// the output layer), zero biases, BN scale 1 and shift 0.
    pub fn new(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(config.seed, &[0x1417]));
        let (k, n, f) = (config.kernel_len, config.kernels, config.flat_len());
        let (d1, d2, c) = (config.dense1, config.dense2, config.classes);
        let mut gauss = |count: usize, fan_in: usize, gain: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            (0..count).map(|_| dist.sample(&mut rng)).collect()
        };
        let params = Params {
            conv_w: gauss(k * n, k, 2.0),
            conv_b: vec![0.0; n],
            bn_gamma: vec![1.0; n],
            bn_beta: vec![0.0; n],
            fc1_w: gauss(f * d1, f, 2.0),
            fc1_b: vec![0.0; d1],
            fc2_w: gauss(d1 * d2, d1, 2.0),
            fc2_b: vec![0.0; d2],
            out_w: gauss(d2 * c, d2, 1.0),
            out_b: vec![0.0; c],
        };
        Ok(Self {
            adam_m: Params::zeros_like(&params),
            adam_v: Params::zeros_like(&params),
            params,
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
            step: 0,
            mode: Mode::Train,
            config,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn batch_matrix(&self, batch: &[Spectrum]) -> Result<Array2<f64>> {
        let b = self.config.bands;
        let mut x = Array2::zeros((batch.len(), b));
        for (i, s) in batch.iter().enumerate() {
            if s.len() != b {
                return Err(Error::dim(b, s.len()));
            }
            x.row_mut(i).assign(&ndarray::ArrayView1::from(s.values.as_slice()));
        }
        Ok(x)
    }

    fn run(&self, x: &Array2<f64>, mode: Mode) -> Result<Cache> {
        let cfg = &self.config;
        let p = &self.params;
        let (bsz, k, n, l) = (x.nrows(), cfg.kernel_len, cfg.kernels, cfg.conv_len());
        if bsz == 0 {
            return Err(Error::Degenerate("empty batch".into()));
        }
        let m = bsz * l;

        let mut patches = Array2::zeros((m, k));
        for s in 0..bsz {
            for i in 0..l {
                for j in 0..k {
                    patches[[s * l + i, j]] = x[[s, i + j]];
                }
            }
        }
        let mut z = patches.dot(&view(&p.conv_w, k, n));
        z += &ndarray::ArrayView1::from(p.conv_b.as_slice());

        let (batch_mean, batch_var) = match mode {
            Mode::Train => {
                let mean = z.mean_axis(Axis(0)).expect("non-empty");
                let var = z
                    .rows()
                    .into_iter()
                    .fold(Array1::zeros(n), |acc: Array1<f64>, row| {
                        acc + (&row - &mean).mapv(|d| d * d)
                    })
                    / m as f64;
                (mean, var)
            }
            Mode::Inference => (
                Array1::from(self.running_mean.clone()),
                Array1::from(self.running_var.clone()),
            ),
        };
        let inv_std = batch_var.mapv(|v| 1.0 / (v + cfg.bn_eps).sqrt());
        let xhat = (&z - &batch_mean) * &inv_std;
        let mut relu = &xhat * &ndarray::ArrayView1::from(p.bn_gamma.as_slice());
        relu += &ndarray::ArrayView1::from(p.bn_beta.as_slice());
        relu_inplace(&mut relu);

        let pl = cfg.pooled_len();
        let pool = cfg.pool;
        let mut pooled = Array2::zeros((bsz, pl * n));
        let mut pool_pick = vec![0usize; bsz * pl * n];
        for s in 0..bsz {
            for i in 0..pl {
                let base = s * l + i * pool;
                for c in 0..n {
                    let mut best = base;
                    for r in base + 1..base + pool {
                        if relu[[r, c]] > relu[[best, c]] {
                            best = r;
                        }
                    }
                    pooled[[s, i * n + c]] = relu[[best, c]];
                    pool_pick[(s * pl + i) * n + c] = best;
                }
            }
        }

        let mut h1 = pooled.dot(&view(&p.fc1_w, cfg.flat_len(), cfg.dense1));
        h1 += &ndarray::ArrayView1::from(p.fc1_b.as_slice());
        relu_inplace(&mut h1);
        let mut h2 = h1.dot(&view(&p.fc2_w, cfg.dense1, cfg.dense2));
        h2 += &ndarray::ArrayView1::from(p.fc2_b.as_slice());
        relu_inplace(&mut h2);
        let mut logits = h2.dot(&view(&p.out_w, cfg.dense2, cfg.classes));
        logits += &ndarray::ArrayView1::from(p.out_b.as_slice());
        let probs = softmax_rows(&logits);
        if probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in forward pass".into()));
        }
        Ok(Cache {
            batch: bsz,
            patches,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            relu,
            pool_pick,
            pooled,
            h1,
            h2,
            probs,
        })
    }

    /// Class probabilities for a batch, one row per spectrum, using the
    /// model's current mode for batch normalization.
    pub fn forward(&self, batch: &[Spectrum]) -> Result<Array2<f64>> {
        let x = self.batch_matrix(batch)?;
        Ok(self.run(&x, self.mode)?.probs)
    }

    fn label_indices(&self, labels: &[u16]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| {
                if l == 0 || usize::from(l) > self.config.classes {
                    Err(Error::Class(l))
                } else {
                    Ok(usize::from(l) - 1)
                }
            })
            .collect()
    }

    /// Mean softmax cross-entropy of `batch` against `labels` (1-based) and
    /// its exact gradient, with batch-norm in training mode.
    pub fn loss_and_gradients(&self, batch: &[Spectrum], labels: &[u16]) -> Result<(f64, Params)> {
        if batch.len() != labels.len() {
            return Err(Error::dim(batch.len(), labels.len()));
        }
        let targets = self.label_indices(labels)?;
        let x = self.batch_matrix(batch)?;
        let cache = self.run(&x, Mode::Train)?;
        let (loss, grads) = self.backward(&cache, &targets);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        Ok((loss, grads))
    }

    /// Mean cross-entropy of `batch` in training mode, without gradients.
    pub fn loss(&self, batch: &[Spectrum], labels: &[u16]) -> Result<f64> {
        let targets = self.label_indices(labels)?;
        let x = self.batch_matrix(batch)?;
        let cache = self.run(&x, Mode::Train)?;
        Ok(cross_entropy(&cache.probs, &targets))
    }

    fn backward(&self, cache: &Cache, targets: &[usize]) -> (f64, Params) {
        let cfg = &self.config;
        let p = &self.params;
        let bsz = cache.batch;
        let (k, n, l, pl) = (cfg.kernel_len, cfg.kernels, cfg.conv_len(), cfg.pooled_len());
        let m = bsz * l;
        let loss = cross_entropy(&cache.probs, targets);

        let mut d_logits = cache.probs.clone();
        for (s, &t) in targets.iter().enumerate() {
            d_logits[[s, t]] -= 1.0;
        }
        d_logits /= bsz as f64;

        let out_w = cache.h2.t().dot(&d_logits);
        let out_b = d_logits.sum_axis(Axis(0));
        let mut d_h2 = d_logits.dot(&view(&p.out_w, cfg.dense2, cfg.classes).t());
        d_h2.zip_mut_with(&cache.h2, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });

        let fc2_w = cache.h1.t().dot(&d_h2);
        let fc2_b = d_h2.sum_axis(Axis(0));
        let mut d_h1 = d_h2.dot(&view(&p.fc2_w, cfg.dense1, cfg.dense2).t());
        d_h1.zip_mut_with(&cache.h1, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });

        let fc1_w = cache.pooled.t().dot(&d_h1);
        let fc1_b = d_h1.sum_axis(Axis(0));
        let d_pooled = d_h1.dot(&view(&p.fc1_w, cfg.flat_len(), cfg.dense1).t());

        let mut d_y = Array2::<f64>::zeros((m, n));
        for s in 0..bsz {
            for i in 0..pl {
                for c in 0..n {
                    let row = cache.pool_pick[(s * pl + i) * n + c];
                    d_y[[row, c]] += d_pooled[[s, i * n + c]];
                }
            }
        }
        d_y.zip_mut_with(&cache.relu, |d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });

        let bn_beta = d_y.sum_axis(Axis(0));
        let bn_gamma = (&d_y * &cache.xhat).sum_axis(Axis(0));
        let gamma = ndarray::ArrayView1::from(p.bn_gamma.as_slice());
        let d_xhat = &d_y * &gamma;
        let sum_dxhat = d_xhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
        let mf = m as f64;
        let mut d_z = &d_xhat * mf - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        d_z *= &(&cache.inv_std / mf);

        let conv_w = cache.patches.t().dot(&d_z);
        let conv_b = d_z.sum_axis(Axis(0));
        debug_assert_eq!(conv_w.dim(), (k, n));

        let flat = |a: Array2<f64>| a.as_standard_layout().iter().copied().collect::<Vec<_>>();
        let grads = Params {
            conv_w: flat(conv_w),
            conv_b: conv_b.to_vec(),
            bn_gamma: bn_gamma.to_vec(),
            bn_beta: bn_beta.to_vec(),
            fc1_w: flat(fc1_w),
            fc1_b: fc1_b.to_vec(),
            fc2_w: flat(fc2_w),
            fc2_b: fc2_b.to_vec(),
            out_w: flat(out_w),
            out_b: out_b.to_vec(),
        };
        (loss, grads)
    }

    /// One ADAM update with bias correction; increments the step counter.
    pub fn adam_step(&mut self, grads: &Params) -> Result<()> {
        let cfg = &self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (lr, b1, b2, eps) = (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
        let grads = grads.tensors();
        let params = self.params.tensors_mut();
        let ms = self.adam_m.tensors_mut();
        let vs = self.adam_v.tensors_mut();
        for (((theta, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            if theta.len() != g.len() {
                return Err(Error::dim(theta.len(), g.len()));
            }
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if !self.params.all_finite() {
            return Err(Error::Numeric("non-finite parameter after ADAM step".into()));
        }
        Ok(())
    }

    fn train_batch(&mut self, batch: &[Spectrum], labels: &[u16]) -> Result<f64> {
        let targets = self.label_indices(labels)?;
        let x = self.batch_matrix(batch)?;
        let cache = self.run(&x, Mode::Train)?;
        let (loss, grads) = self.backward(&cache, &targets);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        let mom = self.config.bn_momentum;
        let count = (cache.batch * self.config.conv_len()) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for c in 0..self.config.kernels {
            self.running_mean[c] = (1.0 - mom) * self.running_mean[c] + mom * cache.batch_mean[c];
            self.running_var[c] = (1.0 - mom) * self.running_var[c] + mom * cache.batch_var[c] * unbias;
        }
        self.adam_step(&grads)?;
        Ok(loss)
    }

    /// Inference-mode probabilities for one spectrum.
    pub fn predict_proba(&self, x: &Spectrum) -> Result<Vec<f64>> {
        Ok(self.predict_proba_batch(std::slice::from_ref(x))?.remove(0))
    }

    /// Inference-mode probabilities, one vector per input.
    pub fn predict_proba_batch(&self, xs: &[Spectrum]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.batch_matrix(xs)?;
        let probs = self.run(&x, Mode::Inference)?.probs;
        Ok(probs.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Most probable 1-based class; the lowest class id wins ties.
    pub fn predict(&self, x: &Spectrum) -> Result<u16> {
        Ok(argmax(&self.predict_proba(x)?) as u16 + 1)
    }

    pub fn predict_batch(&self, xs: &[Spectrum]) -> Result<Vec<u16>> {
        Ok(self
            .predict_proba_batch(xs)?
            .iter()
            .map(|p| argmax(p) as u16 + 1)
            .collect())
    }

    /// Fraction of `xs` whose predicted class equals its label.
    pub fn accuracy(&self, xs: &[Spectrum]) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for chunk in xs.chunks(256) {
            let preds = self.predict_batch(chunk)?;
            correct += preds
                .iter()
                .zip(chunk)
                .filter(|(p, s)| Some(**p) == s.label)
                .count();
        }
        Ok(correct as f64 / xs.len() as f64)
    }

    /// Versioned binary checkpoint: `HCNN`, `u32` version, `u32` length of
    /// the JSON config echo, the JSON itself, a mode byte, the `u64` ADAM
    /// step, then every tensor as little-endian `f64` in declared order
    /// (parameters, running mean, running variance, first moments, second
    /// moments).
    pub fn encode(&self) -> Vec<u8> {
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.push(match self.mode {
            Mode::Train => 0,
            Mode::Inference => 1,
        });
        out.extend_from_slice(&self.step.to_le_bytes());
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .chain([self.running_mean.as_slice(), self.running_var.as_slice()])
            .chain(self.adam_m.tensors())
            .chain(self.adam_v.tensors());
        for t in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = cur.u32()? as usize;
        let config: CnnConfig =
            serde_json::from_slice(cur.take(cfg_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let mode = match cur.take(1)?[0] {
            0 => Mode::Train,
            1 => Mode::Inference,
            other => return Err(Error::Format(format!("bad mode byte {other}"))),
        };
        let step = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        let mut model = CnnModel::new(config)?;
        model.mode = mode;
        model.step = step;
        let n = model.config.kernels;
        let (mut rm, mut rv) = (vec![0.0; n], vec![0.0; n]);
        {
            let tensors = model
                .params
                .tensors_mut()
                .into_iter()
                .chain([rm.as_mut_slice(), rv.as_mut_slice()])
                .chain(model.adam_m.tensors_mut())
                .chain(model.adam_v.tensors_mut());
            for t in tensors {
                for v in t.iter_mut() {
                    *v = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
                }
            }
        }
        model.running_mean = rm;
        model.running_var = rv;
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"HCNN";
const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn cross_entropy(probs: &Array2<f64>, targets: &[usize]) -> f64 {
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(s, &t)| -probs[[s, t]].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / targets.len() as f64
}

impl Classifier for CnnModel {
    fn classes(&self) -> usize {
        self.config.classes
    }

    fn predict_proba_batch(&self, xs: &[Spectrum]) -> Result<Vec<Vec<f64>>> {
        CnnModel::predict_proba_batch(self, xs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Wall time of the epoch; excluded from determinism comparisons.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Trains `model` with shuffled mini-batches until the validation accuracy
/// fails to strictly improve for `patience` consecutive epochs (or
/// `max_epochs` is reached). Returns the best-validation snapshot, switched
/// to inference mode.
pub fn train(mut model: CnnModel, train: &[Spectrum], val: &[Spectrum]) -> Result<(CnnModel, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Degenerate("training and validation sets must be non-empty".into()));
    }
    let labels: Vec<u16> = train
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Data("unlabeled training sample".into())))
        .collect::<Result<_>>()?;
    let cfg = model.config.clone();
    let mut rng = seed::rng(seed::derive(cfg.seed, &[0x5417]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History {
        best_val_accuracy: f64::NEG_INFINITY,
        ..History::default()
    };
    let mut best = model.clone();
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        model.set_mode(Mode::Train);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Spectrum> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch_labels: Vec<u16> = chunk.iter().map(|&i| labels[i]).collect();
            loss_sum += model.train_batch(&batch, &batch_labels)? * chunk.len() as f64;
        }
        model.set_mode(Mode::Inference);
        let val_accuracy = model.accuracy(val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_accuracy > history.best_val_accuracy {
            history.best_val_accuracy = val_accuracy;
            history.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    best.set_mode(Mode::Inference);
    Ok((best, history))
}
