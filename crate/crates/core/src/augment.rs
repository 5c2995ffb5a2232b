//! Sample synthesis: PCA-based scaling along the leading principal
//! component, per-class Gaussian noise injection, and the offline
//! set-enlargement policy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsio::Spectrum;
use crate::pca::PcaModel;

/// Anything that can synthesize a new sample from an existing one.
///
/// Implementations must preserve the label and be deterministic given the
/// RNG state.
pub trait Augment: Send + Sync {
    fn synthesize(&self, x: &Spectrum, rng: &mut dyn RngCore) -> Result<Spectrum>;

    fn name(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Pca,
    Noise,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pca => "pca",
            Method::Noise => "noise",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Method::Pca),
            "noise" => Ok(Method::Noise),
            other => Err(Error::Config(format!("unknown augmentation method {other:?}"))),
        }
    }
}

/// How many synthetic samples each class receives offline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnlargePolicy {
    /// `min(n_c, n_max − n_c)` per class; a perfectly balanced set is
    /// doubled instead.
    #[default]
    CapToMajority,
    /// Like `CapToMajority`, but every class holding the maximum count is
    /// doubled even when the set is imbalanced.
    DoubleMajority,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub method: Method,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Scale of the per-class noise variance.
    pub noise_scale: f64,
    /// 1-based principal components whose coordinate is scaled.
    pub components: Vec<usize>,
    pub policy: EnlargePolicy,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            method: Method::Pca,
            alpha_min: 0.9,
            alpha_max: 1.1,
            noise_scale: 0.25,
            components: vec![1],
            policy: EnlargePolicy::CapToMajority,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min.is_finite() && self.alpha_max.is_finite()) || self.alpha_min > self.alpha_max {
            return Err(Error::Config(format!(
                "alpha bounds must be finite with alpha_min <= alpha_max, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be >= 0, got {}", self.noise_scale)));
        }
        if self.components.is_empty() || self.components.contains(&0) {
            return Err(Error::Config("components must be a non-empty list of 1-based indices".into()));
        }
        Ok(())
    }
}

/// Uniform draw from `[alpha_min, alpha_max]`.
pub fn draw_alpha<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> f64 {
    if config.alpha_min == config.alpha_max {
        config.alpha_min
    } else {
        rng.gen_range(config.alpha_min..=config.alpha_max)
    }
}

/// Scales the first principal coordinate of `x` by `alpha` and maps back
/// through all components.
pub fn pca_augment(model: &PcaModel, x: &Spectrum, alpha: f64) -> Result<Spectrum> {
    pca_augment_components(model, x, &[(1, alpha)])
}

/// Scales each listed 1-based principal coordinate by its factor.
pub fn pca_augment_components(model: &PcaModel, x: &Spectrum, scales: &[(usize, f64)]) -> Result<Spectrum> {
    let b = model.bands();
    if x.values.len() != b {
        return Err(Error::dim(b, x.values.len()));
    }
    // Only the listed coordinates move, so x' = x + Σ (α − 1) tₖ φₖ.
    let basis = model.basis();
    let mut deltas = Vec::with_capacity(scales.len());
    for &(component, alpha) in scales {
        if !alpha.is_finite() {
            return Err(Error::Numeric(format!("alpha must be finite, got {alpha}")));
        }
        if component == 0 || component > b {
            return Err(Error::Config(format!("component {component} outside 1..={b}")));
        }
        let phi = basis.column(component - 1);
        let t: f64 = x.values.iter().zip(model.mean()).zip(phi).map(|((v, m), p)| (v - m) * p).sum();
        deltas.push((phi, (alpha - 1.0) * t));
    }
    let mut values = x.values.clone();
    for (phi, d) in deltas {
        for (v, p) in values.iter_mut().zip(phi) {
            *v += d * p;
        }
    }
    Ok(x.with_values(values))
}

/// PCA augmentation with a fresh uniform alpha per synthesized sample.
#[derive(Clone, Debug)]
pub struct PcaAugmenter {
    pub model: PcaModel,
    pub config: AugmentConfig,
}

impl PcaAugmenter {
    pub fn new(model: PcaModel, config: AugmentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, config })
    }

    /// Fits the PCA model on `train` and wraps it.
    pub fn fit(train: &[Spectrum], config: AugmentConfig) -> Result<Self> {
        Self::new(PcaModel::fit(train)?, config)
    }
}

impl Augment for PcaAugmenter {
    fn synthesize(&self, x: &Spectrum, rng: &mut dyn RngCore) -> Result<Spectrum> {
        let scales: Vec<(usize, f64)> = self
            .config
            .components
            .iter()
            .map(|&c| (c, draw_alpha(&self.config, rng)))
            .collect();
        pca_augment_components(&self.model, x, &scales)
    }

    fn name(&self) -> &'static str {
        "pca"
    }
}

/// Per-class, per-band standard deviations of the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassNoiseModel {
    pub sigma: BTreeMap<u16, Vec<f64>>,
    pub warnings: Vec<String>,
}

impl ClassNoiseModel {
    pub fn sigma(&self, class: u16) -> Option<&[f64]> {
        self.sigma.get(&class).map(Vec::as_slice)
    }
}

/// Population standard deviation of every band within each class.
///
/// Classes with a single sample get an all-zero sigma and a warning.
pub fn noise_fit(train: &[Spectrum]) -> Result<ClassNoiseModel> {
    let first = train
        .first()
        .ok_or_else(|| Error::Degenerate("cannot fit noise model on an empty training set".into()))?;
    let b = first.len();
    let mut groups: BTreeMap<u16, Vec<&Spectrum>> = BTreeMap::new();
    for s in train {
        if s.len() != b {
            return Err(Error::dim(b, s.len()));
        }
        let label = s
            .label
            .ok_or_else(|| Error::Data("noise model needs labeled samples".into()))?;
        groups.entry(label).or_default().push(s);
    }
    let mut model = ClassNoiseModel {
        sigma: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for (class, members) in groups {
        let n = members.len() as f64;
        if members.len() < 2 {
            let msg = format!("class {class} has a single training sample; its noise sigma is zero");
            log::warn!("{msg}");
            model.warnings.push(msg);
            model.sigma.insert(class, vec![0.0; b]);
            continue;
        }
        let sigma = (0..b)
            .map(|j| {
                let mean = members.iter().map(|s| s.values[j]).sum::<f64>() / n;
                let var = members
                    .iter()
                    .map(|s| (s.values[j] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                var.sqrt()
            })
            .collect();
        model.sigma.insert(class, sigma);
    }
    Ok(model)
}

/// Adds `n ~ Normal(0, noise_scale · σ_c²)` independently to every band.
pub fn noise_augment<R: Rng + ?Sized>(
    model: &ClassNoiseModel,
    x: &Spectrum,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Spectrum> {
    let class = x
        .label
        .ok_or_else(|| Error::Data("noise augmentation needs a labeled sample".into()))?;
    let sigma = model.sigma(class).ok_or(Error::Class(class))?;
    if sigma.len() != x.len() {
        return Err(Error::dim(sigma.len(), x.len()));
    }
    let scale = noise_scale.sqrt();
    let values = x
        .values
        .iter()
        .zip(sigma)
        .map(|(&v, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            v + scale * s * z
        })
        .collect();
    Ok(x.with_values(values))
}

/// Noise injection with a fixed scale.
///
/// At test time the true class is unknown, so a sample without a label (or
/// with a class the model has never seen) is perturbed with the band-wise
/// mean of all class sigmas.
#[derive(Clone, Debug)]
pub struct NoiseAugmenter {
    pub model: ClassNoiseModel,
    pub noise_scale: f64,
    pooled: Vec<f64>,
}

impl NoiseAugmenter {
    pub fn new(model: ClassNoiseModel, noise_scale: f64) -> Result<Self> {
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be >= 0, got {noise_scale}")));
        }
        let b = model.sigma.values().next().map_or(0, Vec::len);
        let k = model.sigma.len().max(1) as f64;
        let pooled = (0..b)
            .map(|j| model.sigma.values().map(|s| s[j]).sum::<f64>() / k)
            .collect();
        Ok(Self {
            model,
            noise_scale,
            pooled,
        })
    }

    pub fn fit(train: &[Spectrum], noise_scale: f64) -> Result<Self> {
        Self::new(noise_fit(train)?, noise_scale)
    }

    pub fn pooled_sigma(&self) -> &[f64] {
        &self.pooled
    }
}

impl Augment for NoiseAugmenter {
    fn synthesize(&self, x: &Spectrum, rng: &mut dyn RngCore) -> Result<Spectrum> {
        match x.label.filter(|c| self.model.sigma.contains_key(c)) {
            Some(_) => noise_augment(&self.model, x, self.noise_scale, rng),
            None => {
                if self.pooled.len() != x.len() {
                    return Err(Error::dim(self.pooled.len(), x.len()));
                }
                let scale = self.noise_scale.sqrt();
                let values = x
                    .values
                    .iter()
                    .zip(&self.pooled)
                    .map(|(&v, &s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        v + scale * s * z
                    })
                    .collect();
                Ok(x.with_values(values))
            }
        }
    }

    fn name(&self) -> &'static str {
        "noise"
    }
}

/// Number of synthetic samples per class for the given class counts.
pub fn enlargement_quota(counts: &BTreeMap<u16, usize>, policy: EnlargePolicy) -> BTreeMap<u16, usize> {
    let n_max = counts.values().copied().max().unwrap_or(0);
    let balanced = counts.values().all(|&n| n == n_max);
    counts
        .iter()
        .map(|(&c, &n)| {
            let k = if balanced || (policy == EnlargePolicy::DoubleMajority && n == n_max) {
                n
            } else {
                n.min(n_max - n)
            };
            (c, k)
        })
        .collect()
}

/// Enlarges a labeled training set offline.
///
/// Returns the originals (in input order) followed by the synthetic samples,
/// grouped by ascending class id. Each synthetic sample is made from an
/// original of its class drawn uniformly with replacement.
pub fn offline_enlarge(
    train: &[Spectrum],
    augmenter: &dyn Augment,
    policy: EnlargePolicy,
    rng: &mut dyn RngCore,
) -> Result<Vec<Spectrum>> {
    if train.is_empty() {
        return Err(Error::Degenerate("cannot enlarge an empty training set".into()));
    }
    let mut by_class: BTreeMap<u16, Vec<&Spectrum>> = BTreeMap::new();
    for s in train {
        let label = s
            .label
            .ok_or_else(|| Error::Data("offline augmentation needs labeled samples".into()))?;
        by_class.entry(label).or_default().push(s);
    }
    let counts = by_class.iter().map(|(&c, v)| (c, v.len())).collect();
    let quota = enlargement_quota(&counts, policy);

    let mut out: Vec<Spectrum> = train.to_vec();
    out.reserve(quota.values().sum());
    for (class, members) in &by_class {
        for _ in 0..quota[class] {
            let source = members[rng.gen_range(0..members.len())];
            let mut synth = augmenter.synthesize(source, rng)?;
            synth.label = Some(*class);
            synth.synthetic = true;
            out.push(synth);
        }
    }
    Ok(out)
}
