//! Synthetic data with known conditional distributions.
//!
//! Classification draws come from an isotropic Gaussian mixture, so the Bayes
//! posterior is available in closed form. The "model" sees the oracle logits
//! through a [`Distortion`] (a temperature and a per-class shift), which makes
//! it miscalibrated in a way temperature or vector scaling can repair.
//!
//! Samples are generated one after another from a single stream, so a batch
//! of size `n` is a prefix of the batch of size `n + m` under the same seed.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{derive_seed, stream, tag};
use crate::scores::{softmax, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussMixSpec {
    pub means: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub class_prior: Vec<f64>,
}

impl GaussMixSpec {
    pub fn new(means: Vec<Vec<f64>>, noise_sd: f64, class_prior: Vec<f64>) -> Result<Self> {
        let spec = Self { means, noise_sd, class_prior };
        spec.validate()?;
        Ok(spec)
    }

    /// Means at the standard basis vectors of `R^K`, equal priors.
    pub fn simplex_corners(k: usize, noise_sd: f64) -> Result<Self> {
        let means = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(means, noise_sd, vec![1.0 / k as f64; k])
    }

    /// `K` means drawn i.i.d. from `N(0, spread² I_d)`, equal priors.
    pub fn random_means(k: usize, d: usize, spread: f64, noise_sd: f64, seed: u64) -> Result<Self> {
        ensure!(d >= 1, "feature dimension must be positive");
        ensure!(spread > 0.0, "mean spread must be positive");
        let mut rng = stream(seed, tag::MEANS);
        let means = (0..k)
            .map(|_| {
                (0..d)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self::new(means, noise_sd, vec![1.0 / k as f64; k])
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        ensure!(k >= 1, "class_prior must be non-empty");
        ensure!(
            self.noise_sd > 0.0 && self.noise_sd.is_finite(),
            "noise_sd must be positive, got {}",
            self.noise_sd
        );
        let d = self.feature_dim();
        ensure!(d >= 1, "means must have positive dimension");
        ensure!(
            self.means.iter().all(|m| m.len() == d && m.iter().all(|v| v.is_finite())),
            "means must be finite vectors of a common dimension"
        );
        ensure!(
            self.class_prior.len() == k,
            "class_prior has {} entries for {k} classes",
            self.class_prior.len()
        );
        ensure!(
            self.class_prior.iter().all(|&p| p >= 0.0 && p.is_finite()),
            "class_prior entries must be nonnegative"
        );
        let total: f64 = self.class_prior.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-12, "class_prior sums to {total}, not 1");
        for i in 0..k {
            for j in 0..i {
                ensure!(self.means[i] != self.means[j], "means {j} and {i} coincide");
            }
        }
        Ok(())
    }

    /// Unnormalized log posterior `ln π_k - |x - μ_k|² / 2σ²`.
    fn log_joint_into(&self, x: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.noise_sd * self.noise_sd);
        for ((o, mu), &pi) in out.iter_mut().zip(&self.means).zip(&self.class_prior) {
            let d2: f64 = mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
            *o = pi.ln() - d2 * inv;
        }
    }

    /// Log posterior shifted to zero mean over its finite entries. Classes
    /// with zero prior get `-∞`.
    pub fn oracle_logits_into(&self, x: &[f64], out: &mut [f64]) {
        self.log_joint_into(x, out);
        let (sum, cnt) = out
            .iter()
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
        let mean = sum / cnt.max(1) as f64;
        for o in out.iter_mut() {
            *o -= mean;
        }
    }
}

/// Bayes posterior `p(y | x)`.
pub fn true_posterior(spec: &GaussMixSpec, x: &[f64]) -> Result<ProbVector<f64>> {
    if x.len() != spec.feature_dim() {
        return Err(Error::validation(format!(
            "feature vector has dimension {}, spec expects {}",
            x.len(),
            spec.feature_dim()
        )));
    }
    let mut logits = vec![0.0; spec.num_classes()];
    spec.log_joint_into(x, &mut logits);
    softmax(&logits)
}

/// Model view of the oracle: `(oracle + class_shift) / true_temp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub true_temp: f64,
    pub class_shift: Vec<f64>,
}

impl Distortion {
    pub fn identity(k: usize) -> Self {
        Self { true_temp: 1.0, class_shift: vec![0.0; k] }
    }

    /// Shift entries drawn from `N(0, shift_sd²)`.
    pub fn random_shift(k: usize, true_temp: f64, shift_sd: f64, seed: u64) -> Self {
        let mut rng = stream(seed, tag::SHIFT);
        let class_shift = (0..k)
            .map(|_| shift_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { true_temp, class_shift }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        ensure!(
            self.true_temp > 0.0 && self.true_temp.is_finite(),
            "true_temp must be positive, got {}",
            self.true_temp
        );
        ensure!(
            self.class_shift.len() == k,
            "class_shift has {} entries for {k} classes",
            self.class_shift.len()
        );
        ensure!(self.class_shift.iter().all(|v| v.is_finite()), "class_shift must be finite");
        Ok(())
    }

    pub fn apply_into(&self, oracle: &[f64], out: &mut [f64]) {
        for ((o, &z), &s) in out.iter_mut().zip(oracle).zip(&self.class_shift) {
            let mut v = z;
            if s != 0.0 {
                v += s;
            }
            if self.true_temp != 1.0 {
                v /= self.true_temp;
            }
            *o = v;
        }
    }
}

/// Row-major batch of labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationBatch {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub oracle_logits: Vec<f64>,
    pub model_logits: Vec<f64>,
    /// Per-sample identifiers used to key per-sample randomness.
    pub ids: Vec<u64>,
}

impl ClassificationBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn oracle_row(&self, i: usize) -> &[f64] {
        &self.oracle_logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn model_row(&self, i: usize) -> &[f64] {
        &self.model_logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Writes `x_0.., label, logit_0..` rows of the model logits.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.feature_dim).map(|j| format!("x_{j}")).collect();
        header.push("label".into());
        header.extend((0..self.num_classes).map(|j| format!("logit_{j}")));
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.features_row(i).iter().map(|v| v.to_string()).collect();
            row.push(self.labels[i].to_string());
            row.extend(self.model_row(i).iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn gen_classification(
    spec: &GaussMixSpec,
    distortion: &Distortion,
    n: usize,
    seed: u64,
) -> Result<ClassificationBatch> {
    spec.validate()?;
    let k = spec.num_classes();
    distortion.validate(k)?;
    ensure!(n >= 1, "n must be at least 1");
    let d = spec.feature_dim();
    let label_dist = WeightedIndex::new(&spec.class_prior)
        .map_err(|e| Error::validation(format!("class_prior: {e}")))?;
    let mut rng = stream(seed, tag::CLASSIFICATION);
    let id_seed = derive_seed(seed, &[tag::SAMPLE_ID]);

    let mut batch = ClassificationBatch {
        num_classes: k,
        feature_dim: d,
        features: Vec::with_capacity(n * d),
        labels: Vec::with_capacity(n),
        oracle_logits: vec![0.0; n * k],
        model_logits: vec![0.0; n * k],
        ids: Vec::with_capacity(n),
    };
    for i in 0..n {
        let y = label_dist.sample(&mut rng);
        let start = batch.features.len();
        for &m in &spec.means[y] {
            let z: f64 = rng.sample(StandardNormal);
            batch.features.push(m + spec.noise_sd * z);
        }
        let row = i * k..(i + 1) * k;
        spec.oracle_logits_into(&batch.features[start..], &mut batch.oracle_logits[row.clone()]);
        distortion.apply_into(&batch.oracle_logits[row.clone()], &mut batch.model_logits[row]);
        batch.labels.push(y);
        batch.ids.push(derive_seed(id_seed, &[i as u64]));
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFn {
    /// `2·x_0`
    Linear,
    /// `2·sin(π·x_0)`
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFn {
    /// `σ(x) = 1`
    Homoscedastic,
    /// `σ(x) = 0.2 + |x_0|`
    LinearAbs,
}

/// Features are uniform on `[-1, 1]^d`; only `x_0` carries signal, the
/// remaining coordinates are nuisance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub mean_fn: MeanFn,
    pub noise_fn: NoiseFn,
    pub feature_dim: usize,
    /// Multiplier on the noise scale; `0` gives noiseless targets.
    #[serde(default = "one")]
    pub noise_level: f64,
}

fn one() -> f64 {
    1.0
}

impl RegressionSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.feature_dim >= 1, "feature_dim must be positive");
        ensure!(
            self.noise_level >= 0.0 && self.noise_level.is_finite(),
            "noise_level must be nonnegative, got {}",
            self.noise_level
        );
        Ok(())
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match self.mean_fn {
            MeanFn::Linear => 2.0 * x[0],
            MeanFn::Sinusoid => 2.0 * (std::f64::consts::PI * x[0]).sin(),
        }
    }

    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        let base = match self.noise_fn {
            NoiseFn::Homoscedastic => 1.0,
            NoiseFn::LinearAbs => 0.2 + x[0].abs(),
        };
        self.noise_level * base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBatch {
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl RegressionBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

pub fn gen_regression(spec: &RegressionSpec, n: usize, seed: u64) -> Result<RegressionBatch> {
    spec.validate()?;
    ensure!(n >= 1, "n must be at least 1");
    let d = spec.feature_dim;
    let mut rng = stream(seed, tag::REGRESSION);
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| rng.random_range(-1.0..=1.0)));
        let z: f64 = rng.sample(StandardNormal);
        let x = &features[start..];
        targets.push(spec.mean(x) + spec.noise_scale(x) * z);
    }
    Ok(RegressionBatch { feature_dim: d, features, targets })
}

/// `n` targets drawn at the fixed point `x`.
pub fn draw_targets_at(spec: &RegressionSpec, x: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    ensure!(x.len() == spec.feature_dim, "x has dimension {}, expected {}", x.len(), spec.feature_dim);
    let mut rng = stream(seed, tag::REGRESSION);
    let (m, s) = (spec.mean(x), spec.noise_scale(x));
    Ok((0..n)
        .map(|_| m + s * rng.sample::<f64, _>(StandardNormal))
        .collect())
}
