use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{derive_seed, tag};
use crate::scores::{ScoreKind, ScoreSpec};
use crate::synth::{Distortion, GaussMixSpec};
use crate::tuners::{ConfTrConfig, Constraint, VsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SameSet,
    HoldOut { split_fraction: f64 },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::SameSet => "same",
            Protocol::HoldOut { .. } => "holdout",
        }
    }
}

/// Where the class-conditional mixture and its distortion come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Means drawn from `N(0, spread² I)`, equal priors, and a random class
    /// shift with standard deviation `shift_sd`; seeded from the experiment
    /// seed.
    Random {
        num_classes: usize,
        feature_dim: usize,
        spread: f64,
        noise_sd: f64,
        #[serde(default = "one")]
        true_temp: f64,
        #[serde(default)]
        shift_sd: f64,
    },
    Explicit {
        mixture: GaussMixSpec,
        distortion: Distortion,
    },
}

fn one() -> f64 {
    1.0
}

impl DataSpec {
    pub fn build(&self, seed: u64) -> Result<(GaussMixSpec, Distortion)> {
        match self {
            DataSpec::Random { num_classes, feature_dim, spread, noise_sd, true_temp, shift_sd } => {
                ensure!(*num_classes >= 2, "data.num_classes must be at least 2");
                ensure!(*shift_sd >= 0.0, "data.shift_sd must be nonnegative");
                let mix = GaussMixSpec::random_means(
                    *num_classes,
                    *feature_dim,
                    *spread,
                    *noise_sd,
                    derive_seed(seed, &[tag::MEANS]),
                )?;
                let dist = Distortion::random_shift(
                    *num_classes,
                    *true_temp,
                    *shift_sd,
                    derive_seed(seed, &[tag::SHIFT]),
                );
                dist.validate(*num_classes)?;
                Ok((mix, dist))
            }
            DataSpec::Explicit { mixture, distortion } => {
                mixture.validate()?;
                distortion.validate(mixture.num_classes())?;
                Ok((mixture.clone(), distortion.clone()))
            }
        }
    }
}

/// How the score is tuned on the tuning data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TunerSpec {
    Identity,
    Temperature,
    Vector {
        /// Fraction of the `2K` coordinates left trainable.
        unfrozen_fraction: f64,
        #[serde(default)]
        config: VsConfig,
    },
    ConfTr {
        constraint: Constraint,
        #[serde(default)]
        config: ConfTrConfig,
    },
    /// Two-stage penalty search; the experiment score must be RAPS or SAPS.
    PenaltyGrid,
    /// Pick the candidate with the smallest mean set size.
    Select { family: Vec<ScoreSpec<f64>> },
    /// Convex combination of base scores over a weight grid.
    Aggregate {
        #[serde(default = "tenth")]
        step: f64,
        base: Vec<ScoreSpec<f64>>,
    },
    /// Selection among `m` random perturbations
    /// `(1 - eta) S + eta ξ_m(x, y)` of the base score, `ξ` i.i.d. uniform.
    Adversarial {
        m: usize,
        #[serde(default = "half")]
        eta: f64,
    },
}

fn tenth() -> f64 {
    0.1
}

fn half() -> f64 {
    0.5
}

impl TunerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TunerSpec::Identity => "identity",
            TunerSpec::Temperature => "temperature",
            TunerSpec::Vector { .. } => "vector",
            TunerSpec::ConfTr { constraint: Constraint::None, .. } => "conftr",
            TunerSpec::ConfTr { constraint: Constraint::OrderPreserving, .. } => "conftr_op",
            TunerSpec::PenaltyGrid => "penalty_grid",
            TunerSpec::Select { .. } => "select",
            TunerSpec::Aggregate { .. } => "aggregate",
            TunerSpec::Adversarial { .. } => "adversarial",
        }
    }

    /// The sweepable complexity level, if the tuner has one.
    pub fn complexity(&self) -> Option<f64> {
        match self {
            TunerSpec::Vector { unfrozen_fraction, .. } => Some(*unfrozen_fraction),
            TunerSpec::Adversarial { m, .. } => Some(*m as f64),
            TunerSpec::Select { family } => Some(family.len() as f64),
            _ => None,
        }
    }

    /// Copy with the complexity level replaced: the unfrozen fraction for
    /// vector scaling, the family size for adversarial selection.
    pub fn with_complexity(&self, level: f64) -> Result<Self> {
        match self {
            TunerSpec::Vector { config, .. } => {
                ensure!((0.0..=1.0).contains(&level), "unfrozen fraction must lie in [0, 1], got {level}");
                Ok(TunerSpec::Vector { unfrozen_fraction: level, config: *config })
            }
            TunerSpec::Adversarial { eta, .. } => {
                ensure!(level >= 1.0 && level.fract() == 0.0, "family size must be a positive integer, got {level}");
                Ok(TunerSpec::Adversarial { m: level as usize, eta: *eta })
            }
            other => Err(crate::error::Error::validation(format!(
                "tuner {} has no complexity parameter",
                other.name()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub data: DataSpec,
    pub score: ScoreSpec<f64>,
    pub tuner: TunerSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "half")]
    pub split_fraction: f64,
}

fn default_id() -> String {
    "experiment".into()
}

fn default_alpha() -> f64 {
    0.1
}

fn default_reps() -> usize {
    100
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0, 1), got {}", self.alpha);
        ensure!(self.n_cal >= 1, "n_cal must be at least 1");
        ensure!(self.n_test >= 1, "n_test must be at least 1");
        ensure!(self.replications >= 1, "replications must be at least 1");
        ensure!(
            self.split_fraction > 0.0 && self.split_fraction < 1.0,
            "split_fraction must lie in (0, 1), got {}",
            self.split_fraction
        );
        match &self.tuner {
            TunerSpec::Vector { unfrozen_fraction, config } => {
                ensure!(
                    (0.0..=1.0).contains(unfrozen_fraction),
                    "tuner.unfrozen_fraction must lie in [0, 1], got {unfrozen_fraction}"
                );
                config.validate()?;
            }
            TunerSpec::ConfTr { config, .. } => config.validate()?,
            TunerSpec::PenaltyGrid => ensure!(
                matches!(self.score.kind, ScoreKind::Raps | ScoreKind::Saps),
                "penalty_grid tuning needs a raps or saps score, got {}",
                self.score.kind.name()
            ),
            TunerSpec::Select { family } => ensure!(!family.is_empty(), "tuner.family must be non-empty"),
            TunerSpec::Aggregate { base, step } => {
                ensure!(!base.is_empty(), "tuner.base must be non-empty");
                ensure!(*step > 0.0 && *step <= 1.0, "tuner.step must lie in (0, 1], got {step}");
            }
            TunerSpec::Adversarial { m, eta } => {
                ensure!(*m >= 1, "tuner.m must be at least 1");
                ensure!((0.0..=1.0).contains(eta), "tuner.eta must lie in [0, 1], got {eta}");
            }
            TunerSpec::Identity | TunerSpec::Temperature => {}
        }
        Ok(())
    }

    pub fn n_tune(&self) -> usize {
        n_tune_for(self.n_cal, self.split_fraction)
    }
}

/// `n_cal · s / (1 - s)` tuning points, so the hold-out arm still calibrates
/// on `n_cal`.
pub fn n_tune_for(n_cal: usize, split: f64) -> usize {
    ((n_cal as f64 * split / (1.0 - split)).round() as usize).max(1)
}
