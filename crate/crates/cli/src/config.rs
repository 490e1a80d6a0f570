use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cpbias::cqr::CqrSpec;
use cpbias::harness::{ExperimentSpec, Prepared};
use serde::{Deserialize, Serialize};

/// A run description. The `kind` key selects the variant and must match the
/// subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunConfig {
    CoverageCheck {
        experiment: ExperimentSpec,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    Bias {
        experiment: ExperimentSpec,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    SweepN {
        experiment: ExperimentSpec,
        n_values: Vec<usize>,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    SweepComplexity {
        experiment: ExperimentSpec,
        levels: Vec<f64>,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    SupProcess {
        experiment: ExperimentSpec,
        /// Reference sample size as a multiple of `n_cal`.
        #[serde(default = "hundred")]
        reference_factor: usize,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    Dkw {
        n: usize,
        eps: f64,
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    Bounds {
        entries: Vec<BoundEntry>,
        #[serde(default)]
        out: Option<PathBuf>,
    },
    Cqr {
        experiment: CqrSpec,
        /// Calibration sizes to sweep; defaults to `experiment.n_cal` alone.
        #[serde(default)]
        n_values: Vec<usize>,
        #[serde(default)]
        out: Option<PathBuf>,
    },
}

fn hundred() -> usize {
    100
}

fn default_trials() -> usize {
    100_000
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundEntry {
    Finite { cardinality: usize, n: usize },
    Raps { m: usize, k_bar: usize, n: usize },
    Selection { m: usize, n: usize },
    Vc {
        d: usize,
        n: usize,
        #[serde(default = "one")]
        c: f64,
    },
}

impl RunConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            RunConfig::CoverageCheck { .. } => "coverage-check",
            RunConfig::Bias { .. } => "bias",
            RunConfig::SweepN { .. } => "sweep-n",
            RunConfig::SweepComplexity { .. } => "sweep-complexity",
            RunConfig::SupProcess { .. } => "sup-process",
            RunConfig::Dkw { .. } => "dkw",
            RunConfig::Bounds { .. } => "bounds",
            RunConfig::Cqr { .. } => "cqr",
        }
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            RunConfig::CoverageCheck { out, .. }
            | RunConfig::Bias { out, .. }
            | RunConfig::SweepN { out, .. }
            | RunConfig::SweepComplexity { out, .. }
            | RunConfig::SupProcess { out, .. }
            | RunConfig::Dkw { out, .. }
            | RunConfig::Bounds { out, .. }
            | RunConfig::Cqr { out, .. } => out.as_deref(),
        }
    }

    pub fn set_out(&mut self, dir: PathBuf) {
        match self {
            RunConfig::CoverageCheck { out, .. }
            | RunConfig::Bias { out, .. }
            | RunConfig::SweepN { out, .. }
            | RunConfig::SweepComplexity { out, .. }
            | RunConfig::SupProcess { out, .. }
            | RunConfig::Dkw { out, .. }
            | RunConfig::Bounds { out, .. }
            | RunConfig::Cqr { out, .. } => *out = Some(dir),
        }
    }

    /// The base seed, if the kind has one.
    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::CoverageCheck { experiment, .. }
            | RunConfig::Bias { experiment, .. }
            | RunConfig::SweepN { experiment, .. }
            | RunConfig::SweepComplexity { experiment, .. }
            | RunConfig::SupProcess { experiment, .. } => Some(experiment.seed),
            RunConfig::Cqr { experiment, .. } => Some(experiment.seed),
            RunConfig::Dkw { seed, .. } => Some(*seed),
            RunConfig::Bounds { .. } => None,
        }
    }

    pub fn set_seed(&mut self, s: u64) {
        match self {
            RunConfig::CoverageCheck { experiment, .. }
            | RunConfig::Bias { experiment, .. }
            | RunConfig::SweepN { experiment, .. }
            | RunConfig::SweepComplexity { experiment, .. }
            | RunConfig::SupProcess { experiment, .. } => experiment.seed = s,
            RunConfig::Cqr { experiment, .. } => experiment.seed = s,
            RunConfig::Dkw { seed, .. } => *seed = s,
            RunConfig::Bounds { .. } => {}
        }
    }

    pub fn replications(&self) -> Option<usize> {
        match self {
            RunConfig::CoverageCheck { experiment, .. }
            | RunConfig::Bias { experiment, .. }
            | RunConfig::SweepN { experiment, .. }
            | RunConfig::SweepComplexity { experiment, .. }
            | RunConfig::SupProcess { experiment, .. } => Some(experiment.replications),
            RunConfig::Cqr { experiment, .. } => Some(experiment.replications),
            RunConfig::Dkw { .. } | RunConfig::Bounds { .. } => None,
        }
    }

    /// Every semantic check that can run before the experiment itself.
    pub fn validate(&self) -> Result<()> {
        match self {
            RunConfig::CoverageCheck { experiment, .. } | RunConfig::Bias { experiment, .. } => {
                Prepared::new(experiment.clone())?;
            }
            RunConfig::SweepN { experiment, n_values, .. } => {
                Prepared::new(experiment.clone())?;
                if n_values.is_empty() {
                    bail!("n_values must be non-empty");
                }
                if n_values.contains(&0) {
                    bail!("n_values entries must be at least 1");
                }
                if !n_values.windows(2).all(|w| w[0] < w[1]) {
                    bail!("n_values must be strictly increasing");
                }
            }
            RunConfig::SweepComplexity { experiment, levels, .. } => {
                Prepared::new(experiment.clone())?;
                if levels.is_empty() {
                    bail!("levels must be non-empty");
                }
                for &l in levels {
                    experiment.tuner.with_complexity(l).context("levels")?;
                }
            }
            RunConfig::SupProcess { experiment, reference_factor, .. } => {
                Prepared::new(experiment.clone())?;
                if *reference_factor < 1 {
                    bail!("reference_factor must be at least 1");
                }
            }
            RunConfig::Dkw { n, eps, trials, .. } => {
                if *n < 1 {
                    bail!("n must be at least 1");
                }
                if !(*eps > 0.0 && eps.is_finite()) {
                    bail!("eps must be positive, got {eps}");
                }
                if *trials < 1 {
                    bail!("trials must be at least 1");
                }
            }
            RunConfig::Bounds { entries, .. } => {
                if entries.is_empty() {
                    bail!("entries must be non-empty");
                }
                for (i, e) in entries.iter().enumerate() {
                    e.report().with_context(|| format!("entries[{i}]"))?;
                }
            }
            RunConfig::Cqr { experiment, n_values, .. } => {
                experiment.validate()?;
                if n_values.contains(&0) {
                    bail!("n_values entries must be at least 1");
                }
            }
        }
        Ok(())
    }
}

impl BoundEntry {
    pub fn report(&self) -> Result<cpbias::bounds::BoundReport> {
        use cpbias::bounds::{vc_bound, BoundReport};
        Ok(match *self {
            BoundEntry::Finite { cardinality, n } => BoundReport::finite(cardinality, n)?,
            BoundEntry::Raps { m, k_bar, n } => BoundReport::raps(m, k_bar, n)?,
            BoundEntry::Selection { m, n } => BoundReport::selection(m, n)?,
            BoundEntry::Vc { d, n, c } => vc_bound(d, n, c)?,
        })
    }
}

/// Read and validate a config. Parse errors carry serde_json's line and
/// column; semantic errors name the field.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}
