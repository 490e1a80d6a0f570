//! Monte-Carlo estimation of coverage gaps and tuning bias, and sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::replication::{run_paired, PairedOutcome, Prepared};
use super::spec::ExperimentSpec;
use crate::conformal::coverage_gap;
use crate::error::{ensure, Error, Result};
use crate::stats::{mean_stderr, spearman_test, Alternative, TrendTest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(xs);
        Self { mean, stderr }
    }

    /// `mean / stderr`; infinite when the stderr is zero and the mean is not.
    pub fn z(&self) -> f64 {
        if self.stderr > 0.0 {
            self.mean / self.stderr
        } else if self.mean == 0.0 {
            0.0
        } else {
            self.mean.signum() * f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub experiment_id: String,
    pub tuner: String,
    pub n_cal: usize,
    pub complexity: Option<f64>,
    pub alpha: f64,
    pub replications: usize,
    pub failed: usize,
    pub coverage_same: Estimate,
    pub coverage_holdout: Estimate,
    pub size_same: Estimate,
    pub size_holdout: Estimate,
    /// `|(1-α) - mean coverage|` per arm, stderr by the delta method.
    pub covgap_same: Estimate,
    pub covgap_holdout: Estimate,
    /// `covgap_same - covgap_holdout` with a paired stderr.
    pub tuning_bias: Estimate,
    /// Mean of `coverage_holdout - coverage_same`; positive when tuning on
    /// the calibration data lowers coverage.
    pub coverage_drop: Estimate,
    /// Difference of per-replication `|(1-α) - coverage|` means.
    pub abs_gap_bias: Estimate,
    pub reps: Vec<PairedOutcome>,
}

/// Run both protocols over all replications and summarize.
///
/// Replications run in parallel on the current rayon pool; results are
/// collected in replication order so the output does not depend on the
/// thread count. Failed replications are logged, counted and excluded.
pub fn estimate_tuning_bias(spec: &ExperimentSpec) -> Result<BiasEstimate> {
    let prep = Prepared::new(spec.clone())?;
    estimate_prepared(&prep)
}

pub fn estimate_prepared(prep: &Prepared) -> Result<BiasEstimate> {
    let spec = &prep.spec;
    if spec.replications < 30 {
        log::warn!("{} replications; standard errors are unreliable below 30", spec.replications);
    }
    let results: Vec<Result<PairedOutcome>> =
        (0..spec.replications).into_par_iter().map(|r| run_paired(prep, r)).collect();
    let mut reps = Vec::with_capacity(results.len());
    let mut failed = 0;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(o) => reps.push(o),
            Err(e) => {
                log::warn!("{}: {e}", spec.id);
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if reps.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::validation("no replications")));
    }
    Ok(summarize(spec, reps, failed))
}

/// Coverage-gap summary of paired per-replication coverages `a` (same set)
/// and `b` (hold-out).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub coverage_same: Estimate,
    pub coverage_holdout: Estimate,
    pub covgap_same: Estimate,
    pub covgap_holdout: Estimate,
    pub tuning_bias: Estimate,
    pub coverage_drop: Estimate,
    pub abs_gap_bias: Estimate,
}

/// Per-replication terms whose mean has the same first-order fluctuation as
/// `|(1-α) - ā| - |(1-α) - b̄|` (delta method).
pub fn linearized_bias(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    let target = 1.0 - alpha;
    let n = a.len().max(1) as f64;
    let sa = (a.iter().sum::<f64>() / n - target).signum();
    let sb = (b.iter().sum::<f64>() / n - target).signum();
    a.iter().zip(b).map(|(x, y)| sa * x - sb * y).collect()
}

pub fn summarize_coverage(a: &[f64], b: &[f64], alpha: f64) -> CoverageSummary {
    let cov_a = Estimate::of(a);
    let cov_b = Estimate::of(b);
    let gap = |c: Estimate| Estimate { mean: coverage_gap(c.mean, alpha), stderr: c.stderr };
    let tuning_bias = Estimate {
        mean: gap(cov_a).mean - gap(cov_b).mean,
        stderr: Estimate::of(&linearized_bias(a, b, alpha)).stderr,
    };
    let drop: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let abs_diff: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| coverage_gap(*x, alpha) - coverage_gap(*y, alpha))
        .collect();
    CoverageSummary {
        coverage_same: cov_a,
        coverage_holdout: cov_b,
        covgap_same: gap(cov_a),
        covgap_holdout: gap(cov_b),
        tuning_bias,
        coverage_drop: Estimate::of(&drop),
        abs_gap_bias: Estimate::of(&abs_diff),
    }
}

/// `bias(first) - bias(second)` with a stderr paired over replication index.
/// Both inputs must hold the same replications in the same order.
pub fn paired_bias_difference(
    first: (&[f64], &[f64]),
    second: (&[f64], &[f64]),
    alpha: f64,
) -> Result<Estimate> {
    ensure!(
        first.0.len() == second.0.len() && first.1.len() == second.1.len(),
        "paired comparison needs equal replication counts"
    );
    let la = linearized_bias(first.0, first.1, alpha);
    let lb = linearized_bias(second.0, second.1, alpha);
    let d: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x - y).collect();
    let mean = summarize_coverage(first.0, first.1, alpha).tuning_bias.mean
        - summarize_coverage(second.0, second.1, alpha).tuning_bias.mean;
    Ok(Estimate { mean, stderr: Estimate::of(&d).stderr })
}

impl BiasEstimate {
    pub fn coverages(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.reps.iter().map(|r| r.same.coverage).collect(),
            self.reps.iter().map(|r| r.holdout.coverage).collect(),
        )
    }

    /// `bias(self) - bias(other)`, paired over replications that succeeded in
    /// both.
    pub fn bias_minus(&self, other: &BiasEstimate) -> Result<Estimate> {
        let common: Vec<(&PairedOutcome, &PairedOutcome)> = self
            .reps
            .iter()
            .filter_map(|r| other.reps.iter().find(|o| o.rep == r.rep).map(|o| (r, o)))
            .collect();
        ensure!(common.len() >= 2, "too few common replications to compare");
        let pick = |f: fn(&PairedOutcome) -> f64, left: bool| -> Vec<f64> {
            common.iter().map(|(a, b)| if left { f(a) } else { f(b) }).collect()
        };
        let same = |o: &PairedOutcome| o.same.coverage;
        let hold = |o: &PairedOutcome| o.holdout.coverage;
        paired_bias_difference(
            (&pick(same, true), &pick(hold, true)),
            (&pick(same, false), &pick(hold, false)),
            self.alpha,
        )
    }
}

fn summarize(spec: &ExperimentSpec, reps: Vec<PairedOutcome>, failed: usize) -> BiasEstimate {
    let a: Vec<f64> = reps.iter().map(|r| r.same.coverage).collect();
    let b: Vec<f64> = reps.iter().map(|r| r.holdout.coverage).collect();
    let s = summarize_coverage(&a, &b, spec.alpha);
    let size_a: Vec<f64> = reps.iter().map(|r| r.same.avg_size).collect();
    let size_b: Vec<f64> = reps.iter().map(|r| r.holdout.avg_size).collect();
    BiasEstimate {
        experiment_id: spec.id.clone(),
        tuner: spec.tuner.name().into(),
        n_cal: spec.n_cal,
        complexity: spec.tuner.complexity(),
        alpha: spec.alpha,
        replications: reps.len(),
        failed,
        coverage_same: s.coverage_same,
        coverage_holdout: s.coverage_holdout,
        size_same: Estimate::of(&size_a),
        size_holdout: Estimate::of(&size_b),
        covgap_same: s.covgap_same,
        covgap_holdout: s.covgap_holdout,
        tuning_bias: s.tuning_bias,
        coverage_drop: s.coverage_drop,
        abs_gap_bias: s.abs_gap_bias,
        reps,
    }
}

/// One estimate per calibration size. Every cell uses the same base seed, so
/// smaller calibration sets are prefixes of larger ones.
pub fn sweep_calibration_size(spec: &ExperimentSpec, n_values: &[usize]) -> Result<Vec<BiasEstimate>> {
    ensure!(!n_values.is_empty(), "n_values must be non-empty");
    ensure!(n_values.windows(2).all(|w| w[0] < w[1]), "n_values must be increasing");
    n_values
        .iter()
        .map(|&n| {
            let cell = ExperimentSpec { n_cal: n, id: format!("{}/n={n}", spec.id), ..spec.clone() };
            estimate_tuning_bias(&cell)
        })
        .collect()
}

/// One estimate per complexity level (unfrozen fraction or family size).
pub fn sweep_param_complexity(spec: &ExperimentSpec, levels: &[f64]) -> Result<Vec<BiasEstimate>> {
    ensure!(!levels.is_empty(), "complexity levels must be non-empty");
    levels
        .iter()
        .map(|&level| {
            let cell = ExperimentSpec {
                tuner: spec.tuner.with_complexity(level)?,
                id: format!("{}/c={level}", spec.id),
                ..spec.clone()
            };
            estimate_tuning_bias(&cell)
        })
        .collect()
}

/// Spearman trend of the mean tuning bias against `x`.
pub fn bias_trend(estimates: &[BiasEstimate], x: &[f64], alt: Alternative) -> Result<TrendTest> {
    let y: Vec<f64> = estimates.iter().map(|e| e.tuning_bias.mean).collect();
    spearman_test(x, &y, alt)
}
