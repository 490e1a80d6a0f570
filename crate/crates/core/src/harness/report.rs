//! CSV tables for experiment results and bound reports.

use std::io::Write;

use serde::Serialize;

use super::estimate::BiasEstimate;
use super::spec::TunerSpec;
use crate::bounds::{
    matrix_scale_dim, op_matrix_scale_dim, vc_bound, BoundReport, TEMP_SCALE_DIM,
};
use crate::conformal::coverage_gap;
use crate::error::Result;
use crate::tuners::{aggregation_grid, Constraint, PENALTY_CANDIDATES};

/// One per-replication or aggregate (`rep = "mean"`) row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub protocol: &'static str,
    pub tuner: String,
    pub n_cal: usize,
    pub complexity: Option<f64>,
    pub rep: String,
    pub coverage: f64,
    pub avg_size: f64,
    pub covgap: f64,
    pub seed: u64,
}

pub fn result_rows(est: &BiasEstimate, base_seed: u64) -> Vec<ResultRow> {
    let row = |protocol, rep: String, coverage, avg_size, seed| ResultRow {
        experiment_id: est.experiment_id.clone(),
        protocol,
        tuner: est.tuner.clone(),
        n_cal: est.n_cal,
        complexity: est.complexity,
        rep,
        coverage,
        avg_size,
        covgap: coverage_gap(coverage, est.alpha),
        seed,
    };
    let mut rows = Vec::with_capacity(2 * est.reps.len() + 2);
    for r in &est.reps {
        rows.push(row("same", r.rep.to_string(), r.same.coverage, r.same.avg_size, r.seed));
        rows.push(row("holdout", r.rep.to_string(), r.holdout.coverage, r.holdout.avg_size, r.seed));
    }
    rows.push(row("same", "mean".into(), est.coverage_same.mean, est.size_same.mean, base_seed));
    rows.push(row("holdout", "mean".into(), est.coverage_holdout.mean, est.size_holdout.mean, base_seed));
    rows
}

pub fn write_results_csv<W: Write>(w: W, estimates: &[BiasEstimate], base_seed: u64) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for est in estimates {
        for row in result_rows(est, base_seed) {
            wr.serialize(row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub tuner: String,
    pub n_cal: usize,
    pub complexity: Option<f64>,
    pub replications: usize,
    pub failed: usize,
    pub coverage_same: f64,
    pub coverage_same_se: f64,
    pub coverage_holdout: f64,
    pub coverage_holdout_se: f64,
    pub size_same: f64,
    pub size_holdout: f64,
    pub covgap_same: f64,
    pub covgap_holdout: f64,
    pub tuning_bias: f64,
    pub tuning_bias_se: f64,
    pub coverage_drop: f64,
    pub coverage_drop_se: f64,
    pub abs_gap_bias: f64,
    pub abs_gap_bias_se: f64,
}

impl From<&BiasEstimate> for SummaryRow {
    fn from(e: &BiasEstimate) -> Self {
        Self {
            experiment_id: e.experiment_id.clone(),
            tuner: e.tuner.clone(),
            n_cal: e.n_cal,
            complexity: e.complexity,
            replications: e.replications,
            failed: e.failed,
            coverage_same: e.coverage_same.mean,
            coverage_same_se: e.coverage_same.stderr,
            coverage_holdout: e.coverage_holdout.mean,
            coverage_holdout_se: e.coverage_holdout.stderr,
            size_same: e.size_same.mean,
            size_holdout: e.size_holdout.mean,
            covgap_same: e.covgap_same.mean,
            covgap_holdout: e.covgap_holdout.mean,
            tuning_bias: e.tuning_bias.mean,
            tuning_bias_se: e.tuning_bias.stderr,
            coverage_drop: e.coverage_drop.mean,
            coverage_drop_se: e.coverage_drop.stderr,
            abs_gap_bias: e.abs_gap_bias.mean,
            abs_gap_bias_se: e.abs_gap_bias.stderr,
        }
    }
}

pub fn write_summary_csv<W: Write>(w: W, estimates: &[BiasEstimate]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for e in estimates {
        wr.serialize(SummaryRow::from(e))?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BoundRow<'a> {
    experiment_id: &'a str,
    kind: &'static str,
    cardinality: Option<usize>,
    m: Option<usize>,
    k_bar: Option<usize>,
    dim: Option<usize>,
    c: Option<f64>,
    n: usize,
    value: f64,
    clamped: f64,
    certified: bool,
}

/// Bound rows keyed by `experiment_id` so they join with result tables.
pub fn write_bounds_csv<W: Write>(w: W, reports: &[(String, BoundReport)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (id, r) in reports {
        wr.serialize(BoundRow {
            experiment_id: id,
            kind: r.kind.name(),
            cardinality: r.cardinality,
            m: r.m,
            k_bar: r.k_bar,
            dim: r.dim,
            c: r.c,
            n: r.n,
            value: r.value,
            clamped: r.clamped,
            certified: r.certified,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// The bound that applies to `tuner` with `n` tuning points: a certified
/// finite-space bound for grid and selection tuners, an uncertified VC bound
/// (`C = 1`) for continuous transforms.
pub fn bound_for_tuner(tuner: &TunerSpec, num_classes: usize, n: usize) -> Result<BoundReport> {
    match tuner {
        TunerSpec::Identity => BoundReport::finite(1, n),
        TunerSpec::PenaltyGrid => BoundReport::raps(PENALTY_CANDIDATES, 1, n),
        TunerSpec::Select { family } => BoundReport::selection(family.len(), n),
        TunerSpec::Adversarial { m, .. } => BoundReport::selection(*m, n),
        TunerSpec::Aggregate { step, base } => BoundReport::finite(aggregation_grid(*step, base.len())?.len(), n),
        TunerSpec::Temperature => vc_bound(TEMP_SCALE_DIM, n, 1.0),
        TunerSpec::Vector { unfrozen_fraction, .. } => {
            let free = (2.0 * num_classes as f64 * unfrozen_fraction).round() as usize;
            vc_bound(free, n, 1.0)
        }
        TunerSpec::ConfTr { constraint: Constraint::None, .. } => vc_bound(matrix_scale_dim(num_classes), n, 1.0),
        TunerSpec::ConfTr { constraint: Constraint::OrderPreserving, .. } => {
            vc_bound(op_matrix_scale_dim(num_classes), n, 1.0)
        }
    }
}

/// Measured tuning bias next to its bound. `violated` is set when a
/// certified bound sits below the bias by more than three standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundComparisonRow {
    pub experiment_id: String,
    pub tuner: String,
    pub n_cal: usize,
    pub complexity: Option<f64>,
    pub tuning_bias: f64,
    pub tuning_bias_se: f64,
    pub kind: &'static str,
    pub cardinality: Option<usize>,
    pub dim: Option<usize>,
    pub bound: f64,
    pub bound_clamped: f64,
    pub certified: bool,
    pub violated: bool,
}

impl BoundComparisonRow {
    pub fn new(est: &BiasEstimate, bound: &BoundReport) -> Self {
        let excess = est.tuning_bias.mean - 3.0 * est.tuning_bias.stderr;
        Self {
            experiment_id: est.experiment_id.clone(),
            tuner: est.tuner.clone(),
            n_cal: est.n_cal,
            complexity: est.complexity,
            tuning_bias: est.tuning_bias.mean,
            tuning_bias_se: est.tuning_bias.stderr,
            kind: bound.kind.name(),
            cardinality: bound.cardinality,
            dim: bound.dim,
            bound: bound.value,
            bound_clamped: bound.clamped,
            certified: bound.certified,
            violated: bound.certified && excess > bound.value,
        }
    }
}

pub fn write_bound_comparison_csv<W: Write>(w: W, rows: &[BoundComparisonRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
