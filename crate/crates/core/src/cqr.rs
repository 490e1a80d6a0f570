//! Conformalized quantile regression with model selection by interval width,
//! run under the same-set and hold-out protocols.
//!
//! The base learner is a k-nearest-neighbour quantile regressor. Candidates
//! differ in `k` and in a distance weight on the nuisance features
//! `x_1..x_d`, so selecting among them is a finite-family tuning step.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{ceil_count, threshold_in_place};
use crate::error::{ensure, Error, Result};
use crate::harness::estimate::{summarize_coverage, CoverageSummary, Estimate};
use crate::harness::spec::n_tune_for;
use crate::rng::{derive_seed, tag};
use crate::synth::{gen_regression, RegressionBatch, RegressionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// `[lo - q, hi + q]`.
    pub fn widen(&self, q: f64) -> Interval {
        Interval { lo: self.lo - q, hi: self.hi + q }
    }

    /// Width clamped at zero.
    pub fn width(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// `max(lo - y, y - hi)`; nonpositive exactly when `y` lies in the interval.
pub fn cqr_score(y: f64, interval: Interval) -> f64 {
    (interval.lo - y).max(y - interval.hi)
}

/// Hyperparameters of one k-NN quantile regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub k: usize,
    /// Distance weight on features `1..d`; `1` is plain Euclidean distance.
    pub nuisance_scale: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QuantileModel<'a> {
    train: &'a RegressionBatch,
    k: usize,
    levels: (f64, f64),
    nuisance_scale: f64,
}

/// Euclidean k-NN quantile regressor on `train`.
pub fn fit_knn_quantile(train: &RegressionBatch, k: usize, levels: (f64, f64)) -> Result<QuantileModel<'_>> {
    QuantileModel::new(train, Candidate { k, nuisance_scale: 1.0 }, levels)
}

impl<'a> QuantileModel<'a> {
    pub fn new(train: &'a RegressionBatch, c: Candidate, levels: (f64, f64)) -> Result<Self> {
        ensure!(c.k >= 1, "k must be at least 1");
        ensure!(c.k <= train.len(), "k = {} exceeds the training size {}", c.k, train.len());
        ensure!(
            0.0 < levels.0 && levels.0 < levels.1 && levels.1 <= 1.0,
            "quantile levels must satisfy 0 < lo < hi <= 1, got {levels:?}"
        );
        ensure!(
            c.nuisance_scale >= 0.0 && c.nuisance_scale.is_finite(),
            "nuisance_scale must be nonnegative, got {}",
            c.nuisance_scale
        );
        Ok(Self { train, k: c.k, levels, nuisance_scale: c.nuisance_scale })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn levels(&self) -> (f64, f64) {
        self.levels
    }

    /// Empirical quantiles of the `k` nearest training targets. Equal
    /// distances are broken by training index.
    pub fn predict(&self, x: &[f64]) -> Interval {
        let (near, far) = split_distances(self.train, x);
        let order = neighbours(&near, &far, self.nuisance_scale * self.nuisance_scale, self.k);
        let mut ys: Vec<f64> = order.iter().map(|&i| self.train.targets[i]).collect();
        ys.sort_unstable_by(f64::total_cmp);
        Interval { lo: ys[quantile_rank(self.levels.0, self.k) - 1], hi: ys[quantile_rank(self.levels.1, self.k) - 1] }
    }
}

/// 1-based rank of the empirical `p`-quantile of `k` values.
fn quantile_rank(p: f64, k: usize) -> usize {
    ceil_count(p * k as f64).clamp(1, k)
}

/// Squared distances along `x_0` and along the remaining features.
fn split_distances(train: &RegressionBatch, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (0..train.len())
        .map(|i| {
            let t = train.row(i);
            let far: f64 = t[1..].iter().zip(&x[1..]).map(|(a, b)| (a - b) * (a - b)).sum();
            ((t[0] - x[0]) * (t[0] - x[0]), far)
        })
        .unzip()
}

/// Indices of the `k` nearest points in order, by `(distance, index)`.
fn neighbours(near: &[f64], far: &[f64], s2: f64, k: usize) -> Vec<usize> {
    let d: Vec<f64> = near.iter().zip(far).map(|(a, b)| a + s2 * b).collect();
    let cmp = |a: &usize, b: &usize| d[*a].total_cmp(&d[*b]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..d.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

const K_STEP: usize = 5;
const SCALES: usize = 10;

/// The first `m` of 200 candidates: `k ∈ {5, 10, …, 100}` in the outer loop,
/// nuisance scale `∈ {0.1, 0.2, …, 1.0}` in the inner.
pub fn candidate_grid(m: usize) -> Result<Vec<Candidate>> {
    ensure!((1..=20 * SCALES).contains(&m), "num_models must lie in [1, 200], got {m}");
    Ok((0..m)
        .map(|i| Candidate {
            k: K_STEP * (i / SCALES + 1),
            nuisance_scale: (i % SCALES + 1) as f64 / SCALES as f64,
        })
        .collect())
}

/// Raw intervals of every candidate at every row of `batch`, indexed
/// `[candidate][row]`. Matches `QuantileModel::predict` exactly but shares
/// the neighbour search across candidates with the same scale.
pub fn candidate_intervals(
    train: &RegressionBatch,
    candidates: &[Candidate],
    levels: (f64, f64),
    batch: &RegressionBatch,
) -> Result<Vec<Vec<Interval>>> {
    ensure!(!candidates.is_empty(), "need at least one candidate");
    ensure!(batch.feature_dim == train.feature_dim, "batch and training features differ in dimension");
    for c in candidates {
        QuantileModel::new(train, *c, levels)?;
    }
    let mut scales: Vec<f64> = candidates.iter().map(|c| c.nuisance_scale).collect();
    scales.sort_unstable_by(f64::total_cmp);
    scales.dedup();

    let mut out = vec![Vec::with_capacity(batch.len()); candidates.len()];
    let mut sorted = Vec::new();
    for i in 0..batch.len() {
        let (near, far) = split_distances(train, batch.row(i));
        for &s in &scales {
            let group: Vec<usize> = (0..candidates.len()).filter(|&j| candidates[j].nuisance_scale == s).collect();
            let k_max = group.iter().map(|&j| candidates[j].k).max().unwrap_or(1);
            let order = neighbours(&near, &far, s * s, k_max);
            sorted.clear();
            for (pos, &t) in order.iter().enumerate() {
                let y = train.targets[t];
                let at = sorted.partition_point(|v: &f64| v.total_cmp(&y).is_le());
                sorted.insert(at, y);
                let k = pos + 1;
                for &j in group.iter().filter(|&&j| candidates[j].k == k) {
                    out[j].push(Interval {
                        lo: sorted[quantile_rank(levels.0, k) - 1],
                        hi: sorted[quantile_rank(levels.1, k) - 1],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Conformal correction: the threshold quantile of the CQR scores.
pub fn conformal_correction(intervals: &[Interval], targets: &[f64], alpha: f64) -> Result<f64> {
    ensure!(!intervals.is_empty(), "need at least one calibration point");
    ensure!(intervals.len() == targets.len(), "{} intervals for {} targets", intervals.len(), targets.len());
    let mut s: Vec<f64> = intervals.iter().zip(targets).map(|(iv, &y)| cqr_score(y, *iv)).collect();
    Ok(threshold_in_place(&mut s, alpha))
}

/// Mean width of the conformalized intervals, each clamped at zero.
pub fn mean_width(intervals: &[Interval], q: f64) -> f64 {
    if q == f64::INFINITY {
        return f64::INFINITY;
    }
    intervals.iter().map(|iv| iv.widen(q).width()).sum::<f64>() / intervals.len() as f64
}

/// Index of the candidate with the smallest mean conformalized width, the
/// correction calibrated on the same batch; ties go to the smaller index.
/// Also returns every candidate's width.
pub fn select_model_by_width(
    intervals: &[Vec<Interval>],
    targets: &[f64],
    alpha: f64,
) -> Result<(usize, Vec<f64>)> {
    ensure!(!intervals.is_empty(), "need at least one candidate");
    let widths = intervals
        .iter()
        .map(|iv| Ok(mean_width(iv, conformal_correction(iv, targets, alpha)?)))
        .collect::<Result<Vec<f64>>>()?;
    let best = widths
        .iter()
        .enumerate()
        .fold(0, |b, (i, w)| if w.total_cmp(&widths[b]).is_lt() { i } else { b });
    Ok((best, widths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqrSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub regression: RegressionSpec,
    #[serde(default = "default_models")]
    pub num_models: usize,
    #[serde(default = "default_train")]
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "half")]
    pub split_fraction: f64,
}

fn default_id() -> String {
    "cqr".into()
}
fn default_models() -> usize {
    200
}
fn default_train() -> usize {
    300
}
fn default_alpha() -> f64 {
    0.1
}
fn default_reps() -> usize {
    100
}
fn half() -> f64 {
    0.5
}

impl CqrSpec {
    pub fn validate(&self) -> Result<()> {
        self.regression.validate()?;
        ensure!(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0, 1), got {}", self.alpha);
        ensure!(self.n_cal >= 1, "n_cal must be at least 1");
        ensure!(self.n_test >= 1, "n_test must be at least 1");
        ensure!(self.replications >= 1, "replications must be at least 1");
        ensure!(
            self.split_fraction > 0.0 && self.split_fraction < 1.0,
            "split_fraction must lie in (0, 1), got {}",
            self.split_fraction
        );
        let grid = candidate_grid(self.num_models)?;
        let k_max = grid.iter().map(|c| c.k).max().unwrap_or(1);
        ensure!(self.n_train >= k_max, "n_train = {} is smaller than the largest k = {k_max}", self.n_train);
        Ok(())
    }

    pub fn levels(&self) -> (f64, f64) {
        (self.alpha / 2.0, 1.0 - self.alpha / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqrArm {
    pub model: usize,
    pub correction: f64,
    pub coverage: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqrRep {
    pub rep: usize,
    pub seed: u64,
    pub same: CqrArm,
    pub holdout: CqrArm,
}

fn test_arm(
    train: &RegressionBatch,
    c: Candidate,
    levels: (f64, f64),
    correction: f64,
    test: &RegressionBatch,
) -> Result<(f64, f64)> {
    let iv = &candidate_intervals(train, &[c], levels, test)?[0];
    let covered = iv.iter().zip(&test.targets).filter(|(v, &y)| v.widen(correction).contains(y)).count();
    Ok((covered as f64 / test.len() as f64, mean_width(iv, correction)))
}

/// One replication: the same-set arm selects and calibrates on `D_cal`; the
/// hold-out arm selects on a fresh `D_tune` and calibrates on `D_cal`. Both
/// share the training, calibration and test draws.
pub fn run_cqr_replication(spec: &CqrSpec, rep: usize) -> Result<CqrRep> {
    let seed = derive_seed(spec.seed, &[rep as u64]);
    let draw = |role, n| gen_regression(&spec.regression, n, derive_seed(seed, &[role]));
    let train = draw(tag::TRAIN, spec.n_train)?;
    let cal = draw(tag::CALIBRATION, spec.n_cal)?;
    let tune = draw(tag::TUNE, n_tune_for(spec.n_cal, spec.split_fraction))?;
    let test = draw(tag::TEST, spec.n_test)?;
    let grid = candidate_grid(spec.num_models)?;
    let levels = spec.levels();

    let on_cal = candidate_intervals(&train, &grid, levels, &cal)?;
    let (m_same, _) = select_model_by_width(&on_cal, &cal.targets, spec.alpha)?;
    let on_tune = candidate_intervals(&train, &grid, levels, &tune)?;
    let (m_hold, _) = select_model_by_width(&on_tune, &tune.targets, spec.alpha)?;

    let arm = |m: usize| -> Result<CqrArm> {
        let correction = conformal_correction(&on_cal[m], &cal.targets, spec.alpha)?;
        let (coverage, length) = test_arm(&train, grid[m], levels, correction, &test)?;
        Ok(CqrArm { model: m, correction, coverage, length })
    };
    Ok(CqrRep { rep, seed, same: arm(m_same)?, holdout: arm(m_hold)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrResult {
    pub experiment_id: String,
    pub n_cal: usize,
    pub num_models: usize,
    pub alpha: f64,
    pub failed: usize,
    pub summary: CoverageSummary,
    pub length_same: Estimate,
    pub length_holdout: Estimate,
    pub reps: Vec<CqrRep>,
}

impl CqrResult {
    pub fn coverages(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.reps.iter().map(|r| r.same.coverage).collect(),
            self.reps.iter().map(|r| r.holdout.coverage).collect(),
        )
    }
}

pub fn run_cqr_experiment(spec: &CqrSpec) -> Result<CqrResult> {
    spec.validate()?;
    if spec.replications < 30 {
        log::warn!("{} replications; standard errors are unreliable below 30", spec.replications);
    }
    let results: Vec<Result<CqrRep>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_cqr_replication(spec, r).map_err(|e| Error::Replication { rep: r, source: Box::new(e) }))
        .collect();
    let mut reps = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(o) => reps.push(o),
            Err(e) => {
                log::warn!("{}: {e}", spec.id);
                first_err.get_or_insert(e);
            }
        }
    }
    let failed = spec.replications - reps.len();
    if reps.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::validation("no replications")));
    }
    let a: Vec<f64> = reps.iter().map(|r| r.same.coverage).collect();
    let b: Vec<f64> = reps.iter().map(|r| r.holdout.coverage).collect();
    let la: Vec<f64> = reps.iter().map(|r| r.same.length).collect();
    let lb: Vec<f64> = reps.iter().map(|r| r.holdout.length).collect();
    Ok(CqrResult {
        experiment_id: spec.id.clone(),
        n_cal: spec.n_cal,
        num_models: spec.num_models,
        alpha: spec.alpha,
        failed,
        summary: summarize_coverage(&a, &b, spec.alpha),
        length_same: Estimate::of(&la),
        length_holdout: Estimate::of(&lb),
        reps,
    })
}

/// Table row: one per (cell, method). Spreads are across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CqrRow {
    pub experiment_id: String,
    pub n_cal: usize,
    pub num_models: usize,
    pub method: &'static str,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub length_mean: f64,
    pub length_std: f64,
    pub covgap_mean: f64,
    pub covgap_std: f64,
    /// Gap of the mean coverage, same minus hold-out.
    pub tuning_bias: f64,
    /// Mean per-replication gap, same minus hold-out.
    pub abs_gap_bias: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let e = Estimate::of(xs);
    (e.mean, e.stderr * (xs.len() as f64).sqrt())
}

pub fn cqr_rows(res: &CqrResult) -> Vec<CqrRow> {
    let gap = |c: f64| (1.0 - res.alpha - c).abs();
    [("same", true), ("holdout", false)]
        .into_iter()
        .map(|(method, same)| {
            let arm = |r: &CqrRep| if same { r.same } else { r.holdout };
            let cov: Vec<f64> = res.reps.iter().map(|r| arm(r).coverage).collect();
            let len: Vec<f64> = res.reps.iter().map(|r| arm(r).length).collect();
            let gaps: Vec<f64> = cov.iter().map(|&c| gap(c)).collect();
            let (coverage_mean, coverage_std) = mean_std(&cov);
            let (length_mean, length_std) = mean_std(&len);
            let (covgap_mean, covgap_std) = mean_std(&gaps);
            CqrRow {
                experiment_id: res.experiment_id.clone(),
                n_cal: res.n_cal,
                num_models: res.num_models,
                method,
                coverage_mean,
                coverage_std,
                length_mean,
                length_std,
                covgap_mean,
                covgap_std,
                tuning_bias: res.summary.tuning_bias.mean,
                abs_gap_bias: res.summary.abs_gap_bias.mean,
            }
        })
        .collect()
}

pub fn write_cqr_csv<W: Write>(w: W, results: &[CqrResult]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for res in results {
        for row in cqr_rows(res) {
            wr.serialize(row)?;
        }
    }
    wr.flush()?;
    Ok(())
}
