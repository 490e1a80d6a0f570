//! The empirical-process deviation `ℜ_Λ = sup_{λ, t} |F̂_cal^λ(t) - F^λ(t)|`.
//!
//! The population CDF `F^λ` is approximated by a large independent reference
//! sample, and the sup over `t` is the exact two-sample KS distance.

use serde::{Deserialize, Serialize};

use super::replication::{FittedScore, Prepared};
use super::spec::TunerSpec;
use crate::error::{ensure, Error, Result};
use crate::rng::{derive_seed, tag};
use crate::scores::ScoreSpec;
use crate::stats::ks_two_sample_at;
use crate::synth::ClassificationBatch;
use crate::transform::Transform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupProcessEstimate {
    pub rhat: f64,
    pub argmax_lambda: usize,
    pub argmax_t: f64,
    pub grid_size: usize,
    /// KS distance at every grid member.
    pub per_lambda: Vec<f64>,
}

/// Max over the grid of the KS distance between calibration and reference
/// scores. `calib[l]` and `reference[l]` hold the true-label scores under
/// grid member `l`.
pub fn estimate_sup_process(calib: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<SupProcessEstimate> {
    ensure!(!calib.is_empty(), "lambda grid must be non-empty");
    ensure!(
        calib.len() == reference.len(),
        "{} calibration samples for {} reference samples",
        calib.len(),
        reference.len()
    );
    let mut per_lambda = Vec::with_capacity(calib.len());
    let mut best = (0, f64::NEG_INFINITY, f64::NAN);
    for (l, (c, r)) in calib.iter().zip(reference).enumerate() {
        if r.len() < 100 * c.len() {
            log::debug!("reference sample for grid member {l} is under 100x the calibration size");
        }
        let (d, t) = ks_two_sample_at(c, r)?;
        per_lambda.push(d);
        if d > best.1 {
            best = (l, d, t);
        }
    }
    Ok(SupProcessEstimate {
        rhat: best.1,
        argmax_lambda: best.0,
        argmax_t: best.2,
        grid_size: calib.len(),
        per_lambda,
    })
}

/// The finite search grid the experiment's tuner chooses from: the family
/// members for selection tuners, stage-1 penalties for the penalty grid, and
/// a 64-point log grid on `λ ∈ [e⁻³, e³]` for temperature scaling.
pub fn search_grid(prep: &Prepared, rep: usize) -> Result<Vec<FittedScore>> {
    let score = prep.spec.score;
    Ok(match &prep.spec.tuner {
        TunerSpec::Identity => vec![FittedScore::Transformed { transform: Transform::Identity, score }],
        TunerSpec::Temperature => (0..64)
            .map(|i| FittedScore::Transformed {
                transform: Transform::TempScale { lambda: (-3.0 + 6.0 * i as f64 / 63.0).exp() },
                score,
            })
            .collect(),
        TunerSpec::PenaltyGrid => (1..=30)
            .map(|i| FittedScore::Penalty { score: ScoreSpec { gamma: i as f64 / 100.0, ..score } })
            .collect(),
        TunerSpec::Select { family } => family
            .iter()
            .enumerate()
            .map(|(index, &score)| FittedScore::Selected { index, score })
            .collect(),
        TunerSpec::Adversarial { m, eta } => {
            let family_seed = derive_seed(prep.rep_seed(rep), &[tag::FAMILY]);
            (0..*m)
                .map(|member| FittedScore::Perturbed { member, eta: *eta, family_seed, score })
                .collect()
        }
        other => {
            return Err(Error::validation(format!(
                "tuner {} has no finite search grid",
                other.name()
            )))
        }
    })
}

fn true_label_scores(f: &FittedScore, batch: &ClassificationBatch, prep: &Prepared, rep: usize) -> Result<Vec<f64>> {
    let k = batch.num_classes;
    let table = f.table(batch, &prep.u_policy(rep))?;
    Ok(batch.labels.iter().enumerate().map(|(i, &y)| table[i * k + y]).collect())
}

/// `ℜ_Λ` on replication `rep`'s calibration draw against a reference draw of
/// `reference_factor · n_cal` points.
pub fn replication_sup_process(prep: &Prepared, rep: usize, reference_factor: usize) -> Result<SupProcessEstimate> {
    ensure!(reference_factor >= 1, "reference_factor must be positive");
    let grid = search_grid(prep, rep)?;
    let cal = prep.draw(rep, tag::CALIBRATION, prep.spec.n_cal)?;
    let reference = prep.draw(rep, tag::REFERENCE, reference_factor * prep.spec.n_cal)?;
    let mut c = Vec::with_capacity(grid.len());
    let mut r = Vec::with_capacity(grid.len());
    for f in &grid {
        c.push(true_label_scores(f, &cal, prep, rep)?);
        r.push(true_label_scores(f, &reference, prep, rep)?);
    }
    estimate_sup_process(&c, &r)
}
