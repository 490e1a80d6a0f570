//! One replication of an experiment: draw data, tune, calibrate, evaluate.
//!
//! Seeds are derived as `(base seed, rep) → role`. Both protocols of one
//! replication share the calibration and test draws, so their coverage
//! difference is paired. The hold-out arm additionally draws
//! `n_cal · s / (1 - s)` tuning points; the calibration set keeps `n_cal`.

use serde::{Deserialize, Serialize};

use super::spec::{n_tune_for, ExperimentSpec, Protocol, TunerSpec};
use crate::conformal::{threshold_in_place, CoverageTally, PredictionSet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_unit, tag};
use crate::scores::{softmax_into, ScoreSpec, UPolicy};
use crate::synth::{gen_classification, ClassificationBatch, Distortion, GaussMixSpec};
use crate::transform::{apply_into, Transform};
use crate::tuners::grid::{argmin_first, combine, mean_set_size};
use crate::tuners::{
    aggregation_grid, fit_aggregation, fit_conftr_linear, fit_raps_params, fit_temperature,
    fit_vector_scale, freeze_mask_random, select_score, LogitBatch,
};

/// An experiment with its data distribution materialized.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ExperimentSpec,
    pub mixture: GaussMixSpec,
    pub distortion: Distortion,
}

impl Prepared {
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let (mixture, distortion) = spec.data.build(spec.seed)?;
        spec.score.validate(mixture.num_classes())?;
        Ok(Self { spec, mixture, distortion })
    }

    pub fn num_classes(&self) -> usize {
        self.mixture.num_classes()
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.spec.seed, &[rep as u64])
    }

    pub fn draw(&self, rep: usize, role: u64, n: usize) -> Result<ClassificationBatch> {
        gen_classification(&self.mixture, &self.distortion, n, derive_seed(self.rep_seed(rep), &[role]))
    }

    pub fn u_policy(&self, rep: usize) -> UPolicy<f64> {
        UPolicy::Seeded { seed: derive_seed(self.rep_seed(rep), &[tag::UNIFORM]) }
    }
}

/// A tuned score, ready to be evaluated on any batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedScore {
    Transformed { transform: Transform<f64>, score: ScoreSpec<f64> },
    Penalty { score: ScoreSpec<f64> },
    Selected { index: usize, score: ScoreSpec<f64> },
    Aggregated { weights: Vec<f64>, base: Vec<ScoreSpec<f64>> },
    Perturbed { member: usize, eta: f64, family_seed: u64, score: ScoreSpec<f64> },
}

pub(crate) fn logit_view(b: &ClassificationBatch) -> Result<LogitBatch<'_>> {
    LogitBatch::new(&b.model_logits, &b.labels, &b.ids, b.num_classes)
}

/// Row-major `n × K` table of `score` on `transform(model logits)`.
pub fn transformed_table(
    transform: &Transform<f64>,
    score: &ScoreSpec<f64>,
    batch: &ClassificationBatch,
    u: &UPolicy<f64>,
) -> Result<Vec<f64>> {
    let k = batch.num_classes;
    let mut out = vec![0.0; batch.len() * k];
    let mut z = vec![0.0; k];
    let mut p = vec![0.0; k];
    for i in 0..batch.len() {
        match transform {
            Transform::Identity => softmax_into(batch.model_row(i), &mut p)?,
            t => {
                apply_into(t, batch.model_row(i), &mut z)?;
                softmax_into(&z, &mut p)?;
            }
        }
        let id = batch.ids[i];
        score.score_all(&p, |j| u.draw(id, j), &mut out[i * k..(i + 1) * k]);
    }
    Ok(out)
}

#[inline]
fn perturbation(family_seed: u64, id: u64, member: usize, label: usize) -> f64 {
    hash_unit(family_seed, id, ((member as u64) << 32) | label as u64)
}

fn perturb_into(base: &[f64], batch: &ClassificationBatch, member: usize, eta: f64, family_seed: u64, out: &mut [f64]) {
    let k = batch.num_classes;
    for i in 0..batch.len() {
        let id = batch.ids[i];
        for j in 0..k {
            out[i * k + j] = (1.0 - eta) * base[i * k + j] + eta * perturbation(family_seed, id, member, j);
        }
    }
}

impl FittedScore {
    pub fn table(&self, batch: &ClassificationBatch, u: &UPolicy<f64>) -> Result<Vec<f64>> {
        match self {
            FittedScore::Transformed { transform, score } => transformed_table(transform, score, batch, u),
            FittedScore::Penalty { score } | FittedScore::Selected { score, .. } => {
                transformed_table(&Transform::Identity, score, batch, u)
            }
            FittedScore::Aggregated { weights, base } => {
                let tables = base
                    .iter()
                    .map(|s| transformed_table(&Transform::Identity, s, batch, u))
                    .collect::<Result<Vec<_>>>()?;
                let mut out = vec![0.0; batch.len() * batch.num_classes];
                combine(weights, &tables, &mut out);
                Ok(out)
            }
            FittedScore::Perturbed { member, eta, family_seed, score } => {
                let base = transformed_table(&Transform::Identity, score, batch, u)?;
                let mut out = vec![0.0; base.len()];
                perturb_into(&base, batch, *member, *eta, *family_seed, &mut out);
                Ok(out)
            }
        }
    }

    pub fn transform(&self) -> Option<&Transform<f64>> {
        match self {
            FittedScore::Transformed { transform, .. } => Some(transform),
            _ => None,
        }
    }
}

/// Tune the experiment's score on `tuning`.
pub fn fit_score(prep: &Prepared, rep: usize, tuning: &ClassificationBatch, u: &UPolicy<f64>) -> Result<FittedScore> {
    let spec = &prep.spec;
    let k = prep.num_classes();
    let score = spec.score;
    let transformed = |transform| Ok(FittedScore::Transformed { transform, score });
    match &spec.tuner {
        TunerSpec::Identity => transformed(Transform::Identity),
        TunerSpec::Temperature => transformed(fit_temperature(&logit_view(tuning)?)?.transform),
        TunerSpec::Vector { unfrozen_fraction, config } => {
            let mask_seed = derive_seed(prep.rep_seed(rep), &[tag::MASK]);
            let mask = freeze_mask_random(k, 1.0 - unfrozen_fraction, mask_seed)?;
            transformed(fit_vector_scale(&logit_view(tuning)?, &mask, config)?.transform)
        }
        TunerSpec::ConfTr { constraint, config } => {
            let fit = fit_conftr_linear(&logit_view(tuning)?, *constraint, spec.alpha, config)?;
            transformed(fit.transform)
        }
        TunerSpec::PenaltyGrid => {
            let fit = fit_raps_params(&logit_view(tuning)?, &score, spec.alpha, u)?;
            Ok(FittedScore::Penalty { score: ScoreSpec { gamma: fit.gamma, k_reg: fit.k_reg, ..score } })
        }
        TunerSpec::Select { family } => {
            let (index, _) = select_score(family, &logit_view(tuning)?, spec.alpha, u)?;
            Ok(FittedScore::Selected { index, score: family[index] })
        }
        TunerSpec::Aggregate { step, base } => {
            let grid = aggregation_grid(*step, base.len())?;
            let tables = base
                .iter()
                .map(|s| transformed_table(&Transform::Identity, s, tuning, u))
                .collect::<Result<Vec<_>>>()?;
            let (index, _) = fit_aggregation(&grid, &tables, &tuning.labels, k, spec.alpha)?;
            Ok(FittedScore::Aggregated { weights: grid[index].clone(), base: base.clone() })
        }
        TunerSpec::Adversarial { m, eta } => {
            let family_seed = derive_seed(prep.rep_seed(rep), &[tag::FAMILY]);
            let base = transformed_table(&Transform::Identity, &score, tuning, u)?;
            let mut buf = vec![0.0; base.len()];
            let sizes: Vec<f64> = (0..*m)
                .map(|member| {
                    perturb_into(&base, tuning, member, *eta, family_seed, &mut buf);
                    mean_set_size(&buf, &tuning.labels, k, spec.alpha)
                })
                .collect();
            Ok(FittedScore::Perturbed { member: argmin_first(&sizes), eta: *eta, family_seed, score })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub coverage: f64,
    pub avg_size: f64,
    pub threshold: f64,
    pub fitted: FittedScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub rep: usize,
    pub seed: u64,
    pub same: ArmOutcome,
    pub holdout: ArmOutcome,
}

/// Threshold from the true-label entries of a calibration table.
pub fn calibrate_table(table: &[f64], labels: &[usize], k: usize, alpha: f64) -> f64 {
    let mut s: Vec<f64> = labels.iter().enumerate().map(|(i, &y)| table[i * k + y]).collect();
    threshold_in_place(&mut s, alpha)
}

/// Prediction sets `{y : S ≤ t}` of every row of a table.
pub fn sets_from_table(table: &[f64], k: usize, t: f64) -> Vec<PredictionSet> {
    table
        .chunks(k)
        .map(|row| PredictionSet::from_flags(row.iter().map(|&s| s <= t).collect()))
        .collect()
}

struct Evaluated {
    outcome: ArmOutcome,
    test_table: Vec<f64>,
}

fn calibrate_and_test(
    prep: &Prepared,
    fitted: FittedScore,
    cal: &ClassificationBatch,
    test: &ClassificationBatch,
    u: &UPolicy<f64>,
) -> Result<Evaluated> {
    let k = prep.num_classes();
    let alpha = prep.spec.alpha;
    let cal_table = fitted.table(cal, u)?;
    if cal_table.iter().any(|v| !v.is_finite()) {
        return Err(Error::optimization("tuned score produced non-finite calibration scores"));
    }
    let t = calibrate_table(&cal_table, &cal.labels, k, alpha);
    let test_table = fitted.table(test, u)?;
    let mut tally = CoverageTally::default();
    for (row, &y) in test_table.chunks(k).zip(&test.labels) {
        tally.push(row[y] <= t, row.iter().filter(|&&s| s <= t).count());
    }
    let r = tally.report(alpha);
    Ok(Evaluated {
        outcome: ArmOutcome { coverage: r.coverage, avg_size: r.avg_size, threshold: t, fitted },
        test_table,
    })
}

fn arm(prep: &Prepared, rep: usize, protocol: Protocol, cal: &ClassificationBatch, test: &ClassificationBatch) -> Result<Evaluated> {
    let u = prep.u_policy(rep);
    let fitted = match protocol {
        Protocol::SameSet => fit_score(prep, rep, cal, &u)?,
        Protocol::HoldOut { split_fraction } => {
            crate::error::ensure!(
                split_fraction > 0.0 && split_fraction < 1.0,
                "split_fraction must lie in (0, 1), got {split_fraction}"
            );
            let tune = prep.draw(rep, tag::TUNE, n_tune_for(prep.spec.n_cal, split_fraction))?;
            fit_score(prep, rep, &tune, &u)?
        }
    };
    calibrate_and_test(prep, fitted, cal, test, &u)
}

fn wrap(rep: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Replication { rep, source: Box::new(e) }
}

/// Coverage and mean size of one protocol on replication `rep`.
pub fn run_replication(prep: &Prepared, rep: usize, protocol: Protocol) -> Result<ArmOutcome> {
    run_replication_detailed(prep, rep, protocol).map(|(o, _, _)| o)
}

/// As [`run_replication`], also returning the test prediction sets and labels.
pub fn run_replication_detailed(
    prep: &Prepared,
    rep: usize,
    protocol: Protocol,
) -> Result<(ArmOutcome, Vec<PredictionSet>, Vec<usize>)> {
    let go = || {
        let cal = prep.draw(rep, tag::CALIBRATION, prep.spec.n_cal)?;
        let test = prep.draw(rep, tag::TEST, prep.spec.n_test)?;
        let ev = arm(prep, rep, protocol, &cal, &test)?;
        let sets = sets_from_table(&ev.test_table, prep.num_classes(), ev.outcome.threshold);
        Ok((ev.outcome, sets, test.labels))
    };
    go().map_err(wrap(rep))
}

/// Both protocols on shared calibration and test draws.
pub fn run_paired(prep: &Prepared, rep: usize) -> Result<PairedOutcome> {
    let go = || {
        let cal = prep.draw(rep, tag::CALIBRATION, prep.spec.n_cal)?;
        let test = prep.draw(rep, tag::TEST, prep.spec.n_test)?;
        let same = arm(prep, rep, Protocol::SameSet, &cal, &test)?.outcome;
        let holdout = arm(
            prep,
            rep,
            Protocol::HoldOut { split_fraction: prep.spec.split_fraction },
            &cal,
            &test,
        )?
        .outcome;
        Ok(PairedOutcome { rep, seed: prep.rep_seed(rep), same, holdout })
    };
    go().map_err(wrap(rep))
}
