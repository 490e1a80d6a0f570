//! Finite-grid tuners whose objective is the mean prediction-set size after
//! calibrating a threshold on the same batch.

use serde::{Deserialize, Serialize};

use super::LogitBatch;
use crate::conformal::threshold_in_place;
use crate::error::{ensure, Result};
use crate::scores::{softmax_into, ScoreKind, ScoreSpec, UPolicy};

/// Mean `|C(x_i)|` over a row-major `n × K` score table when the threshold is
/// calibrated on the true-label scores of the same rows.
pub fn mean_set_size(scores: &[f64], labels: &[usize], k: usize, alpha: f64) -> f64 {
    let mut true_scores: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| scores[i * k + y])
        .collect();
    let t = threshold_in_place(&mut true_scores, alpha);
    scores.iter().filter(|&&s| s <= t).count() as f64 / labels.len() as f64
}

/// Index of the first strict minimum.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn check_alpha(alpha: f64) -> Result<()> {
    ensure!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1), got {alpha}");
    Ok(())
}

pub(crate) fn batch_probs(batch: &LogitBatch<'_>) -> Result<Vec<f64>> {
    let k = batch.num_classes();
    let mut probs = vec![0.0; batch.len() * k];
    for i in 0..batch.len() {
        softmax_into(batch.row(i), &mut probs[i * k..(i + 1) * k])?;
    }
    Ok(probs)
}

/// Row-major score table of `spec` on precomputed probabilities.
pub fn score_table(
    spec: &ScoreSpec<f64>,
    probs: &[f64],
    batch: &LogitBatch<'_>,
    u: &UPolicy<f64>,
) -> Vec<f64> {
    let k = batch.num_classes();
    let mut out = vec![0.0; probs.len()];
    for i in 0..batch.len() {
        let id = batch.id(i);
        spec.score_all(&probs[i * k..(i + 1) * k], |j| u.draw(id, j), &mut out[i * k..(i + 1) * k]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFit {
    pub gamma: f64,
    pub k_reg: usize,
    pub objective: f64,
    /// Every `(γ, mean size)` evaluated, in evaluation order.
    pub evaluated: Vec<(f64, f64)>,
}

/// Number of distinct penalties the two-stage search can return: every
/// `γ = milli/1000` with `milli ∈ [5, 305]`.
pub const PENALTY_CANDIDATES: usize = 301;

/// Two-stage search for the RAPS/SAPS penalty `γ`.
///
/// Stage 1 scans `γ ∈ {0.01, …, 0.30}`; stage 2 scans `γ* ± 0.005` in steps
/// of `0.001`. A stage-2 point replaces `γ*` only on strict improvement, and
/// earlier (smaller) points win ties. `template` fixes kind, `k_reg` and
/// randomization.
pub fn fit_raps_params(
    batch: &LogitBatch<'_>,
    template: &ScoreSpec<f64>,
    alpha: f64,
    u: &UPolicy<f64>,
) -> Result<GridFit> {
    ensure!(
        matches!(template.kind, ScoreKind::Raps | ScoreKind::Saps),
        "penalty search needs a RAPS or SAPS template, got {}",
        template.kind.name()
    );
    check_alpha(alpha)?;
    u.validate()?;
    let probs = batch_probs(batch)?;
    let k = batch.num_classes();
    let mut evaluated = Vec::new();
    let mut eval = |milli: i64| {
        let gamma = milli as f64 / 1000.0;
        let spec = ScoreSpec { gamma, ..*template };
        let table = score_table(&spec, &probs, batch, u);
        let size = mean_set_size(&table, batch.labels(), k, alpha);
        evaluated.push((gamma, size));
        size
    };

    let mut best = (10, f64::INFINITY);
    for milli in (10..=300).step_by(10) {
        let v = eval(milli);
        if v < best.1 {
            best = (milli, v);
        }
    }
    let centre = best.0;
    for milli in centre - 5..=centre + 5 {
        if milli == centre {
            continue;
        }
        let v = eval(milli);
        if v < best.1 {
            best = (milli, v);
        }
    }
    Ok(GridFit {
        gamma: best.0 as f64 / 1000.0,
        k_reg: template.k_reg,
        objective: best.1,
        evaluated,
    })
}

/// Index of the candidate score with the smallest same-batch mean set size,
/// plus all the sizes.
pub fn select_score(
    family: &[ScoreSpec<f64>],
    batch: &LogitBatch<'_>,
    alpha: f64,
    u: &UPolicy<f64>,
) -> Result<(usize, Vec<f64>)> {
    ensure!(!family.is_empty(), "candidate family must be non-empty");
    check_alpha(alpha)?;
    let probs = batch_probs(batch)?;
    let k = batch.num_classes();
    let mut sizes = Vec::with_capacity(family.len());
    for spec in family {
        spec.validate(k)?;
        let table = score_table(spec, &probs, batch, u);
        sizes.push(mean_set_size(&table, batch.labels(), k, alpha));
    }
    Ok((argmin_first(&sizes), sizes))
}

/// All `m`-tuples of multiples of `step` that sum to one, in ascending
/// lexicographic order.
pub fn aggregation_grid(step: f64, m: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(m >= 1, "need at least one weight");
    ensure!(step > 0.0 && step <= 1.0, "step must lie in (0, 1], got {step}");
    let units = (1.0 / step).round() as usize;
    ensure!(
        (units as f64 * step - 1.0).abs() < 1e-9,
        "step {step} does not divide 1"
    );
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(units: usize, left: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == m {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / units as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(units, left - c, m, cur, out);
            cur.pop();
        }
    }
    rec(units, units, m, &mut cur, &mut out);
    Ok(out)
}

/// Weight vector from `grid` minimizing the same-batch mean set size of
/// `Σ w_m S_m`. Returns its index in `grid` and all sizes; the first minimum
/// wins, which is the lexicographically smallest for [`aggregation_grid`].
pub fn fit_aggregation(
    grid: &[Vec<f64>],
    base_scores: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    alpha: f64,
) -> Result<(usize, Vec<f64>)> {
    ensure!(!grid.is_empty(), "weight grid must be non-empty");
    ensure!(!base_scores.is_empty(), "need at least one base score");
    check_alpha(alpha)?;
    let cells = labels.len() * k;
    ensure!(
        base_scores.iter().all(|s| s.len() == cells),
        "base score tables must be {} × {k}",
        labels.len()
    );
    for w in grid {
        ensure!(w.len() == base_scores.len(), "weight vector length differs from base score count");
        ensure!(w.iter().all(|&v| v >= 0.0), "weights must be nonnegative");
        let total: f64 = w.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-12, "weights sum to {total}, not 1");
    }
    let mut combined = vec![0.0; cells];
    let sizes: Vec<f64> = grid
        .iter()
        .map(|w| {
            combine(w, base_scores, &mut combined);
            mean_set_size(&combined, labels, k, alpha)
        })
        .collect();
    Ok((argmin_first(&sizes), sizes))
}

/// `out = Σ w_m S_m`.
pub fn combine(w: &[f64], base_scores: &[Vec<f64>], out: &mut [f64]) {
    out.fill(0.0);
    for (&wm, s) in w.iter().zip(base_scores) {
        if wm != 0.0 {
            for (o, &v) in out.iter_mut().zip(s) {
                *o += wm * v;
            }
        }
    }
}
