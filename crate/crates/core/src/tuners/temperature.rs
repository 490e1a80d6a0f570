//! Temperature scaling: `λ = exp(θ)` minimizing NLL of `f / λ`.
//!
//! A 61-point grid on `θ ∈ [-6, 6]` brackets the minimum, then golden-section
//! search narrows the bracket to width below `1e-6`.

use super::nll::temperature_nll;
use super::{LogitBatch, TunerResult};
use crate::error::{Error, Result};
use crate::transform::Transform;

const THETA_MIN: f64 = -6.0;
const THETA_MAX: f64 = 6.0;
const GRID_POINTS: usize = 61;
const TOL: f64 = 1e-6;

pub fn fit_temperature(batch: &LogitBatch<'_>) -> Result<TunerResult> {
    if batch.len() < batch.num_classes() {
        log::warn!(
            "temperature scaling on {} samples with {} classes",
            batch.len(),
            batch.num_classes()
        );
    }
    let phi = |theta: f64| -> Result<f64> {
        let v = temperature_nll(theta.exp(), batch);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::optimization(format!("non-finite NLL at theta = {theta}")))
        }
    };

    let step = (THETA_MAX - THETA_MIN) / (GRID_POINTS - 1) as f64;
    let theta_at = |i: usize| THETA_MIN + step * i as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..GRID_POINTS {
        let v = phi(theta_at(i))?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i_best, v_grid) = best;
    let mut trace = vec![v_grid];
    let mut lo = theta_at(i_best.saturating_sub(1));
    let mut hi = theta_at((i_best + 1).min(GRID_POINTS - 1));

    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = phi(x1)?;
    let mut f2 = phi(x2)?;
    let mut best_theta = theta_at(i_best);
    let mut best_val = v_grid;
    let mut iterations = 0;
    while hi - lo >= TOL {
        iterations += 1;
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = phi(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = phi(x2)?;
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f < best_val {
                best_val = f;
                best_theta = x;
            }
        }
        trace.push(best_val);
    }
    Ok(TunerResult {
        transform: Transform::TempScale { lambda: best_theta.exp() },
        objective_trace: trace,
        iterations,
        converged: true,
    })
}
