//! Vector scaling `w ∘ f + b` fit by gradient descent on NLL, with optional
//! per-coordinate freezing.
//!
//! Coordinates are numbered `2j` for `w_j` and `2j + 1` for `b_j`. Frozen
//! coordinates stay at the identity initialization `w = 1`, `b = 0`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nll::vector_nll;
use super::{LineSearch, LogitBatch, TunerResult};
use crate::error::{ensure, Error, Result};
use crate::rng::{stream, tag};
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VsConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub initial_step: f64,
}

impl Default for VsConfig {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, armijo: 1e-4, shrink: 0.5, initial_step: 1.0 }
    }
}

impl VsConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.grad_tol > 0.0, "grad_tol must be positive");
        ensure!(self.armijo > 0.0 && self.armijo < 1.0, "armijo must lie in (0, 1)");
        ensure!(self.shrink > 0.0 && self.shrink < 1.0, "shrink must lie in (0, 1)");
        ensure!(self.initial_step > 0.0, "initial_step must be positive");
        Ok(())
    }
}

/// Uniformly random set of `round(2K · frozen_fraction)` frozen coordinates.
///
/// The frozen set is a prefix of one seeded permutation, so under a fixed seed
/// a larger fraction freezes a superset of a smaller one.
pub fn freeze_mask_random(k: usize, frozen_fraction: f64, seed: u64) -> Result<Vec<[bool; 2]>> {
    ensure!(
        (0.0..=1.0).contains(&frozen_fraction),
        "frozen fraction must lie in [0, 1], got {frozen_fraction}"
    );
    let total = 2 * k;
    let m = (total as f64 * frozen_fraction).round() as usize;
    let mut coords: Vec<usize> = (0..total).collect();
    coords.shuffle(&mut stream(seed, tag::MASK));
    let mut mask = vec![[false; 2]; k];
    for &c in &coords[..m] {
        mask[c / 2][c % 2] = true;
    }
    Ok(mask)
}

fn into_transform(x: &[f64], mask: &[[bool; 2]]) -> Transform<f64> {
    Transform::VectorScale {
        w: x.iter().step_by(2).copied().collect(),
        b: x.iter().skip(1).step_by(2).copied().collect(),
        freeze_mask: mask.to_vec(),
    }
}

pub fn fit_vector_scale(
    batch: &LogitBatch<'_>,
    freeze_mask: &[[bool; 2]],
    config: &VsConfig,
) -> Result<TunerResult> {
    config.validate()?;
    let k = batch.num_classes();
    ensure!(
        freeze_mask.len() == k,
        "freeze mask has {} rows for {k} classes",
        freeze_mask.len()
    );
    let free: Vec<bool> = freeze_mask.iter().flat_map(|m| [!m[0], !m[1]]).collect();
    let mut x: Vec<f64> = (0..2 * k).map(|c| if c % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let mut grad = vec![0.0; 2 * k];
    let mut fx = vector_nll(&x, batch, Some(&mut grad));
    if !fx.is_finite() {
        return Err(Error::optimization("vector scaling objective is not finite at identity"));
    }
    let mut trace = vec![fx];
    if free.iter().all(|f| !f) {
        return Ok(TunerResult {
            transform: into_transform(&x, freeze_mask),
            objective_trace: trace,
            iterations: 0,
            converged: true,
        });
    }

    let ls = LineSearch { armijo: config.armijo, shrink: config.shrink, min_step: 1e-16 };
    let mut trial = Vec::with_capacity(2 * k);
    let mut trial_grad = vec![0.0; 2 * k];
    let mut step = config.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        for (g, &f) in grad.iter_mut().zip(&free) {
            if !f {
                *g = 0.0;
            }
        }
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax.is_nan() {
            return Err(Error::optimization("vector scaling gradient is NaN"));
        }
        if gmax < config.grad_tol {
            converged = true;
            break;
        }
        let found = ls.search(&x, fx, &grad, 2.0 * step, &mut trial, |p| {
            vector_nll(p, batch, Some(&mut trial_grad))
        });
        let Some((s, ft)) = found else { break };
        iterations += 1;
        step = s;
        fx = ft;
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        trace.push(fx);
    }
    Ok(TunerResult {
        transform: into_transform(&x, freeze_mask),
        objective_trace: trace,
        iterations,
        converged,
    })
}
