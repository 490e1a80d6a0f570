//! Conformal-training style fit of a linear logit map.
//!
//! The loss is `L = NLL + λ_size · L_size` with a sigmoid relaxation of set
//! size under the THR score `S(x, y) = 1 - p_y`:
//!
//! ```text
//! L_size = (1/n) Σ_i Σ_y σ((t - S(x_i, y)) / τ)
//! ```
//!
//! where `t` is the `(1-α)` empirical quantile of the true-label scores,
//! recomputed at every evaluation. Gradients are analytic, including the
//! path through `t`: away from ties `t` equals one sample's score, so it moves
//! with that sample's probability.
//!
//! Unconstrained fits use matrix scaling `W f + b` (`K² + K` parameters).
//! Order-preserving fits use `(aI + 1vᵀ) f + c·1` with `a = exp(θ)`.

use serde::{Deserialize, Serialize};

use super::nll::shifted_exp;
use super::{LineSearch, LogitBatch, TunerResult};
use crate::conformal::ceil_count;
use crate::error::{ensure, Error, Result};
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    OrderPreserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfTrConfig {
    pub lambda_size: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub initial_step: f64,
}

impl Default for ConfTrConfig {
    fn default() -> Self {
        Self {
            lambda_size: 0.1,
            tau: 0.1,
            max_iter: 300,
            grad_tol: 1e-6,
            armijo: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
        }
    }
}

impl ConfTrConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lambda_size >= 0.0, "lambda_size must be nonnegative");
        ensure!(self.tau > 0.0, "tau must be positive");
        ensure!(self.grad_tol > 0.0, "grad_tol must be positive");
        ensure!(self.armijo > 0.0 && self.armijo < 1.0, "armijo must lie in (0, 1)");
        ensure!(self.shrink > 0.0 && self.shrink < 1.0, "shrink must lie in (0, 1)");
        ensure!(self.initial_step > 0.0, "initial_step must be positive");
        Ok(())
    }
}

/// Parameter vector at the identity map.
pub fn initial_params(constraint: Constraint, k: usize) -> Vec<f64> {
    match constraint {
        Constraint::None => {
            let mut x = vec![0.0; k * k + k];
            for i in 0..k {
                x[i * k + i] = 1.0;
            }
            x
        }
        Constraint::OrderPreserving => vec![0.0; k + 2],
    }
}

pub fn params_to_transform(constraint: Constraint, x: &[f64], k: usize) -> Transform<f64> {
    match constraint {
        Constraint::None => Transform::MatrixScale { w: x[..k * k].to_vec(), b: x[k * k..].to_vec() },
        Constraint::OrderPreserving => Transform::OpMatrixScale {
            a: x[0].exp(),
            v: x[1..=k].to_vec(),
            c: x[k + 1],
        },
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Loss at parameters `x`; writes the gradient into `grad` when given.
pub fn conftr_objective(
    constraint: Constraint,
    x: &[f64],
    batch: &LogitBatch<'_>,
    alpha: f64,
    config: &ConfTrConfig,
    grad: Option<&mut [f64]>,
) -> f64 {
    let k = batch.num_classes();
    let n = batch.len();
    let nf = n as f64;
    let mut probs = vec![0.0; n * k];
    let mut g = vec![0.0; k];
    let mut nll = 0.0;
    for i in 0..n {
        let f = batch.row(i);
        forward(constraint, x, f, &mut g);
        let p = &mut probs[i * k..(i + 1) * k];
        let (m, s) = shifted_exp(&g, p);
        for pj in p.iter_mut() {
            *pj /= s;
        }
        nll += m + s.ln() - g[batch.label(i)];
    }

    // t is the r-th smallest true-label score; ties broken by index.
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| (1.0 - probs[i * k + batch.label(i)], i))
        .collect();
    let r = ceil_count(nf * (1.0 - alpha)).clamp(1, n);
    let (_, &mut (t, j_star), _) =
        order.select_nth_unstable_by(r - 1, |a, b| a.partial_cmp(b).expect("finite scores"));

    let inv_tau = 1.0 / config.tau;
    let lam = config.lambda_size;
    let mut size = 0.0;
    for &p in &probs {
        size += sigmoid((t - 1.0 + p) * inv_tau);
    }
    let value = nll / nf + lam * size / nf;

    let Some(grad) = grad else { return value };
    grad.fill(0.0);
    // dL/dp from the size term and the total weight flowing into t.
    let mut dp = vec![0.0; n * k];
    let mut dt = 0.0;
    for (d, &p) in dp.iter_mut().zip(&probs) {
        let sg = sigmoid((t - 1.0 + p) * inv_tau);
        let c = lam / nf * sg * (1.0 - sg) * inv_tau;
        *d = c;
        dt += c;
    }
    dp[j_star * k + batch.label(j_star)] -= dt;

    let mut dg = vec![0.0; k];
    for i in 0..n {
        let p = &probs[i * k..(i + 1) * k];
        let d = &dp[i * k..(i + 1) * k];
        let y = batch.label(i);
        let dot: f64 = d.iter().zip(p).map(|(a, b)| a * b).sum();
        for j in 0..k {
            dg[j] = p[j] * (d[j] - dot) + (p[j] - if j == y { 1.0 } else { 0.0 }) / nf;
        }
        backward(constraint, x, batch.row(i), &dg, grad);
    }
    value
}

#[inline]
fn forward(constraint: Constraint, x: &[f64], f: &[f64], g: &mut [f64]) {
    let k = f.len();
    match constraint {
        Constraint::None => {
            let (w, b) = x.split_at(k * k);
            for a in 0..k {
                let row = &w[a * k..(a + 1) * k];
                g[a] = row.iter().zip(f).map(|(wv, fv)| wv * fv).sum::<f64>() + b[a];
            }
        }
        Constraint::OrderPreserving => {
            let a = x[0].exp();
            let shift = x[1..=k].iter().zip(f).map(|(v, fv)| v * fv).sum::<f64>() + x[k + 1];
            for (gj, &fj) in g.iter_mut().zip(f) {
                *gj = a * fj + shift;
            }
        }
    }
}

#[inline]
fn backward(constraint: Constraint, x: &[f64], f: &[f64], dg: &[f64], grad: &mut [f64]) {
    let k = f.len();
    match constraint {
        Constraint::None => {
            let (gw, gb) = grad.split_at_mut(k * k);
            for a in 0..k {
                let row = &mut gw[a * k..(a + 1) * k];
                for (gv, &fv) in row.iter_mut().zip(f) {
                    *gv += dg[a] * fv;
                }
                gb[a] += dg[a];
            }
        }
        Constraint::OrderPreserving => {
            let a = x[0].exp();
            let total: f64 = dg.iter().sum();
            grad[0] += a * dg.iter().zip(f).map(|(d, fv)| d * fv).sum::<f64>();
            for (gv, &fv) in grad[1..=k].iter_mut().zip(f) {
                *gv += total * fv;
            }
            grad[k + 1] += total;
        }
    }
}

pub fn fit_conftr_linear(
    batch: &LogitBatch<'_>,
    constraint: Constraint,
    alpha: f64,
    config: &ConfTrConfig,
) -> Result<TunerResult> {
    config.validate()?;
    ensure!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1), got {alpha}");
    let k = batch.num_classes();
    let mut x = initial_params(constraint, k);
    let mut grad = vec![0.0; x.len()];
    let mut fx = conftr_objective(constraint, &x, batch, alpha, config, Some(&mut grad));
    if !fx.is_finite() {
        return Err(Error::optimization("ConfTr objective is not finite at identity"));
    }
    let mut trace = vec![fx];
    let ls = LineSearch { armijo: config.armijo, shrink: config.shrink, min_step: 1e-16 };
    let mut trial = Vec::with_capacity(x.len());
    let mut trial_grad = vec![0.0; x.len()];
    let mut step = config.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax.is_nan() {
            return Err(Error::optimization("ConfTr gradient is NaN"));
        }
        if gmax < config.grad_tol {
            converged = true;
            break;
        }
        let found = ls.search(&x, fx, &grad, 2.0 * step, &mut trial, |p| {
            conftr_objective(constraint, p, batch, alpha, config, Some(&mut trial_grad))
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
        transform: params_to_transform(constraint, &x, k),
        objective_trace: trace,
        iterations,
        converged,
    })
}
