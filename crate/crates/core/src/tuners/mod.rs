//! Parameter tuning for scores and logit transforms.
//!
//! Every tuner works on a [`LogitBatch`], a borrowed row-major view of model
//! logits with labels and per-sample ids.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::transform::Transform;

pub mod conftr;
pub mod grid;
pub mod nll;
pub mod temperature;
pub mod vector;

pub use conftr::{fit_conftr_linear, ConfTrConfig, Constraint};
pub use grid::{
    aggregation_grid, fit_aggregation, fit_raps_params, mean_set_size, select_score, GridFit,
    PENALTY_CANDIDATES,
};
pub use nll::nll;
pub use temperature::fit_temperature;
pub use vector::{fit_vector_scale, freeze_mask_random, VsConfig};

#[derive(Debug, Clone, Copy)]
pub struct LogitBatch<'a> {
    logits: &'a [f64],
    labels: &'a [usize],
    ids: &'a [u64],
    k: usize,
}

impl<'a> LogitBatch<'a> {
    pub fn new(logits: &'a [f64], labels: &'a [usize], ids: &'a [u64], k: usize) -> Result<Self> {
        let n = labels.len();
        ensure!(n >= 1, "batch must be non-empty");
        ensure!(k >= 1, "number of classes must be positive");
        ensure!(logits.len() == n * k, "{} logits for {n} samples of {k} classes", logits.len());
        ensure!(ids.len() == n, "{} ids for {n} samples", ids.len());
        ensure!(labels.iter().all(|&y| y < k), "labels must lie in [0, {k})");
        ensure!(logits.iter().all(|v| v.is_finite()), "logits must be finite");
        Ok(Self { logits, labels, ids, k })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.logits[i * self.k..(i + 1) * self.k]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerResult {
    pub transform: Transform<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Armijo backtracking shared by the descent tuners.
pub(crate) struct LineSearch {
    pub armijo: f64,
    pub shrink: f64,
    pub min_step: f64,
}

impl LineSearch {
    /// Find `s` with `f(x - s g) ≤ f(x) - armijo · s · |g|²`, starting from
    /// `step`. Returns the accepted step and objective, or `None` once the
    /// step falls below `min_step`.
    pub fn search(
        &self,
        x: &[f64],
        fx: f64,
        g: &[f64],
        mut step: f64,
        trial: &mut Vec<f64>,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Option<(f64, f64)> {
        let g2: f64 = g.iter().map(|v| v * v).sum();
        while step >= self.min_step {
            trial.clear();
            trial.extend(x.iter().zip(g).map(|(xi, gi)| xi - step * gi));
            let ft = f(trial);
            if ft.is_finite() && ft <= fx - self.armijo * step * g2 {
                return Some((step, ft));
            }
            step *= self.shrink;
        }
        None
    }
}
