//! Monte-Carlo check of the DKW inequality
//! `P(sup_x |F_n(x) - F(x)| > ε) ≤ 2 exp(-2nε²)` for uniform samples.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{derive_seed, stream, tag};

const CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkwResult {
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub stderr: f64,
    pub bound: f64,
}

/// `sup_x |F_n(x) - x|` of a sorted uniform sample.
pub fn uniform_ks(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (i, &u)| {
        d.max((i + 1) as f64 / n - u).max(u - i as f64 / n)
    })
}

/// Trials are grouped in chunks of 1000 with their own substreams, so the
/// result does not depend on the thread count.
pub fn dkw_violation_rate(n: usize, eps: f64, trials: usize, seed: u64) -> Result<DkwResult> {
    ensure!(n >= 1, "n must be at least 1");
    ensure!(eps > 0.0, "eps must be positive, got {eps}");
    ensure!(trials >= 1, "trials must be at least 1");
    let chunks = trials.div_ceil(CHUNK);
    let violations: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(derive_seed(seed, &[tag::DKW, c as u64]), tag::DKW);
            let mut buf = vec![0.0; n];
            let count = CHUNK.min(trials - c * CHUNK);
            (0..count)
                .filter(|_| {
                    buf.iter_mut().for_each(|v| *v = rng.random::<f64>());
                    buf.sort_unstable_by(f64::total_cmp);
                    uniform_ks(&buf) > eps
                })
                .count()
        })
        .sum();
    let rate = violations as f64 / trials as f64;
    Ok(DkwResult {
        n,
        eps,
        trials,
        violations,
        rate,
        stderr: (rate * (1.0 - rate) / trials as f64).sqrt(),
        bound: 2.0 * (-2.0 * n as f64 * eps * eps).exp(),
    })
}
