//! Split conformal calibration: quantiles, thresholds, prediction sets and
//! coverage metrics.
//!
//! The empirical quantile is `Q_p(S) = inf{q : #{s ∈ S : s ≤ q} ≥ p·|S|}`
//! with no interpolation. Levels whose required count exceeds `|S|` return
//! `+∞`, which makes every prediction set the full label set.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Smallest integer `r` with `r ≥ x`, treating values within a relative
/// `1e-12` of an integer as that integer (absorbs `0.9 * 10 = 9.000…02`).
pub fn ceil_count(x: f64) -> usize {
    let nearest = x.round();
    let r = if (x - nearest).abs() <= 1e-12 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    r.max(0.0) as usize
}

/// Non-empty set of finite calibration scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibScores<T>(Vec<T>);

impl<T: Scalar> CalibScores<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        ensure!(!values.is_empty(), "calibration scores must be non-empty");
        ensure!(values.iter().all(|v| v.is_finite()), "calibration scores must be finite");
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The `r`-th smallest value (1-based) of `values`, reordering them.
fn kth_smallest<T: Scalar>(values: &mut [T], r: usize) -> T {
    let (_, v, _) = values.select_nth_unstable_by(r - 1, |a, b| {
        a.partial_cmp(b).expect("finite scores")
    });
    *v
}

/// `Q_p(S)`; `+∞` when `⌈p·n⌉ > n`.
pub fn empirical_quantile<T: Scalar>(scores: &CalibScores<T>, p: T) -> Result<T> {
    ensure!(p > T::zero(), "quantile level must be positive, got {p}");
    let n = scores.len();
    let r = ceil_count(p.to_f64_lossy() * n as f64).max(1);
    if r > n {
        return Ok(T::infinity());
    }
    let mut buf = scores.as_slice().to_vec();
    Ok(kth_smallest(&mut buf, r))
}

fn check_alpha(alpha: f64) -> Result<()> {
    ensure!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1), got {alpha}");
    Ok(())
}

/// `⌈(n+1)(1-α)⌉`, the order statistic used for the threshold.
pub fn threshold_rank(n: usize, alpha: f64) -> usize {
    ceil_count((n as f64 + 1.0) * (1.0 - alpha))
}

/// The `⌈(n+1)(1-α)⌉`-th smallest calibration score, or `+∞` past `n`.
pub fn calibrate_threshold<T: Scalar>(scores: &CalibScores<T>, alpha: f64) -> Result<T> {
    check_alpha(alpha)?;
    let mut buf = scores.as_slice().to_vec();
    Ok(threshold_in_place(&mut buf, alpha))
}

/// Same as [`calibrate_threshold`] but selects within `values` (reordering
/// them). Callers guarantee `0 < α < 1`, non-empty and finite input.
pub fn threshold_in_place<T: Scalar>(values: &mut [T], alpha: f64) -> T {
    let r = threshold_rank(values.len(), alpha).max(1);
    if r > values.len() {
        T::infinity()
    } else {
        kth_smallest(values, r)
    }
}

/// Membership flags over the `K` labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PredictionSet(Vec<bool>);

impl PredictionSet {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn contains(&self, y: usize) -> bool {
        self.0.get(y).copied().unwrap_or(false)
    }

    pub fn size(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }
}

/// `{y : S(x, y) ≤ t}` from the per-label scores of one input.
pub fn prediction_set<T: Scalar>(label_scores: &[T], t: T) -> Result<PredictionSet> {
    ensure!(
        label_scores.iter().all(|s| s.is_finite()),
        "per-label scores must be finite"
    );
    Ok(PredictionSet(label_scores.iter().map(|&s| s <= t).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub avg_size: f64,
    pub n_test: usize,
    pub alpha: f64,
}

impl CoverageReport {
    pub fn covgap(&self) -> f64 {
        coverage_gap(self.coverage, self.alpha)
    }
}

/// Running coverage/size counts; `merge` is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoverageTally {
    pub covered: usize,
    pub size_sum: usize,
    pub n: usize,
}

impl CoverageTally {
    pub fn push(&mut self, covered: bool, size: usize) {
        self.covered += covered as usize;
        self.size_sum += size;
        self.n += 1;
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            covered: self.covered + other.covered,
            size_sum: self.size_sum + other.size_sum,
            n: self.n + other.n,
        }
    }

    pub fn report(&self, alpha: f64) -> CoverageReport {
        let n = self.n.max(1) as f64;
        CoverageReport {
            coverage: self.covered as f64 / n,
            avg_size: self.size_sum as f64 / n,
            n_test: self.n,
            alpha,
        }
    }
}

/// Empirical coverage and mean set size.
pub fn evaluate(sets: &[PredictionSet], labels: &[usize], alpha: f64) -> Result<CoverageReport> {
    if sets.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} prediction sets for {} labels",
            sets.len(),
            labels.len()
        )));
    }
    ensure!(!sets.is_empty(), "cannot evaluate an empty test set");
    let tally = sets.iter().zip(labels).fold(CoverageTally::default(), |mut t, (s, &y)| {
        t.push(s.contains(y), s.size());
        t
    });
    Ok(tally.report(alpha))
}

/// `|(1 - α) - coverage|`.
pub fn coverage_gap(coverage: f64, alpha: f64) -> f64 {
    ((1.0 - alpha) - coverage).abs()
}

/// `⌈(1+n)(1-α)⌉ / n - (1-α)`, the finite-sample slack of split conformal.
pub fn eps_alpha_n(alpha: f64, n: usize) -> f64 {
    threshold_rank(n, alpha) as f64 / n as f64 - (1.0 - alpha)
}
