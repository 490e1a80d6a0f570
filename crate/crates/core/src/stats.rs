//! Small statistical helpers: two-sample KS distance, Spearman trend tests and
//! Monte-Carlo summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

/// `sup_t |F_a(t) - F_b(t)|`, evaluated exactly at the pooled sample points.
pub fn ks_two_sample<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    ks_two_sample_at(a, b).map(|(d, _)| d)
}

/// KS distance together with a pooled point `t` attaining it.
pub fn ks_two_sample_at<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, T)> {
    ensure!(!a.is_empty() && !b.is_empty(), "KS needs two non-empty samples");
    ensure!(
        a.iter().chain(b).all(|v| !v.is_nan()),
        "KS samples must not contain NaN"
    );
    let cmp = |x: &T, y: &T| x.partial_cmp(y).expect("no NaN");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(cmp);
    b.sort_by(cmp);
    let (na, nb) = (T::of_usize(a.len()), T::of_usize(b.len()));
    let (mut i, mut j) = (0, 0);
    let mut best = (T::zero(), a[0].min(b[0]));
    while i < a.len() && j < b.len() {
        let t = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let gap = (T::of_usize(i) / na - T::of_usize(j) / nb).abs();
        if gap > best.0 {
            best = (gap, t);
        }
    }
    Ok(best)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[s]] {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0 + 1.0;
        for &k in &idx[s..=e] {
            ranks[k] = r;
        }
        s = e + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Positive association.
    Greater,
    /// Negative association.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub rho: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// One-sided Spearman test. Up to nine points the p-value is the exact
/// permutation probability; above that it uses `z = ρ·sqrt(n-1)`.
pub fn spearman_test(x: &[f64], y: &[f64], alt: Alternative) -> Result<TrendTest> {
    ensure!(x.len() == y.len(), "trend test needs paired samples");
    ensure!(x.len() >= 3, "trend test needs at least three points");
    let rho = spearman(x, y);
    let signed = |r: f64| if alt == Alternative::Greater { r } else { -r };
    let n = x.len();
    if n <= 9 {
        let rx = average_ranks(x);
        let mut ry = average_ranks(y);
        let observed = signed(rho);
        let (mut hits, mut total) = (0u64, 0u64);
        heap_permutations(&mut ry, &mut |perm| {
            total += 1;
            if signed(pearson(&rx, perm)) >= observed - 1e-12 {
                hits += 1;
            }
        });
        return Ok(TrendTest { rho, p_value: hits as f64 / total as f64, exact: true });
    }
    let z = signed(rho) * ((n - 1) as f64).sqrt();
    let normal = Normal::standard();
    Ok(TrendTest { rho, p_value: 1.0 - normal.cdf(z), exact: false })
}

fn heap_permutations(v: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Sample mean and its standard error (`sd / sqrt(n)`, `n - 1` denominator).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [0.1, 0.4, 0.2];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!(ks_two_sample::<f64>(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_handles_ties() {
        // F_a jumps to 1 at 1; F_b is 0.5 there.
        assert_abs_diff_eq!(ks_two_sample(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn exact_p_for_perfect_trend() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let t = spearman_test(&x, &[0.1, 0.2, 0.3, 0.4], Alternative::Greater).unwrap();
        assert_abs_diff_eq!(t.rho, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.p_value, 1.0 / 24.0, epsilon = 1e-12);
        let t = spearman_test(&x, &[0.4, 0.3, 0.2, 0.1], Alternative::Less).unwrap();
        assert_abs_diff_eq!(t.p_value, 1.0 / 24.0, epsilon = 1e-12);
        let five = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = spearman_test(&five, &[1.0, 3.0, 2.0, 4.0, 5.0], Alternative::Greater).unwrap();
        assert!(t.p_value < 0.05, "{t:?}");
    }

    #[test]
    fn mean_stderr_values() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(m, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
    }
}
