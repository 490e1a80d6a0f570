//! Softmax and the THR / APS / RAPS / SAPS non-conformity scores.
//!
//! Conventions shared by every score here:
//!
//! * ranks are 1-based in descending probability order, ties broken by the
//!   lower label index first;
//! * APS accumulates the mass of labels with *strictly* greater probability,
//!   plus `u · p(y|x)` for the label itself;
//! * non-randomized scores use `u = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::hash_unit;
use crate::scalar::Scalar;
use crate::transform::{apply_transform, Transform};

const PROB_SUM_TOL: f64 = 1e-9;

/// A probability vector over `K` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    /// Validates nonnegativity and unit sum (within 1e-9).
    pub fn new(entries: Vec<T>) -> Result<Self> {
        ensure!(!entries.is_empty(), "probability vector must be non-empty");
        ensure!(
            entries.iter().all(|p| p.is_finite() && *p >= T::zero()),
            "probabilities must be finite and nonnegative"
        );
        let sum = entries.iter().fold(T::zero(), |a, &p| a + p).to_f64_lossy();
        ensure!(
            (sum - 1.0).abs() <= PROB_SUM_TOL,
            "probabilities sum to {sum}, expected 1"
        );
        Ok(Self(entries))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Numerically stable softmax.
///
/// Entries equal to `-inf` receive probability zero; NaN, `+inf`, or an
/// all-`-inf` vector are rejected.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbVector<T>> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut out)?;
    Ok(ProbVector(out))
}

/// Softmax into a caller-provided buffer (same validation as [`softmax`]).
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) -> Result<()> {
    ensure!(!logits.is_empty(), "softmax of an empty vector");
    ensure!(out.len() == logits.len(), "softmax buffer length mismatch");
    let mut max = T::neg_infinity();
    for &z in logits {
        ensure!(!z.is_nan(), "softmax input contains NaN");
        ensure!(z != T::infinity(), "softmax input contains +inf");
        if z > max {
            max = z;
        }
    }
    ensure!(max.is_finite(), "softmax input has no finite entry");
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
    Ok(())
}

/// 1-based rank of `p(y|x)` in descending order; ties go to the lower label.
pub fn rank_of<T: Scalar>(probs: &ProbVector<T>, y: usize) -> usize {
    rank_in(probs.as_slice(), y)
}

fn rank_in<T: Scalar>(p: &[T], y: usize) -> usize {
    let py = p[y];
    1 + p
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > py || (q == py && j < y))
        .count()
}

fn check_label<T>(probs: &[T], y: usize) -> Result<()> {
    ensure!(y < probs.len(), "label {y} out of range for {} classes", probs.len());
    Ok(())
}

fn check_u<T: Scalar>(u: T) -> Result<()> {
    ensure!(
        u >= T::zero() && u <= T::one(),
        "u must lie in [0, 1], got {u}"
    );
    Ok(())
}

/// THR score `1 - p(y|x)`, evaluated as the mass of the other labels.
pub fn thr_score<T: Scalar>(probs: &ProbVector<T>, y: usize) -> Result<T> {
    check_label(probs.as_slice(), y)?;
    Ok(thr_raw(probs.as_slice(), y))
}

/// Forward sum of the labels below `y` plus backward sum of those above it;
/// `score_all` reproduces the same operation order with prefix/suffix sums.
#[inline]
fn thr_raw<T: Scalar>(p: &[T], y: usize) -> T {
    let below = p[..y].iter().fold(T::zero(), |a, &q| a + q);
    let above = p[y + 1..].iter().rev().fold(T::zero(), |a, &q| a + q);
    (below + above).min(T::one())
}

fn greater_mass<T: Scalar>(p: &[T], y: usize) -> T {
    // Summed largest-first so `score_all` reproduces it bit for bit.
    let py = p[y];
    let mut above: Vec<T> = p.iter().copied().filter(|&q| q > py).collect();
    above.sort_by(|a, b| b.partial_cmp(a).expect("finite probabilities"));
    above.into_iter().fold(T::zero(), |a, q| a + q)
}

pub fn aps_score<T: Scalar>(probs: &ProbVector<T>, y: usize, u: T) -> Result<T> {
    check_label(probs.as_slice(), y)?;
    check_u(u)?;
    let p = probs.as_slice();
    Ok(greater_mass(p, y) + u * p[y])
}

pub fn raps_score<T: Scalar>(
    probs: &ProbVector<T>,
    y: usize,
    u: T,
    gamma: T,
    k_reg: usize,
) -> Result<T> {
    ensure!(gamma >= T::zero(), "gamma must be nonnegative");
    let aps = aps_score(probs, y, u)?;
    let rank = rank_of(probs, y);
    Ok(aps + gamma * T::of_usize(rank.saturating_sub(k_reg)))
}

pub fn saps_score<T: Scalar>(probs: &ProbVector<T>, y: usize, u: T, gamma: T) -> Result<T> {
    check_label(probs.as_slice(), y)?;
    check_u(u)?;
    ensure!(gamma >= T::zero(), "gamma must be nonnegative");
    Ok(saps_raw(probs.max(), rank_of(probs, y), u, gamma))
}

#[inline]
fn saps_raw<T: Scalar>(p_max: T, rank: usize, u: T, gamma: T) -> T {
    if rank == 1 {
        u * p_max
    } else {
        p_max + (T::of_usize(rank) - T::of(2.0) + u) * gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Thr,
    Aps,
    Raps,
    Saps,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Thr => "thr",
            ScoreKind::Aps => "aps",
            ScoreKind::Raps => "raps",
            ScoreKind::Saps => "saps",
        }
    }
}

/// A parameterized non-conformity score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec<T> {
    pub kind: ScoreKind,
    /// Rank penalty weight (RAPS, SAPS).
    #[serde(default)]
    pub gamma: T,
    /// Rank offset for RAPS.
    #[serde(default)]
    pub k_reg: usize,
    /// Whether APS/RAPS/SAPS draw `u`; otherwise `u = 1`.
    #[serde(default)]
    pub randomized: bool,
}

impl<T: Scalar> ScoreSpec<T> {
    pub fn thr() -> Self {
        Self { kind: ScoreKind::Thr, gamma: T::zero(), k_reg: 0, randomized: false }
    }

    pub fn aps(randomized: bool) -> Self {
        Self { kind: ScoreKind::Aps, gamma: T::zero(), k_reg: 0, randomized }
    }

    pub fn raps(gamma: T, k_reg: usize, randomized: bool) -> Self {
        Self { kind: ScoreKind::Raps, gamma, k_reg, randomized }
    }

    pub fn saps(gamma: T, randomized: bool) -> Self {
        Self { kind: ScoreKind::Saps, gamma, k_reg: 0, randomized }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        ensure!(
            self.gamma.is_finite() && self.gamma >= T::zero(),
            "score gamma must be finite and nonnegative"
        );
        ensure!(
            self.k_reg <= num_classes,
            "k_reg = {} exceeds the number of classes {num_classes}",
            self.k_reg
        );
        Ok(())
    }

    /// Whether the score consumes the per-(sample, label) uniform.
    pub fn uses_u(&self) -> bool {
        self.randomized && self.kind != ScoreKind::Thr
    }

    /// Score of label `y` given its uniform draw `u`.
    pub fn score(&self, probs: &ProbVector<T>, y: usize, u: T) -> Result<T> {
        let u = if self.uses_u() { u } else { T::one() };
        match self.kind {
            ScoreKind::Thr => thr_score(probs, y),
            ScoreKind::Aps => aps_score(probs, y, u),
            ScoreKind::Raps => raps_score(probs, y, u, self.gamma, self.k_reg),
            ScoreKind::Saps => saps_score(probs, y, u, self.gamma),
        }
    }

    /// Scores of every label at once in `O(K log K)`.
    ///
    /// `u_of(label)` supplies the uniform draw; it is ignored for
    /// non-randomized specs. Results match [`ScoreSpec::score`] exactly.
    pub fn score_all(&self, probs: &[T], u_of: impl Fn(usize) -> T, out: &mut [T]) {
        let k = probs.len();
        debug_assert_eq!(out.len(), k);
        let u = |j: usize| if self.uses_u() { u_of(j) } else { T::one() };
        if self.kind == ScoreKind::Thr {
            let mut suffix = vec![T::zero(); k + 1];
            for j in (0..k).rev() {
                suffix[j] = suffix[j + 1] + probs[j];
            }
            let mut below = T::zero();
            for (y, o) in out.iter_mut().enumerate() {
                *o = (below + suffix[y + 1]).min(T::one());
                below = below + probs[y];
            }
            return;
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            probs[b]
                .partial_cmp(&probs[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let p_max = probs[order[0]];
        // Walk groups of equal probability; `greater` is the mass strictly above.
        let mut greater = T::zero();
        let mut pos = 0;
        while pos < k {
            let p = probs[order[pos]];
            let mut end = pos;
            while end < k && probs[order[end]] == p {
                end += 1;
            }
            for (offset, &label) in order[pos..end].iter().enumerate() {
                let rank = pos + offset + 1;
                let uj = u(label);
                let aps = greater + uj * p;
                out[label] = match self.kind {
                    ScoreKind::Aps => aps,
                    ScoreKind::Raps => {
                        aps + self.gamma * T::of_usize(rank.saturating_sub(self.k_reg))
                    }
                    ScoreKind::Saps => saps_raw(p_max, rank, uj, self.gamma),
                    ScoreKind::Thr => unreachable!(),
                };
            }
            for &label in &order[pos..end] {
                greater = greater + probs[label];
            }
            pos = end;
        }
    }
}

/// Source of the uniform `u` in randomized scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UPolicy<T> {
    /// The same `u` for every sample and label.
    Fixed(T),
    /// `u` hashed from `(seed, sample id, label)`.
    Seeded { seed: u64 },
}

impl<T: Scalar> UPolicy<T> {
    pub fn validate(&self) -> Result<()> {
        if let UPolicy::Fixed(u) = self {
            check_u(*u)?;
        }
        Ok(())
    }

    #[inline]
    pub fn draw(&self, sample: u64, label: usize) -> T {
        match *self {
            UPolicy::Fixed(u) => u,
            UPolicy::Seeded { seed } => T::of(hash_unit(seed, sample, label as u64)),
        }
    }
}

/// `S^λ(x, y)`: the score applied to `softmax(transform(logits))`.
pub fn score_with_transform<T: Scalar>(
    score: &ScoreSpec<T>,
    transform: &Transform<T>,
    logits: &[T],
    y: usize,
    u_policy: &UPolicy<T>,
    sample: u64,
) -> Result<T> {
    u_policy.validate()?;
    let z = apply_transform(transform, logits)?;
    let probs = softmax(&z)?;
    check_label(probs.as_slice(), y)?;
    score
        .score(&probs, y, u_policy.draw(sample, y))
        .map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("score: {m}")),
            other => other,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ProbVector<f64> {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for &x in p.as_slice() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(&[2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(p.as_slice()[1], 0.1192, epsilon = 1e-4);
        let a = softmax(&[0.3, -1.2]).unwrap();
        let b = softmax(&[100.3, 98.8]).unwrap();
        assert_abs_diff_eq!(a.as_slice()[0], b.as_slice()[0], epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_nan_and_handles_neg_inf() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::NEG_INFINITY; 2]).is_err());
        let p = softmax(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn ranks_follow_tie_rule() {
        let p = pv(&[0.5, 0.3, 0.2]);
        assert_eq!(rank_of(&p, 0), 1);
        assert_eq!(rank_of(&p, 2), 3);
        let t = pv(&[0.4, 0.4, 0.2]);
        assert_eq!(rank_of(&t, 0), 1);
        assert_eq!(rank_of(&t, 1), 2);
    }

    #[test]
    fn thr_examples() {
        assert_eq!(thr_score(&pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert_abs_diff_eq!(thr_score(&pv(&[0.7, 0.3]), 0).unwrap(), 0.3, epsilon = 1e-15);
        let uniform = pv(&[0.25; 4]);
        for y in 0..4 {
            assert_eq!(thr_score(&uniform, y).unwrap(), 0.75);
        }
    }

    #[test]
    fn aps_examples() {
        let p = pv(&[0.5, 0.3, 0.2]);
        assert_abs_diff_eq!(aps_score(&p, 1, 0.5).unwrap(), 0.65, epsilon = 1e-15);
        assert_eq!(aps_score(&p, 0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(aps_score(&p, 2, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(aps_score(&p, 0, 1.5).is_err());
        assert!(aps_score(&p, 0, -0.1).is_err());
    }

    #[test]
    fn aps_excludes_tied_mass() {
        let t = pv(&[0.4, 0.4, 0.2]);
        assert_abs_diff_eq!(aps_score(&t, 1, 0.5).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(aps_score(&t, 2, 0.0).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn raps_examples() {
        let p = pv(&[0.5, 0.3, 0.2]);
        for y in 0..3 {
            assert_eq!(
                raps_score(&p, y, 0.3, 0.0, 1).unwrap(),
                aps_score(&p, y, 0.3).unwrap()
            );
            assert_eq!(
                raps_score(&p, y, 0.3, 0.7, 3).unwrap(),
                aps_score(&p, y, 0.3).unwrap()
            );
        }
        assert_abs_diff_eq!(raps_score(&p, 1, 0.5, 0.1, 1).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn saps_examples() {
        let p = pv(&[0.5, 0.3, 0.2]);
        assert_abs_diff_eq!(saps_score(&p, 0, 0.4, 0.3).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(saps_score(&p, 2, 0.0, 0.2).unwrap(), 0.7, epsilon = 1e-15);
        for gamma in [0.0, 0.1, 5.0] {
            assert_eq!(saps_score(&p, 1, 0.0, gamma).unwrap(), 0.5);
        }
    }

    fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
        softmax(&z).unwrap().into_inner()
    }

    #[test]
    fn score_ranges_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let k = rng.random_range(2..12);
            let p = pv(&random_probs(&mut rng, k));
            let y = rng.random_range(0..k);
            let u: f64 = rng.random();
            let gamma = rng.random_range(0.0..0.5);
            let k_reg = rng.random_range(0..=k);
            let upper = 1.0 + gamma * k as f64;
            let thr = thr_score(&p, y).unwrap();
            let aps = aps_score(&p, y, u).unwrap();
            assert!((0.0..=1.0).contains(&thr));
            assert!((0.0..=1.0 + 1e-12).contains(&aps));
            let raps = raps_score(&p, y, u, gamma, k_reg).unwrap();
            let saps = saps_score(&p, y, u, gamma).unwrap();
            assert!((0.0..=upper + 1e-12).contains(&raps));
            assert!((0.0..=upper + 1e-12).contains(&saps));
        }
    }

    #[test]
    fn saps_is_monotone_in_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2_000 {
            let k = rng.random_range(2..10);
            let p = pv(&random_probs(&mut rng, k));
            let u: f64 = rng.random();
            let gamma = rng.random_range(0.0..0.4);
            let mut by_rank: Vec<(usize, f64)> = (0..k)
                .map(|y| (rank_of(&p, y), saps_score(&p, y, u, gamma).unwrap()))
                .collect();
            by_rank.sort_by_key(|&(r, _)| r);
            for w in by_rank.windows(2) {
                assert!(w[0].1 <= w[1].1 + 1e-15);
            }
        }
    }

    #[test]
    fn score_all_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let policy = UPolicy::<f64>::Seeded { seed: 4 };
        for trial in 0..3_000u64 {
            let k = rng.random_range(2..16);
            let mut probs = random_probs(&mut rng, k);
            if trial % 5 == 0 {
                // force ties
                probs[k - 1] = probs[0];
                let s: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= s);
            }
            let p = pv(&probs);
            let specs = [
                ScoreSpec::thr(),
                ScoreSpec::aps(true),
                ScoreSpec::aps(false),
                ScoreSpec::raps(0.07, 2, true),
                ScoreSpec::saps(0.11, true),
            ];
            for spec in specs {
                let mut out = vec![0.0; k];
                spec.score_all(&probs, |j| policy.draw(trial, j), &mut out);
                for y in 0..k {
                    let direct = spec.score(&p, y, policy.draw(trial, y)).unwrap();
                    assert_eq!(out[y], direct, "{spec:?} y={y}");
                }
            }
        }
    }

    #[test]
    fn transformed_score_with_identity_is_base_score() {
        let logits = [1.0f64, -0.5, 0.25];
        let spec = ScoreSpec::raps(0.05, 1, true);
        let policy = UPolicy::Seeded { seed: 1 };
        let base = spec
            .score(&softmax(&logits).unwrap(), 2, policy.draw(17, 2))
            .unwrap();
        let via = score_with_transform(&spec, &Transform::Identity, &logits, 2, &policy, 17).unwrap();
        assert_eq!(base.to_bits(), via.to_bits());
    }

    #[test]
    fn uniform_logits_give_one_minus_inverse_k() {
        let logits = [0.7; 5];
        for t in [Transform::Identity, Transform::TempScale { lambda: 3.0 }] {
            let s = score_with_transform(&ScoreSpec::thr(), &t, &logits, 1, &UPolicy::Fixed(0.5), 0)
                .unwrap();
            assert_abs_diff_eq!(s, 0.8, epsilon = 1e-15);
        }
    }

    #[test]
    fn transform_dimension_mismatch_is_rejected() {
        let t = Transform::VectorScale {
            w: vec![1.0; 3],
            b: vec![0.0; 3],
            freeze_mask: vec![[false; 2]; 3],
        };
        let r = score_with_transform(&ScoreSpec::thr(), &t, &[0.0, 1.0], 0, &UPolicy::Fixed(0.5), 0);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn generic_over_f32() {
        let p = softmax(&[2.0f32, 0.0]).unwrap();
        assert!((p.as_slice()[0] - 0.8808).abs() < 1e-4);
        let s = aps_score(&p, 1, 0.5f32).unwrap();
        assert!((s - (0.8808 + 0.5 * 0.1192)).abs() < 1e-4);
    }
}
