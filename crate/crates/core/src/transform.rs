//! Affine logit transforms and their order-preservation test.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

const OP_TOL: f64 = 1e-10;

/// Parameters of a logit transform.
///
/// Matrices are stored row-major (`w[i * K + j]` is row `i`, column `j`).
/// `freeze_mask[j] = [w_frozen, b_frozen]` for class `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Transform<T> {
    Identity,
    /// `f / lambda`.
    TempScale { lambda: T },
    /// `w ∘ f + b`.
    VectorScale {
        w: Vec<T>,
        b: Vec<T>,
        freeze_mask: Vec<[bool; 2]>,
    },
    /// `a · f + c · 1`.
    OpVectorScale { a: T, c: T },
    /// `W f + b`.
    MatrixScale { w: Vec<T>, b: Vec<T> },
    /// `(a I + 1 vᵀ) f + c · 1`.
    OpMatrixScale { a: T, v: Vec<T>, c: T },
}

impl<T: Scalar> Transform<T> {
    pub fn vector_identity(k: usize) -> Self {
        Transform::VectorScale {
            w: vec![T::one(); k],
            b: vec![T::zero(); k],
            freeze_mask: vec![[false; 2]; k],
        }
    }

    pub fn matrix_identity(k: usize) -> Self {
        let mut w = vec![T::zero(); k * k];
        for i in 0..k {
            w[i * k + i] = T::one();
        }
        Transform::MatrixScale { w, b: vec![T::zero(); k] }
    }

    pub fn op_matrix_identity(k: usize) -> Self {
        Transform::OpMatrixScale { a: T::one(), v: vec![T::zero(); k], c: T::zero() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::TempScale { .. } => "temp_scale",
            Transform::VectorScale { .. } => "vector_scale",
            Transform::OpVectorScale { .. } => "op_vector_scale",
            Transform::MatrixScale { .. } => "matrix_scale",
            Transform::OpMatrixScale { .. } => "op_matrix_scale",
        }
    }

    /// Class count the transform is built for, if it fixes one.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            Transform::Identity | Transform::TempScale { .. } | Transform::OpVectorScale { .. } => {
                None
            }
            Transform::VectorScale { b, .. }
            | Transform::MatrixScale { b, .. } => Some(b.len()),
            Transform::OpMatrixScale { v, .. } => Some(v.len()),
        }
    }

    /// Number of free real parameters.
    pub fn num_params(&self, k: usize) -> usize {
        match self {
            Transform::Identity => 0,
            Transform::TempScale { .. } => 1,
            Transform::VectorScale { freeze_mask, .. } => {
                freeze_mask.iter().flatten().filter(|f| !**f).count()
            }
            Transform::OpVectorScale { .. } => crate::bounds::OP_VECTOR_SCALE_DIM,
            Transform::MatrixScale { .. } => crate::bounds::matrix_scale_dim(k),
            Transform::OpMatrixScale { .. } => crate::bounds::op_matrix_scale_dim(k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Transform::Identity => {}
            Transform::TempScale { lambda } => {
                ensure!(lambda.is_finite() && *lambda > T::zero(), "temperature must be positive, got {lambda}");
            }
            Transform::VectorScale { w, b, freeze_mask } => {
                ensure!(
                    w.len() == b.len() && b.len() == freeze_mask.len(),
                    "vector scaling needs W, b and mask of equal length"
                );
            }
            Transform::OpVectorScale { a, .. } => {
                ensure!(*a > T::zero(), "order-preserving scale a must be positive, got {a}");
            }
            Transform::MatrixScale { w, b } => {
                ensure!(w.len() == b.len() * b.len(), "matrix scaling needs a K×K matrix");
            }
            Transform::OpMatrixScale { a, .. } => {
                ensure!(*a > T::zero(), "order-preserving scale a must be positive, got {a}");
            }
        }
        Ok(())
    }
}

/// Apply `t` to one logit vector.
pub fn apply_transform<T: Scalar>(t: &Transform<T>, logits: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); logits.len()];
    apply_into(t, logits, &mut out)?;
    Ok(out)
}

/// Apply `t` into `out` (`out.len() == logits.len()`).
pub fn apply_into<T: Scalar>(t: &Transform<T>, logits: &[T], out: &mut [T]) -> Result<()> {
    let k = logits.len();
    ensure!(out.len() == k, "output buffer has length {} for {k} logits", out.len());
    if let Some(d) = t.dimension() {
        ensure!(d == k, "{} built for {d} classes applied to {k} logits", t.name());
    }
    match t {
        Transform::Identity => out.copy_from_slice(logits),
        Transform::TempScale { lambda } => {
            for (o, &f) in out.iter_mut().zip(logits) {
                *o = f / *lambda;
            }
        }
        Transform::VectorScale { w, b, .. } => {
            for j in 0..k {
                out[j] = w[j] * logits[j] + b[j];
            }
        }
        Transform::OpVectorScale { a, c } => {
            for (o, &f) in out.iter_mut().zip(logits) {
                *o = *a * f + *c;
            }
        }
        Transform::MatrixScale { w, b } => {
            ensure!(w.len() == k * k, "matrix scaling needs a K×K matrix");
            for i in 0..k {
                let row = &w[i * k..(i + 1) * k];
                let dot = row.iter().zip(logits).fold(T::zero(), |s, (&wij, &f)| s + wij * f);
                out[i] = dot + b[i];
            }
        }
        Transform::OpMatrixScale { a, v, c } => {
            let shift = v.iter().zip(logits).fold(T::zero(), |s, (&vj, &f)| s + vj * f) + *c;
            for (o, &f) in out.iter_mut().zip(logits) {
                *o = *a * f + shift;
            }
        }
    }
    Ok(())
}

fn all_close<T: Scalar>(xs: &[T], tol: T) -> bool {
    xs.windows(2).all(|w| (w[0] - w[1]).abs() <= tol)
}

/// Whether `t` preserves the order of every logit vector.
///
/// Vector scaling qualifies iff all `W_j` are equal and positive and all
/// `b_j` are equal; matrix scaling iff `W = aI + 1vᵀ` with `a > 0` and `b`
/// constant. Equalities are checked to within `1e-10`.
pub fn is_order_preserving<T: Scalar>(t: &Transform<T>) -> bool {
    let tol = T::of(OP_TOL);
    match t {
        Transform::Identity => true,
        Transform::TempScale { lambda } => *lambda > T::zero(),
        Transform::OpVectorScale { a, .. } | Transform::OpMatrixScale { a, .. } => *a > T::zero(),
        Transform::VectorScale { w, b, .. } => {
            !w.is_empty() && all_close(w, tol) && w[0] > tol && all_close(b, tol)
        }
        Transform::MatrixScale { w, b } => {
            let k = b.len();
            if k == 0 || w.len() != k * k || !all_close(b, tol) {
                return false;
            }
            if k == 1 {
                return true;
            }
            // Column j off the diagonal must be the constant v_j.
            let mut v = vec![T::zero(); k];
            for j in 0..k {
                let i0 = if j == 0 { 1 } else { 0 };
                v[j] = w[i0 * k + j];
                for i in 0..k {
                    if i != j && (w[i * k + j] - v[j]).abs() > tol {
                        return false;
                    }
                }
            }
            let a0 = w[0] - v[0];
            a0 > tol && (0..k).all(|j| (w[j * k + j] - v[j] - a0).abs() <= tol)
        }
    }
}

/// First pair `(j, k)` whose relative order differs between `f` and `g`.
///
/// The order relation compared is `f_j <= f_k` versus `g_j <= g_k`.
pub fn order_violation<T: Scalar>(f: &[T], g: &[T]) -> Option<(usize, usize)> {
    let n = f.len().min(g.len());
    for j in 0..n {
        for k in 0..n {
            if j != k && (f[j] <= f[k]) != (g[j] <= g[k]) {
                return Some((j, k));
            }
        }
    }
    None
}

/// Indices sorting `x` ascending, ties by index.
pub fn argsort<T: Scalar>(x: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_pass_through() {
        let f = [0.3, -1.25, 4.0];
        assert_eq!(apply_transform(&Transform::Identity, &f).unwrap(), f);
        assert_eq!(apply_transform(&Transform::TempScale { lambda: 1.0 }, &f).unwrap(), f);
        assert_eq!(apply_transform(&Transform::vector_identity(3), &f).unwrap(), f);
        assert_eq!(apply_transform(&Transform::matrix_identity(3), &f).unwrap(), f);
        assert_eq!(apply_transform(&Transform::op_matrix_identity(3), &f).unwrap(), f);
    }

    #[test]
    fn op_matrix_hand_example() {
        let t = Transform::OpMatrixScale { a: 2.0, v: vec![1.0, 0.0], c: 0.0 };
        assert_eq!(apply_transform(&t, &[1.0, 2.0]).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let t = Transform::<f64>::vector_identity(3);
        assert!(apply_transform(&t, &[1.0, 2.0]).is_err());
        let m = Transform::<f64>::matrix_identity(2);
        assert!(apply_transform(&m, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn order_preservation_examples() {
        let vs = |w: Vec<f64>, b: Vec<f64>| Transform::VectorScale {
            freeze_mask: vec![[false; 2]; w.len()],
            w,
            b,
        };
        assert!(is_order_preserving(&vs(vec![2.0, 2.0], vec![3.0, 3.0])));
        let flip = vs(vec![1.0, -1.0], vec![0.0, 0.0]);
        assert!(!is_order_preserving(&flip));
        let g = apply_transform(&flip, &[1.0, 2.0]).unwrap();
        assert_eq!(g, vec![1.0, -2.0]);
        assert!(order_violation(&[1.0, 2.0], &g).is_some());

        // W = 2I + 1 e1ᵀ, b = 5·1
        let w = vec![3.0, 0.0, 0.0, 1.0, 2.0, 0.0, 1.0, 0.0, 2.0];
        assert!(is_order_preserving(&Transform::MatrixScale { w, b: vec![5.0; 3] }));
        let w = vec![3.0, 0.0, 0.0, 1.0, 2.0, 0.5, 1.0, 0.0, 2.0];
        assert!(!is_order_preserving(&Transform::MatrixScale { w, b: vec![5.0; 3] }));
        assert!(!is_order_preserving(&Transform::MatrixScale {
            w: vec![1.0, 0.0, 0.0, 1.0],
            b: vec![0.0, 1.0]
        }));
        assert!(is_order_preserving(&Transform::<f64>::Identity));
        assert!(is_order_preserving(&Transform::TempScale { lambda: 0.1 }));
        assert!(!is_order_preserving(&Transform::MatrixScale {
            w: vec![-1.0, 0.0, 0.0, -1.0],
            b: vec![0.0, 0.0]
        }));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Transform::<f64>::matrix_identity(10).num_params(10), 110);
        assert_eq!(Transform::<f64>::op_matrix_identity(10).num_params(10), 12);
        assert_eq!(Transform::<f64>::vector_identity(10).num_params(10), 20);
        assert_eq!(Transform::OpVectorScale { a: 1.0, c: 0.0 }.num_params(10), 2);
    }

    #[test]
    fn json_uses_variant_tag() {
        let t = Transform::TempScale { lambda: 0.1f64 + 0.2 };
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"variant\":\"temp_scale\""), "{s}");
        let back: Transform<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
