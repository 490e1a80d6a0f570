//! Negative log-likelihood of transformed logits and its analytic gradients.

use super::LogitBatch;
use crate::error::Result;
use crate::transform::{apply_into, Transform};

/// Fills `e` with `exp(g - max g)` and returns `(max g, Σ e)`.
#[inline]
pub(crate) fn shifted_exp(g: &[f64], e: &mut [f64]) -> (f64, f64) {
    let m = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (ej, &gj) in e.iter_mut().zip(g) {
        *ej = (gj - m).exp();
        s += *ej;
    }
    (m, s)
}

/// `-(1/n) Σ log softmax(t(f_i))[y_i]`.
pub fn nll(t: &Transform<f64>, batch: &LogitBatch<'_>) -> Result<f64> {
    let k = batch.num_classes();
    let mut g = vec![0.0; k];
    let mut e = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..batch.len() {
        apply_into(t, batch.row(i), &mut g)?;
        let (m, s) = shifted_exp(&g, &mut e);
        total += m + s.ln() - g[batch.label(i)];
    }
    Ok(total / batch.len() as f64)
}

/// NLL of `f / λ`.
pub(crate) fn temperature_nll(lambda: f64, batch: &LogitBatch<'_>) -> f64 {
    let k = batch.num_classes();
    let inv = 1.0 / lambda;
    let mut g = vec![0.0; k];
    let mut e = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..batch.len() {
        for (gj, &fj) in g.iter_mut().zip(batch.row(i)) {
            *gj = fj * inv;
        }
        let (m, s) = shifted_exp(&g, &mut e);
        total += m + s.ln() - g[batch.label(i)];
    }
    total / batch.len() as f64
}

/// NLL of `w ∘ f + b` with parameters interleaved as
/// `[w_0, b_0, w_1, b_1, …]`. When `grad` is given it receives the gradient
/// in the same layout.
pub fn vector_nll(params: &[f64], batch: &LogitBatch<'_>, mut grad: Option<&mut [f64]>) -> f64 {
    let k = batch.num_classes();
    debug_assert_eq!(params.len(), 2 * k);
    if let Some(gr) = grad.as_deref_mut() {
        gr.fill(0.0);
    }
    let mut g = vec![0.0; k];
    let mut e = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let f = batch.row(i);
        let y = batch.label(i);
        for j in 0..k {
            g[j] = params[2 * j] * f[j] + params[2 * j + 1];
        }
        let (m, s) = shifted_exp(&g, &mut e);
        total += m + s.ln() - g[y];
        if let Some(gr) = grad.as_deref_mut() {
            let inv = 1.0 / s;
            for j in 0..k {
                let r = e[j] * inv - if j == y { 1.0 } else { 0.0 };
                gr[2 * j] += r * f[j];
                gr[2 * j + 1] += r;
            }
        }
    }
    let n = batch.len() as f64;
    if let Some(gr) = grad {
        for v in gr.iter_mut() {
            *v /= n;
        }
    }
    total / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_value_with_temperature() {
        let logits = [2.0, 0.0];
        let b = LogitBatch::new(&logits, &[0], &[0], 2).unwrap();
        let v = nll(&Transform::TempScale { lambda: 2.0 }, &b).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert_abs_diff_eq!(v, want, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.3133, epsilon = 1e-4);
        assert_abs_diff_eq!(temperature_nll(2.0, &b), v, epsilon = 1e-15);
    }

    #[test]
    fn uniform_gives_log_k() {
        let logits = [0.3; 12];
        let b = LogitBatch::new(&logits, &[0, 2, 3], &[0, 1, 2], 4).unwrap();
        assert_abs_diff_eq!(nll(&Transform::Identity, &b).unwrap(), 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn near_one_hot_gives_zero() {
        let logits = [800.0, 0.0, 0.0, 0.0, 800.0, 0.0];
        let b = LogitBatch::new(&logits, &[0, 1], &[0, 1], 3).unwrap();
        assert!(nll(&Transform::Identity, &b).unwrap() < 1e-300);
    }

    #[test]
    fn vector_nll_agrees_with_transform_path() {
        let logits = [0.5, -1.0, 2.0, 0.1, 0.0, -0.3];
        let b = LogitBatch::new(&logits, &[2, 0], &[0, 1], 3).unwrap();
        let params = [1.5, 0.2, 0.7, -0.1, 1.1, 0.4];
        let t = Transform::VectorScale {
            w: vec![1.5, 0.7, 1.1],
            b: vec![0.2, -0.1, 0.4],
            freeze_mask: vec![[false; 2]; 3],
        };
        assert_abs_diff_eq!(vector_nll(&params, &b, None), nll(&t, &b).unwrap(), epsilon = 1e-14);
    }
}
