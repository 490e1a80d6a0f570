//! Closed-form upper bounds on tuning bias.
//!
//! For a finite parameter space of cardinality `|Λ|` and `n` calibration
//! points the bias is at most
//!
//! ```text
//! sqrt(ln(2|Λ|) / (2n)) + 1 / (sqrt(2n) · sqrt(ln(2|Λ|)))
//! ```
//!
//! For a `d`-dimensional continuous family it is `C · sqrt((d+1)/n)` where
//! `C` is an unquantified universal constant, so VC reports are never
//! marked certified.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Temperature scaling: one scalar.
pub const TEMP_SCALE_DIM: usize = 1;
/// Order-preserving vector scaling collapses to `(a, c)`.
pub const OP_VECTOR_SCALE_DIM: usize = 2;

pub fn vector_scale_dim(k: usize) -> usize {
    2 * k
}

pub fn matrix_scale_dim(k: usize) -> usize {
    k * k + k
}

/// `W = aI + 1vᵀ`, `b = c·1` leaves `a`, `v` and `c`.
pub fn op_matrix_scale_dim(k: usize) -> usize {
    k + 2
}

pub fn finite_bound(cardinality: usize, n: usize) -> f64 {
    let l = (2.0 * cardinality.max(1) as f64).ln();
    let two_n = 2.0 * n as f64;
    (l / two_n).sqrt() + 1.0 / (two_n.sqrt() * l.sqrt())
}

/// RAPS with `M` candidate `λ` values and `K̄` candidate `k_reg` values.
pub fn raps_bound(m: usize, k_bar: usize, n: usize) -> f64 {
    finite_bound(m * k_bar, n)
}

/// Choosing among `M` score functions.
pub fn selection_bound(m: usize, n: usize) -> f64 {
    finite_bound(m, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Finite,
    Raps,
    Selection,
    Vc,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Finite => "finite",
            BoundKind::Raps => "raps",
            BoundKind::Selection => "selection",
            BoundKind::Vc => "vc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// `|Λ|` for finite-space kinds (`M·K̄` for RAPS, `M` for selection).
    pub cardinality: Option<usize>,
    pub m: Option<usize>,
    pub k_bar: Option<usize>,
    /// Parameter dimension `d` for the VC bound.
    pub dim: Option<usize>,
    pub c: Option<f64>,
    pub n: usize,
    pub value: f64,
    /// `min(value, 1)`; a coverage gap cannot exceed one.
    pub clamped: f64,
    pub certified: bool,
    pub note: String,
}

impl BoundReport {
    fn finite_like(kind: BoundKind, card: usize, m: Option<usize>, k_bar: Option<usize>, n: usize) -> Self {
        let value = finite_bound(card, n);
        Self {
            kind,
            cardinality: Some(card),
            m,
            k_bar,
            dim: None,
            c: None,
            n,
            value,
            clamped: value.min(1.0),
            certified: true,
            note: String::new(),
        }
    }

    pub fn finite(cardinality: usize, n: usize) -> Result<Self> {
        ensure!(cardinality >= 1, "cardinality must be at least 1");
        ensure!(n >= 1, "n must be at least 1");
        Ok(Self::finite_like(BoundKind::Finite, cardinality, None, None, n))
    }

    pub fn raps(m: usize, k_bar: usize, n: usize) -> Result<Self> {
        ensure!(m >= 1 && k_bar >= 1, "M and K_bar must be at least 1");
        ensure!(n >= 1, "n must be at least 1");
        Ok(Self::finite_like(BoundKind::Raps, m * k_bar, Some(m), Some(k_bar), n))
    }

    pub fn selection(m: usize, n: usize) -> Result<Self> {
        ensure!(m >= 1, "M must be at least 1");
        ensure!(n >= 1, "n must be at least 1");
        Ok(Self::finite_like(BoundKind::Selection, m, Some(m), None, n))
    }
}

/// `C · sqrt((d+1)/n)`, uncertified.
pub fn vc_bound(d: usize, n: usize, c: f64) -> Result<BoundReport> {
    ensure!(n >= 1, "n must be at least 1");
    ensure!(c > 0.0 && c.is_finite(), "C must be a positive finite constant, got {c}");
    let value = c * ((d as f64 + 1.0) / n as f64).sqrt();
    Ok(BoundReport {
        kind: BoundKind::Vc,
        cardinality: None,
        m: None,
        k_bar: None,
        dim: Some(d),
        c: Some(c),
        n,
        value,
        clamped: value.min(1.0),
        certified: false,
        note: "C is an unspecified universal constant; value is indicative only".into(),
    })
}
