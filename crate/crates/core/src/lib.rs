//! Conformal prediction with tuned scores: same-set versus hold-out tuning
//! bias, measured on synthetic data and compared against closed-form bounds.

pub mod bounds;
pub mod conformal;
pub mod cqr;
pub mod error;
pub mod harness;
pub mod rng;
pub mod scalar;
pub mod scores;
pub mod stats;
pub mod synth;
pub mod transform;
pub mod tuners;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ProbVector64 = scores::ProbVector<f64>;
pub type ScoreSpec64 = scores::ScoreSpec<f64>;
pub type Transform64 = transform::Transform<f64>;
pub type CalibScores64 = conformal::CalibScores<f64>;
pub type ProbVector32 = scores::ProbVector<f32>;
pub type ScoreSpec32 = scores::ScoreSpec<f32>;
pub type Transform32 = transform::Transform<f32>;
