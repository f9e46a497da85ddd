//! The attention-based intensity model.
//!
//! Each event is embedded as `x = [z(t); e(k)]`, sinusoidal time features
//! concatenated with a learned type vector. Attention scores are the raw
//! inner products `x_q . x_i / sqrt(2M)` (no query or key projection), so
//! the score between two events is a function of their time difference
//! and their two types only. The type-`k` intensity at time `t` is
//!
//! ```text
//! lambda_k(t) = softplus( sum_{t_i < t} softmax_i(x_t . x_i / sqrt(2M)) (x_i W_V) . w_k + b_k )
//! ```
//!
//! where the query `x_t` carries the target type `k`. Every summand is a
//! learned, time-varying trigger kernel `phi_{k,k_i}(t - t_i, t_i)`.

mod attention;
mod embedding;
mod extrapolated;
mod params;

use thiserror::Error;

pub use attention::{
    attention_matrix, attention_weights, intensity_all_types, intensity_at, intensity_from_history,
    score, trigger_contribution, AttentionMatrix, PointKind,
};
pub(crate) use attention::{Encoded, QueryScratch};
pub use embedding::{event_embedding, frequency, temporal_embedding, temporal_embedding_into, type_embedding};
pub use extrapolated::ex_intensity_at;
pub use params::{ExtrapolationParams, Matrix, ModelConfig, ModelParams, Variant};
pub(crate) use params::dot;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("embedding dimension {0} must be even and at least 2")]
    OddDimension(usize),
    #[error("type {k} outside [0, {num_types})")]
    TypeOutOfRange { k: usize, num_types: usize },
    #[error("history event at {at} is not strictly before the query time {query}")]
    NonCausalHistory { at: f64, query: f64 },
    #[error("query time {t} outside (0, {horizon}]")]
    OutOfWindow { t: f64, horizon: f64 },
    #[error("no event precedes t = {0}")]
    NoPriorEvent(f64),
    #[error("extrapolation anchor at t = 0 divides by zero")]
    DegenerateAnchor,
    #[error("operation needs the {0:?} variant")]
    WrongVariant(Variant),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Pre-activations below this flush to zero attention weight.
pub(crate) const SOFTMAX_FLUSH: f64 = 50.0;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], consistent with its overflow guard.
pub fn softplus_grad(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        x.exp()
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus inverse needs a positive argument");
    if y > 30.0 {
        y
    } else if y < (-30f64).exp() {
        y.ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Max-subtracted softmax over `scores`, written into `weights`.
pub(crate) fn softmax_into(scores: &[f64], weights: &mut [f64]) {
    if scores.is_empty() {
        return;
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (w, &s) in weights.iter_mut().zip(scores) {
        *w = if s < max - SOFTMAX_FLUSH { 0.0 } else { (s - max).exp() };
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
}
