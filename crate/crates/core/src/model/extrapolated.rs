use crate::domain::EventSequence;

use super::attention::{Encoded, QueryScratch};
use super::params::{ModelConfig, ModelParams, Variant};
use super::{softplus, ModelError};

/// Type-`k` intensity of the extrapolating variant:
/// `softplus(alpha_k (t - t_i) / t_i + w_ex_k . H_i + b_k)` with `t_i` the
/// last event strictly before `t` and `H_i` the MLP image of that event's
/// attention output.
pub fn ex_intensity_at(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    t: f64,
    k: usize,
) -> Result<f64, ModelError> {
    if cfg.variant != Variant::ExIthp {
        return Err(ModelError::WrongVariant(Variant::ExIthp));
    }
    if k >= cfg.num_types {
        return Err(ModelError::TypeOutOfRange { k, num_types: cfg.num_types });
    }
    if !(t > 0.0 && t <= seq.horizon()) {
        return Err(ModelError::OutOfWindow { t, horizon: seq.horizon() });
    }
    let n = seq.count_before(t);
    if n == 0 {
        return Err(ModelError::NoPriorEvent(t));
    }
    let enc = Encoded::new(params, cfg, &seq.events()[..n])?;
    let mut scratch = QueryScratch::default();
    Ok(softplus(enc.pre_one(t, k, n, &mut scratch)?))
}
