#![allow(dead_code)]

use ithp::domain::{Event, EventSequence};
use ithp::model::{ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters with entries uniform in `[-scale, scale]`.
pub fn random_params(cfg: &ModelConfig, scale: f64, seed: u64) -> ModelParams {
    let mut r = rng(seed);
    let mut p = ModelParams::zeros(cfg);
    let flat: Vec<f64> = (0..p.num_scalars())
        .map(|_| r.random_range(-scale..scale))
        .collect();
    p.set_flat(&flat);
    p
}

/// `len` events of random types, uniform on `(0, horizon)`, first event away from 0.
pub fn random_sequence(len: usize, num_types: usize, horizon: f64, seed: u64) -> EventSequence {
    let mut r = rng(seed);
    let mut times: Vec<f64> = (0..len)
        .map(|_| r.random_range(0.05 * horizon..0.95 * horizon))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let events = times
        .into_iter()
        .map(|t| Event::new(t, r.random_range(0..num_types)))
        .collect();
    EventSequence::new(events, horizon, num_types).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// Sinusoidal embedding computed entry by entry from its scalar definition.
pub fn oracle_time_embedding(t: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|j| {
            if j % 2 == 1 {
                (t / 10000f64.powf((j as f64 - 1.0) / m as f64)).cos()
            } else {
                (t / 10000f64.powf(j as f64 / m as f64)).sin()
            }
        })
        .collect()
}

pub fn oracle_embedding(t: f64, k: usize, p: &ModelParams) -> Vec<f64> {
    let m = p.type_embedding.rows();
    let mut x = oracle_time_embedding(t, m);
    x.extend((0..m).map(|r| p.type_embedding.get(r, k)));
    x
}

pub fn oracle_value(x: &[f64], p: &ModelParams) -> Vec<f64> {
    let wv = &p.value_proj;
    (0..wv.cols())
        .map(|c| (0..wv.rows()).map(|r| x[r] * wv.get(r, c)).sum())
        .collect()
}

/// Softmax weights of query `(t, k)` over `history`, directly from the definition.
pub fn oracle_weights(t: f64, k: usize, history: &[Event], p: &ModelParams) -> Vec<f64> {
    let m = p.type_embedding.rows();
    let xq = oracle_embedding(t, k, p);
    let scores: Vec<f64> = history
        .iter()
        .map(|e| dot(&xq, &oracle_embedding(e.t, e.k, p)) / ((2 * m) as f64).sqrt())
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Attention intensity, recomputed step by step.
pub fn oracle_intensity(t: f64, k: usize, seq: &EventSequence, p: &ModelParams, skip: bool) -> f64 {
    let history: Vec<Event> = seq.events().iter().copied().filter(|e| e.t < t).collect();
    oracle_pre(t, k, &history, p, skip).map_or(f64::NAN, softplus)
}

pub fn oracle_pre(t: f64, k: usize, history: &[Event], p: &ModelParams, skip: bool) -> Option<f64> {
    let w = p.output.row(k);
    let mut pre = p.bias[k];
    if skip {
        pre += dot(&oracle_embedding(t, k, p), w);
    }
    let weights = oracle_weights(t, k, history, p);
    for (a, e) in weights.iter().zip(history) {
        let v = oracle_value(&oracle_embedding(e.t, e.k, p), p);
        pre += a * dot(&v, w);
    }
    Some(pre)
}

/// Extrapolating intensity from its definition; `None` before the first event.
pub fn oracle_ex_intensity(t: f64, k: usize, seq: &EventSequence, p: &ModelParams) -> Option<f64> {
    let ex = p.extrapolation.as_ref().unwrap();
    let events: Vec<Event> = seq.events().to_vec();
    let anchor = events.iter().rposition(|e| e.t < t)?;
    let ea = events[anchor];
    let history = &events[..anchor];
    let mv = p.value_proj.cols();
    let mut s = vec![0.0; mv];
    if !history.is_empty() {
        let weights = oracle_weights(ea.t, ea.k, history, p);
        for (a, e) in weights.iter().zip(history) {
            let v = oracle_value(&oracle_embedding(e.t, e.k, p), p);
            for (sv, vv) in s.iter_mut().zip(&v) {
                *sv += a * vv;
            }
        }
    }
    let mh = ex.w1.cols();
    let hidden: Vec<f64> = (0..mh)
        .map(|c| {
            let v: f64 = (0..mv).map(|r| s[r] * ex.w1.get(r, c)).sum::<f64>() + ex.b1[c];
            v.max(0.0)
        })
        .collect();
    let m = ex.w2.cols();
    let h: Vec<f64> = (0..m)
        .map(|c| (0..mh).map(|r| hidden[r] * ex.w2.get(r, c)).sum::<f64>() + ex.b2[c])
        .collect();
    let pre = ex.alpha[k] * (t - ea.t) / ea.t + dot(ex.w_out.row(k), &h) + p.bias[k];
    Some(softplus(pre))
}
