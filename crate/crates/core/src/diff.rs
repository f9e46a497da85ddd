//! Exact gradients of the discretised log-likelihood.
//!
//! The objective of one sequence is
//!
//! ```text
//! sum_i log lambda_{k_i}(t_i-)  -  sum_segments (h / 2) (Lambda(a+) + Lambda(b-))
//! ```
//!
//! where `Lambda = sum_k lambda_k` and the segments are consecutive grid
//! points. Each segment is integrated with one-sided limits: the value at
//! its left end includes an event sitting there, the value at its right
//! end does not. Every term is a function of one query `(t, n)` (time and
//! number of visible events), so the backward pass runs right after each
//! query's forward pass and only accumulates per-event and per-type
//! adjoints. Those are pushed through the value projection, the MLP head
//! and the type Gram matrix once per sequence.

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{EventSequence, IntegrationGrid};
use crate::model::{
    dot, softplus, softplus_grad, Encoded, ModelConfig, ModelError, ModelParams, QueryScratch, Variant,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("non-finite {term} in sequence {sequence}")]
    NonFiniteObjective { sequence: usize, term: &'static str },
    #[error("grid does not match sequence {sequence}: {reason}")]
    GridMismatch { sequence: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gradient of the summed log-likelihood, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grads: ModelParams,
    pub objective_value: f64,
}

impl GradientBundle {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            grads: ModelParams::zeros(cfg),
            objective_value: 0.0,
        }
    }

    pub fn add(&mut self, other: &GradientBundle) {
        self.grads.add_scaled(1.0, &other.grads);
        self.objective_value += other.objective_value;
    }

    pub fn is_finite(&self) -> bool {
        self.objective_value.is_finite() && self.grads.is_finite()
    }
}

/// One query of the objective: intensities at `t` seeing the first `n` events.
#[derive(Debug, Clone, Copy)]
struct Query {
    t: f64,
    n: usize,
    /// Trapezoid weight on the summed intensity.
    weight: f64,
    /// Type whose log-intensity enters the event term.
    event_type: Option<usize>,
}

pub(crate) fn check_grid(seq: &EventSequence, grid: &IntegrationGrid, sequence: usize) -> Result<(), ObjectiveError> {
    let times = grid.times();
    let fail = |reason: &str| {
        Err(ObjectiveError::GridMismatch {
            sequence,
            reason: reason.to_string(),
        })
    };
    if times.len() < 2 || times[0] != 0.0 || *times.last().unwrap() != seq.horizon() {
        return fail("grid must run from 0 to the horizon");
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return fail("grid must be strictly increasing");
    }
    for e in seq.events() {
        if times.binary_search_by(|g| g.total_cmp(&e.t)).is_err() {
            return fail("every event time must be a grid point");
        }
    }
    Ok(())
}

fn build_queries(seq: &EventSequence, grid: Option<&IntegrationGrid>) -> Vec<Query> {
    let events = seq.events();
    let Some(grid) = grid else {
        return events
            .iter()
            .enumerate()
            .map(|(i, e)| Query {
                t: e.t,
                n: i,
                weight: 0.0,
                event_type: Some(e.k),
            })
            .collect();
    };
    let times = grid.times();
    let mut queries = Vec::with_capacity(times.len() + events.len());
    let mut next_event = 0;
    for (g, &t) in times.iter().enumerate() {
        let left = if g > 0 { 0.5 * (t - times[g - 1]) } else { 0.0 };
        let right = if g + 1 < times.len() { 0.5 * (times[g + 1] - t) } else { 0.0 };
        let n_before = next_event;
        if next_event < events.len() && events[next_event].t == t {
            queries.push(Query {
                t,
                n: n_before,
                weight: left,
                event_type: Some(events[next_event].k),
            });
            next_event += 1;
            queries.push(Query {
                t,
                n: next_event,
                weight: right,
                event_type: None,
            });
        } else {
            queries.push(Query {
                t,
                n: n_before,
                weight: left + right,
                event_type: None,
            });
        }
    }
    queries
}

/// Event term and compensator of one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SequenceTerms {
    pub event_term: f64,
    pub compensator: f64,
}

impl SequenceTerms {
    pub fn log_likelihood(&self) -> f64 {
        self.event_term - self.compensator
    }
}

/// Adjoints collected while sweeping the queries of one sequence.
struct Adjoints {
    /// `L x K`: d objective / d proj[i][k]
    proj: Vec<f64>,
    /// `K x K`: d objective / d gram[a][b]
    gram: Vec<f64>,
    /// `L x K`: d objective / d head[i][k] (extrapolating variant)
    head: Vec<f64>,
}

/// Evaluates one sequence's terms, accumulating gradients into `grads`
/// when given. With `grid = None` only the event term is computed.
pub(crate) fn sequence_terms(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    grid: Option<&IntegrationGrid>,
    sequence: usize,
    grads: Option<&mut ModelParams>,
) -> Result<SequenceTerms, ObjectiveError> {
    if let Some(g) = grid {
        check_grid(seq, g, sequence)?;
    }
    if seq.num_types() != cfg.num_types {
        return Err(ModelError::ShapeMismatch(format!(
            "sequence has {} types, model has {}",
            seq.num_types(),
            cfg.num_types
        ))
        .into());
    }
    let enc = Encoded::new(params, cfg, seq.events())?;
    let kk = cfg.num_types;
    let len = seq.len();
    let want_grad = grads.is_some();
    let mut adj = Adjoints {
        proj: vec![0.0; if want_grad { len * kk } else { 0 }],
        gram: vec![0.0; kk * kk],
        head: vec![0.0; if want_grad { len * kk } else { 0 }],
    };
    let mut grads = grads;

    let mut scratch = QueryScratch::default();
    let mut pre = vec![0.0; kk];
    let mut event_term = 0.0;
    let mut compensator = 0.0;

    for q in build_queries(seq, grid) {
        match cfg.variant {
            Variant::Ithp => enc.query_zdots(q.t, q.n, &mut scratch),
            Variant::ExIthp => {}
        }
        for (k, p) in pre.iter_mut().enumerate() {
            let wanted = q.weight != 0.0 || q.event_type == Some(k);
            if !wanted {
                continue;
            }
            *p = match cfg.variant {
                Variant::Ithp => enc.ithp_pre(k, q.n, &mut scratch),
                Variant::ExIthp => enc.ex_pre(q.t, k, q.n)?,
            };
            let lam = softplus(*p);
            let slope = softplus_grad(*p);
            let mut delta = 0.0;
            if q.weight != 0.0 {
                compensator += q.weight * lam;
                delta -= q.weight * slope;
            }
            if q.event_type == Some(k) {
                event_term += lam.ln();
                delta += slope / lam;
            }
            if let Some(g) = grads.as_deref_mut() {
                if delta != 0.0 {
                    // `scratch.weights` still holds this query's type-k softmax
                    accumulate_query(&enc, q.t, k, q.n, delta, &scratch, &mut adj, g);
                }
            }
        }
    }

    if !event_term.is_finite() {
        return Err(ObjectiveError::NonFiniteObjective {
            sequence,
            term: "event term",
        });
    }
    if !compensator.is_finite() {
        return Err(ObjectiveError::NonFiniteObjective {
            sequence,
            term: "compensator",
        });
    }
    if let Some(g) = grads {
        finish_backward(&enc, &adj, g);
    }
    Ok(SequenceTerms {
        event_term,
        compensator,
    })
}

#[allow(clippy::too_many_arguments)]
fn accumulate_query(
    enc: &Encoded<'_>,
    t: f64,
    k: usize,
    n: usize,
    delta: f64,
    scratch: &QueryScratch,
    adj: &mut Adjoints,
    g: &mut ModelParams,
) {
    let cfg = enc.cfg;
    let kk = cfg.num_types;
    g.bias[k] += delta;
    match cfg.variant {
        Variant::Ithp => {
            if cfg.skip_connection {
                let m = cfg.embed_dim;
                let w = enc.params.output.row(k).to_vec();
                let u = &enc.params.type_embedding;
                let row = g.output.row_mut(k);
                for r in 0..m {
                    row[r] += delta * scratch.zq[r];
                    row[m + r] += delta * u.get(r, k);
                }
                for r in 0..m {
                    let cur = g.type_embedding.get(r, k);
                    g.type_embedding.set(r, k, cur + delta * w[m + r]);
                }
            }
            if n == 0 {
                return;
            }
            let weights = &scratch.weights[..n];
            let avg: f64 = weights
                .iter()
                .enumerate()
                .map(|(i, a)| a * enc.proj[i * kk + k])
                .sum();
            for (i, &a) in weights.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                adj.proj[i * kk + k] += delta * a;
                let dscore = delta * a * (enc.proj[i * kk + k] - avg);
                adj.gram[k * kk + enc.types[i]] += dscore * enc.scale;
            }
        }
        Variant::ExIthp => {
            if n == 0 {
                return;
            }
            let anchor = n - 1;
            let ta = enc.times[anchor];
            let ex = g.extrapolation.as_mut().expect("extrapolation gradients");
            ex.alpha[k] += delta * (t - ta) / ta;
            adj.head[anchor * kk + k] += delta;
        }
    }
}

fn finish_backward(enc: &Encoded<'_>, adj: &Adjoints, g: &mut ModelParams) {
    let cfg = enc.cfg;
    let params = enc.params;
    let (m, mv, kk) = (cfg.embed_dim, cfg.value_dim, cfg.num_types);
    let len = enc.len();
    let mut dvalues = vec![0.0; len * mv];

    if cfg.variant == Variant::Ithp {
        for i in 0..len {
            let v = &enc.values[i * mv..(i + 1) * mv];
            let dv = &mut dvalues[i * mv..(i + 1) * mv];
            for k in 0..kk {
                let c = adj.proj[i * kk + k];
                if c == 0.0 {
                    continue;
                }
                for (o, vv) in g.output.row_mut(k).iter_mut().zip(v) {
                    *o += c * vv;
                }
                for (d, w) in dv.iter_mut().zip(params.output.row(k)) {
                    *d += c * w;
                }
            }
        }
    }

    let mut dgram = adj.gram.clone();
    if cfg.variant == Variant::ExIthp {
        extrapolation_backward(enc, adj, g, &mut dvalues, &mut dgram);
    }

    // value projection: V_i = x_i W_V with x_i = [z_i; u_{k_i}]
    let mut x = vec![0.0; 2 * m];
    let mut dx = vec![0.0; 2 * m];
    for i in 0..len {
        let dv = &dvalues[i * mv..(i + 1) * mv];
        if dv.iter().all(|d| *d == 0.0) {
            continue;
        }
        let ki = enc.types[i];
        x[..m].copy_from_slice(&enc.z[i * m..(i + 1) * m]);
        for r in 0..m {
            x[m + r] = params.type_embedding.get(r, ki);
        }
        g.value_proj.add_outer(1.0, &x, dv);
        params.value_proj.mul_vec_into(dv, &mut dx);
        for r in 0..m {
            let cur = g.type_embedding.get(r, ki);
            g.type_embedding.set(r, ki, cur + dx[m + r]);
        }
    }

    // gram[a][b] = u_a . u_b
    let u = &params.type_embedding;
    for a in 0..kk {
        for b in 0..kk {
            let coeff = dgram[a * kk + b] + dgram[b * kk + a];
            if coeff == 0.0 {
                continue;
            }
            for r in 0..m {
                let cur = g.type_embedding.get(r, a);
                g.type_embedding.set(r, a, cur + coeff * u.get(r, b));
            }
        }
    }
}

fn extrapolation_backward(
    enc: &Encoded<'_>,
    adj: &Adjoints,
    g: &mut ModelParams,
    dvalues: &mut [f64],
    dgram: &mut [f64],
) {
    let cfg = enc.cfg;
    let (m, mv, mh, kk) = (cfg.embed_dim, cfg.value_dim, cfg.hidden_dim, cfg.num_types);
    let exp = enc.params.extrapolation.as_ref().expect("shape-checked");
    let exe = enc.ex.as_ref().expect("extrapolating encoding");
    let gex = g.extrapolation.as_mut().expect("extrapolation gradients");
    let len = enc.len();

    let mut dh = vec![0.0; m];
    let mut act = vec![0.0; mh];
    let mut dact = vec![0.0; mh];
    let mut ds = vec![0.0; mv];
    let mut scratch = QueryScratch::default();

    for a in 0..len {
        let dhead = &adj.head[a * kk..(a + 1) * kk];
        if dhead.iter().all(|d| *d == 0.0) {
            continue;
        }
        let h = &exe.hidden[a * m..(a + 1) * m];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (k, &c) in dhead.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, hv) in gex.w_out.row_mut(k).iter_mut().zip(h) {
                *o += c * hv;
            }
            for (d, w) in dh.iter_mut().zip(exp.w_out.row(k)) {
                *d += c * w;
            }
        }
        // H = relu(S W1 + b1) W2 + b2
        for (b, d) in gex.b2.iter_mut().zip(&dh) {
            *b += d;
        }
        let hp = &exe.hidden_pre[a * mh..(a + 1) * mh];
        for (o, v) in act.iter_mut().zip(hp) {
            *o = v.max(0.0);
        }
        gex.w2.add_outer(1.0, &act, &dh);
        exp.w2.mul_vec_into(&dh, &mut dact);
        for (d, v) in dact.iter_mut().zip(hp) {
            if *v <= 0.0 {
                *d = 0.0;
            }
        }
        for (b, d) in gex.b1.iter_mut().zip(&dact) {
            *b += d;
        }
        let s = &exe.summary[a * mv..(a + 1) * mv];
        gex.w1.add_outer(1.0, s, &dact);
        if a == 0 {
            continue;
        }
        exp.w1.mul_vec_into(&dact, &mut ds);

        // S_a = sum_{j<a} softmax_j(x_a . x_j / sqrt(2M)) V_j, query type k_a
        let ka = enc.types[a];
        enc.query_zdots(enc.times[a], a, &mut scratch);
        enc.weights_for(ka, a, &mut scratch);
        let s_dot = dot(s, &ds);
        for j in 0..a {
            let w = scratch.weights[j];
            if w == 0.0 {
                continue;
            }
            let vj = &enc.values[j * mv..(j + 1) * mv];
            let dscore = w * (dot(vj, &ds) - s_dot);
            dgram[ka * kk + enc.types[j]] += dscore * enc.scale;
            for (d, dsv) in dvalues[j * mv..(j + 1) * mv].iter_mut().zip(&ds) {
                *d += w * dsv;
            }
        }
    }
}

/// Summed log-likelihood over `batch` and its exact gradient.
///
/// Sequences are processed in parallel; partial results are added in
/// batch order, so the result does not depend on thread scheduling.
pub fn objective_and_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[(&EventSequence, &IntegrationGrid)],
) -> Result<GradientBundle, ObjectiveError> {
    let parts: Vec<GradientBundle> = batch
        .par_iter()
        .enumerate()
        .map(|(idx, (seq, grid))| {
            let mut grads = ModelParams::zeros(cfg);
            let terms = sequence_terms(params, cfg, seq, Some(grid), idx, Some(&mut grads))?;
            Ok(GradientBundle {
                grads,
                objective_value: terms.log_likelihood(),
            })
        })
        .collect::<Result<_, ObjectiveError>>()?;
    let mut total = GradientBundle::zeros(cfg);
    for part in &parts {
        total.add(part);
    }
    Ok(total)
}

/// Summed log-likelihood only.
pub fn objective(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[(&EventSequence, &IntegrationGrid)],
) -> Result<f64, ObjectiveError> {
    let parts: Vec<f64> = batch
        .par_iter()
        .enumerate()
        .map(|(idx, (seq, grid))| {
            sequence_terms(params, cfg, seq, Some(grid), idx, None).map(|t| t.log_likelihood())
        })
        .collect::<Result<_, _>>()?;
    Ok(parts.iter().sum())
}

/// Central differences of an arbitrary scalar function of the parameters.
pub fn finite_diff_with(params: &ModelParams, eps: f64, f: impl Fn(&ModelParams) -> f64) -> ModelParams {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut out = params.clone();
    for idx in 0..params.num_scalars() {
        let base = params.get_scalar(idx);
        probe.set_scalar(idx, base + eps);
        let up = f(&probe);
        probe.set_scalar(idx, base - eps);
        let down = f(&probe);
        probe.set_scalar(idx, base);
        out.set_scalar(idx, (up - down) / (2.0 * eps));
    }
    out
}

/// Central-difference gradient of the same discretised objective.
pub fn finite_diff_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[(&EventSequence, &IntegrationGrid)],
    eps: f64,
) -> Result<GradientBundle, ObjectiveError> {
    let objective_value = objective(params, cfg, batch)?;
    let grads = finite_diff_with(params, eps, |p| objective(p, cfg, batch).unwrap_or(f64::NAN));
    Ok(GradientBundle { grads, objective_value })
}

/// Largest `|a - b| / max(|a|, floor)` over all parameters.
pub fn max_relative_error(a: &ModelParams, b: &ModelParams, floor: f64) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).abs() / x.abs().max(floor))
        .fold(0.0, f64::max)
}
