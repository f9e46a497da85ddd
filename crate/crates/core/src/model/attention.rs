use crate::domain::{Event, EventSequence, IntegrationGrid};

use super::embedding::{event_embedding, temporal_embedding_into};
use super::params::{dot, Matrix, ModelConfig, ModelParams, Variant};
use super::{softmax_into, softplus, ModelError};

/// Per-sequence quantities that do not depend on the query.
///
/// Events are used in the order given; queries attend to a prefix of
/// length `n`, so callers pass sorted events when they want "every event
/// strictly before t" to be a prefix.
pub(crate) struct Encoded<'a> {
    pub cfg: &'a ModelConfig,
    pub params: &'a ModelParams,
    pub times: Vec<f64>,
    pub types: Vec<usize>,
    /// `L x M` temporal embeddings of the events.
    pub z: Vec<f64>,
    /// `K x K` inner products of type embeddings.
    pub gram: Vec<f64>,
    /// `L x M_V` value vectors `x_i W_V`.
    pub values: Vec<f64>,
    /// `L x K` projections `(x_i W_V) . w_k`.
    pub proj: Vec<f64>,
    pub scale: f64,
    pub ex: Option<ExEncoded>,
}

/// Per-event state of the extrapolating variant.
pub(crate) struct ExEncoded {
    /// `L x M_V` attention output of each event over its strict past.
    pub summary: Vec<f64>,
    /// `L x M_H` pre-ReLU hidden layer.
    pub hidden_pre: Vec<f64>,
    /// `L x M` MLP output `H_i`.
    pub hidden: Vec<f64>,
    /// `L x K` values `w_ex_k . H_i`.
    pub head: Vec<f64>,
}

#[derive(Default)]
pub(crate) struct QueryScratch {
    pub zq: Vec<f64>,
    pub zdot: Vec<f64>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

impl<'a> Encoded<'a> {
    pub fn new(params: &'a ModelParams, cfg: &'a ModelConfig, events: &[Event]) -> Result<Self, ModelError> {
        cfg.validate()?;
        params.check_shapes(cfg)?;
        let m = cfg.embed_dim;
        let mv = cfg.value_dim;
        let kk = cfg.num_types;
        let len = events.len();
        for e in events {
            if e.k >= kk {
                return Err(ModelError::TypeOutOfRange { k: e.k, num_types: kk });
            }
        }
        let u = &params.type_embedding;

        let mut gram = vec![0.0; kk * kk];
        for a in 0..kk {
            for b in 0..kk {
                gram[a * kk + b] = (0..m).map(|r| u.get(r, a) * u.get(r, b)).sum();
            }
        }

        let mut z = vec![0.0; len * m];
        let mut values = vec![0.0; len * mv];
        let mut proj = vec![0.0; len * kk];
        let mut x = vec![0.0; 2 * m];
        for (i, e) in events.iter().enumerate() {
            temporal_embedding_into(e.t, &mut z[i * m..(i + 1) * m]);
            x[..m].copy_from_slice(&z[i * m..(i + 1) * m]);
            for r in 0..m {
                x[m + r] = u.get(r, e.k);
            }
            let v = &mut values[i * mv..(i + 1) * mv];
            params.value_proj.left_mul_into(&x, v);
            for k in 0..kk {
                proj[i * kk + k] = dot(v, params.output.row(k));
            }
        }

        let mut enc = Self {
            cfg,
            params,
            times: events.iter().map(|e| e.t).collect(),
            types: events.iter().map(|e| e.k).collect(),
            z,
            gram,
            values,
            proj,
            scale: 1.0 / ((2 * m) as f64).sqrt(),
            ex: None,
        };
        if cfg.variant == Variant::ExIthp {
            enc.ex = Some(enc.encode_extrapolation());
        }
        Ok(enc)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    fn encode_extrapolation(&self) -> ExEncoded {
        let cfg = self.cfg;
        let ex = self.params.extrapolation.as_ref().expect("shape-checked");
        let (m, mv, mh, kk) = (cfg.embed_dim, cfg.value_dim, cfg.hidden_dim, cfg.num_types);
        let len = self.len();
        let mut summary = vec![0.0; len * mv];
        let mut hidden_pre = vec![0.0; len * mh];
        let mut hidden = vec![0.0; len * m];
        let mut head = vec![0.0; len * kk];
        let mut scratch = QueryScratch::default();
        let mut act = vec![0.0; mh];
        for i in 0..len {
            let s = &mut summary[i * mv..(i + 1) * mv];
            if i > 0 {
                self.event_zdots(i, i, &mut scratch);
                self.weights_for(self.types[i], i, &mut scratch);
                for (j, &a) in scratch.weights[..i].iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (sv, vv) in s.iter_mut().zip(&self.values[j * mv..(j + 1) * mv]) {
                        *sv += a * vv;
                    }
                }
            }
            let hp = &mut hidden_pre[i * mh..(i + 1) * mh];
            ex.w1.left_mul_into(s, hp);
            for (h, b) in hp.iter_mut().zip(&ex.b1) {
                *h += b;
            }
            for (a, h) in act.iter_mut().zip(hp.iter()) {
                *a = h.max(0.0);
            }
            let out = &mut hidden[i * m..(i + 1) * m];
            ex.w2.left_mul_into(&act, out);
            for (o, b) in out.iter_mut().zip(&ex.b2) {
                *o += b;
            }
            for k in 0..kk {
                head[i * kk + k] = dot(out, ex.w_out.row(k));
            }
        }
        ExEncoded {
            summary,
            hidden_pre,
            hidden,
            head,
        }
    }

    /// Temporal similarities between query time `t` and the first `n` events.
    pub fn query_zdots(&self, t: f64, n: usize, scratch: &mut QueryScratch) {
        let m = self.cfg.embed_dim;
        scratch.zq.resize(m, 0.0);
        temporal_embedding_into(t, &mut scratch.zq);
        scratch.zdot.clear();
        for i in 0..n {
            let zi = &self.z[i * m..(i + 1) * m];
            scratch.zdot.push(dot(&scratch.zq, zi));
        }
    }

    /// Like [`Self::query_zdots`] but with event `q`'s own embedding as the query.
    fn event_zdots(&self, q: usize, n: usize, scratch: &mut QueryScratch) {
        let m = self.cfg.embed_dim;
        scratch.zq.clear();
        scratch.zq.extend_from_slice(&self.z[q * m..(q + 1) * m]);
        scratch.zdot.clear();
        let zq = &self.z[q * m..(q + 1) * m];
        for i in 0..n {
            scratch.zdot.push(dot(zq, &self.z[i * m..(i + 1) * m]));
        }
    }

    /// Softmax weights of a type-`k` query over the first `n` events.
    /// Needs `zdot` filled for at least `n` events.
    pub fn weights_for(&self, k: usize, n: usize, scratch: &mut QueryScratch) {
        let kk = self.cfg.num_types;
        scratch.scores.clear();
        for i in 0..n {
            scratch
                .scores
                .push((scratch.zdot[i] + self.gram[k * kk + self.types[i]]) * self.scale);
        }
        scratch.weights.resize(n, 0.0);
        softmax_into(&scratch.scores, &mut scratch.weights[..n]);
    }

    /// `x_q . w_k` for the skip connection, `x_q = [zq; u_k]`.
    pub fn skip_term(&self, k: usize, zq: &[f64]) -> f64 {
        let m = self.cfg.embed_dim;
        let w = self.params.output.row(k);
        let u = &self.params.type_embedding;
        dot(zq, &w[..m]) + (0..m).map(|r| u.get(r, k) * w[m + r]).sum::<f64>()
    }

    /// Pre-activation of the attention intensity for type `k`, once
    /// `query_zdots` has run for this query with at least `n` events.
    pub fn ithp_pre(&self, k: usize, n: usize, scratch: &mut QueryScratch) -> f64 {
        let kk = self.cfg.num_types;
        let mut pre = self.params.bias[k];
        if self.cfg.skip_connection {
            pre += self.skip_term(k, &scratch.zq);
        }
        if n == 0 {
            return pre;
        }
        self.weights_for(k, n, scratch);
        let mut acc = 0.0;
        for (i, &a) in scratch.weights[..n].iter().enumerate() {
            acc += a * self.proj[i * kk + k];
        }
        pre + acc
    }

    /// Pre-activation of the extrapolating variant. With no prior event
    /// the intensity is the constant `softplus(b_k)`.
    pub fn ex_pre(&self, t: f64, k: usize, n: usize) -> Result<f64, ModelError> {
        let ex = self.ex.as_ref().expect("extrapolating encoding");
        let params = self.params.extrapolation.as_ref().expect("shape-checked");
        let b = self.params.bias[k];
        if n == 0 {
            return Ok(b);
        }
        let anchor = n - 1;
        let ta = self.times[anchor];
        if ta == 0.0 {
            return Err(ModelError::DegenerateAnchor);
        }
        let kk = self.cfg.num_types;
        Ok(params.alpha[k] * (t - ta) / ta + ex.head[anchor * kk + k] + b)
    }

    /// Pre-activations for all types at `t` with history prefix `n`.
    pub fn pre_all(&self, t: f64, n: usize, scratch: &mut QueryScratch, out: &mut [f64]) -> Result<(), ModelError> {
        match self.cfg.variant {
            Variant::Ithp => {
                self.query_zdots(t, n, scratch);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.ithp_pre(k, n, scratch);
                }
            }
            Variant::ExIthp => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.ex_pre(t, k, n)?;
                }
            }
        }
        Ok(())
    }

    pub fn pre_one(&self, t: f64, k: usize, n: usize, scratch: &mut QueryScratch) -> Result<f64, ModelError> {
        match self.cfg.variant {
            Variant::Ithp => {
                self.query_zdots(t, n, scratch);
                Ok(self.ithp_pre(k, n, scratch))
            }
            Variant::ExIthp => self.ex_pre(t, k, n),
        }
    }
}

fn check_type(k: usize, cfg: &ModelConfig) -> Result<(), ModelError> {
    if k >= cfg.num_types {
        return Err(ModelError::TypeOutOfRange { k, num_types: cfg.num_types });
    }
    Ok(())
}

fn check_window(seq: &EventSequence, t: f64) -> Result<(), ModelError> {
    if !(t > 0.0 && t <= seq.horizon()) {
        return Err(ModelError::OutOfWindow { t, horizon: seq.horizon() });
    }
    Ok(())
}

fn check_causal(history: &[Event], t: f64) -> Result<(), ModelError> {
    match history.iter().find(|e| e.t >= t) {
        Some(e) => Err(ModelError::NonCausalHistory { at: e.t, query: t }),
        None => Ok(()),
    }
}

fn require(cfg: &ModelConfig, variant: Variant) -> Result<(), ModelError> {
    if cfg.variant != variant {
        return Err(ModelError::WrongVariant(variant));
    }
    Ok(())
}

/// Scaled attention score `x_a . x_b / sqrt(2M)` between two events.
pub fn score(params: &ModelParams, a: Event, b: Event) -> Result<f64, ModelError> {
    let u = &params.type_embedding;
    let xa = event_embedding(a.t, a.k, u)?;
    let xb = event_embedding(b.t, b.k, u)?;
    Ok(dot(&xa, &xb) / ((2 * u.rows()) as f64).sqrt())
}

/// Softmax attention of a type-`query_k` query at `query_t` over `history`.
pub fn attention_weights(
    query_t: f64,
    query_k: usize,
    history: &[Event],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>, ModelError> {
    check_type(query_k, cfg)?;
    check_causal(history, query_t)?;
    let view = ithp_view(cfg);
    let stripped = strip_extrapolation(params);
    let enc = Encoded::new(&stripped, &view, history)?;
    let mut scratch = QueryScratch::default();
    enc.query_zdots(query_t, history.len(), &mut scratch);
    enc.weights_for(query_k, history.len(), &mut scratch);
    Ok(scratch.weights)
}

/// Attention quantities do not depend on the extrapolation head, so the
/// public attention helpers work on either variant.
fn ithp_view(cfg: &ModelConfig) -> ModelConfig {
    ModelConfig {
        variant: Variant::Ithp,
        ..cfg.clone()
    }
}

fn strip_extrapolation(params: &ModelParams) -> ModelParams {
    ModelParams {
        extrapolation: None,
        ..params.clone()
    }
}

/// Type-`k` intensity at `t`, attending to every event strictly before `t`.
pub fn intensity_at(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    t: f64,
    k: usize,
) -> Result<f64, ModelError> {
    require(cfg, Variant::Ithp)?;
    check_type(k, cfg)?;
    check_window(seq, t)?;
    let n = seq.count_before(t);
    intensity_from_history(params, cfg, &seq.events()[..n], t, k)
}

/// Intensity with an explicit history, which may be stored in any order.
pub fn intensity_from_history(
    params: &ModelParams,
    cfg: &ModelConfig,
    history: &[Event],
    t: f64,
    k: usize,
) -> Result<f64, ModelError> {
    require(cfg, Variant::Ithp)?;
    check_type(k, cfg)?;
    check_causal(history, t)?;
    let enc = Encoded::new(params, cfg, history)?;
    let mut scratch = QueryScratch::default();
    Ok(softplus(enc.pre_one(t, k, history.len(), &mut scratch)?))
}

/// Summand of event `i` in the type-`k` pre-activation at time `t`: the
/// learned trigger kernel value `phi_{k,k_i}(t - t_i, t_i)`.
pub fn trigger_contribution(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    t: f64,
    i: usize,
    k: usize,
) -> Result<f64, ModelError> {
    require(cfg, Variant::Ithp)?;
    check_type(k, cfg)?;
    let ev = seq.events().get(i).ok_or(ModelError::ShapeMismatch(format!(
        "history index {i} out of range"
    )))?;
    if ev.t >= t {
        return Err(ModelError::NonCausalHistory { at: ev.t, query: t });
    }
    let n = seq.count_before(t);
    let enc = Encoded::new(params, cfg, &seq.events()[..n])?;
    let mut scratch = QueryScratch::default();
    enc.query_zdots(t, n, &mut scratch);
    enc.weights_for(k, n, &mut scratch);
    Ok(scratch.weights[i] * enc.proj[i * cfg.num_types + k])
}

/// All `K` intensities at `t` (left limit at event times).
///
/// Dispatches on the variant; for the extrapolating variant this is
/// [`super::ex_intensity_at`] per type.
pub fn intensity_all_types(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    t: f64,
) -> Result<Vec<f64>, ModelError> {
    match cfg.variant {
        Variant::Ithp => {
            check_window(seq, t)?;
            let n = seq.count_before(t);
            let enc = Encoded::new(params, cfg, &seq.events()[..n])?;
            let mut scratch = QueryScratch::default();
            let mut out = vec![0.0; cfg.num_types];
            enc.pre_all(t, n, &mut scratch, &mut out)?;
            Ok(out.into_iter().map(softplus).collect())
        }
        Variant::ExIthp => (0..cfg.num_types)
            .map(|k| super::ex_intensity_at(params, cfg, seq, t, k))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    /// Index into the sequence's events.
    Event(usize),
    Grid,
}

/// Attention over events and grid points, ordered chronologically.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub times: Vec<f64>,
    pub kinds: Vec<PointKind>,
    /// Query type used for each row.
    pub query_types: Vec<usize>,
    /// Row = target, column = source.
    pub weights: Matrix,
}

/// Attention weights among the union of events and grid points.
///
/// Event rows query with the event's own type, grid rows with
/// `grid_query_type`. A column is non-zero only for an event source
/// strictly earlier than the row's time. A grid point sharing a
/// timestamp with an event is kept as its own row, ordered before it.
pub fn attention_matrix(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    grid: &IntegrationGrid,
    grid_query_type: usize,
) -> Result<AttentionMatrix, ModelError> {
    check_type(grid_query_type, cfg)?;
    let view = ithp_view(cfg);
    let stripped = strip_extrapolation(params);
    let enc = Encoded::new(&stripped, &view, seq.events())?;

    let mut points: Vec<(f64, PointKind)> = grid.times().iter().map(|&t| (t, PointKind::Grid)).collect();
    points.extend(seq.events().iter().enumerate().map(|(i, e)| (e.t, PointKind::Event(i))));
    // grid before event on ties
    points.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| match (a.1, b.1) {
            (PointKind::Grid, PointKind::Event(_)) => std::cmp::Ordering::Less,
            (PointKind::Event(_), PointKind::Grid) => std::cmp::Ordering::Greater,
            _ => std::cmp::Ordering::Equal,
        })
    });
    // column position of each event
    let mut event_col = vec![0; seq.len()];
    for (pos, (_, kind)) in points.iter().enumerate() {
        if let PointKind::Event(i) = kind {
            event_col[*i] = pos;
        }
    }

    let size = points.len();
    let mut weights = Matrix::zeros(size, size);
    let mut query_types = Vec::with_capacity(size);
    let mut scratch = QueryScratch::default();
    for (row, &(t, kind)) in points.iter().enumerate() {
        let qk = match kind {
            PointKind::Event(i) => seq.events()[i].k,
            PointKind::Grid => grid_query_type,
        };
        query_types.push(qk);
        let n = seq.count_before(t);
        if n == 0 {
            continue;
        }
        enc.query_zdots(t, n, &mut scratch);
        enc.weights_for(qk, n, &mut scratch);
        for (i, &a) in scratch.weights[..n].iter().enumerate() {
            weights.set(row, event_col[i], a);
        }
    }
    Ok(AttentionMatrix {
        times: points.iter().map(|p| p.0).collect(),
        kinds: points.iter().map(|p| p.1).collect(),
        query_types,
        weights,
    })
}
