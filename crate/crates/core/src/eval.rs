//! Test metrics and interpretability exports.

use rayon::prelude::*;
use thiserror::Error;

use crate::diff::ObjectiveError;
use crate::domain::{DomainError, EventSequence, IntegrationGrid};
use crate::model::{softplus, softplus_inverse, Encoded, ModelConfig, ModelError, ModelParams, QueryScratch, Variant};
use crate::trainer::{per_event_log_likelihood, TrainError, MIN_INIT_RATE};

pub const DEFAULT_PROBES: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("split has no events to evaluate")]
    EmptySplit,
    #[error("no events of source type {0}")]
    NoSourceEvents(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptySplit(_) => EvalError::EmptySplit,
            TrainError::Objective(o) => EvalError::Objective(o),
            TrainError::Domain(d) => EvalError::Domain(d),
            other => EvalError::InvalidArgument(other.to_string()),
        }
    }
}

/// Per-event test log-likelihood.
pub fn test_tll(
    params: &ModelParams,
    cfg: &ModelConfig,
    seqs: &[&EventSequence],
    subdivision: usize,
) -> Result<f64, EvalError> {
    Ok(per_event_log_likelihood(params, cfg, seqs, subdivision)?)
}

/// Fraction of events (from the second of each sequence on) whose type has
/// the largest intensity at the event time. Ties go to the lowest index.
pub fn type_accuracy(params: &ModelParams, cfg: &ModelConfig, seqs: &[&EventSequence]) -> Result<f64, EvalError> {
    let parts: Vec<(usize, usize)> = seqs
        .par_iter()
        .map(|seq| {
            let enc = Encoded::new(params, cfg, seq.events())?;
            let mut scratch = QueryScratch::default();
            let mut pre = vec![0.0; cfg.num_types];
            let mut hits = 0;
            for (i, e) in seq.events().iter().enumerate().skip(1) {
                enc.pre_all(e.t, i, &mut scratch, &mut pre)?;
                let mut best = 0;
                for (k, v) in pre.iter().enumerate() {
                    if *v > pre[best] {
                        best = k;
                    }
                }
                hits += usize::from(best == e.k);
            }
            Ok((hits, seq.len().saturating_sub(1)))
        })
        .collect::<Result<_, ModelError>>()?;
    let (hits, counted) = parts.iter().fold((0, 0), |(h, c), (a, b)| (h + a, c + b));
    if counted == 0 {
        return Err(EvalError::EmptySplit);
    }
    Ok(hits as f64 / counted as f64)
}

/// Averaged learned kernel from `source` events toward `target` intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub source: usize,
    pub target: usize,
    pub tau_grid: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub n_probes: usize,
}

impl KernelEstimate {
    pub fn to_csv(&self, config: &str) -> String {
        let mut out = format!("# {config}\n# source={} target={} n_probes={}\ntau,phi_hat\n", self.source, self.target, self.n_probes);
        for (t, p) in self.tau_grid.iter().zip(&self.phi_hat) {
            out.push_str(&format!("{t},{p}\n"));
        }
        out
    }
}

/// `steps` lags evenly spaced on `[tau_max / steps, tau_max]`.
pub fn lag_grid(tau_max: f64, steps: usize) -> Result<Vec<f64>, EvalError> {
    if !(tau_max.is_finite() && tau_max > 0.0) || steps < 2 {
        return Err(EvalError::InvalidArgument("need tau_max > 0 and steps >= 2".into()));
    }
    Ok((1..=steps).map(|m| tau_max * m as f64 / steps as f64).collect())
}

/// Up to `n_probes` source events, picked by even stride over the split.
fn probe_events(seqs: &[&EventSequence], source: usize, n_probes: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = seqs
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| {
            seq.events()
                .iter()
                .enumerate()
                .filter(move |(_, e)| e.k == source)
                .map(move |(i, _)| (s, i))
        })
        .collect();
    if all.len() <= n_probes {
        return all;
    }
    (0..n_probes).map(|m| all[m * all.len() / n_probes]).collect()
}

/// Mean trigger contribution of `source` events on the `target` intensity,
/// each probed at `t_e + tau` inside its own sequence.
pub fn recover_kernel(
    params: &ModelParams,
    cfg: &ModelConfig,
    seqs: &[&EventSequence],
    source: usize,
    target: usize,
    tau_grid: &[f64],
    n_probes: usize,
) -> Result<KernelEstimate, EvalError> {
    if cfg.variant != Variant::Ithp {
        return Err(ModelError::WrongVariant(cfg.variant).into());
    }
    for k in [source, target] {
        if k >= cfg.num_types {
            return Err(ModelError::TypeOutOfRange {
                k,
                num_types: cfg.num_types,
            }
            .into());
        }
    }
    if tau_grid.first().is_none_or(|t| *t <= 0.0) || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::InvalidArgument("lags must be positive and increasing".into()));
    }
    if n_probes == 0 {
        return Err(EvalError::InvalidArgument("n_probes must be positive".into()));
    }
    let probes = probe_events(seqs, source, n_probes);
    if probes.is_empty() {
        return Err(EvalError::NoSourceEvents(source));
    }

    let mut by_seq: Vec<Vec<usize>> = vec![Vec::new(); seqs.len()];
    for &(s, i) in &probes {
        by_seq[s].push(i);
    }
    let kk = cfg.num_types;
    let sums: Vec<Vec<f64>> = by_seq
        .par_iter()
        .enumerate()
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(s, idx)| {
            let seq = seqs[s];
            let enc = Encoded::new(params, cfg, seq.events())?;
            let mut scratch = QueryScratch::default();
            let mut acc = vec![0.0; tau_grid.len()];
            for &i in idx {
                let te = seq.events()[i].t;
                for (a, tau) in acc.iter_mut().zip(tau_grid) {
                    let t = te + tau;
                    let n = seq.count_before(t);
                    enc.query_zdots(t, n, &mut scratch);
                    enc.weights_for(target, n, &mut scratch);
                    *a += scratch.weights[i] * enc.proj[i * kk + target];
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, ModelError>>()?;
    let mut phi_hat = vec![0.0; tau_grid.len()];
    for part in &sums {
        for (p, v) in phi_hat.iter_mut().zip(part) {
            *p += v;
        }
    }
    for p in &mut phi_hat {
        *p /= probes.len() as f64;
    }
    Ok(KernelEstimate {
        source,
        target,
        tau_grid: tau_grid.to_vec(),
        phi_hat,
        n_probes: probes.len(),
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Integrated learned influence; row = target, column = source.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Vec<Vec<f64>>,
    pub tau_max: f64,
    pub steps: usize,
}

impl Heatmap {
    pub fn get(&self, target: usize, source: usize) -> f64 {
        self.values[target][source]
    }

    pub fn to_csv(&self, config: &str) -> String {
        let k = self.values.len();
        let mut out = format!("# {config}\n# tau_max={} steps={}\ntarget", self.tau_max, self.steps);
        for j in 0..k {
            out.push_str(&format!(",source_{j}"));
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn influence_heatmap(
    params: &ModelParams,
    cfg: &ModelConfig,
    seqs: &[&EventSequence],
    tau_max: f64,
    steps: usize,
    n_probes: usize,
) -> Result<Heatmap, EvalError> {
    let lags = lag_grid(tau_max, steps)?;
    let k = cfg.num_types;
    let mut values = vec![vec![0.0; k]; k];
    for (target, row) in values.iter_mut().enumerate() {
        for (source, v) in row.iter_mut().enumerate() {
            let est = recover_kernel(params, cfg, seqs, source, target, &lags, n_probes)?;
            *v = trapezoid(&est.tau_grid, &est.phi_hat);
        }
    }
    Ok(Heatmap { values, tau_max, steps })
}

/// Model intensities at every grid time, one row per time.
///
/// Event times use left limits. Before the first event the extrapolating
/// variant falls back to its base rate, as in training.
pub fn intensity_trace(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    grid: &IntegrationGrid,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let enc = Encoded::new(params, cfg, seq.events())?;
    let mut scratch = QueryScratch::default();
    grid.times()
        .iter()
        .map(|&t| {
            let mut pre = vec![0.0; cfg.num_types];
            enc.pre_all(t, seq.count_before(t), &mut scratch, &mut pre)?;
            Ok(pre.into_iter().map(softplus).collect())
        })
        .collect()
}

/// Parameters of the constant-rate model: all kernel weights zero and
/// `softplus(b_k) = rate_k` (floored at a tiny positive rate).
pub fn constant_rate_params(cfg: &ModelConfig, rates: &[f64]) -> Result<ModelParams, EvalError> {
    cfg.validate()?;
    if rates.len() != cfg.num_types {
        return Err(EvalError::InvalidArgument("one rate per type required".into()));
    }
    let mut p = ModelParams::zeros(cfg);
    p.bias = rates.iter().map(|r| softplus_inverse(r.max(MIN_INIT_RATE))).collect();
    Ok(p)
}
