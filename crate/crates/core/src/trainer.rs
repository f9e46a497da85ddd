//! Log-likelihood, initialisation and the optimisation loop.

use std::borrow::Cow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{objective_and_gradients, sequence_terms, ObjectiveError};
use crate::domain::{make_grid, Dataset, DomainError, EventSequence, IntegrationGrid, Split};
use crate::model::{softplus_inverse, Matrix, ModelConfig, ModelError, ModelParams, Variant};
use crate::rng::{child_stream, stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("objective diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("split {0} has no events")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Objective(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub grid_subdivision: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 100,
            batch_size: 16,
            patience: 10,
            grid_subdivision: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [self.learning_rate, self.adam_eps]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        let decays = [self.beta1, self.beta2].iter().all(|b| (0.0..1.0).contains(b));
        if !positive || !decays {
            return Err(TrainError::InvalidConfig("optimizer constants out of range".into()));
        }
        if self.batch_size == 0 || self.patience == 0 || self.grid_subdivision == 0 {
            return Err(TrainError::InvalidConfig(
                "batch size, patience and grid subdivision must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-event training log-likelihood averaged over the epoch's batches.
    pub train_objective: f64,
    pub val_tll: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn train_objectives(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_objective).collect()
    }

    pub fn val_tlls(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_tll).collect()
    }
}

/// `sum_i log lambda_{k_i}(t_i)` with history strictly before each event.
pub fn event_term(params: &ModelParams, cfg: &ModelConfig, seq: &EventSequence) -> Result<f64, ObjectiveError> {
    Ok(sequence_terms(params, cfg, seq, None, 0, None)?.event_term)
}

/// Trapezoidal integral of the total intensity over `grid`.
pub fn compensator(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    grid: &IntegrationGrid,
) -> Result<f64, ObjectiveError> {
    Ok(sequence_terms(params, cfg, seq, Some(grid), 0, None)?.compensator)
}

pub fn log_likelihood(
    params: &ModelParams,
    cfg: &ModelConfig,
    seq: &EventSequence,
    grid: &IntegrationGrid,
) -> Result<f64, ObjectiveError> {
    Ok(sequence_terms(params, cfg, seq, Some(grid), 0, None)?.log_likelihood())
}

/// Total log-likelihood over `seqs` divided by their total event count.
pub fn per_event_log_likelihood(
    params: &ModelParams,
    cfg: &ModelConfig,
    seqs: &[&EventSequence],
    subdivision: usize,
) -> Result<f64, TrainError> {
    let events: usize = seqs.iter().map(|s| s.len()).sum();
    if events == 0 {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let parts: Vec<f64> = seqs
        .par_iter()
        .enumerate()
        .map(|(idx, seq)| {
            let grid = make_grid(seq, subdivision)?;
            Ok(sequence_terms(params, cfg, seq, Some(&grid), idx, None)?.log_likelihood())
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(parts.iter().sum::<f64>() / events as f64)
}

/// Per-type event counts divided by the summed horizons.
pub fn empirical_rates(seqs: &[&EventSequence], num_types: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_types];
    let mut time = 0.0;
    for s in seqs {
        time += s.horizon();
        for e in s.events() {
            counts[e.k] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| if time > 0.0 { c as f64 / time } else { 0.0 })
        .collect()
}

pub const MIN_INIT_RATE: f64 = 1e-4;

/// Offset applied by [`anchor_safe`].
pub const ANCHOR_OFFSET: f64 = 1e-6;

/// The extrapolating variant divides by the anchor time, so when any
/// sequence has an event at `t = 0` every sequence is shifted by
/// [`ANCHOR_OFFSET`]. Other datasets and variants pass through unchanged.
pub fn anchor_safe<'a>(ds: &'a Dataset, cfg: &ModelConfig) -> Cow<'a, Dataset> {
    let touches_zero = ds
        .sequences()
        .iter()
        .any(|s| s.events().first().is_some_and(|e| e.t <= 0.0));
    if cfg.variant == Variant::ExIthp && touches_zero {
        Cow::Owned(ds.map_sequences(|s| s.shifted(ANCHOR_OFFSET)))
    } else {
        Cow::Borrowed(ds)
    }
}

/// Random weights with standard deviation `1/sqrt(fan_in)` and biases set
/// so that each type starts at its empirical rate.
pub fn init_params(cfg: &ModelConfig, rates: &[f64], seed: u64) -> Result<ModelParams, TrainError> {
    cfg.validate()?;
    if rates.len() != cfg.num_types {
        return Err(TrainError::InvalidConfig(format!(
            "{} rates for {} types",
            rates.len(),
            cfg.num_types
        )));
    }
    let mut rng = stream(seed);
    let mut normal = |rows: usize, cols: usize, fan_in: usize| {
        let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
    };
    let mut p = ModelParams::zeros(cfg);
    let (m, k, mv) = (cfg.embed_dim, cfg.num_types, cfg.value_dim);
    p.type_embedding = normal(m, k, k);
    p.value_proj = normal(2 * m, mv, 2 * m);
    p.output = normal(k, mv, mv);
    p.bias = rates
        .iter()
        .map(|r| softplus_inverse(r.max(MIN_INIT_RATE)))
        .collect();
    if let Some(ex) = p.extrapolation.as_mut() {
        let mh = cfg.hidden_dim;
        ex.w1 = normal(mv, mh, mv);
        ex.w2 = normal(mh, m, mh);
        ex.w_out = normal(k, m, m);
    }
    Ok(p)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One ascent step on `theta` along `grad`.
    fn ascend(&mut self, theta: &mut [f64], grad: &[f64], tc: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - tc.beta1.powi(self.step);
        let c2 = 1.0 - tc.beta2.powi(self.step);
        for i in 0..theta.len() {
            self.m[i] = tc.beta1 * self.m[i] + (1.0 - tc.beta1) * grad[i];
            self.v[i] = tc.beta2 * self.v[i] + (1.0 - tc.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] += tc.learning_rate * m_hat / (v_hat.sqrt() + tc.adam_eps);
        }
    }
}

pub fn train(
    ds: &Dataset,
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    train_observed(ds, cfg, tc, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_observed(
    ds: &Dataset,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainReport), TrainError> {
    let start = Instant::now();
    tc.validate()?;
    cfg.validate()?;
    let ds = anchor_safe(ds, cfg);
    let train_seqs = ds.split(Split::Train);
    let val_seqs = ds.split(Split::Val);
    let train_events: usize = train_seqs.iter().map(|s| s.len()).sum();
    if train_events == 0 {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_seqs.iter().all(|s| s.is_empty()) {
        return Err(TrainError::EmptySplit("val"));
    }

    let init = init_params(cfg, &empirical_rates(&train_seqs, cfg.num_types), tc.seed)?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        wall_seconds: 0.0,
    };
    if tc.max_epochs == 0 {
        report.wall_seconds = start.elapsed().as_secs_f64();
        return Ok((init, report));
    }

    let grids: Vec<IntegrationGrid> = train_seqs
        .iter()
        .map(|s| make_grid(s, tc.grid_subdivision))
        .collect::<Result<_, _>>()?;
    let mut params = init.clone();
    let mut theta = params.to_flat();
    let mut adam = Adam::new(theta.len());
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut bad_steps = 0;
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();

    for epoch in 1..=tc.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut child_stream(tc.seed, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(&EventSequence, &IntegrationGrid)> =
                chunk.iter().map(|&i| (train_seqs[i], &grids[i])).collect();
            let step = match objective_and_gradients(&params, cfg, &batch) {
                Ok(g) if g.is_finite() => Some(g),
                Ok(_) | Err(ObjectiveError::NonFiniteObjective { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            let Some(g) = step else {
                bad_steps += 1;
                if bad_steps >= 2 {
                    return Err(TrainError::Diverged { epoch });
                }
                continue;
            };
            bad_steps = 0;
            total += g.objective_value;
            adam.ascend(&mut theta, &g.grads.to_flat(), tc);
            params.set_flat(&theta);
        }

        let val_tll = match per_event_log_likelihood(&params, cfg, &val_seqs, tc.grid_subdivision) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(TrainError::Objective(ObjectiveError::NonFiniteObjective { .. })) => {
                return Err(TrainError::Diverged { epoch })
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_objective: total / train_events as f64,
            val_tll,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        report.epochs.push(record);

        if best.as_ref().is_none_or(|(b, _)| val_tll > *b) {
            best = Some((val_tll, params.clone()));
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, report))
}
