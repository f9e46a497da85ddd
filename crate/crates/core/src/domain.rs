//! Event sequences, datasets and the event-anchored integration grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("event {index}: time is not increasing")]
    NonMonotoneTimes { index: usize },
    #[error("event {index}: duplicate timestamp")]
    DuplicateTimestamp { index: usize },
    #[error("event {index}: type {k} outside [0, {num_types})")]
    TypeOutOfRange { index: usize, k: usize, num_types: usize },
    #[error("event {index}: time outside [0, horizon]")]
    EventBeyondHorizon { index: usize },
    #[error("horizon must be finite and positive")]
    BadHorizon,
    #[error("sequence has {found} types, dataset has {expected}")]
    TypeCountMismatch { expected: usize, found: usize },
    #[error("split fractions must be positive and sum to 1")]
    BadFractions,
    #[error("grid subdivision must be at least 1")]
    BadSubdivision,
}

/// A single marked event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub k: usize,
}

impl Event {
    pub fn new(t: f64, k: usize) -> Self {
        Self { t, k }
    }
}

/// Marked events on `[0, horizon]` with `num_types` possible marks.
///
/// Construction through [`EventSequence::new`] validates; the raw
/// constructor exists for code that builds sequences it already knows
/// are well-formed (the simulator) and for tests of the validator.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    events: Vec<Event>,
    horizon: f64,
    num_types: usize,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, horizon: f64, num_types: usize) -> Result<Self, DomainError> {
        let seq = Self::new_unchecked(events, horizon, num_types);
        validate_sequence(&seq)?;
        Ok(seq)
    }

    pub fn new_unchecked(events: Vec<Event>, horizon: f64, num_types: usize) -> Self {
        Self {
            events,
            horizon,
            num_types,
        }
    }

    pub fn empty(horizon: f64, num_types: usize) -> Self {
        Self::new_unchecked(Vec::new(), horizon, num_types)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.t)
    }

    /// Number of events strictly before `t`.
    pub fn count_before(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.t < t)
    }

    /// Number of events at or before `t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.t <= t)
    }

    /// Multiplies every timestamp and the horizon by `scale`.
    pub fn rescaled(&self, scale: f64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|e| Event::new(e.t * scale, e.k))
                .collect(),
            horizon: self.horizon * scale,
            num_types: self.num_types,
        }
    }

    /// Adds `offset` to every timestamp and the horizon.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|e| Event::new(e.t + offset, e.k))
                .collect(),
            horizon: self.horizon + offset,
            num_types: self.num_types,
        }
    }
}

pub fn validate_sequence(seq: &EventSequence) -> Result<(), DomainError> {
    if !(seq.horizon.is_finite() && seq.horizon > 0.0) {
        return Err(DomainError::BadHorizon);
    }
    let mut prev: Option<f64> = None;
    for (index, e) in seq.events.iter().enumerate() {
        if !e.t.is_finite() || e.t < 0.0 || e.t > seq.horizon {
            return Err(DomainError::EventBeyondHorizon { index });
        }
        if let Some(p) = prev {
            if e.t == p {
                return Err(DomainError::DuplicateTimestamp { index });
            }
            if e.t < p {
                return Err(DomainError::NonMonotoneTimes { index });
            }
        }
        if e.k >= seq.num_types {
            return Err(DomainError::TypeOutOfRange {
                index,
                k: e.k,
                num_types: seq.num_types,
            });
        }
        prev = Some(e.t);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Sequences sharing one type count, each carrying a split label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_types: usize,
    sequences: Vec<EventSequence>,
    splits: Vec<Split>,
}

impl Dataset {
    /// All sequences start out in the training split.
    pub fn new(num_types: usize, sequences: Vec<EventSequence>) -> Result<Self, DomainError> {
        let splits = vec![Split::Train; sequences.len()];
        Self::with_splits(num_types, sequences, splits)
    }

    pub fn with_splits(
        num_types: usize,
        sequences: Vec<EventSequence>,
        splits: Vec<Split>,
    ) -> Result<Self, DomainError> {
        assert_eq!(sequences.len(), splits.len(), "one split label per sequence");
        for seq in &sequences {
            if seq.num_types() != num_types {
                return Err(DomainError::TypeCountMismatch {
                    expected: num_types,
                    found: seq.num_types(),
                });
            }
            validate_sequence(seq)?;
        }
        Ok(Self {
            num_types,
            sequences,
            splits,
        })
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn sequences(&self) -> &[EventSequence] {
        &self.sequences
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<&EventSequence> {
        self.sequences
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(seq, _)| seq)
            .collect()
    }

    pub fn split_owned(&self, which: Split) -> Vec<EventSequence> {
        self.split(which).into_iter().cloned().collect()
    }

    pub fn total_events(&self) -> usize {
        self.sequences.iter().map(EventSequence::len).sum()
    }

    pub fn map_sequences(&self, f: impl Fn(&EventSequence) -> EventSequence) -> Self {
        Self {
            num_types: self.num_types,
            sequences: self.sequences.iter().map(f).collect(),
            splits: self.splits.clone(),
        }
    }
}

/// Deterministically shuffles and partitions `ds` into train/val/test.
///
/// Val and test sizes are `floor(n * fraction)`; whatever is left over
/// goes to train.
pub fn split_dataset(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset, DomainError> {
    let (train, val, test) = fractions;
    let ok = [train, val, test].iter().all(|f| f.is_finite() && *f > 0.0)
        && (train + val + test - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(DomainError::BadFractions);
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_val = (n as f64 * val).floor() as usize;
    let n_test = (n as f64 * test).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut sequences = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for (pos, &idx) in order.iter().enumerate() {
        sequences.push(ds.sequences[idx].clone());
        splits.push(if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Dataset::with_splits(ds.num_types, sequences, splits)
}

/// Evaluation times for the compensator integral.
///
/// Always contains `0`, the horizon and every event time of the sequence
/// it was built for, with `subdivision - 1` evenly spaced points inside
/// each gap between consecutive anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationGrid {
    times: Vec<f64>,
    subdivision: usize,
}

impl IntegrationGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn subdivision(&self) -> usize {
        self.subdivision
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// A grid built from explicit times; used for the plain `{0, T}` rule.
    pub fn from_times(times: Vec<f64>) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self {
            times,
            subdivision: 1,
        }
    }
}

pub fn make_grid(seq: &EventSequence, subdivision: usize) -> Result<IntegrationGrid, DomainError> {
    validate_sequence(seq)?;
    if subdivision == 0 {
        return Err(DomainError::BadSubdivision);
    }
    let mut anchors = Vec::with_capacity(seq.len() + 2);
    anchors.push(0.0);
    anchors.extend(seq.times());
    anchors.push(seq.horizon());
    anchors.dedup();

    let mut times = Vec::with_capacity((anchors.len() - 1) * subdivision + 1);
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let h = (b - a) / subdivision as f64;
        times.push(a);
        for s in 1..subdivision {
            let t = a + h * s as f64;
            // guard against rounding past the right anchor
            if t > a && t < b {
                times.push(t);
            }
        }
    }
    times.push(*anchors.last().expect("anchors contain 0"));
    Ok(IntegrationGrid {
        times,
        subdivision,
    })
}
