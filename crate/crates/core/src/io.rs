//! JSONL datasets, the JSON model file and dataset statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, Event, EventSequence, Split};
use crate::model::{ModelConfig, ModelParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const SPLIT_FILES: [(Split, &str); 3] = [
    (Split::Train, "train.jsonl"),
    (Split::Val, "val.jsonl"),
    (Split::Test, "test.jsonl"),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error in {path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid record in {path} line {line}: {reason}")]
    Validation { path: String, line: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad model file: {0}")]
    ModelFormat(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFileRecord {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "K")]
    pub num_types: usize,
    pub events: Vec<Event>,
}

impl From<&EventSequence> for SequenceFileRecord {
    fn from(s: &EventSequence) -> Self {
        Self {
            horizon: s.horizon(),
            num_types: s.num_types(),
            events: s.events().to_vec(),
        }
    }
}

/// Reads one JSONL file, optionally mapping every time `t -> scale * t`.
pub fn load_sequences(path: &Path, scale: Option<f64>) -> Result<Vec<EventSequence>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let shown = path.display().to_string();
    if let Some(a) = scale {
        if !(a.is_finite() && a > 0.0) {
            return Err(io_err(path, format!("time scale must be positive, got {a}")));
        }
    }
    let mut out = Vec::new();
    let mut kinds: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: SequenceFileRecord = serde_json::from_str(raw).map_err(|e| IoError::Parse {
            path: shown.clone(),
            line,
            message: e.to_string(),
        })?;
        let invalid = |reason: String| IoError::Validation {
            path: shown.clone(),
            line,
            reason,
        };
        match kinds {
            Some(k) if k != rec.num_types => {
                return Err(invalid(format!("K = {} but earlier lines have K = {k}", rec.num_types)))
            }
            _ => kinds = Some(rec.num_types),
        }
        let seq = EventSequence::new(rec.events, rec.horizon, rec.num_types).map_err(|e| invalid(e.to_string()))?;
        out.push(match scale {
            Some(a) => seq.rescaled(a),
            None => seq,
        });
    }
    Ok(out)
}

pub fn save_sequences(path: &Path, seqs: &[&EventSequence]) -> Result<(), IoError> {
    let mut text = String::new();
    for s in seqs {
        let line = serde_json::to_string(&SequenceFileRecord::from(*s)).map_err(|e| io_err(path, e))?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Loads a dataset directory (`train.jsonl`, `val.jsonl`, `test.jsonl`;
/// missing files are empty splits) or a single file, read as training data.
pub fn load_dataset(path: &Path, scale: Option<f64>) -> Result<Dataset, IoError> {
    let mut seqs = Vec::new();
    let mut splits = Vec::new();
    if path.is_dir() {
        for (split, name) in SPLIT_FILES {
            let file = path.join(name);
            if !file.exists() {
                continue;
            }
            let part = load_sequences(&file, scale)?;
            splits.extend(std::iter::repeat_n(split, part.len()));
            seqs.extend(part);
        }
    } else {
        seqs = load_sequences(path, scale)?;
        splits = vec![Split::Train; seqs.len()];
    }
    let num_types = seqs.first().ok_or(IoError::EmptyDataset)?.num_types();
    if seqs.iter().any(|s| s.num_types() != num_types) {
        return Err(io_err(path, "split files disagree on K"));
    }
    Dataset::with_splits(num_types, seqs, splits).map_err(|e| io_err(path, e))
}

/// Writes one JSONL file per split into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for (split, name) in SPLIT_FILES {
        let file = dir.join(name);
        save_sequences(&file, &ds.split(split))?;
        written.push(file);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: Vec<TensorRecord>,
}

impl ModelFile {
    pub fn new(cfg: &ModelConfig, params: &ModelParams) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            config: cfg.clone(),
            params: params
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| TensorRecord {
                    name: name.to_string(),
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_parts(self) -> Result<(ModelConfig, ModelParams), IoError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(IoError::ModelFormat(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        self.config.validate().map_err(|e| IoError::ModelFormat(e.to_string()))?;
        let tensors: Vec<(String, Vec<usize>, Vec<f64>)> =
            self.params.into_iter().map(|t| (t.name, t.shape, t.data)).collect();
        let params =
            ModelParams::from_tensors(&self.config, &tensors).map_err(|e| IoError::ModelFormat(e.to_string()))?;
        Ok((self.config, params))
    }
}

pub fn model_to_json(cfg: &ModelConfig, params: &ModelParams) -> String {
    let mut s = serde_json::to_string_pretty(&ModelFile::new(cfg, params)).expect("model file serialises");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<(ModelConfig, ModelParams), IoError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| IoError::ModelFormat(e.to_string()))?;
    file.into_parts()
}

pub fn save_model(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<(), IoError> {
    fs::write(path, model_to_json(cfg, params)).map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, ModelParams), IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    model_from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub sequences: usize,
    pub events: usize,
    pub length: Option<Summary>,
    /// Gaps between consecutive events of a sequence.
    pub interval: Option<Summary>,
    pub type_percent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_types: usize,
    pub splits: Vec<SplitStats>,
}

pub fn dataset_stats(ds: &Dataset) -> Result<DatasetStats, IoError> {
    if ds.is_empty() {
        return Err(IoError::EmptyDataset);
    }
    let k = ds.num_types();
    let mut splits = Vec::new();
    for (split, _) in SPLIT_FILES {
        let seqs = ds.split(split);
        if seqs.is_empty() {
            continue;
        }
        let lengths: Vec<f64> = seqs.iter().map(|s| s.len() as f64).collect();
        let gaps: Vec<f64> = seqs
            .iter()
            .flat_map(|s| s.events().windows(2).map(|w| w[1].t - w[0].t).collect::<Vec<_>>())
            .collect();
        let mut counts = vec![0usize; k];
        for e in seqs.iter().flat_map(|s| s.events()) {
            counts[e.k] += 1;
        }
        let events: usize = counts.iter().sum();
        splits.push(SplitStats {
            split,
            sequences: seqs.len(),
            events,
            length: Summary::of(&lengths),
            interval: Summary::of(&gaps),
            type_percent: counts
                .iter()
                .map(|c| if events > 0 { 100.0 * *c as f64 / events as f64 } else { 0.0 })
                .collect(),
        });
    }
    Ok(DatasetStats { num_types: k, splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::trainer::init_params;

    fn sample() -> Dataset {
        let a = EventSequence::new(vec![Event::new(0.1, 0), Event::new(0.30000000000000004, 1)], 2.0, 2).unwrap();
        let b = EventSequence::new(vec![Event::new(1.0 / 3.0, 1)], 1.5, 2).unwrap();
        let c = EventSequence::empty(4.0, 2);
        Dataset::with_splits(2, vec![a, b, c], vec![Split::Train, Split::Val, Split::Test]).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        save_dataset(dir.path(), &ds).unwrap();
        assert_eq!(load_dataset(dir.path(), None).unwrap(), ds);
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = r#"{"T": 2.0, "K": 1, "events": [{"t": 0.5, "k": 0}]}"#;
        fs::write(&path, format!("{good}\n{good}\n{{not json\n")).unwrap();
        match load_sequences(&path, None) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = r#"{"T": 2.0, "K": 2, "events": [{"t": 0.5, "k": 0}]}"#;
        let bad = r#"{"T": 2.0, "K": 2, "events": [{"t": 0.5, "k": 0}, {"t": 0.2, "k": 1}]}"#;
        fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        assert!(matches!(load_sequences(&path, None), Err(IoError::Validation { line: 2, .. })));
        let other_k = r#"{"T": 2.0, "K": 3, "events": []}"#;
        fs::write(&path, format!("{good}\n{other_k}\n")).unwrap();
        assert!(matches!(load_sequences(&path, None), Err(IoError::Validation { line: 2, .. })));
    }

    #[test]
    fn rescaling_doubles_times() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, r#"{"T": 2.0, "K": 2, "events": [{"t": 0.5, "k": 1}]}"#).unwrap();
        let s = &load_sequences(&path, Some(2.0)).unwrap()[0];
        assert_eq!(s.horizon(), 4.0);
        assert_eq!(s.events()[0], Event::new(1.0, 1));
        assert_eq!(s.num_types(), 2);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        for variant in [Variant::Ithp, Variant::ExIthp] {
            let cfg = ModelConfig::new(4, 3, variant);
            let mut p = init_params(&cfg, &[0.1, 0.2, 1e-300], 9).unwrap();
            p.bias[0] = f64::MIN_POSITIVE;
            p.bias[1] = -0.1 - 0.2;
            let (c2, p2) = model_from_json(&model_to_json(&cfg, &p)).unwrap();
            assert_eq!(c2, cfg);
            assert_eq!(
                p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                p2.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn model_version_and_shape_checks() {
        let cfg = ModelConfig::new(4, 2, Variant::Ithp);
        let p = ModelParams::zeros(&cfg);
        let mut file = ModelFile::new(&cfg, &p);
        file.format_version = 2;
        assert!(file.clone().into_parts().is_err());
        file.format_version = 1;
        file.params[0].shape = vec![2, 4];
        assert!(file.into_parts().is_err());
    }

    #[test]
    fn stats_small_case() {
        let s = EventSequence::new(vec![Event::new(1.0, 0), Event::new(2.0, 0)], 3.0, 1).unwrap();
        let ds = Dataset::new(1, vec![s]).unwrap();
        let st = dataset_stats(&ds).unwrap();
        assert_eq!(st.splits.len(), 1);
        let tr = &st.splits[0];
        assert_eq!(tr.events, 2);
        assert_eq!(tr.length.unwrap().mean, 2.0);
        assert_eq!(tr.interval.unwrap().mean, 1.0);
        assert_eq!(tr.type_percent, vec![100.0]);
    }

    #[test]
    fn stats_percentages_sum_to_100() {
        let st = dataset_stats(&sample()).unwrap();
        for sp in &st.splits {
            if sp.events > 0 {
                assert!((sp.type_percent.iter().sum::<f64>() - 100.0).abs() < 0.01);
            }
        }
        assert!(st.splits[2].interval.is_none());
        assert!(matches!(
            dataset_stats(&Dataset::new(2, vec![]).unwrap()),
            Err(IoError::EmptyDataset)
        ));
    }
}
