//! On-disk artifacts. Each is one JSON document carrying a format version
//! and the full run configuration that produced it.

use std::path::{Path, PathBuf};

use poirec_core::ingest::{DatasetStats, IdMaps, SplitDataset};
use poirec_core::metrics::MetricsReport;
use poirec_core::model::{GetNextModel, ModelConfig};
use poirec_core::nn::Tensor;
use poirec_core::train::EpochRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const POPULARITY_FILE: &str = "popularity.tsv";
pub const EDGES_FILE: &str = "edges.tsv";

/// A preprocessed dataset: id maps and the three splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format_version: u32,
    pub config: RunConfig,
    pub stats: DatasetStats,
    pub lines: usize,
    pub malformed_lines: usize,
    pub id_maps: IdMaps,
    pub split: SplitDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: &GetNextModel, best_epoch: usize, history: Vec<EpochRecord>) -> Self {
        let params = model
            .store()
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config,
            model: model.config().clone(),
            best_epoch,
            history,
            params,
        }
    }

    pub fn to_model(&self) -> poirec_core::Result<GetNextModel> {
        let mut model = GetNextModel::new(self.model.clone(), 0)?;
        let tensors = self
            .params
            .iter()
            .map(|p| Ok((p.name.as_str(), Tensor::new(p.shape.clone(), p.data.clone())?)))
            .collect::<poirec_core::Result<Vec<_>>>()?;
        model.load_values(tensors)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub format_version: u32,
    pub config: RunConfig,
    pub checkpoint: PathBuf,
    pub report: MetricsReport,
}

/// Pretty JSON with a trailing newline; floats print in shortest
/// round-trip form.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

/// Reads a JSON artifact, checking its `format_version`. `what` names the
/// command that produces it, for the missing-file message.
pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::Artifact {
                path: path.to_path_buf(),
                message: format!("not found; run `poirec {what}` first"),
            })
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    let artifact = |message: String| CliError::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| artifact(format!("invalid JSON: {e}")))?;
    match raw.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(artifact(format!("format_version {v}, expected {FORMAT_VERSION}"))),
        None => return Err(artifact("missing format_version".into())),
    }
    serde_json::from_value(raw).map_err(|e| artifact(e.to_string()))
}

pub fn bundle_path(out: &Path) -> PathBuf {
    out.join(BUNDLE_FILE)
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}
