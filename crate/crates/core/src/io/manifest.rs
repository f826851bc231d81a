//! JSON records written next to merged containers, and the run manifest
//! that lists a run's checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::container::ContentDigest;
use crate::io::metrics_log::{read_metrics_log, MetricsLog};
use crate::selection::{CheckpointRecord, RunManifest};
use crate::synth::Landscape;
use crate::weighting::{MetricKind, MetricObjective};

pub const CONTAINER_FILE: &str = "model.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInput {
    pub checkpoint_id: String,
    pub step: u64,
    /// The metric the weight was derived from, when weights are metric-based.
    pub metric: Option<f64>,
    /// Linear merge weight; absent for task-vector methods.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeRecord {
    pub metric: MetricKind,
    pub objective: MetricObjective,
    pub penalty: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodParams {
    pub density: Option<f64>,
    pub drop_rate: Option<f64>,
    pub slerp_t: Option<f64>,
    pub base: Option<String>,
    pub base_checkpoint: Option<String>,
    pub seed: Option<u64>,
}

/// Reproducibility record for one merged container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeManifest {
    pub name: String,
    pub method: String,
    pub inputs: Vec<ManifestInput>,
    pub scheme: Option<SchemeRecord>,
    pub params: MethodParams,
    pub container: String,
    pub digest: ContentDigest,
}

impl MergeManifest {
    /// Sum of the input weights, if every input carries one.
    pub fn weight_sum(&self) -> Option<f64> {
        self.inputs.iter().map(|i| i.weight).sum()
    }
}

pub fn parse_merge_manifest(text: &str) -> std::result::Result<MergeManifest, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn encode_merge_manifest(manifest: &MergeManifest) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    out.push(b'\n');
    out
}

pub fn write_merge_manifest(manifest: &MergeManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_merge_manifest(manifest)).map_err(|e| Error::io(path, e))
}

pub fn read_merge_manifest(path: impl AsRef<Path>) -> Result<MergeManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_merge_manifest(&text).map_err(|e| Error::Manifest {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFileEntry {
    pub id: String,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    /// Container path, relative to the run manifest's directory unless
    /// absolute.
    pub path: PathBuf,
}

/// On-disk run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub checkpoints: Vec<RunFileEntry>,
    /// Present for synthetic runs; defines the synthetic evaluator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<Landscape>,
}

pub fn parse_run_file(text: &str) -> std::result::Result<RunFile, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn write_run_file(run: &RunFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = serde_json::to_vec_pretty(run).expect("run file serializes");
    out.push(b'\n');
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A run manifest resolved against its directory and, optionally, a metrics
/// log that supplies (or overrides) the training losses.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub run: RunManifest,
    pub landscape: Option<Landscape>,
}

pub fn load_run(manifest_path: impl AsRef<Path>, metrics_path: Option<&Path>) -> Result<LoadedRun> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let file = parse_run_file(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_owned(),
        reason: e.to_string(),
    })?;
    let metrics = metrics_path.map(read_metrics_log).transpose()?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    resolve_run(file, root, metrics.as_ref(), manifest_path)
}

fn resolve_run(
    file: RunFile,
    root: &Path,
    metrics: Option<&MetricsLog>,
    manifest_path: &Path,
) -> Result<LoadedRun> {
    let invalid = |reason: String| Error::Manifest {
        path: manifest_path.to_owned(),
        reason,
    };
    let mut records = Vec::with_capacity(file.checkpoints.len());
    for entry in file.checkpoints {
        let row = metrics.and_then(|m| m.get(&entry.id));
        if let Some(row) = row {
            if row.step != entry.step {
                return Err(invalid(format!(
                    "checkpoint {:?} is at step {} but the metrics log says {}",
                    entry.id, entry.step, row.step
                )));
            }
        }
        let train_loss = row
            .map(|r| r.train_loss)
            .or(entry.train_loss)
            .ok_or_else(|| invalid(format!("no training loss for checkpoint {:?}", entry.id)))?;
        let path = if entry.path.is_absolute() {
            entry.path
        } else {
            root.join(entry.path)
        };
        records.push(CheckpointRecord {
            id: entry.id,
            step: entry.step,
            train_loss,
            path,
        });
    }
    Ok(LoadedRun {
        run: RunManifest::new(records)?,
        landscape: file.landscape,
    })
}
