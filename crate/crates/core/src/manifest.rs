//! Run manifest: the reproducibility record of one training run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{MetricsProtocol, SpadConfig};
use crate::error::{Result, SpadError};
use crate::metrics::MetricsReport;

pub const MANIFEST_FORMAT: &str = "spad-run-manifest/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Complete,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sigma: f64,
    pub target_count: usize,
    pub train_loss: f64,
}

/// Which on-disk label set each phase read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSources {
    pub train: String,
    pub eval: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub status: RunStatus,
    pub config: SpadConfig,
    pub config_hash: String,
    pub seed: u64,
    pub corpus_hash: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub label_sources: LabelSources,
    pub parameterization: String,
    pub metrics_protocol: MetricsProtocol,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_metrics: Option<MetricsReport>,
}

/// Raised when a manifest was produced from a different corpus than the one on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashWarning {
    pub recorded: String,
    pub live: String,
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| SpadError::SchemaViolation(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| SpadError::io(path, e))
}

pub fn parse_manifest(text: &str) -> Result<RunManifest> {
    let m: RunManifest =
        serde_json::from_str(text).map_err(|e| SpadError::SchemaViolation(e.to_string()))?;
    if m.format != MANIFEST_FORMAT {
        return Err(SpadError::SchemaViolation(format!(
            "unknown manifest format {:?}",
            m.format
        )));
    }
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| SpadError::io(path, e))?;
    parse_manifest(&text)
}

/// Reads a manifest and compares its corpus hash with `live_corpus_hash`.
pub fn read_manifest_verified(
    path: &Path,
    live_corpus_hash: &str,
) -> Result<(RunManifest, Option<HashWarning>)> {
    let m = read_manifest(path)?;
    let warning = (m.corpus_hash != live_corpus_hash).then(|| {
        log::warn!(
            "manifest {} was recorded against corpus {}, live corpus is {}",
            path.display(),
            m.corpus_hash,
            live_corpus_hash
        );
        HashWarning {
            recorded: m.corpus_hash.clone(),
            live: live_corpus_hash.to_string(),
        }
    });
    Ok((m, warning))
}
