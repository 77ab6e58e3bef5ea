//! Per-run manifest: timestamps, backend identity, and the content hash
//! that pins the trace file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use darwin::trace::trace_hash_hex;
use darwin::{SearchConfig, Strategy};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub strategy: Strategy,
    pub prompt: String,
    pub started_at: String,
    pub finished_at: String,
    pub config: SearchConfig,
    pub backend: String,
    /// Trace file name, relative to the manifest.
    pub trace_file: String,
    pub trace_sha256: String,
    pub answer_file: Option<String>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Aborted,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("manifest serialization: {e}")))?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::config(format!("malformed manifest {}: {e}", path.display())))
    }
}

/// Recomputes the trace hash and compares it with the recorded one.
pub fn verify_manifest(manifest_path: &Path) -> Result<bool, CliError> {
    let manifest = RunManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let bytes = std::fs::read(dir.join(&manifest.trace_file))?;
    Ok(trace_hash_hex(&bytes) == manifest.trace_sha256)
}
