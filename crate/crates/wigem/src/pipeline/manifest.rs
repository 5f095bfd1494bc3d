//! Run-directory manifest: per-stage digests of inputs and outputs.
//!
//! Every stage records what it read and wrote; the next stage refuses to
//! run when a required artifact is missing or its bytes no longer match
//! what the producing stage recorded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct StageEntry {
    /// Digest of the config snapshot the stage ran under.
    pub config_digest: String,
    /// Relative path -> content digest for everything the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path -> content digest for everything the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(run_dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    /// Check that `rel_path` exists, was produced by `stage`, and still has
    /// the bytes that stage recorded.
    pub fn verify_artifact(
        &self,
        run_dir: &Path,
        rel_path: &str,
        stage: &str,
    ) -> Result<(), PipelineError> {
        let missing = || PipelineError::MissingArtifact {
            path: rel_path.to_owned(),
            stage: stage.to_owned(),
        };
        let entry = self.stages.get(stage).ok_or_else(missing)?;
        let recorded = entry.outputs.get(rel_path).ok_or_else(missing)?;
        let path = run_dir.join(rel_path);
        if !path.exists() {
            return Err(missing());
        }
        let current = digest_file(&path)?;
        if &current != recorded {
            return Err(PipelineError::StaleArtifact {
                path: rel_path.to_owned(),
                stage: stage.to_owned(),
            });
        }
        Ok(())
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn digest_file(path: &Path) -> Result<String, PipelineError> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
