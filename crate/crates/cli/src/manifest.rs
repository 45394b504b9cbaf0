//! Run manifests: a per-command record of the configuration snapshot,
//! input digests, and every artifact the run wrote, with content digests,
//! so any artifact can be reproduced from its recorded config.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub created_unix_ms: u128,
    pub config: serde_json::Value,
    pub inputs: Vec<ArtifactRef>,
    pub artifacts: Vec<ArtifactRef>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            tool: "nascty",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(ArtifactRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_artifact(&mut self, path: &Path) -> CliResult<()> {
        self.artifacts.push(ArtifactRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Writes the manifest itself (always named `manifest.json` unless the
    /// caller picks another name).
    pub fn write(&self, path: &Path) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(path.to_path_buf())
    }
}
