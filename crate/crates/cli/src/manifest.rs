//! Run manifests: what a command was asked to do, written before any output.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointId {
    pub path: PathBuf,
    /// Hex digest of the file contents.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub checkpoints: Vec<CheckpointId>,
    pub tool_version: String,
    /// Resolved settings after config files and overrides were applied.
    pub settings: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoints: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            settings: serde_json::Value::Null,
        }
    }

    pub fn checkpoint(mut self, path: &Path) -> Result<Self> {
        self.checkpoints.push(CheckpointId { path: path.to_path_buf(), digest: digest(path)? });
        Ok(self)
    }

    /// Write into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_vec_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("checkpoint {} not readable", path.display()))?;
    let mut h = DefaultHasher::new();
    h.write(&bytes);
    Ok(format!("{:016x}-{}", h.finish(), bytes.len()))
}
