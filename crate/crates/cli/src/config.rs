//! TOML configuration files for the commands with many knobs.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tabstruct::detector::DetectorConfig;
use tabstruct::recognizer::RecognizerConfig;
use tabstruct::trainer::TrainConfig;

/// Parse `path`, rejecting unknown keys; the error names the key.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow!("invalid config {}: {}", path.display(), e.message()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small backbone and input sizes for CPU runs.
    #[default]
    Desk,
    /// Full-size backbone and inputs.
    Full,
}

/// Training file: a model profile, optional explicit model configs and the
/// optimizer schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFile {
    pub profile: Profile,
    pub detector: Option<DetectorConfig>,
    pub recognizer: Option<RecognizerConfig>,
    pub train: TrainConfig,
}

impl TrainFile {
    pub fn detector_config(&self) -> DetectorConfig {
        self.detector.clone().unwrap_or_else(|| match self.profile {
            Profile::Desk => DetectorConfig::desk(),
            Profile::Full => DetectorConfig::default(),
        })
    }

    pub fn recognizer_config(&self) -> RecognizerConfig {
        self.recognizer.clone().unwrap_or_else(|| match self.profile {
            Profile::Desk => RecognizerConfig::desk(),
            Profile::Full => RecognizerConfig::default(),
        })
    }
}
