//! Safetensors checkpoints carrying a JSON model configuration in the header.

use std::collections::HashMap;
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{DType, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::ParamStore;
use crate::error::{Error, Result};

const CONFIG_KEY: &str = "config";
const KIND_KEY: &str = "kind";

/// Write every parameter and buffer of `store` (as f32) with `config`.
pub fn save<C: Serialize>(path: &Path, kind: &str, config: &C, store: &ParamStore) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = store
        .entries()
        .into_iter()
        .map(|(k, p)| Ok((k, p.var.as_tensor().to_dtype(DType::F32)?)))
        .collect::<Result<_>>()?;
    let mut meta = HashMap::new();
    meta.insert(CONFIG_KEY.to_string(), serde_json::to_string(config)?);
    meta.insert(KIND_KEY.to_string(), kind.to_string());
    safetensors::serialize_to_file(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(meta), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Read the configuration stored in a checkpoint header.
pub fn read_config<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<C> {
    let bytes = std::fs::read(path)?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let info = meta
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing metadata", path.display())))?;
    match info.get(KIND_KEY) {
        Some(k) if k == kind => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "{}: expected a `{kind}` checkpoint, found {other:?}",
                path.display()
            )))
        }
    }
    let cfg = info
        .get(CONFIG_KEY)
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing config", path.display())))?;
    Ok(serde_json::from_str(cfg)?)
}

/// Load tensors into an already-constructed store. Every entry of the store
/// must be present in the file with a matching shape.
pub fn load_into(path: &Path, store: &ParamStore) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    for (name, _) in store.entries() {
        let view = st
            .tensor(&name)
            .map_err(|_| Error::Checkpoint(format!("{}: missing tensor `{name}`", path.display())))?;
        let t = view.load(store.device())?;
        store.assign(&name, &t)?;
    }
    Ok(())
}
