//! Versioned JSON checkpoint: model config, seed, and every parameter tensor
//! as shape plus row-major values. Floats are written in shortest
//! round-trip form, so save followed by load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "posterfuse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    config: ModelConfig,
    params: Vec<StoredParam>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
}

pub fn to_json(params: &ModelParams, seed: u64) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        seed,
        config: params.config().clone(),
        params: params
            .iter()
            .map(|(name, t)| StoredParam {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&file).map_err(|source| Error::Json {
        context: "serializing checkpoint".into(),
        source,
    })
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|source| Error::Json {
        context: "parsing checkpoint".into(),
        source,
    })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("not a checkpoint (format {:?})", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let named = file
        .params
        .into_iter()
        .map(|p| Ok((p.name, Tensor::new(p.shape, p.values)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        params: ModelParams::from_named(&file.config, named)?,
        seed: file.seed,
    })
}

pub fn save(path: &Path, params: &ModelParams, seed: u64) -> Result<()> {
    fs::write(path, to_json(params, seed)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
