//! Archives, configuration documents, checkpoints and logs.

pub mod archive;
pub mod config;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use archive::{Archive, ArchiveKind, Manifest};
pub use config::RunConfig;

use crate::error::{Error, Result};
use crate::models::{EpochLog, PreparedDataset, TrainedModel};

/// Reproducibility stamp written into every output.
pub type Stamp = BTreeMap<String, String>;

pub fn stamp(command: &str, config_bytes: &[u8], seed: u64) -> Stamp {
    BTreeMap::from([
        ("command".to_string(), command.to_string()),
        ("config_sha256".to_string(), hex::encode(Sha256::digest(config_bytes))),
        ("seed".to_string(), seed.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// A trained model at either precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyModel {
    F32(TrainedModel<f32>),
    F64(TrainedModel<f64>),
}

impl AnyModel {
    pub fn predict(&self, data: &PreparedDataset) -> Result<Vec<Vec<f64>>> {
        match self {
            AnyModel::F32(m) => m.predict(data),
            AnyModel::F64(m) => m.predict(data),
        }
    }

    /// Reconstructed clean channels (YAE only), `[sample][channel][point]`.
    pub fn reconstruct(&self, data: &PreparedDataset) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..data.len()).collect();
        match self {
            AnyModel::F32(m) => m.network()?.reconstruct(data, &idx),
            AnyModel::F64(m) => m.network()?.reconstruct(data, &idx),
        }
    }

    pub fn metabolites(&self) -> &[String] {
        match self {
            AnyModel::F32(m) => &m.metabolites,
            AnyModel::F64(m) => &m.metabolites,
        }
    }

    pub fn config(&self) -> &crate::models::ModelConfig {
        match self {
            AnyModel::F32(m) => &m.config,
            AnyModel::F64(m) => &m.config,
        }
    }

    pub fn log(&self) -> &[EpochLog] {
        match self {
            AnyModel::F32(m) => &m.log,
            AnyModel::F64(m) => &m.log,
        }
    }
}

/// Checkpoint file: the trained model plus its stamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub stamp: Stamp,
    pub model: AnyModel,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Load a checkpoint, dispatching on its recorded precision.
    pub fn read(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = read_json(path)?;
        let stamp: Stamp = serde_json::from_value(raw.get("stamp").cloned().unwrap_or_default())?;
        let model = raw.get("model").cloned().ok_or_else(|| Error::State("checkpoint has no model".into()))?;
        let model = match model.get("scalar").and_then(|s| s.as_str()) {
            Some("f32") => AnyModel::F32(serde_json::from_value(model)?),
            Some("f64") => AnyModel::F64(serde_json::from_value(model)?),
            other => return Err(Error::State(format!("unknown checkpoint precision {other:?}"))),
        };
        Ok(Self { stamp, model })
    }
}

/// Per-epoch training log as CSV.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["epoch", "train_loss", "val_loss", "val_mae", "w_q"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for e in log {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), opt(e.val_loss), opt(e.val_mae), opt(e.w_q)])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
