//! Versioned JSON checkpoints with a SHA-256 integrity check.
//!
//! Floats are written with round-trip precision, so a load returns the
//! saved parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainReport, TwinNet};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "twindrop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs_completed: usize,
    /// SHA-256 of the training data file, when trained from one.
    pub data_sha256: Option<String>,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TwinNet,
    pub meta: CheckpointMeta,
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a TwinNet,
    meta: &'a CheckpointMeta,
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    format: &'static str,
    version: u32,
    sha256: String,
    model: &'a TwinNet,
    meta: &'a CheckpointMeta,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    format: String,
    version: u32,
    sha256: String,
    model: TwinNet,
    meta: CheckpointMeta,
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn body_digest(model: &TwinNet, meta: &CheckpointMeta) -> Result<String> {
    let body = serde_json::to_vec(&Body { model, meta })?;
    Ok(sha256_hex(&body))
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let env = EnvelopeOut {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            sha256: body_digest(&self.model, &self.meta)?,
            model: &self.model,
            meta: &self.meta,
        };
        Ok(serde_json::to_string(&env)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: EnvelopeIn = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("unreadable checkpoint: {e}")))?;
        if env.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint (format `{}`)", env.format)));
        }
        if env.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", env.version)));
        }
        let computed = body_digest(&env.model, &env.meta)?;
        if computed != env.sha256 {
            return Err(Error::Checksum {
                stored: env.sha256,
                computed,
            });
        }
        Ok(Self {
            model: env.model,
            meta: env.meta,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
