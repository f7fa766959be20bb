//! Single-file checkpoints: a JSON body followed by a SHA-256 trailer line.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::optim::Optimizer;

use super::config::TrainingConfig;
use super::corpus::hex;

pub const CHECKPOINT_FORMAT: &str = "checkpoint-v1";
const TRAILER: &str = "\nsha256:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_digest: String,
    pub config: TrainingConfig,
    pub vocab: Vec<String>,
    pub epoch: usize,
    /// Raw weights and masks.
    pub model: LanguageModel,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
    /// Averaged parameter values, present once averaging is active.
    pub averaged: Option<Vec<Vec<f64>>>,
}

impl Checkpoint {
    pub fn new(
        config: &TrainingConfig,
        vocab: Vec<String>,
        epoch: usize,
        model: &LanguageModel,
        optimizer: &Optimizer,
        rng: &ChaCha8Rng,
    ) -> Result<Self> {
        let averaged = if optimizer.averaging_active() {
            Some(optimizer.eval_values(model)?)
        } else {
            None
        };
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config_digest: config.digest(),
            config: config.clone(),
            vocab,
            epoch,
            model: model.clone(),
            optimizer: optimizer.clone(),
            rng: rng.clone(),
            averaged,
        })
    }

    /// The model used for evaluation: averaged values when present.
    pub fn eval_model(&self) -> Result<LanguageModel> {
        let mut m = self.model.clone();
        if let Some(v) = &self.averaged {
            m.load_values(v)?;
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = serde_json::to_vec(self)?;
        let sum = hex(&Sha256::digest(&body));
        body.extend_from_slice(TRAILER.as_bytes());
        body.extend_from_slice(sum.as_bytes());
        body.push(b'\n');
        Ok(body)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("checkpoint is not UTF-8".into()))?;
        let Some(at) = text.rfind(TRAILER) else {
            return Err(Error::Format("checkpoint has no checksum trailer".into()));
        };
        let body = &text[..at];
        let stored = text[at + TRAILER.len()..].trim_end();
        if hex(&Sha256::digest(body.as_bytes())) != stored {
            return Err(Error::ChecksumMismatch);
        }
        let ck: Checkpoint = serde_json::from_str(body)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        if ck.config.digest() != ck.config_digest {
            return Err(Error::Format("config digest does not match stored config".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
