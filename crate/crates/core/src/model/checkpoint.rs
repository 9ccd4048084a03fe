use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CodecModel, ModelError};

pub const CHECKPOINT_FORMAT: &str = "vqsc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing JSON container: config, every parameter, codebooks with
/// their moving-average state, and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: CodecModel,
}

impl Checkpoint {
    pub fn new(model: CodecModel, seed: u64) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, seed, model }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format tag {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        ckpt.model.config.validate()?;
        let mut model = ckpt.model;
        model.zero_grads();
        Ok(Self { model, ..ckpt })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
