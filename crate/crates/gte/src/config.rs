//! JSON run configuration. Every field has a default, so a file only needs
//! the keys it changes; command-line flags override file values.

use std::path::{Path, PathBuf};

use gte_core::encoders::DEFAULT_MAX_VOCAB;
use gte_core::models::ModelConfig;
use gte_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io, parse, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// V-SNLI JSONL written by `prepare`.
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Feature store directory.
    pub features: Option<PathBuf>,
    /// Pretrained vectors, `word v1 .. vd` per line.
    pub embeddings: Option<PathBuf>,
    pub max_vocab: usize,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            train: None,
            dev: None,
            features: None,
            embeddings: None,
            max_vocab: DEFAULT_MAX_VOCAB,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub checkpoint: Option<PathBuf>,
    /// One JSON line of epoch metrics per epoch.
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        serde_json::from_str(&text).map_err(|e| parse(path, e.line(), e.to_string()))
    }
}
