//! The `--config` document.

use std::fs;
use std::path::Path;

use polyocc::data::DatasetConfig;
use polyocc::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples: Option<usize>,
    pub timeout_secs: Option<f64>,
}

/// Every table is optional; absent fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub dataset: Option<DatasetConfig>,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalSection>,
}

impl CliConfig {
    /// Reads either the sectioned form or a bare training config such as a
    /// run directory's `config.toml`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::input(path.display(), e))?;
        let sectioned = table
            .keys()
            .all(|k| matches!(k.as_str(), "dataset" | "train" | "eval"));
        if sectioned {
            toml::from_str(&text).map_err(|e| CliError::input(path.display(), e))
        } else {
            let train =
                TrainConfig::from_toml(&text).map_err(|e| CliError::input(path.display(), e))?;
            Ok(Self {
                train: Some(train),
                ..Self::default()
            })
        }
    }
}
