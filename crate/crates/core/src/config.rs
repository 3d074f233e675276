//! JSON run configuration. Every field is optional; unknown keys are errors.
//! Command-line flags take precedence over the file, the file over defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bodymodel::{build_default_model, BodyModel, NUM_JOINTS};
use crate::synthdata::DatasetConfig;
use crate::trainer::{EvalConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Body-model asset; the built-in model is used when absent.
    pub model: Option<PathBuf>,
    /// Seed of the built-in model.
    pub model_seed: u64,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfigFile = serde_json::from_str(text).map_err(|e| Error::config(field_of(&e), e.to_string()))?;
        Ok(cfg)
    }

    /// Loads `path`, or the defaults when `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate(NUM_JOINTS)?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn body_model(&self) -> Result<BodyModel> {
        match &self.model {
            Some(p) => BodyModel::load(p),
            None => Ok(build_default_model(self.model_seed)),
        }
    }
}

/// Best-effort field name from a serde error ("unknown field `x`" and friends).
fn field_of(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "config".into())
}
