//! The optional TOML configuration file.
//!
//! ```toml
//! [train]
//! max_iterations = 5000
//! seed = 7
//!
//! [quant]
//! cholesky_bits = 8
//!
//! [pipeline]
//! window = 5
//! ```
//!
//! Omitted keys keep their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use splatvid::codec::QuantConfig;
use splatvid::optim::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub quant: QuantConfig,
    pub pipeline: PipelineSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Half width of the key-frame selection window.
    pub window: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { window: 10 }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn validate(&self) -> splatvid::Result<()> {
        self.train.validate()?;
        self.quant.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
