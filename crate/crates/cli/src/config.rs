use std::path::Path;

use fabric_inspect::ensemble::EnsembleConfig;
use fabric_inspect::synthfab::CorpusSpec;
use fabric_inspect::{IntensityConfig, TrainConfig, UniformityConfig};
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Every section and key is
/// optional; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub intensity: IntensityConfig,
    pub uniformity: UniformityConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub corpus: CorpusSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.intensity.validate().map_err(|e| e.to_string())?;
        self.uniformity.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.ensemble.validate().map_err(|e| e.to_string())?;
        self.corpus.validate().map_err(|e| e.to_string())
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Invalid(String),
}
