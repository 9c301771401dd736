// SPDX-License-Identifier: Apache-2.0

//! The single structured config file (TOML). Every section has defaults, so an
//! empty file is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imitation::ImitationConfig;
use crate::pipeline::{PipelineConfig, TopicsConfig};
use crate::recorder::RecorderConfig;
use crate::retarget::RetargetConfig;
use crate::simrobot::RobotConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Bus endpoints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    /// Export every topic over TCP on this address so other processes can
    /// subscribe.
    pub export_addr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bus: BusConfig,
    pub topics: TopicsConfig,
    pub robot: RobotConfig,
    pub retarget: RetargetConfig,
    pub pipeline: PipelineConfig,
    pub recorder: RecorderConfig,
    pub imitation: ImitationConfig,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.robot.validate().map_err(|e| bad(&e))?;
        self.retarget.validate().map_err(|e| bad(&e))?;
        self.pipeline.validate().map_err(|e| bad(&e))?;
        self.recorder.validate().map_err(|e| bad(&e))?;
        self.imitation.validate().map_err(|e| bad(&e))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; stamped into demonstrations.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
