// SPDX-License-Identifier: Apache-2.0

//! Policy learning on recorded demonstrations: ridge-regularized linear
//! behavior cloning, a k-nearest-neighbor policy, and closed-loop evaluation
//! on a simulated reach task.

mod knn;
mod linear;
mod reach;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::PipelineError;
use crate::recorder::{Demonstration, RecorderError};
use crate::simrobot::{KinematicsError, SimError};

pub use knn::KnnPolicy;
pub use linear::{bc_fit_linear, mse, LinearPolicy};
pub use reach::{
    arm_command, collect_demos, demo_config, demo_logs, evaluate, replay, EpisodeTrace, EvalReport, ReachTask,
    ReachTaskConfig,
};

#[derive(Debug, Error)]
pub enum ImitationError {
    #[error("no training data")]
    EmptyDataset,
    #[error("rank-deficient data with ridge 0; set ridge > 0")]
    DegenerateData,
    #[error("ridge must be finite and >= 0, got {0}")]
    BadRidge(f64),
    #[error("k must be in 1..={n}, got {k}")]
    BadK { k: usize, n: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in data")]
    NonFinite,
    #[error("unsupported policy file: {0}")]
    BadPolicyFile(String),
    #[error("bad task config: {0}")]
    BadTask(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

/// Maps an observation vector to an action vector.
pub trait Policy {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>, ImitationError>;
}

/// Observation rows and the matching action rows.
pub type Pairs = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Observation/action pairs pooled from demonstrations.
pub fn pooled(demos: &[Demonstration]) -> Result<Pairs, ImitationError> {
    let mut obs = Vec::new();
    let mut act = Vec::new();
    for d in demos {
        for s in &d.steps {
            obs.push(s.obs.clone());
            act.push(s.action.clone());
        }
    }
    if obs.is_empty() {
        return Err(ImitationError::EmptyDataset);
    }
    check_rows(&obs)?;
    check_rows(&act)?;
    Ok((obs, act))
}

/// All rows the same length and finite.
pub(crate) fn check_rows(rows: &[Vec<f64>]) -> Result<usize, ImitationError> {
    let d = rows.first().ok_or(ImitationError::EmptyDataset)?.len();
    for r in rows {
        if r.len() != d {
            return Err(ImitationError::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        if !r.iter().all(|v| v.is_finite()) {
            return Err(ImitationError::NonFinite);
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Linear,
    Knn,
}

impl std::str::FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Algo::Linear),
            "knn" => Ok(Algo::Knn),
            other => Err(format!("unknown algorithm `{other}` (linear|knn)")),
        }
    }
}

/// A trained policy of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum AnyPolicy {
    Linear(LinearPolicy),
    Knn(KnnPolicy),
}

impl Policy for AnyPolicy {
    fn obs_dim(&self) -> usize {
        match self {
            AnyPolicy::Linear(p) => p.obs_dim(),
            AnyPolicy::Knn(p) => p.obs_dim(),
        }
    }

    fn action_dim(&self) -> usize {
        match self {
            AnyPolicy::Linear(p) => p.action_dim(),
            AnyPolicy::Knn(p) => p.action_dim(),
        }
    }

    fn act(&self, obs: &[f64]) -> Result<Vec<f64>, ImitationError> {
        match self {
            AnyPolicy::Linear(p) => p.act(obs),
            AnyPolicy::Knn(p) => p.act(obs),
        }
    }
}

pub const POLICY_FORMAT: &str = "openteach.policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    policy: AnyPolicy,
}

impl AnyPolicy {
    pub fn train(demos: &[Demonstration], algo: Algo, cfg: &ImitationConfig) -> Result<Self, ImitationError> {
        let (obs, act) = pooled(demos)?;
        Ok(match algo {
            Algo::Linear => AnyPolicy::Linear(bc_fit_linear(&obs, &act, cfg.ridge)?),
            Algo::Knn => AnyPolicy::Knn(KnnPolicy::new(obs, act, cfg.k)?),
        })
    }

    /// JSON policy file (`.otp`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImitationError> {
        let f = PolicyFile {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            policy: self.clone(),
        };
        let text = serde_json::to_string(&f).map_err(std::io::Error::from)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImitationError> {
        let text = std::fs::read_to_string(path)?;
        let f: PolicyFile = serde_json::from_str(&text).map_err(|e| ImitationError::BadPolicyFile(e.to_string()))?;
        if f.format != POLICY_FORMAT || f.version != POLICY_VERSION {
            return Err(ImitationError::BadPolicyFile(format!("{} v{}", f.format, f.version)));
        }
        match &f.policy {
            AnyPolicy::Linear(p) => p.check()?,
            AnyPolicy::Knn(p) => p.check()?,
        }
        Ok(f.policy)
    }
}

/// The `imitation` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitationConfig {
    /// Ridge weight on the linear policy's weights (the bias is not
    /// regularized).
    pub ridge: f64,
    pub k: usize,
    pub demos: usize,
    pub episodes: usize,
    pub task: ReachTaskConfig,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            k: 1,
            demos: 20,
            episodes: 10,
            task: ReachTaskConfig::default(),
        }
    }
}

impl ImitationConfig {
    pub fn validate(&self) -> Result<(), ImitationError> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(ImitationError::BadRidge(self.ridge));
        }
        if self.k == 0 {
            return Err(ImitationError::BadK { k: 0, n: 0 });
        }
        self.task.validate()
    }
}
