// SPDX-License-Identifier: Apache-2.0

//! The teleoperation node graph: hand source, keypoint transformer, operator,
//! controller and a stats probe, wired over the topic bus, plus the WebSocket
//! gateway that lets a browser console stand in for the headset.

mod bench;
mod console;
mod gateway;
mod lockstep;
mod nodes;
pub mod protocol;
mod rate;
mod runner;
mod synth;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retarget::RetargetError;
use crate::simrobot::{RobotKind, SimError};
use crate::wire::{Bus, HandFrame, PayloadKind, TopicPolicy, WireError};

pub use bench::{
    bench_config, parse_preset, run_bench, BenchResult, LATENCY_P99_MAX_MS, RATE_PRESETS, STATE_RATE_TOL, TICK_RATE_TOL,
};
pub use console::StaticServer;
pub use gateway::Gateway;
pub use lockstep::Lockstep;
pub use nodes::{merge_commands, percentile, Controller, Operator, StatsTracker};
pub use rate::RateLimiter;
pub use runner::{Pipeline, RunReport};
pub use synth::{template_neutral_rays, HandPose, HandScript, SynthSource, Waypoint};

pub mod topics {
    pub const HAND_RAW: &str = "hand/raw";
    pub const HAND: &str = "hand/keypoints";
    pub const CONTROL: &str = "control";
    pub const COMMAND: &str = "robot/cmd";
    pub const STATE: &str = "robot/state";
    pub const STATS: &str = "stats";
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("bad hand script: {0}")]
    BadScript(String),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default subscription policy per topic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsConfig {
    pub hand_raw: TopicPolicy,
    pub hand: TopicPolicy,
    pub control: TopicPolicy,
    pub command: TopicPolicy,
    pub state: TopicPolicy,
    pub stats: TopicPolicy,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            hand_raw: TopicPolicy::Conflate,
            hand: TopicPolicy::Conflate,
            control: TopicPolicy::queue(256),
            command: TopicPolicy::queue(64),
            state: TopicPolicy::Conflate,
            stats: TopicPolicy::queue(16),
        }
    }
}

impl TopicsConfig {
    pub fn register(&self, bus: &Bus) -> Result<(), WireError> {
        bus.register(topics::HAND_RAW, PayloadKind::HandFrame, self.hand_raw)?;
        bus.register(topics::HAND, PayloadKind::HandFrame, self.hand)?;
        bus.register(topics::CONTROL, PayloadKind::ControlEvent, self.control)?;
        bus.register(topics::COMMAND, PayloadKind::RobotCommand, self.command)?;
        bus.register(topics::STATE, PayloadKind::RobotState, self.state)?;
        bus.register(topics::STATS, PayloadKind::StatsSample, self.stats)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synth,
    Console,
}

impl std::str::FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synth" => Ok(SourceKind::Synth),
            "console" => Ok(SourceKind::Console),
            other => Err(format!("unknown source `{other}` (synth|console)")),
        }
    }
}

/// Rigid map from the tracker frame into the robot base axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeypointTransform {
    /// Roll, pitch, yaw in radians.
    pub rpy: [f64; 3],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Default for KeypointTransform {
    fn default() -> Self {
        Self {
            rpy: [0.0; 3],
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl KeypointTransform {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Validates `f` and returns it mapped into robot axes.
    pub fn apply(&self, f: &HandFrame) -> Result<HandFrame, WireError> {
        f.validate()?;
        if self.is_identity() {
            return Ok(f.clone());
        }
        let r = Rotation3::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]);
        let t = Vector3::from(self.translation);
        let mut out = f.clone();
        for p in out.keypoints.iter_mut() {
            *p = r * *p * self.scale + t;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub script: HandScript,
    /// Frame rate; defaults to the pipeline rate.
    pub hz: Option<f64>,
    pub seed: u64,
    /// Half-width of uniform keypoint noise, meters.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            script: HandScript::default(),
            hz: None,
            seed: 0,
            noise: 0.0,
        }
    }
}

/// The `pipeline` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub robot: RobotKind,
    /// Controller tick rate (Hz).
    pub rate_hz: f64,
    pub source: SourceKind,
    pub synth: SynthConfig,
    pub transform: KeypointTransform,
    /// Artificial processing delay in the keypoint transformer, ms.
    pub inject_delay_ms: f64,
    /// Engage the clutch on the first hand frame instead of waiting for a
    /// resume event.
    pub auto_engage: bool,
    /// WebSocket gateway address; the gateway runs when the source is the
    /// console or when this is set explicitly.
    pub ws_addr: Option<String>,
    /// Outbound gateway rate cap (Hz).
    pub ws_rate_hz: f64,
    pub stats_period_s: f64,
    pub stale_after_s: f64,
    /// Serve the console bundle over HTTP on this address.
    pub console_addr: Option<String>,
    /// Directory holding the built console bundle.
    pub console_dir: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            robot: RobotKind::Arm,
            rate_hz: 90.0,
            source: SourceKind::Synth,
            synth: SynthConfig::default(),
            transform: KeypointTransform::default(),
            inject_delay_ms: 0.0,
            auto_engage: true,
            ws_addr: None,
            ws_rate_hz: 30.0,
            stats_period_s: 1.0,
            stale_after_s: 1.0,
            console_addr: None,
            console_dir: "console/dist".into(),
        }
    }
}

pub const DEFAULT_WS_ADDR: &str = "127.0.0.1:8765";

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("rate_hz", self.rate_hz),
            ("ws_rate_hz", self.ws_rate_hz),
            ("stats_period_s", self.stats_period_s),
            ("stale_after_s", self.stale_after_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.inject_delay_ms >= 0.0 && self.inject_delay_ms.is_finite()) {
            return Err(PipelineError::Config("inject_delay_ms must be >= 0".into()));
        }
        if !(self.transform.scale > 0.0) {
            return Err(PipelineError::Config("transform scale must be positive".into()));
        }
        self.synth_source()?;
        Ok(())
    }

    pub fn synth_source(&self) -> Result<SynthSource, PipelineError> {
        SynthSource::new(
            self.synth.script.clone(),
            self.synth.hz.unwrap_or(self.rate_hz),
            self.synth.seed,
            self.synth.noise,
        )
    }

    pub fn gateway_addr(&self) -> Option<String> {
        match (&self.ws_addr, self.source) {
            (Some(a), _) => Some(a.clone()),
            (None, SourceKind::Console) => Some(DEFAULT_WS_ADDR.into()),
            (None, SourceKind::Synth) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Timestamp;

    #[test]
    fn transform_validates_and_maps() {
        let f = HandPose::default().frame(Timestamp::manual(0));
        let id = KeypointTransform::default();
        assert_eq!(id.apply(&f).unwrap(), f);
        let t = KeypointTransform {
            rpy: [0.0, 0.0, std::f64::consts::FRAC_PI_2],
            translation: [0.0, 0.0, -1.0],
            scale: 1.0,
        };
        let g = t.apply(&f).unwrap();
        assert!((g.wrist() - Vector3::new(0.0, 0.0, 0.0)).norm() < 1e-12);
        let mut bad = f.clone();
        bad.keypoints[3].x = f64::NAN;
        assert!(id.apply(&bad).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            rate_hz: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(PipelineConfig::default().gateway_addr(), None);
        let console = PipelineConfig {
            source: SourceKind::Console,
            ..Default::default()
        };
        assert_eq!(console.gateway_addr().as_deref(), Some(DEFAULT_WS_ADDR));
    }
}
