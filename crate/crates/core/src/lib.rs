// SPDX-License-Identifier: Apache-2.0

//! Desk-scale VR-style teleoperation: hand keypoints in, simulated robot
//! motion out, with recording and imitation learning on the side.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod geom;
pub mod imitation;
pub mod pipeline;
pub mod recorder;
pub mod retarget;
pub mod simrobot;
pub mod wire;

pub use config::{BusConfig, Config, ConfigError};
pub use geom::Pose;
pub use pipeline::{Lockstep, Pipeline, PipelineConfig, PipelineError, RunReport};
pub use simrobot::{RobotConfig, RobotKind, SimEnv};
pub use wire::{
    Bus, Clock, CommandAction, ControlEvent, ControlKind, Envelope, HandFrame, Payload, RobotCommand, RobotState,
    StatsSample, Timestamp, TopicPolicy,
};
