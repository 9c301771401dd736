// SPDX-License-Identifier: Apache-2.0

//! Typed message bodies carried by [`Envelope`]s.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Timestamp, WireError};
use crate::geom::Pose;
use crate::retarget::{EndEffectorTarget, HandJointTarget, MobileBaseTarget};
use crate::simrobot::{BasePose, JointState, RobotKind};

pub const NUM_KEYPOINTS: usize = 21;

/// Keypoint layout: wrist first, then four points per finger from knuckle to
/// tip, thumb through pinky.
pub mod keypoint {
    pub const WRIST: usize = 0;
    pub const THUMB_TIP: usize = 4;
    pub const INDEX_KNUCKLE: usize = 5;
    pub const INDEX_TIP: usize = 8;
    pub const MIDDLE_TIP: usize = 12;
    pub const PINKY_KNUCKLE: usize = 17;
    pub const PINKY_TIP: usize = 20;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];

    /// Keypoint indices from knuckle to tip.
    pub fn indices(self) -> [usize; 4] {
        let base = 1 + 4 * self as usize;
        [base, base + 1, base + 2, base + 3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

/// One estimator sample: 21 keypoints in the headset frame (meters, z-up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandFrame {
    pub ts: Timestamp,
    pub hand: Handedness,
    pub keypoints: [Vector3<f64>; NUM_KEYPOINTS],
    pub confidence: f64,
}

impl HandFrame {
    pub fn new(ts: Timestamp, hand: Handedness, keypoints: [Vector3<f64>; NUM_KEYPOINTS]) -> Self {
        Self {
            ts,
            hand,
            keypoints,
            confidence: 1.0,
        }
    }

    pub fn wrist(&self) -> Vector3<f64> {
        self.keypoints[keypoint::WRIST]
    }

    pub fn finger(&self, finger: Finger) -> [Vector3<f64>; 4] {
        finger.indices().map(|i| self.keypoints[i])
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if let Some(i) = self.keypoints.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(WireError::InvalidHandFrame(format!("keypoint {i} is not finite")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(WireError::InvalidHandFrame(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// What the operator asks the controller to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandAction {
    Arm {
        target: EndEffectorTarget,
        gripper_toggle: bool,
    },
    Hand {
        target: HandJointTarget,
    },
    Mobile {
        target: MobileBaseTarget,
    },
    GripperToggle,
}

impl CommandAction {
    pub fn robot_kind(&self) -> Option<RobotKind> {
        match self {
            CommandAction::Arm { .. } => Some(RobotKind::Arm),
            CommandAction::Hand { .. } => Some(RobotKind::Hand),
            CommandAction::Mobile { .. } => Some(RobotKind::Mobile),
            CommandAction::GripperToggle => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    /// Bus sequence number of the hand frame this command was computed from.
    pub source_seq: u64,
    /// Envelope timestamp of that hand frame.
    pub source_ts: Timestamp,
    pub paused: bool,
    pub resolution: f64,
    pub action: CommandAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub kind: RobotKind,
    pub joints: JointState,
    /// Forward kinematics of `joints.q` (for the mobile base: extension along
    /// the arm axis, lift height, and wrist orientation).
    pub ee: Pose,
    pub gripper_closed: bool,
    pub base: BasePose,
    pub lift: f64,
    pub extension: f64,
    pub source_seq: Option<u64>,
    pub source_ts: Option<Timestamp>,
    pub paused: bool,
    pub resolution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ControlKind {
    Pause,
    Resume,
    SetResolution(f64),
    ResetAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub kind: ControlKind,
    pub ts: Timestamp,
}

pub const RESOLUTION_MAX: f64 = 10.0;

impl ControlEvent {
    pub fn validate(&self) -> Result<(), WireError> {
        if let ControlKind::SetResolution(v) = self.kind {
            if !(v > 0.0 && v <= RESOLUTION_MAX) {
                return Err(WireError::InvalidControl(format!(
                    "resolution {v} outside (0, {RESOLUTION_MAX}]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-window pipeline health sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSample {
    pub topic: String,
    pub measured_hz: f64,
    /// `None` when no latency pairs were observed in the window.
    pub latency_p50_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub dropped: u64,
    /// No hand frame for more than a second.
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PayloadKind {
    HandFrame = 1,
    RobotCommand = 2,
    RobotState = 3,
    ControlEvent = 4,
    StatsSample = 5,
}

impl PayloadKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => PayloadKind::HandFrame,
            2 => PayloadKind::RobotCommand,
            3 => PayloadKind::RobotState,
            4 => PayloadKind::ControlEvent,
            5 => PayloadKind::StatsSample,
            _ => return None,
        })
    }
}

// Payloads travel inside shared envelopes; boxing the hand frame would add an
// allocation per frame for no saving.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum Payload {
    Hand(HandFrame),
    Command(RobotCommand),
    State(RobotState),
    Control(ControlEvent),
    Stats(StatsSample),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Hand(_) => PayloadKind::HandFrame,
            Payload::Command(_) => PayloadKind::RobotCommand,
            Payload::State(_) => PayloadKind::RobotState,
            Payload::Control(_) => PayloadKind::ControlEvent,
            Payload::Stats(_) => PayloadKind::StatsSample,
        }
    }

    pub fn as_hand(&self) -> Option<&HandFrame> {
        match self {
            Payload::Hand(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_command(&self) -> Option<&RobotCommand> {
        match self {
            Payload::Command(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_state(&self) -> Option<&RobotState> {
        match self {
            Payload::State(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_control(&self) -> Option<&ControlEvent> {
        match self {
            Payload::Control(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_stats(&self) -> Option<&StatsSample> {
        match self {
            Payload::Stats(s) => Some(s),
            _ => None,
        }
    }
}

/// A payload stamped with its topic and per-topic sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    pub seq: u64,
    pub ts: Timestamp,
    pub payload: Payload,
}
