// SPDX-License-Identifier: Apache-2.0

//! JSON text messages exchanged with the operator console over WebSocket.
//! `docs/protocol.md` is the reference for these shapes.

use serde::{Deserialize, Serialize};

use crate::geom::quat_to_wxyz;
use crate::simrobot::RobotKind;
use crate::wire::{
    ControlEvent, ControlKind, HandFrame, Handedness, RobotState, StatsSample, Timestamp, NUM_KEYPOINTS,
};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlMsg {
    Pause,
    Resume,
    SetResolution { value: f64 },
    ResetAnchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandMsg {
    pub hand: Handedness,
    /// 21 points `[x, y, z]` in meters, headset frame (x forward, y left, z up).
    pub keypoints: Vec<[f64; 3]>,
    #[serde(default = "one")]
    pub confidence: f64,
    /// Client clock, informational only; frames are stamped on arrival.
    #[serde(default)]
    pub client_ts_ms: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// Console to pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Hand(HandMsg),
    Control(ControlMsg),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EePose {
    pub position: [f64; 3],
    pub orientation_wxyz: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMsg {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub seq: u64,
    pub robot: RobotKind,
    pub q: Vec<f64>,
    pub ee: EePose,
    pub gripper_closed: bool,
    pub base: BaseMsg,
    pub lift: f64,
    pub extension: f64,
    pub paused: bool,
    pub resolution: f64,
    pub source_seq: Option<u64>,
    pub sim_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsMsg {
    pub topic: String,
    pub measured_hz: f64,
    pub latency_p50_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub dropped: u64,
    pub stale: bool,
}

/// Pipeline to console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Hello { protocol: u32, robot: RobotKind },
    State(StateMsg),
    Stats(StatsMsg),
    Error { reason: String },
}

/// What an inbound message becomes on the bus.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Hand(HandFrame),
    Control(ControlEvent),
}

/// Parses and validates one inbound text message, stamping it with `now`.
pub fn decode_inbound(text: &str, now: Timestamp) -> Result<Decoded, String> {
    let msg: Inbound = serde_json::from_str(text).map_err(|e| format!("bad message: {e}"))?;
    match msg {
        Inbound::Hand(h) => {
            if h.keypoints.len() != NUM_KEYPOINTS {
                return Err(format!("expected {NUM_KEYPOINTS} keypoints, got {}", h.keypoints.len()));
            }
            let mut k = [nalgebra::Vector3::zeros(); NUM_KEYPOINTS];
            for (dst, src) in k.iter_mut().zip(&h.keypoints) {
                *dst = nalgebra::Vector3::from(*src);
            }
            let mut f = HandFrame::new(now, h.hand, k);
            f.confidence = h.confidence;
            f.validate().map_err(|e| e.to_string())?;
            Ok(Decoded::Hand(f))
        }
        Inbound::Control(c) => {
            let kind = match c {
                ControlMsg::Pause => ControlKind::Pause,
                ControlMsg::Resume => ControlKind::Resume,
                ControlMsg::SetResolution { value } => ControlKind::SetResolution(value),
                ControlMsg::ResetAnchor => ControlKind::ResetAnchor,
            };
            let ev = ControlEvent { kind, ts: now };
            ev.validate().map_err(|e| e.to_string())?;
            Ok(Decoded::Control(ev))
        }
    }
}

pub fn state_msg(seq: u64, s: &RobotState) -> Outbound {
    Outbound::State(StateMsg {
        seq,
        robot: s.kind,
        q: s.joints.q.clone(),
        ee: EePose {
            position: [s.ee.position.x, s.ee.position.y, s.ee.position.z],
            orientation_wxyz: quat_to_wxyz(&s.ee.orientation),
        },
        gripper_closed: s.gripper_closed,
        base: BaseMsg {
            x: s.base.x,
            y: s.base.y,
            theta: s.base.theta,
        },
        lift: s.lift,
        extension: s.extension,
        paused: s.paused,
        resolution: s.resolution,
        source_seq: s.source_seq,
        sim_time_s: s.joints.ts.secs(),
    })
}

pub fn stats_msg(s: &StatsSample) -> Outbound {
    Outbound::Stats(StatsMsg {
        topic: s.topic.clone(),
        measured_hz: s.measured_hz,
        latency_p50_ms: s.latency_p50_ms,
        latency_p99_ms: s.latency_p99_ms,
        dropped: s.dropped,
        stale: s.stale,
    })
}
