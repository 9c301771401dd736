// SPDX-License-Identifier: Apache-2.0

//! Compiled demonstrations: observation/action pairs plus metadata, stored as
//! magic | version u32 | header_len u32 | JSON header | step count u64 |
//! steps (mono_ns u64, wall_us u64, obs f64s, action f64s), little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::align::{align, default_tolerance};
use super::{Alignment, RecorderError, StreamLog};
use crate::geom::rotation_error;
use crate::simrobot::RobotKind;
use crate::wire::{CommandAction, Payload, RobotCommand, RobotState, Timestamp};

pub const DEMO_MAGIC: [u8; 4] = *b"OTDM";
pub const DEMO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub robot: RobotKind,
    pub config_hash: String,
    pub duration_s: f64,
    pub primary: String,
    pub action_topic: String,
    pub tolerance_s: f64,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Primary samples kept and dropped by the alignment.
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub ts: Timestamp,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub meta: DemoMeta,
    pub steps: Vec<DemoStep>,
}

/// Joint positions, end-effector position, gripper bit; the mobile base adds
/// its planar pose.
pub fn observation_features(s: &RobotState) -> Vec<f64> {
    let mut v = s.joints.q.clone();
    v.extend(s.ee.position.iter());
    v.push(if s.gripper_closed { 1.0 } else { 0.0 });
    if s.kind == RobotKind::Mobile {
        v.extend([s.base.x, s.base.y, s.base.theta]);
    }
    v
}

/// Command relative to the state it acts on. Arm: position delta, rotation
/// vector delta, toggle bit. Hand: absolute joint targets. Mobile: base
/// velocity, lift and extension deltas, wrist rotation vector delta, toggle
/// bit. A bare gripper toggle has no action vector.
pub fn action_features(c: &RobotCommand, s: &RobotState) -> Option<Vec<f64>> {
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    match &c.action {
        CommandAction::Arm { target, gripper_toggle } => {
            let dp = target.position - s.ee.position;
            let dr = rotation_error(&s.ee.orientation, &target.orientation);
            let mut v: Vec<f64> = dp.iter().chain(dr.iter()).copied().collect();
            v.push(bit(*gripper_toggle));
            Some(v)
        }
        CommandAction::Hand { target } => Some(target.angles.to_vec()),
        CommandAction::Mobile { target } => {
            let dr = rotation_error(&s.ee.orientation, &target.wrist_orientation);
            let mut v = vec![
                target.base_lateral_velocity,
                target.lift_height - s.lift,
                target.arm_extension - s.extension,
            ];
            v.extend(dr.iter());
            v.push(bit(target.gripper_toggle));
            Some(v)
        }
        CommandAction::GripperToggle => None,
    }
}

/// Builds a demonstration from recorded logs. Step `i` pairs the observation
/// of primary state `i` with the command matched to state `i + 1`, which is
/// the command that moved the robot out of state `i`.
pub fn compile(
    logs: &[StreamLog],
    primary: &str,
    action_topic: &str,
    tolerance_s: Option<f64>,
    config_hash: &str,
) -> Result<(Demonstration, Alignment), RecorderError> {
    let p = logs
        .iter()
        .find(|l| l.topic == primary)
        .filter(|l| !l.samples.is_empty())
        .ok_or_else(|| RecorderError::EmptyPrimary(primary.into()))?;
    let a = logs
        .iter()
        .find(|l| l.topic == action_topic)
        .ok_or_else(|| RecorderError::BadFormat(format!("no log for action topic `{action_topic}`")))?;
    let tol = match tolerance_s {
        Some(t) => t,
        None => default_tolerance(&[p, a]).ok_or(RecorderError::BadTolerance(0.0))?,
    };
    let pair = [p.clone(), a.clone()];
    let al = align(&pair, primary, tol)?;
    let state = |i: usize| match &p.samples[i].payload {
        Payload::State(s) => Some(s),
        _ => None,
    };
    let command = |j: usize| match &a.samples[j].payload {
        Payload::Command(c) => Some(c),
        _ => None,
    };
    let robot = (0..p.samples.len())
        .find_map(|i| state(i).map(|s| s.kind))
        .ok_or_else(|| RecorderError::BadFormat(format!("`{primary}` carries no robot states")))?;
    let mut steps = Vec::new();
    for w in al.steps.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        if next.primary != cur.primary + 1 {
            continue;
        }
        let (Some(s), Some(c)) = (state(cur.primary), command(next.matches[0])) else {
            continue;
        };
        if let Some(action) = action_features(c, s) {
            steps.push(DemoStep {
                ts: p.samples[cur.primary].ts,
                obs: observation_features(s),
                action,
            });
        }
    }
    let (obs_dim, action_dim) = steps.first().map_or((0, 0), |s| (s.obs.len(), s.action.len()));
    let duration_s = match (steps.first(), steps.last()) {
        (Some(f), Some(l)) => l.ts.secs_since(&f.ts),
        _ => 0.0,
    };
    let demo = Demonstration {
        meta: DemoMeta {
            robot,
            config_hash: config_hash.into(),
            duration_s,
            primary: primary.into(),
            action_topic: action_topic.into(),
            tolerance_s: tol,
            obs_dim,
            action_dim,
            kept: al.kept,
            dropped: al.dropped,
        },
        steps,
    };
    demo.check()?;
    Ok((demo, al))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RecorderError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RecorderError::BadFormat("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RecorderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, RecorderError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, RecorderError> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| RecorderError::BadFormat("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Demonstration {
    /// Every step must match the declared dimensions.
    pub fn check(&self) -> Result<(), RecorderError> {
        for (i, s) in self.steps.iter().enumerate() {
            for (got, expected) in [(s.obs.len(), self.meta.obs_dim), (s.action.len(), self.meta.action_dim)] {
                if got != expected {
                    return Err(RecorderError::DimensionMismatch { step: i, expected, got });
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RecorderError> {
        self.check()?;
        let header = serde_json::to_vec(&self.meta).map_err(std::io::Error::from)?;
        let per_step = 16 + 8 * (self.meta.obs_dim + self.meta.action_dim);
        let mut out = Vec::with_capacity(20 + header.len() + self.steps.len() * per_step);
        out.extend_from_slice(&DEMO_MAGIC);
        out.extend_from_slice(&DEMO_SCHEMA_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.steps.len() as u64).to_le_bytes());
        for s in &self.steps {
            out.extend_from_slice(&s.ts.mono_ns.to_le_bytes());
            out.extend_from_slice(&s.ts.wall_us.to_le_bytes());
            for v in s.obs.iter().chain(&s.action) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RecorderError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != DEMO_MAGIC {
            return Err(RecorderError::BadFormat("not a demonstration file".into()));
        }
        let version = r.u32()?;
        if version != DEMO_SCHEMA_VERSION {
            return Err(RecorderError::SchemaVersionMismatch {
                found: version,
                expected: DEMO_SCHEMA_VERSION,
            });
        }
        let hlen = r.u32()? as usize;
        let meta: DemoMeta =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| RecorderError::BadFormat(format!("header: {e}")))?;
        let n = r.u64()?;
        let per_step = 16 + 8 * (meta.obs_dim + meta.action_dim) as u64;
        if n.checked_mul(per_step) != Some((bytes.len() - r.at) as u64) {
            return Err(RecorderError::BadFormat("step count does not match file size".into()));
        }
        let mut steps = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let ts = Timestamp {
                mono_ns: r.u64()?,
                wall_us: r.u64()?,
            };
            let obs = r.f64s(meta.obs_dim)?;
            let action = r.f64s(meta.action_dim)?;
            steps.push(DemoStep { ts, obs, action });
        }
        Ok(Self { meta, steps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecorderError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecorderError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
