// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::RetargetError;
use crate::wire::{keypoint, HandFrame, Timestamp, NUM_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinchConfig {
    pub tip_a: usize,
    pub tip_b: usize,
    /// Distance (m) below which a pinch starts.
    pub close_threshold: f64,
    /// Distance (m) above which the detector re-arms.
    pub release_threshold: f64,
    /// Seconds the pinch must be held before it toggles.
    pub debounce_s: f64,
}

impl Default for PinchConfig {
    fn default() -> Self {
        Self {
            tip_a: keypoint::THUMB_TIP,
            tip_b: keypoint::PINKY_TIP,
            close_threshold: 0.02,
            release_threshold: 0.04,
            debounce_s: 0.05,
        }
    }
}

impl PinchConfig {
    pub fn index_thumb() -> Self {
        Self {
            tip_b: keypoint::INDEX_TIP,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RetargetError> {
        let bad = |m: &str| Err(RetargetError::BadPinchConfig(m.into()));
        if self.tip_a >= NUM_KEYPOINTS || self.tip_b >= NUM_KEYPOINTS || self.tip_a == self.tip_b {
            return bad("tips must be two distinct keypoints");
        }
        if !(self.close_threshold > 0.0 && self.release_threshold > self.close_threshold) {
            return bad("need release > close > 0");
        }
        if !(self.debounce_s >= 0.0) {
            return bad("debounce must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchState {
    pub gripper_closed: bool,
    pub below_since: Option<Timestamp>,
    pub armed: bool,
}

impl Default for PinchState {
    fn default() -> Self {
        Self {
            gripper_closed: false,
            below_since: None,
            armed: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperToggleEvent {
    /// Gripper state after the toggle.
    pub closed: bool,
    pub ts: Timestamp,
}

/// Debounced, hysteretic pinch toggle. Frame timestamps drive the debounce.
pub fn pinch_detect(ps: &PinchState, f: &HandFrame, cfg: &PinchConfig) -> (PinchState, Option<GripperToggleEvent>) {
    let d = (f.keypoints[cfg.tip_a] - f.keypoints[cfg.tip_b]).norm();
    let mut next = *ps;
    if d < cfg.close_threshold {
        let since = *next.below_since.get_or_insert(f.ts);
        if next.armed && f.ts.secs_since(&since) >= cfg.debounce_s {
            next.armed = false;
            next.gripper_closed = !next.gripper_closed;
            return (
                next,
                Some(GripperToggleEvent {
                    closed: next.gripper_closed,
                    ts: f.ts,
                }),
            );
        }
    } else {
        next.below_since = None;
        if d > cfg.release_threshold {
            next.armed = true;
        }
    }
    (next, None)
}
