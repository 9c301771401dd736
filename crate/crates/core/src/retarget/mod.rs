// SPDX-License-Identifier: Apache-2.0

//! Mapping human hand frames onto robot targets.
//!
//! Everything here is a pure function of explicit state values and a frame:
//! callers own the [`ClutchState`], [`PinchState`] and the thumb solver's warm
//! start, and get updated copies back.

mod arm;
mod fingers;
mod mobile;
mod palm;
mod pinch;
mod thumb;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose;
use crate::simrobot::IkConfig;
use crate::wire::Finger;

pub use arm::{arm_retarget, clutch, Anchor, ClutchEvent, ClutchState};
pub use fingers::{bend_angle, finger_joint_angles, hand_retarget, HandRetargeter};
pub use mobile::{mobile_retarget, MobileRetargetConfig};
pub use palm::{palm_frame, PalmFrame};
pub use pinch::{pinch_detect, GripperToggleEvent, PinchConfig, PinchState};
pub use thumb::{
    closest_point_in_quad, thumb_ik, thumb_retarget, Homography, ThumbBounds, ThumbBoundsSpec, ThumbIkResult,
};

pub const HAND_JOINTS: usize = 16;
/// Triangle area below which wrist and knuckles count as collinear (m^2).
pub const COLLINEAR_AREA: f64 = 1e-8;
/// Bones shorter than this are treated as missing (m).
pub const MIN_BONE_LENGTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("wrist and knuckle keypoints are collinear")]
    DegenerateHand,
    #[error("{finger:?}: zero-length bone at keypoint {keypoint}")]
    DegenerateFinger { finger: Finger, keypoint: usize },
    #[error("teleoperation is paused")]
    Paused,
    #[error("clutch has no anchor; resume first")]
    NotAnchored,
    #[error("invalid thumb bounds: {0}")]
    BadBounds(String),
    #[error("resolution {0} outside (0, 10]")]
    BadResolution(f64),
    #[error("invalid pinch thresholds: {0}")]
    BadPinchConfig(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("thumb chain must have 4 joints, has {0}")]
    BadThumbChain(usize),
}

/// End-effector goal in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorTarget {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl EndEffectorTarget {
    pub fn from_pose(p: Pose) -> Self {
        Self {
            position: p.position,
            orientation: p.orientation,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.orientation)
    }
}

/// Joint goals for the 16-DOF hand: index, middle, ring (abduction then three
/// flexion joints each), then the four thumb joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandJointTarget {
    pub angles: [f64; HAND_JOINTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobileBaseTarget {
    pub base_lateral_velocity: f64,
    pub lift_height: f64,
    pub arm_extension: f64,
    pub wrist_orientation: UnitQuaternion<f64>,
    pub gripper_toggle: bool,
}

/// Hand-specific retargeting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandRetargetConfig {
    /// Neutral direction of the index, middle and ring fingers in the palm
    /// plane, radians from the wrist-to-index-knuckle axis, positive toward
    /// the thumb.
    pub neutral_rays: [f64; 3],
    pub thumb_bounds: ThumbBoundsSpec,
    pub thumb_ik: IkConfig,
}

impl Default for HandRetargetConfig {
    fn default() -> Self {
        Self {
            neutral_rays: [0.0, -0.1974, -0.3948],
            thumb_bounds: ThumbBoundsSpec::default(),
            thumb_ik: IkConfig {
                damping: 0.01,
                position_tol: 1e-6,
                orientation_tol: 1e-5,
                max_iter: 200,
                max_step: 0.3,
                restarts: 0,
            },
        }
    }
}

/// The `retarget` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetargetConfig {
    pub resolution: f64,
    /// Pinch that toggles the arm's two-fingered gripper (thumb and pinky).
    pub gripper_pinch: PinchConfig,
    pub mobile: MobileRetargetConfig,
    pub hand: HandRetargetConfig,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            gripper_pinch: PinchConfig::default(),
            mobile: MobileRetargetConfig::default(),
            hand: HandRetargetConfig::default(),
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<(), RetargetError> {
        arm::check_resolution(self.resolution)?;
        self.gripper_pinch.validate()?;
        self.mobile.pinch.validate()?;
        ThumbBounds::from_spec(&self.hand.thumb_bounds)?;
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Hand frames built from explicit geometry for tests.
    use nalgebra::{Rotation3, Vector3};

    use crate::wire::{HandFrame, Handedness, Timestamp, NUM_KEYPOINTS};

    /// A flat right hand, palm down, fingers along +x, thumb toward +y.
    pub fn flat_hand() -> HandFrame {
        let mut k = [Vector3::zeros(); NUM_KEYPOINTS];
        let knuckles_y = [0.025, 0.0, -0.02, -0.04];
        // Thumb: out to the +y side and forward.
        for j in 0..4 {
            k[1 + j] = Vector3::new(0.02 + 0.025 * j as f64, 0.04 + 0.01 * j as f64, -0.01);
        }
        for (f, y) in knuckles_y.iter().enumerate() {
            for j in 0..4 {
                k[5 + 4 * f + j] = Vector3::new(0.09 + 0.03 * j as f64, *y, 0.0);
            }
        }
        HandFrame::new(Timestamp::manual(0), Handedness::Right, k)
    }

    pub fn transformed(f: &HandFrame, r: &Rotation3<f64>, t: Vector3<f64>) -> HandFrame {
        let mut g = f.clone();
        for p in g.keypoints.iter_mut() {
            *p = r * *p + t;
        }
        g
    }
}
