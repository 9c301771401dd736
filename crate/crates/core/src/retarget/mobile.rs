// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::arm::orientation_delta;
use super::{palm_frame, pinch_detect, ClutchState, MobileBaseTarget, PinchConfig, PinchState, RetargetError};
use crate::wire::HandFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobileRetargetConfig {
    /// Lateral velocity per meter of wrist offset beyond the deadband (1/s).
    pub k_base: f64,
    pub deadband: f64,
    pub lift_range: (f64, f64),
    pub extension_range: (f64, f64),
    /// Index-thumb pinch that toggles the gripper.
    pub pinch: PinchConfig,
}

impl Default for MobileRetargetConfig {
    fn default() -> Self {
        Self {
            k_base: 1.0,
            deadband: 0.02,
            lift_range: (0.0, 1.1),
            extension_range: (0.0, 0.5),
            pinch: PinchConfig::index_thumb(),
        }
    }
}

/// The clutch anchor's end-effector pose encodes the mobile robot as
/// `(extension, 0, lift)` plus wrist orientation.
pub fn mobile_retarget(
    cs: &ClutchState,
    f: &HandFrame,
    ps: &PinchState,
    cfg: &MobileRetargetConfig,
) -> Result<(MobileBaseTarget, PinchState), RetargetError> {
    let anchor = cs.active_anchor()?;
    let palm = palm_frame(f)?;
    let d = palm.origin - anchor.hand.origin;
    let lateral = if d.y.abs() > cfg.deadband {
        cfg.k_base * (d.y.abs() - cfg.deadband) * d.y.signum()
    } else {
        0.0
    };
    let (ps, toggle) = pinch_detect(ps, f, &cfg.pinch);
    Ok((
        MobileBaseTarget {
            base_lateral_velocity: lateral,
            lift_height: (anchor.ee.position.z + cs.resolution * d.z).clamp(cfg.lift_range.0, cfg.lift_range.1),
            arm_extension: (anchor.ee.position.x + cs.resolution * d.x)
                .clamp(cfg.extension_range.0, cfg.extension_range.1),
            wrist_orientation: orientation_delta(anchor, &palm) * anchor.ee.orientation,
            gripper_toggle: toggle.is_some(),
        },
        ps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::retarget::testing::{flat_hand, transformed};
    use crate::retarget::{clutch, ClutchEvent};
    use crate::wire::keypoint;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, UnitQuaternion, Vector3};

    fn start() -> Pose {
        Pose::new(Vector3::new(0.2, 0.0, 0.6), UnitQuaternion::identity())
    }

    fn go(dx: f64, dy: f64, dz: f64) -> MobileBaseTarget {
        let cs = ClutchState::engaged(&flat_hand(), start(), 1.0).unwrap();
        let f = transformed(&flat_hand(), &Rotation3::identity(), Vector3::new(dx, dy, dz));
        mobile_retarget(&cs, &f, &PinchState::default(), &MobileRetargetConfig::default())
            .unwrap()
            .0
    }

    #[test]
    fn vertical_motion_moves_lift_only() {
        let t = go(0.0, 0.0, 0.1);
        assert_relative_eq!(t.lift_height, 0.7, epsilon = 1e-12);
        assert_eq!(t.arm_extension, 0.2);
        assert_eq!(t.base_lateral_velocity, 0.0);
        assert_eq!(t.wrist_orientation, UnitQuaternion::identity());
        assert!(!t.gripper_toggle);
    }

    #[test]
    fn lateral_deadband() {
        assert_eq!(go(0.0, 0.01, 0.0).base_lateral_velocity, 0.0);
        assert_relative_eq!(
            go(0.0, 0.12, 0.0).base_lateral_velocity,
            (0.12 - 0.02) * 1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(go(0.0, -0.12, 0.0).base_lateral_velocity, -0.1, epsilon = 1e-12);
    }

    #[test]
    fn extension_and_lift_are_clamped() {
        let t = go(1.0, 0.0, -2.0);
        assert_eq!(t.arm_extension, 0.5);
        assert_eq!(t.lift_height, 0.0);
    }

    #[test]
    fn index_thumb_pinch_toggles_gripper() {
        let cs = ClutchState::engaged(&flat_hand(), start(), 1.0).unwrap();
        let cfg = MobileRetargetConfig::default();
        let mut ps = PinchState::default();
        let mut toggles = 0;
        for i in 0..20 {
            let mut f = flat_hand();
            f.ts = crate::wire::Timestamp::from_secs_manual(i as f64 * 0.01);
            f.keypoints[keypoint::INDEX_TIP] = f.keypoints[keypoint::THUMB_TIP] + Vector3::new(0.005, 0.0, 0.0);
            let (t, next) = mobile_retarget(&cs, &f, &ps, &cfg).unwrap();
            toggles += t.gripper_toggle as usize;
            ps = next;
        }
        assert_eq!(toggles, 1);
        assert!(ps.gripper_closed);
    }

    #[test]
    fn paused_errors() {
        let cs = ClutchState::engaged(&flat_hand(), start(), 1.0).unwrap();
        let cs = clutch(&cs, ClutchEvent::Pause).unwrap();
        assert_eq!(
            mobile_retarget(
                &cs,
                &flat_hand(),
                &PinchState::default(),
                &MobileRetargetConfig::default()
            ),
            Err(RetargetError::Paused)
        );
    }
}
