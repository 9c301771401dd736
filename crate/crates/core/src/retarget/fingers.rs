// SPDX-License-Identifier: Apache-2.0

use nalgebra::Vector3;

use super::{
    palm_frame, thumb_ik, thumb_retarget, HandJointTarget, HandRetargetConfig, PalmFrame, RetargetError, ThumbBounds,
    ThumbIkResult, HAND_JOINTS, MIN_BONE_LENGTH,
};
use crate::simrobot::KinematicModel;
use crate::wire::{keypoint, Finger, HandFrame};

const ROBOT_FINGERS: [Finger; 3] = [Finger::Index, Finger::Middle, Finger::Ring];

/// Angle between the bones `a -> b` and `b -> c`: zero when straight.
pub fn bend_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let u = b - a;
    let v = c - b;
    (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
}

fn finger_angles(f: &HandFrame, finger: Finger, palm: &PalmFrame, neutral: f64) -> Result<[f64; 4], RetargetError> {
    let idx = finger.indices();
    let chain = [
        f.keypoints[keypoint::WRIST],
        f.keypoints[idx[0]],
        f.keypoints[idx[1]],
        f.keypoints[idx[2]],
        f.keypoints[idx[3]],
    ];
    if !chain.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(RetargetError::NonFinite);
    }
    for (i, w) in chain.windows(2).enumerate() {
        if (w[1] - w[0]).norm() <= MIN_BONE_LENGTH {
            let keypoint = if i == 0 { keypoint::WRIST } else { idx[i - 1] };
            return Err(RetargetError::DegenerateFinger { finger, keypoint });
        }
    }
    let proximal = palm.rotation.transpose() * (chain[2] - chain[1]);
    let abduction = if proximal.x.hypot(proximal.y) > MIN_BONE_LENGTH {
        (-proximal.y).atan2(proximal.x) - neutral
    } else {
        0.0
    };
    Ok([
        abduction,
        bend_angle(&chain[0], &chain[1], &chain[2]),
        bend_angle(&chain[1], &chain[2], &chain[3]),
        bend_angle(&chain[2], &chain[3], &chain[4]),
    ])
}

/// Everything the hand mapping needs that does not change per frame.
#[derive(Debug, Clone)]
pub struct HandRetargeter {
    pub neutral_rays: [f64; 3],
    pub limits: Vec<(f64, f64)>,
    pub thumb_chain: KinematicModel,
    pub thumb_bounds: ThumbBounds,
    pub thumb_ik: crate::simrobot::IkConfig,
}

impl HandRetargeter {
    pub fn new(
        cfg: &HandRetargetConfig,
        limits: Vec<(f64, f64)>,
        thumb_chain: KinematicModel,
    ) -> Result<Self, RetargetError> {
        if limits.len() != HAND_JOINTS {
            return Err(RetargetError::BadBounds(format!(
                "expected {HAND_JOINTS} joint limits, got {}",
                limits.len()
            )));
        }
        if thumb_chain.dof() != 4 {
            return Err(RetargetError::BadThumbChain(thumb_chain.dof()));
        }
        Ok(Self {
            neutral_rays: cfg.neutral_rays,
            limits,
            thumb_chain,
            thumb_bounds: ThumbBounds::from_spec(&cfg.thumb_bounds)?,
            thumb_ik: cfg.thumb_ik,
        })
    }
}

/// Unclamped angles of the index, middle and ring fingers: abduction, then
/// flexion at the knuckle and the two interior joints.
pub fn finger_joint_angles(f: &HandFrame, neutral_rays: &[f64; 3]) -> Result<[f64; 12], RetargetError> {
    let palm = palm_frame(f)?;
    let mut out = [0.0; 12];
    for (i, finger) in ROBOT_FINGERS.iter().enumerate() {
        let a = finger_angles(f, *finger, &palm, neutral_rays[i])?;
        out[4 * i..4 * i + 4].copy_from_slice(&a);
    }
    Ok(out)
}

/// Full 16-joint target: finger angles, then the thumb solved from the
/// retargeted tip, warm-started from `thumb_seed`. All channels are clamped
/// to the joint limits.
pub fn hand_retarget(
    f: &HandFrame,
    r: &HandRetargeter,
    thumb_seed: &[f64; 4],
) -> Result<(HandJointTarget, ThumbIkResult), RetargetError> {
    let fingers = finger_joint_angles(f, &r.neutral_rays)?;
    let tip = thumb_retarget(f, &r.thumb_bounds)?;
    let thumb = thumb_ik(&tip, &r.thumb_chain, thumb_seed, &r.thumb_ik)?;
    let mut angles = [0.0; HAND_JOINTS];
    angles[..12].copy_from_slice(&fingers);
    angles[12..].copy_from_slice(&thumb.q);
    for (a, (lo, hi)) in angles.iter_mut().zip(&r.limits) {
        *a = a.clamp(*lo, *hi);
    }
    Ok((HandJointTarget { angles }, thumb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retarget::testing::{flat_hand, transformed};
    use crate::simrobot::models::{hand_joint_limits, reference_thumb, thumb_home};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn bend_angle_examples() {
        assert_eq!(bend_angle(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(2.0, 0.0, 0.0)), 0.0);
        assert_relative_eq!(
            bend_angle(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(1.0, 1.0, 0.0)),
            FRAC_PI_2
        );
        let (a, b) = (v(1.0, 0.0, 0.0), v(1.0, 1.0, 0.0));
        let expect = (a.dot(&b) / (a.norm() * b.norm())).acos();
        assert_relative_eq!(
            bend_angle(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(2.0, 1.0, 0.0)),
            expect,
            epsilon = 1e-15
        );
        assert_relative_eq!(expect, FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn straight_fingers_have_zero_flexion() {
        let mut f = flat_hand();
        // Put each knuckle on the wrist ray so the knuckle joint is straight too.
        for finger in ROBOT_FINGERS {
            let idx = finger.indices();
            let dir = f.keypoints[idx[0]].normalize();
            for (j, k) in idx.iter().enumerate() {
                f.keypoints[*k] = dir * (0.09 + 0.03 * j as f64);
            }
        }
        let a = finger_joint_angles(&f, &[0.0; 3]).unwrap();
        for i in 0..3 {
            for j in 1..4 {
                assert!(a[4 * i + j].abs() < 1e-7, "finger {i} joint {j}: {}", a[4 * i + j]);
            }
        }
    }

    #[test]
    fn abduction_positive_toward_thumb_for_both_hands() {
        let base = flat_hand();
        let mut toward = base.clone();
        // Swing the index proximal bone toward the thumb side (+y in this hand).
        let idx = Finger::Index.indices();
        let knuckle = toward.keypoints[idx[0]];
        for (j, k) in idx.iter().enumerate().skip(1) {
            toward.keypoints[*k] = knuckle + v(0.03 * 0.2f64.cos(), 0.03 * 0.2f64.sin(), 0.0) * j as f64;
        }
        let a0 = finger_joint_angles(&base, &[0.0; 3]).unwrap()[0];
        let a1 = finger_joint_angles(&toward, &[0.0; 3]).unwrap()[0];
        assert!(a1 > a0);
        // Mirrored hand (left): reflect y; the thumb is now at -y and the
        // same swing mirrored must still count as toward the thumb.
        let mirror = |f: &HandFrame| {
            let mut g = f.clone();
            for p in g.keypoints.iter_mut() {
                p.y = -p.y;
            }
            g
        };
        let m0 = finger_joint_angles(&mirror(&base), &[0.0; 3]).unwrap()[0];
        let m1 = finger_joint_angles(&mirror(&toward), &[0.0; 3]).unwrap()[0];
        assert_relative_eq!(m0, a0, epsilon = 1e-12);
        assert_relative_eq!(m1, a1, epsilon = 1e-12);
    }

    #[test]
    fn zero_length_bone_is_degenerate() {
        let mut f = flat_hand();
        f.keypoints[7] = f.keypoints[6];
        assert_eq!(
            finger_joint_angles(&f, &[0.0; 3]),
            Err(RetargetError::DegenerateFinger {
                finger: Finger::Index,
                keypoint: 6
            })
        );
    }

    #[test]
    fn pinky_is_ignored_and_outputs_are_clamped() {
        let r = HandRetargeter::new(&HandRetargetConfig::default(), hand_joint_limits(), reference_thumb()).unwrap();
        let mut f = flat_hand();
        let base = hand_retarget(&f, &r, &thumb_home()).unwrap().0;
        f.keypoints[19] += v(0.0, 0.0, 0.05);
        f.keypoints[20] += v(0.0, 0.0, 0.08);
        assert_eq!(hand_retarget(&f, &r, &thumb_home()).unwrap().0, base);

        // Fold the middle finger back on itself; flexion near pi gets clamped.
        let idx = Finger::Middle.indices();
        f.keypoints[idx[2]] = f.keypoints[idx[0]] + v(0.001, 0.0, 0.0);
        let (t, _) = hand_retarget(&f, &r, &thumb_home()).unwrap();
        for (a, (lo, hi)) in t.angles.iter().zip(hand_joint_limits()) {
            assert!(*a >= lo && *a <= hi);
        }
    }

    #[test]
    fn invariant_to_rigid_motion() {
        let r = HandRetargeter::new(&HandRetargetConfig::default(), hand_joint_limits(), reference_thumb()).unwrap();
        let rot = Rotation3::from_euler_angles(0.4, -0.3, 1.2);
        let g = transformed(&flat_hand(), &rot, v(0.3, -0.2, 1.0));
        let a = hand_retarget(&flat_hand(), &r, &thumb_home()).unwrap().0;
        let b = hand_retarget(&g, &r, &thumb_home()).unwrap().0;
        for (x, y) in a.angles.iter().zip(b.angles.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
