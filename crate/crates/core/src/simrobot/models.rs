// SPDX-License-Identifier: Apache-2.0

//! Reference robot models. These are stand-in constants for a desk-scale
//! simulation, not measurements of any particular hardware.

use rand::Rng;

use super::kinematics::{JointSpec, KinematicModel, ModelSpec};

fn joint(axis: [f64; 3], translation: [f64; 3], limits: [f64; 2]) -> JointSpec {
    JointSpec {
        axis,
        translation,
        rpy: [0.0; 3],
        limits,
    }
}

const Z: [f64; 3] = [0.0, 0.0, 1.0];
const Y: [f64; 3] = [0.0, 1.0, 0.0];
/// Flexion axis: positive angles curl the chain toward the palm side (+z).
const FLEX: [f64; 3] = [0.0, -1.0, 0.0];

/// 7-DOF arm: shoulder, elbow and wrist pitch joints separated by 0.3 m links,
/// alternating with roll joints, and a 0.1 m tool flange.
pub fn arm_spec() -> ModelSpec {
    let roll = [-2.9, 2.9];
    let pitch = [-2.0, 2.0];
    ModelSpec {
        joints: vec![
            joint(Z, [0.0, 0.0, 0.3], roll),
            joint(Y, [0.0, 0.0, 0.0], pitch),
            joint(Z, [0.0, 0.0, 0.3], roll),
            joint(Y, [0.0, 0.0, 0.0], pitch),
            joint(Z, [0.0, 0.0, 0.3], roll),
            joint(Y, [0.0, 0.0, 0.0], pitch),
            joint(Z, [0.0, 0.0, 0.0], roll),
        ],
        tool_translation: [0.0, 0.0, 0.1],
        tool_rpy: [0.0; 3],
    }
}

pub fn reference_arm() -> KinematicModel {
    KinematicModel::from_spec(arm_spec()).expect("reference arm is valid")
}

/// Bent home configuration with the tool pointing down in front of the base.
pub fn arm_home() -> Vec<f64> {
    vec![0.0, 0.6, 0.0, 1.4, 0.0, std::f64::consts::PI - 2.0, 0.0]
}

/// Thumb of the reference hand, in the hand frame (x toward the fingertips,
/// y toward the little-finger side, z out of the palm). Roll, yaw, then two
/// flexion joints; links 0.04 / 0.03 / 0.025 m.
pub fn thumb_spec() -> ModelSpec {
    ModelSpec {
        joints: vec![
            joint([1.0, 0.0, 0.0], [0.02, -0.04, 0.0], [-0.6, 0.6]),
            joint(Z, [0.0, 0.0, 0.0], [-0.5, 1.2]),
            joint(FLEX, [0.04, 0.0, 0.0], [-0.3, 1.6]),
            joint(FLEX, [0.03, 0.0, 0.0], [-0.3, 1.6]),
        ],
        tool_translation: [0.025, 0.0, 0.0],
        tool_rpy: [0.0; 3],
    }
}

pub fn reference_thumb() -> KinematicModel {
    KinematicModel::from_spec(thumb_spec()).expect("reference thumb is valid")
}

/// Warm-start configuration for the thumb solver.
pub fn thumb_home() -> [f64; 4] {
    [0.0, 0.3, 0.4, 0.4]
}

/// Joint limits of the 16-DOF hand: index, middle, ring (abduction then three
/// flexion joints each), then the four thumb joints.
pub fn hand_joint_limits() -> Vec<(f64, f64)> {
    let finger = [(-0.47, 0.47), (-0.2, 1.6), (-0.2, 1.7), (-0.2, 1.6)];
    let mut limits = Vec::with_capacity(16);
    for _ in 0..3 {
        limits.extend_from_slice(&finger);
    }
    limits.extend(reference_thumb().limits());
    limits
}

/// Uniform random configuration inside the limits.
pub fn random_q<R: Rng>(model: &KinematicModel, rng: &mut R) -> Vec<f64> {
    model
        .joints
        .iter()
        .map(|j| rng.gen_range(j.limits.0..j.limits.1))
        .collect()
}
