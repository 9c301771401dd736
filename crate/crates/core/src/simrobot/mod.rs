// SPDX-License-Identifier: Apache-2.0

//! Simulated stand-ins for the teleoperated hardware.

mod env;
pub mod kinematics;
pub mod models;
mod pd;

pub use env::{ArmConfig, BasePose, HandConfig, MobileConfig, RobotConfig, RobotKind, SimEnv, SimError};
pub use kinematics::{
    fk, ik_dls, ik_solve, IkConfig, IkSolution, IkTarget, JointSpec, KinematicModel, KinematicsError, ModelSpec,
    RevoluteJoint,
};
pub use pd::{pd_step, ControlError, JointState, PdGains, MAX_DT};
