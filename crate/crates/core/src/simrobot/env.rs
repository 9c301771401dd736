// SPDX-License-Identifier: Apache-2.0

//! Simulated robots stepped by robot commands.
//!
//! Commands arrive at stream rate; inside [`SimEnv::step`] the controller runs
//! at `control_hz` and holds the latest target between commands.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kinematics::{ik_solve, IkConfig, IkTarget, KinematicModel, KinematicsError};
use super::models;
use super::pd::{pd_step, ControlError, JointState, PdGains};
use crate::geom::Pose;
use crate::wire::{CommandAction, RobotCommand, RobotState, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotKind {
    Arm,
    Hand,
    Mobile,
}

impl std::str::FromStr for RobotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arm" => Ok(RobotKind::Arm),
            "hand" => Ok(RobotKind::Hand),
            "mobile" => Ok(RobotKind::Mobile),
            other => Err(format!("unknown robot kind `{other}` (arm|hand|mobile)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{command:?} command sent to {env:?} robot")]
    KindMismatch { env: RobotKind, command: Option<RobotKind> },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("time step must be positive and finite, got {0}")]
    BadTimestep(f64),
    #[error("invalid robot config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    pub model: KinematicModel,
    pub home: Vec<f64>,
    pub gains: PdGains,
    pub ik: IkConfig,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            model: models::reference_arm(),
            home: models::arm_home(),
            gains: PdGains::uniform(7, 100.0, 20.0, 2.0, true),
            ik: IkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandConfig {
    pub limits: Vec<(f64, f64)>,
    pub thumb: KinematicModel,
    pub home: Vec<f64>,
    pub gains: PdGains,
}

impl Default for HandConfig {
    fn default() -> Self {
        let mut home = vec![0.0; 16];
        home[12..].copy_from_slice(&models::thumb_home());
        Self {
            limits: models::hand_joint_limits(),
            thumb: models::reference_thumb(),
            home,
            gains: PdGains::uniform(16, 100.0, 20.0, 0.5, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobileConfig {
    pub lift_range: (f64, f64),
    pub extension_range: (f64, f64),
    /// m/s
    pub lift_rate: f64,
    /// m/s
    pub extension_rate: f64,
    pub home_lift: f64,
    pub home_extension: f64,
}

impl Default for MobileConfig {
    fn default() -> Self {
        Self {
            lift_range: (0.0, 1.1),
            extension_range: (0.0, 0.5),
            lift_rate: 0.5,
            extension_rate: 0.5,
            home_lift: 0.6,
            home_extension: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    /// Set joints to their targets directly instead of running PD dynamics.
    pub kinematic: bool,
    pub control_hz: f64,
    pub gripper_delay_s: f64,
    pub arm: ArmConfig,
    pub hand: HandConfig,
    pub mobile: MobileConfig,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            kinematic: false,
            control_hz: 300.0,
            gripper_delay_s: 0.1,
            arm: ArmConfig::default(),
            hand: HandConfig::default(),
            mobile: MobileConfig::default(),
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_hz > 0.0) {
            return Err(SimError::Config("control_hz must be positive".into()));
        }
        if self.arm.home.len() != self.arm.model.dof() || self.arm.gains.len() != self.arm.model.dof() {
            return Err(SimError::Config("arm home/gains length must match the model".into()));
        }
        if self.hand.limits.len() != 16 || self.hand.home.len() != 16 || self.hand.gains.len() != 16 {
            return Err(SimError::Config("hand needs 16 limits, home values and gains".into()));
        }
        if self.hand.thumb.dof() != 4 {
            return Err(SimError::Config("thumb chain must have 4 joints".into()));
        }
        let m = &self.mobile;
        if !(m.lift_range.0 < m.lift_range.1 && m.extension_range.0 < m.extension_range.1) {
            return Err(SimError::Config("mobile ranges must be increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Gripper {
    closed: bool,
    commanded: bool,
    due_ns: Option<u64>,
}

/// One simulated robot. Owned by a single stepping loop.
#[derive(Debug, Clone)]
pub struct SimEnv {
    kind: RobotKind,
    cfg: RobotConfig,
    joints: JointState,
    q_target: Vec<f64>,
    time_ns: u64,
    gripper: Gripper,
    base: BasePose,
    base_velocity: f64,
    lift_target: f64,
    extension_target: f64,
    wrist: UnitQuaternion<f64>,
    source: Option<(u64, Timestamp)>,
    paused: bool,
    resolution: f64,
}

impl SimEnv {
    pub fn new(kind: RobotKind, cfg: RobotConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let q = match kind {
            RobotKind::Arm => cfg.arm.home.clone(),
            RobotKind::Hand => cfg.hand.home.clone(),
            RobotKind::Mobile => vec![cfg.mobile.home_lift, cfg.mobile.home_extension],
        };
        let mut env = Self {
            kind,
            joints: JointState::at_rest(q.clone()),
            q_target: q,
            time_ns: 0,
            gripper: Gripper {
                closed: false,
                commanded: false,
                due_ns: None,
            },
            base: BasePose::default(),
            base_velocity: 0.0,
            lift_target: cfg.mobile.home_lift,
            extension_target: cfg.mobile.home_extension,
            wrist: UnitQuaternion::identity(),
            source: None,
            paused: false,
            resolution: 1.0,
            cfg,
        };
        env.joints.ts = env.sim_time();
        Ok(env)
    }

    pub fn kind(&self) -> RobotKind {
        self.kind
    }

    pub fn config(&self) -> &RobotConfig {
        &self.cfg
    }

    pub fn is_kinematic(&self) -> bool {
        self.cfg.kinematic
    }

    fn sim_time(&self) -> Timestamp {
        Timestamp::manual(self.time_ns)
    }

    pub fn time_secs(&self) -> f64 {
        self.time_ns as f64 * 1e-9
    }

    /// Puts the robot at rest at `q` (arm and hand joints, or lift/extension
    /// for the mobile base).
    pub fn set_joint_positions(&mut self, q: &[f64]) -> Result<(), SimError> {
        if q.len() != self.joints.q.len() {
            return Err(SimError::Kinematics(KinematicsError::DimensionMismatch {
                expected: self.joints.q.len(),
                got: q.len(),
            }));
        }
        let mut q = q.to_vec();
        self.clamp_joints(&mut q);
        if self.kind == RobotKind::Mobile {
            self.lift_target = q[0];
            self.extension_target = q[1];
        }
        self.joints.q = q.clone();
        self.joints.qd = vec![0.0; q.len()];
        self.q_target = q;
        Ok(())
    }

    fn clamp_joints(&self, q: &mut [f64]) {
        match self.kind {
            RobotKind::Arm => self.cfg.arm.model.clamp(q),
            RobotKind::Hand => {
                for (v, (lo, hi)) in q.iter_mut().zip(&self.cfg.hand.limits) {
                    *v = v.clamp(*lo, *hi);
                }
            }
            RobotKind::Mobile => {
                let m = &self.cfg.mobile;
                q[0] = q[0].clamp(m.lift_range.0, m.lift_range.1);
                q[1] = q[1].clamp(m.extension_range.0, m.extension_range.1);
            }
        }
    }

    pub fn joint_limits(&self) -> Vec<(f64, f64)> {
        match self.kind {
            RobotKind::Arm => self.cfg.arm.model.limits(),
            RobotKind::Hand => self.cfg.hand.limits.clone(),
            RobotKind::Mobile => vec![self.cfg.mobile.lift_range, self.cfg.mobile.extension_range],
        }
    }

    pub fn ee_pose(&self) -> Pose {
        match self.kind {
            RobotKind::Arm => self
                .cfg
                .arm
                .model
                .fk(&self.joints.q)
                .expect("arm state has model dimension"),
            RobotKind::Hand => {
                let thumb = self
                    .cfg
                    .hand
                    .thumb
                    .fk(&self.joints.q[12..16])
                    .expect("thumb state has model dimension");
                Pose::new(thumb.position, UnitQuaternion::identity())
            }
            RobotKind::Mobile => Pose::new(Vector3::new(self.joints.q[1], 0.0, self.joints.q[0]), self.wrist),
        }
    }

    pub fn state(&self) -> RobotState {
        RobotState {
            kind: self.kind,
            joints: self.joints.clone(),
            ee: self.ee_pose(),
            gripper_closed: self.gripper.closed,
            base: self.base,
            lift: if self.kind == RobotKind::Mobile {
                self.joints.q[0]
            } else {
                0.0
            },
            extension: if self.kind == RobotKind::Mobile {
                self.joints.q[1]
            } else {
                0.0
            },
            source_seq: self.source.map(|s| s.0),
            source_ts: self.source.map(|s| s.1),
            paused: self.paused,
            resolution: self.resolution,
        }
    }

    fn toggle_gripper(&mut self) {
        self.gripper.commanded = !self.gripper.commanded;
        self.gripper.due_ns = Some(self.time_ns + (self.cfg.gripper_delay_s * 1e9).round() as u64);
    }

    fn apply(&mut self, cmd: &RobotCommand) -> Result<(), SimError> {
        let mismatch = || SimError::KindMismatch {
            env: self.kind,
            command: cmd.action.robot_kind(),
        };
        match (&cmd.action, self.kind) {
            (CommandAction::Arm { target, gripper_toggle }, RobotKind::Arm) => {
                let sol = ik_solve(
                    &self.cfg.arm.model,
                    IkTarget::Pose(target.pose()),
                    &self.q_target,
                    &self.cfg.arm.ik,
                )?;
                self.q_target = sol.q;
                if *gripper_toggle {
                    self.toggle_gripper();
                }
            }
            (CommandAction::Hand { target }, RobotKind::Hand) => {
                let mut q = target.angles.to_vec();
                self.clamp_joints(&mut q);
                self.q_target = q;
            }
            (CommandAction::Mobile { target }, RobotKind::Mobile) => {
                let m = &self.cfg.mobile;
                if !target.base_lateral_velocity.is_finite() {
                    return Err(KinematicsError::NonFinite.into());
                }
                self.base_velocity = target.base_lateral_velocity;
                self.lift_target = target.lift_height.clamp(m.lift_range.0, m.lift_range.1);
                self.extension_target = target.arm_extension.clamp(m.extension_range.0, m.extension_range.1);
                self.wrist = target.wrist_orientation;
                if target.gripper_toggle {
                    self.toggle_gripper();
                }
            }
            (CommandAction::GripperToggle, RobotKind::Arm | RobotKind::Mobile) => self.toggle_gripper(),
            _ => return Err(mismatch()),
        }
        self.source = Some((cmd.source_seq, cmd.source_ts));
        self.paused = cmd.paused;
        self.resolution = cmd.resolution;
        Ok(())
    }

    /// Applies `cmd` (if any) and advances the simulation by `dt` seconds.
    ///
    /// On an IK failure the error is returned and the robot keeps its last
    /// good target; time does not advance.
    pub fn step(&mut self, cmd: Option<&RobotCommand>, dt: f64) -> Result<RobotState, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::BadTimestep(dt));
        }
        if let Some(cmd) = cmd {
            self.apply(cmd)?;
        }
        let substeps = (dt * self.cfg.control_hz - 1e-9).ceil().max(1.0) as usize;
        let h = dt / substeps as f64;
        let start_ns = self.time_ns;
        let limits = self.joint_limits();
        for k in 1..=substeps {
            match self.kind {
                RobotKind::Arm | RobotKind::Hand => {
                    if self.cfg.kinematic {
                        self.joints.q.clone_from(&self.q_target);
                        self.joints.qd.iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        let gains = match self.kind {
                            RobotKind::Arm => &self.cfg.arm.gains,
                            _ => &self.cfg.hand.gains,
                        };
                        self.joints = pd_step(&self.joints, &self.q_target, gains, h, &limits)?;
                    }
                }
                RobotKind::Mobile => self.integrate_mobile(h),
            }
            let now = start_ns + (dt * 1e9 * k as f64 / substeps as f64).round() as u64;
            if let Some(due) = self.gripper.due_ns {
                if now >= due {
                    self.gripper.closed = self.gripper.commanded;
                    self.gripper.due_ns = None;
                }
            }
        }
        self.time_ns = start_ns + (dt * 1e9).round() as u64;
        self.joints.ts = self.sim_time();
        Ok(self.state())
    }

    fn integrate_mobile(&mut self, h: f64) {
        let m = &self.cfg.mobile;
        let (c, s) = (self.base.theta.cos(), self.base.theta.sin());
        self.base.x += self.base_velocity * c * h;
        self.base.y += self.base_velocity * s * h;
        let approach = |current: f64, target: f64, rate: f64| -> (f64, f64) {
            let max = rate * h;
            let d = (target - current).clamp(-max, max);
            (current + d, d / h)
        };
        let (lift, lift_v) = if self.cfg.kinematic {
            (self.lift_target, 0.0)
        } else {
            approach(self.joints.q[0], self.lift_target, m.lift_rate)
        };
        let (ext, ext_v) = if self.cfg.kinematic {
            (self.extension_target, 0.0)
        } else {
            approach(self.joints.q[1], self.extension_target, m.extension_rate)
        };
        self.joints.q = vec![lift, ext];
        self.joints.qd = vec![lift_v, ext_v];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retarget::{EndEffectorTarget, HandJointTarget, MobileBaseTarget};

    fn cmd(action: CommandAction) -> RobotCommand {
        RobotCommand {
            source_seq: 7,
            source_ts: Timestamp::manual(1),
            paused: false,
            resolution: 1.0,
            action,
        }
    }

    fn mobile_cmd(v: f64) -> RobotCommand {
        cmd(CommandAction::Mobile {
            target: MobileBaseTarget {
                base_lateral_velocity: v,
                lift_height: 0.6,
                arm_extension: 0.1,
                wrist_orientation: UnitQuaternion::identity(),
                gripper_toggle: false,
            },
        })
    }

    #[test]
    fn gripper_closes_after_actuation_delay() {
        let mut env = SimEnv::new(RobotKind::Arm, RobotConfig::default()).unwrap();
        let s = env.step(Some(&cmd(CommandAction::GripperToggle)), 0.05).unwrap();
        assert!(!s.gripper_closed);
        let s = env.step(None, 0.04).unwrap();
        assert!(!s.gripper_closed);
        let s = env.step(None, 0.02).unwrap();
        assert!(s.gripper_closed);
    }

    #[test]
    fn constant_base_velocity_integrates_exactly() {
        let mut env = SimEnv::new(RobotKind::Mobile, RobotConfig::default()).unwrap();
        env.step(Some(&mobile_cmd(0.1)), 1.0 / 60.0).unwrap();
        for _ in 1..120 {
            env.step(None, 1.0 / 60.0).unwrap();
        }
        let s = env.state();
        assert!((s.base.x - 0.2).abs() < 1e-9, "x = {}", s.base.x);
        assert_eq!(s.base.y, 0.0);
    }

    #[test]
    fn kinematic_arm_reaches_reachable_target() {
        let cfg = RobotConfig {
            kinematic: true,
            ..Default::default()
        };
        let mut env = SimEnv::new(RobotKind::Arm, cfg).unwrap();
        let start = env.ee_pose();
        let target = Pose::new(start.position + Vector3::new(0.05, -0.03, 0.02), start.orientation);
        let s = env
            .step(
                Some(&cmd(CommandAction::Arm {
                    target: EndEffectorTarget::from_pose(target),
                    gripper_toggle: false,
                })),
                1.0 / 90.0,
            )
            .unwrap();
        assert!((s.ee.position - target.position).norm() < 1e-6);
        assert_eq!(s.source_seq, Some(7));
    }

    #[test]
    fn dynamic_arm_converges_to_target() {
        let mut env = SimEnv::new(RobotKind::Arm, RobotConfig::default()).unwrap();
        let start = env.ee_pose();
        let target = Pose::new(start.position + Vector3::new(0.0, 0.05, 0.0), start.orientation);
        let c = cmd(CommandAction::Arm {
            target: EndEffectorTarget::from_pose(target),
            gripper_toggle: false,
        });
        env.step(Some(&c), 0.1).unwrap();
        for _ in 0..30 {
            env.step(None, 0.1).unwrap();
        }
        assert!((env.ee_pose().position - target.position).norm() < 1e-4);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let mut env = SimEnv::new(RobotKind::Hand, RobotConfig::default()).unwrap();
        assert!(matches!(
            env.step(Some(&mobile_cmd(0.1)), 0.01),
            Err(SimError::KindMismatch { .. })
        ));
        assert!(matches!(
            env.step(Some(&cmd(CommandAction::GripperToggle)), 0.01),
            Err(SimError::KindMismatch { .. })
        ));
    }

    #[test]
    fn ik_failure_keeps_last_good_state() {
        let mut env = SimEnv::new(RobotKind::Arm, RobotConfig::default()).unwrap();
        let before = env.state();
        let far = Pose::new(Vector3::new(10.0, 0.0, 0.0), before.ee.orientation);
        let r = env.step(
            Some(&cmd(CommandAction::Arm {
                target: EndEffectorTarget::from_pose(far),
                gripper_toggle: false,
            })),
            0.01,
        );
        assert!(matches!(
            r,
            Err(SimError::Kinematics(KinematicsError::NoConvergence { .. }))
        ));
        assert_eq!(env.state(), before);
    }

    #[test]
    fn hand_targets_are_clamped_to_limits() {
        let cfg = RobotConfig {
            kinematic: true,
            ..Default::default()
        };
        let mut env = SimEnv::new(RobotKind::Hand, cfg).unwrap();
        let s = env
            .step(
                Some(&cmd(CommandAction::Hand {
                    target: HandJointTarget { angles: [5.0; 16] },
                })),
                0.01,
            )
            .unwrap();
        for (q, (_, hi)) in s.joints.q.iter().zip(env.joint_limits()) {
            assert_eq!(*q, hi);
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let run = || {
            let mut env = SimEnv::new(RobotKind::Arm, RobotConfig::default()).unwrap();
            let start = env.ee_pose();
            let mut out = Vec::new();
            for i in 0..20 {
                let p = start.position + Vector3::new(0.002 * i as f64, 0.0, 0.0);
                let c = cmd(CommandAction::Arm {
                    target: EndEffectorTarget::from_pose(Pose::new(p, start.orientation)),
                    gripper_toggle: i == 5,
                });
                out.push(env.step(Some(&c), 1.0 / 60.0).unwrap());
            }
            out
        };
        assert_eq!(run(), run());
    }
}
