// SPDX-License-Identifier: Apache-2.0

//! Per-node logic, independent of threads so the same code runs free-running
//! and in lockstep.

use nalgebra::Vector3;

use super::PipelineError;
use crate::geom::Pose;
use crate::retarget::{
    arm_retarget, clutch, hand_retarget, mobile_retarget, pinch_detect, ClutchEvent, ClutchState, HandRetargeter,
    PinchState, RetargetConfig,
};
use crate::simrobot::{RobotConfig, RobotKind, SimEnv, SimError};
use crate::wire::{
    CommandAction, ControlEvent, ControlKind, HandFrame, RobotCommand, RobotState, StatsSample, Timestamp,
};

/// Turns hand frames and control events into robot commands.
#[derive(Debug, Clone)]
pub struct Operator {
    kind: RobotKind,
    cfg: RetargetConfig,
    clutch: ClutchState,
    pinch: PinchState,
    hand: Option<HandRetargeter>,
    thumb_q: [f64; 4],
    last_frame: Option<HandFrame>,
    last_cmd: Option<RobotCommand>,
    robot_ee: Pose,
    engage_pending: bool,
}

impl Operator {
    /// Starts paused. With `auto_engage` the first hand frame engages the
    /// clutch against the robot's current pose.
    pub fn new(
        kind: RobotKind,
        cfg: &RetargetConfig,
        robot: &RobotConfig,
        initial: &RobotState,
        auto_engage: bool,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let hand = match kind {
            RobotKind::Hand => Some(HandRetargeter::new(
                &cfg.hand,
                robot.hand.limits.clone(),
                robot.hand.thumb.clone(),
            )?),
            _ => None,
        };
        let h = &robot.hand.home;
        Ok(Self {
            kind,
            cfg: cfg.clone(),
            clutch: ClutchState::new(cfg.resolution)?,
            pinch: PinchState::default(),
            hand,
            thumb_q: [h[12], h[13], h[14], h[15]],
            last_frame: None,
            last_cmd: None,
            robot_ee: initial.ee,
            engage_pending: auto_engage,
        })
    }

    pub fn clutch_state(&self) -> &ClutchState {
        &self.clutch
    }

    pub fn is_paused(&self) -> bool {
        self.clutch.paused
    }

    pub fn last_command(&self) -> Option<&RobotCommand> {
        self.last_cmd.as_ref()
    }

    pub fn observe_state(&mut self, s: &RobotState) {
        self.robot_ee = s.ee;
    }

    /// End-effector pose the operator last asked for.
    fn commanded_ee(&self) -> Option<Pose> {
        match &self.last_cmd.as_ref()?.action {
            CommandAction::Arm { target, .. } => Some(target.pose()),
            CommandAction::Mobile { target } => Some(Pose::new(
                Vector3::new(target.arm_extension, 0.0, target.lift_height),
                target.wrist_orientation,
            )),
            _ => None,
        }
    }

    /// Anchors the clutch at the last frame; defers to the next frame if
    /// none has arrived yet.
    fn engage(&mut self, ee: Pose) -> Result<(), PipelineError> {
        match &self.last_frame {
            Some(f) => {
                self.clutch = clutch(&self.clutch, ClutchEvent::Resume { hand: f, ee })?;
                self.engage_pending = false;
            }
            None => self.engage_pending = true,
        }
        Ok(())
    }

    /// Applies a control event. A pause re-publishes the held command with the
    /// paused flag so the controller and any observers see it.
    pub fn control(&mut self, ev: &ControlEvent) -> Result<Option<RobotCommand>, PipelineError> {
        ev.validate()?;
        match ev.kind {
            ControlKind::Pause => {
                self.engage_pending = false;
                if self.clutch.paused {
                    return Ok(None);
                }
                self.clutch = clutch(&self.clutch, ClutchEvent::Pause)?;
                let held = self.last_cmd.as_ref().map(|c| {
                    let mut c = c.clone();
                    c.paused = true;
                    clear_toggle(&mut c.action);
                    c
                });
                if let Some(c) = &held {
                    self.last_cmd = Some(c.clone());
                }
                Ok(held)
            }
            ControlKind::Resume => {
                if self.clutch.paused {
                    self.engage(self.robot_ee)?;
                }
                Ok(None)
            }
            ControlKind::SetResolution(r) => {
                self.clutch = clutch(&self.clutch, ClutchEvent::SetResolution(r))?;
                // Re-anchor where the operator is now so the change only
                // scales motion from here on.
                if !self.clutch.paused {
                    let ee = self.commanded_ee().unwrap_or(self.robot_ee);
                    self.engage(ee)?;
                }
                Ok(None)
            }
            ControlKind::ResetAnchor => {
                if !self.clutch.paused {
                    self.engage(self.robot_ee)?;
                }
                Ok(None)
            }
        }
    }

    /// Retargets one frame; `seq` is its bus sequence number.
    pub fn frame(&mut self, f: &HandFrame, seq: u64) -> Result<Option<RobotCommand>, PipelineError> {
        self.last_frame = Some(f.clone());
        if self.engage_pending {
            self.engage(self.robot_ee)?;
        }
        if self.clutch.paused {
            return Ok(None);
        }
        let action = match self.kind {
            RobotKind::Arm => {
                let target = arm_retarget(&self.clutch, f)?;
                let (ps, toggle) = pinch_detect(&self.pinch, f, &self.cfg.gripper_pinch);
                self.pinch = ps;
                CommandAction::Arm {
                    target,
                    gripper_toggle: toggle.is_some(),
                }
            }
            RobotKind::Hand => {
                let r = self.hand.as_ref().expect("hand retargeter exists for hand robots");
                let (target, thumb) = hand_retarget(f, r, &self.thumb_q)?;
                self.thumb_q = thumb.q;
                CommandAction::Hand { target }
            }
            RobotKind::Mobile => {
                let (target, ps) = mobile_retarget(&self.clutch, f, &self.pinch, &self.cfg.mobile)?;
                self.pinch = ps;
                CommandAction::Mobile { target }
            }
        };
        let cmd = RobotCommand {
            source_seq: seq,
            source_ts: f.ts,
            paused: false,
            resolution: self.clutch.resolution,
            action,
        };
        self.last_cmd = Some(cmd.clone());
        Ok(Some(cmd))
    }
}

fn clear_toggle(a: &mut CommandAction) {
    match a {
        CommandAction::Arm { gripper_toggle, .. } => *gripper_toggle = false,
        CommandAction::Mobile { target } => target.gripper_toggle = false,
        _ => {}
    }
}

fn toggles(a: &CommandAction) -> bool {
    match a {
        CommandAction::Arm { gripper_toggle, .. } => *gripper_toggle,
        CommandAction::Mobile { target } => target.gripper_toggle,
        CommandAction::GripperToggle => true,
        CommandAction::Hand { .. } => false,
    }
}

/// Collapses the commands that arrived within one controller tick: the last
/// motion command wins and gripper toggles keep their parity, so no toggle is
/// lost when several commands land in one tick.
pub fn merge_commands(cmds: &[RobotCommand]) -> Option<RobotCommand> {
    let flips = cmds.iter().filter(|c| toggles(&c.action)).count();
    let odd = flips % 2 == 1;
    match cmds
        .iter()
        .rev()
        .find(|c| !matches!(c.action, CommandAction::GripperToggle))
    {
        Some(last) => {
            let mut out = last.clone();
            clear_toggle(&mut out.action);
            if odd {
                match &mut out.action {
                    CommandAction::Arm { gripper_toggle, .. } => *gripper_toggle = true,
                    CommandAction::Mobile { target } => target.gripper_toggle = true,
                    _ => {}
                }
            }
            Some(out)
        }
        None if odd => cmds.last().cloned(),
        None => None,
    }
}

/// Steps the simulated robot once per tick with whatever commands arrived.
#[derive(Debug, Clone)]
pub struct Controller {
    env: SimEnv,
    dt: f64,
    failures: u64,
}

impl Controller {
    pub fn new(env: SimEnv, rate_hz: f64) -> Result<Self, PipelineError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(PipelineError::BadRate(rate_hz));
        }
        Ok(Self {
            env,
            dt: 1.0 / rate_hz,
            failures: 0,
        })
    }

    pub fn env(&self) -> &SimEnv {
        &self.env
    }

    /// Commands the robot could not execute (for example unreachable poses).
    pub fn failures(&self) -> u64 {
        self.failures
    }

    pub fn tick(&mut self, cmds: &[RobotCommand]) -> Result<RobotState, SimError> {
        let merged = merge_commands(cmds);
        match self.env.step(merged.as_ref(), self.dt) {
            Ok(s) => Ok(s),
            Err(e @ (SimError::Kinematics(_) | SimError::KindMismatch { .. })) => {
                self.failures += 1;
                log::warn!("command rejected, holding last target: {e}");
                self.env.step(None, self.dt)
            }
            Err(e) => Err(e),
        }
    }
}

/// Nearest-rank percentile of `values` (any order); `None` when empty.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

/// Windowed rate, latency and staleness bookkeeping for `robot/state`.
#[derive(Debug, Clone)]
pub struct StatsTracker {
    window_start: Timestamp,
    states: u64,
    window_latencies: Vec<f64>,
    all_latencies: Vec<f64>,
    last_source_seq: Option<u64>,
    last_hand: Option<Timestamp>,
    stale_after_s: f64,
}

impl StatsTracker {
    pub fn new(now: Timestamp, stale_after_s: f64) -> Self {
        Self {
            window_start: now,
            states: 0,
            window_latencies: Vec::new(),
            all_latencies: Vec::new(),
            last_source_seq: None,
            last_hand: None,
            stale_after_s,
        }
    }

    pub fn on_hand(&mut self, ingress: Timestamp) {
        self.last_hand = Some(ingress);
    }

    /// Records a published state. Latency is counted once per source frame,
    /// from its ingress stamp to the state's publication stamp.
    pub fn on_state(&mut self, published: Timestamp, s: &RobotState) {
        self.states += 1;
        if let (Some(seq), Some(src)) = (s.source_seq, s.source_ts) {
            if self.last_source_seq != Some(seq) {
                self.last_source_seq = Some(seq);
                let ms = published.secs_since(&src) * 1e3;
                self.window_latencies.push(ms);
                self.all_latencies.push(ms);
            }
        }
    }

    pub fn is_stale(&self, now: Timestamp) -> bool {
        self.last_hand.is_none_or(|t| now.secs_since(&t) > self.stale_after_s)
    }

    /// Closes the current window and starts the next one at `now`.
    pub fn sample(&mut self, now: Timestamp, dropped: u64) -> StatsSample {
        let secs = now.secs_since(&self.window_start);
        let hz = if secs > 0.0 { self.states as f64 / secs } else { 0.0 };
        let s = StatsSample {
            topic: super::topics::STATE.into(),
            measured_hz: hz,
            latency_p50_ms: percentile(&self.window_latencies, 50.0),
            latency_p99_ms: percentile(&self.window_latencies, 99.0),
            dropped,
            stale: self.is_stale(now),
        };
        self.window_start = now;
        self.states = 0;
        self.window_latencies.clear();
        s
    }

    pub fn latencies_ms(&self) -> &[f64] {
        &self.all_latencies
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::HandPose;
    use crate::retarget::EndEffectorTarget;
    use crate::simrobot::SimEnv;
    use nalgebra::UnitQuaternion;

    fn arm_op() -> (Operator, SimEnv) {
        let robot = RobotConfig {
            kinematic: true,
            ..Default::default()
        };
        let env = SimEnv::new(RobotKind::Arm, robot.clone()).unwrap();
        let op = Operator::new(RobotKind::Arm, &RetargetConfig::default(), &robot, &env.state(), true).unwrap();
        (op, env)
    }

    fn frame_at(x: f64) -> HandFrame {
        HandPose {
            wrist: [x, 0.0, 1.0],
            ..Default::default()
        }
        .frame(Timestamp::manual(0))
    }

    fn arm_target(c: &RobotCommand) -> EndEffectorTarget {
        match &c.action {
            CommandAction::Arm { target, .. } => *target,
            other => panic!("{other:?}"),
        }
    }

    fn ctl(kind: ControlKind) -> ControlEvent {
        ControlEvent {
            kind,
            ts: Timestamp::manual(0),
        }
    }

    #[test]
    fn first_frame_engages_at_robot_pose() {
        let (mut op, env) = arm_op();
        let c = op.frame(&frame_at(0.0), 0).unwrap().unwrap();
        assert_eq!(arm_target(&c).pose(), env.state().ee);
        let c = op.frame(&frame_at(0.05), 1).unwrap().unwrap();
        assert!((arm_target(&c).position - env.state().ee.position - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pause_freezes_and_resume_reanchors() {
        let (mut op, _) = arm_op();
        op.frame(&frame_at(0.0), 0).unwrap();
        let before = op.frame(&frame_at(0.02), 1).unwrap().unwrap();
        let held = op.control(&ctl(ControlKind::Pause)).unwrap().unwrap();
        assert!(held.paused);
        assert_eq!(held.action, before.action);
        assert_eq!(op.frame(&frame_at(0.3), 2).unwrap(), None);
        // Robot reports the held pose; resuming there must not jump.
        let mut s = SimEnv::new(RobotKind::Arm, RobotConfig::default()).unwrap().state();
        s.ee = arm_target(&before).pose();
        op.observe_state(&s);
        op.control(&ctl(ControlKind::Resume)).unwrap();
        let after = op.frame(&frame_at(0.3), 3).unwrap().unwrap();
        assert_eq!(arm_target(&after).pose(), s.ee);
    }

    #[test]
    fn resolution_change_scales_following_motion() {
        let (mut op, _) = arm_op();
        op.frame(&frame_at(0.0), 0).unwrap();
        let a = arm_target(&op.frame(&frame_at(0.04), 1).unwrap().unwrap());
        op.control(&ctl(ControlKind::SetResolution(0.5))).unwrap();
        let b = arm_target(&op.frame(&frame_at(0.08), 2).unwrap().unwrap());
        assert!((b.position - a.position - Vector3::new(0.02, 0.0, 0.0)).norm() < 1e-12);
        assert!(op.control(&ctl(ControlKind::SetResolution(11.0))).is_err());
    }

    #[test]
    fn merge_keeps_toggle_parity() {
        let base = RobotCommand {
            source_seq: 0,
            source_ts: Timestamp::manual(0),
            paused: false,
            resolution: 1.0,
            action: CommandAction::Arm {
                target: EndEffectorTarget {
                    position: Vector3::zeros(),
                    orientation: UnitQuaternion::identity(),
                },
                gripper_toggle: false,
            },
        };
        let mut t = base.clone();
        clear_toggle(&mut t.action);
        if let CommandAction::Arm { gripper_toggle, .. } = &mut t.action {
            *gripper_toggle = true;
        }
        let mut last = base.clone();
        last.source_seq = 9;
        let m = merge_commands(&[t.clone(), base.clone(), last.clone()]).unwrap();
        assert_eq!(m.source_seq, 9);
        assert!(toggles(&m.action));
        let m = merge_commands(&[t.clone(), t.clone(), last]).unwrap();
        assert!(!toggles(&m.action));
        assert_eq!(merge_commands(&[]), None);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(50.0));
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&[3.0], 99.0), Some(3.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn empty_window_reports_zero_rate_and_no_latency() {
        let mut s = StatsTracker::new(Timestamp::manual(0), 1.0);
        let out = s.sample(Timestamp::manual(1_000_000_000), 0);
        assert_eq!(out.measured_hz, 0.0);
        assert_eq!(out.latency_p50_ms, None);
        assert!(out.stale);
    }
}
