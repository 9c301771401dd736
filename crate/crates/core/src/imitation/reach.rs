// SPDX-License-Identifier: Apache-2.0

//! A reach task for the simulated arm: drive the end effector from a random
//! start to a fixed target. Demonstrations are teleoperated by a scripted hand
//! through the lockstep pipeline and recorded from the bus.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImitationError, Policy};
use crate::config::Config;
use crate::geom::Pose;
use crate::pipeline::{topics, HandPose, HandScript, KeypointTransform, Lockstep, SourceKind, SynthConfig, Waypoint};
use crate::recorder::{compile, observation_features, Demonstration, MemoryTap, StreamLog};
use crate::retarget::EndEffectorTarget;
use crate::simrobot::{ik_solve, IkTarget, RobotConfig, RobotKind, SimEnv, SimError};
use crate::wire::{CommandAction, RobotCommand, RobotState, Timestamp};

/// Random-start streams, kept apart so evaluation never replays training
/// starts.
const DEMO_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const ARM_ACTION_DIM: usize = 7;
/// Random start draws before giving up on an unreachable region.
const START_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachTaskConfig {
    /// Target relative to the home end-effector position, meters.
    pub target_offset: [f64; 3],
    /// Starts are drawn at a random direction from the target with a distance
    /// in this range, meters.
    pub start_distance: (f64, f64),
    pub success_radius: f64,
    pub episode_s: f64,
    /// Command rate for demonstrations and evaluation, Hz.
    pub rate_hz: f64,
    /// Time constant of the scripted operator's approach, seconds.
    pub approach_tau_s: f64,
    pub seed: u64,
}

impl Default for ReachTaskConfig {
    fn default() -> Self {
        Self {
            target_offset: [0.05, 0.08, -0.06],
            start_distance: (0.05, 0.12),
            success_radius: 0.01,
            episode_s: 3.0,
            rate_hz: 20.0,
            approach_tau_s: 0.3,
            seed: 7,
        }
    }
}

impl ReachTaskConfig {
    pub fn validate(&self) -> Result<(), ImitationError> {
        let (lo, hi) = self.start_distance;
        let ok = self.target_offset.iter().all(|v| v.is_finite())
            && lo >= 0.0
            && hi >= lo
            && hi.is_finite()
            && self.success_radius > 0.0
            && self.episode_s > 0.0
            && self.rate_hz > 0.0
            && self.rate_hz.is_finite()
            && self.approach_tau_s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ImitationError::BadTask(format!("{self:?}")))
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if (0.1..=1.0).contains(&n) {
            return v / n;
        }
    }
}

/// Unit vector `i` of an additive recurrence over the sphere: every prefix
/// is spread roughly evenly (area-preserving map of the R2 sequence).
fn sphere_sequence(i: u64) -> Vector3<f64> {
    // Plastic number: the 2D golden ratio.
    const P: f64 = 1.324_717_957_244_746;
    let u = (0.5 + i as f64 / P).fract();
    let v = (0.5 + i as f64 / (P * P)).fract();
    let z = 1.0 - 2.0 * u;
    let rho = (1.0 - z * z).max(0.0).sqrt();
    let phi = std::f64::consts::TAU * v;
    Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
}

#[derive(Debug, Clone)]
pub struct ReachTask {
    cfg: ReachTaskConfig,
    robot: RobotConfig,
    home: Pose,
    target: Vector3<f64>,
}

impl ReachTask {
    /// The task always runs the arm in kinematic mode.
    pub fn new(cfg: &ReachTaskConfig, robot: &RobotConfig) -> Result<Self, ImitationError> {
        cfg.validate()?;
        let mut robot = robot.clone();
        robot.kinematic = true;
        let home = robot.arm.model.fk(&robot.arm.home)?;
        let target = home.position + Vector3::from(cfg.target_offset);
        Ok(Self {
            cfg: cfg.clone(),
            robot,
            home,
            target,
        })
    }

    pub fn config(&self) -> &ReachTaskConfig {
        &self.cfg
    }

    pub fn robot(&self) -> &RobotConfig {
        &self.robot
    }

    pub fn target(&self) -> Vector3<f64> {
        self.target
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.cfg.rate_hz
    }

    pub fn steps(&self) -> usize {
        (self.cfg.episode_s * self.cfg.rate_hz).round() as usize
    }

    pub fn success(&self, ee: &Vector3<f64>) -> bool {
        (ee - self.target).norm() <= self.cfg.success_radius
    }

    /// Start `index` of a stream: a joint configuration placing the end
    /// effector around the target with the home orientation. Demonstration
    /// starts take their direction from a low-discrepancy sequence so any
    /// number of demos covers the sphere evenly; evaluation directions are
    /// uniform random. Distances are random, and points the arm cannot
    /// reach are redrawn (falling back to random directions).
    fn start(&self, stream: u64, index: u64) -> Result<Vec<f64>, ImitationError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream);
        rng.set_word_pos((index as u128) << 20);
        let arm = &self.robot.arm;
        let mut last = None;
        for attempt in 0..START_ATTEMPTS {
            let dir = if stream == DEMO_STREAM && attempt < START_ATTEMPTS / 2 {
                sphere_sequence(index)
            } else {
                random_direction(&mut rng)
            };
            let (lo, hi) = self.cfg.start_distance;
            let r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let p = self.target + dir * r;
            match ik_solve(
                &arm.model,
                IkTarget::Pose(Pose::new(p, self.home.orientation)),
                &arm.home,
                &arm.ik,
            ) {
                Ok(sol) => return Ok(sol.q),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt").into())
    }

    pub fn env_at(&self, q: &[f64]) -> Result<SimEnv, ImitationError> {
        let mut env = SimEnv::new(RobotKind::Arm, self.robot.clone())?;
        env.set_joint_positions(q)?;
        Ok(env)
    }

    pub fn demo_start(&self, index: u64) -> Result<Vec<f64>, ImitationError> {
        self.start(DEMO_STREAM, index)
    }

    pub fn eval_start(&self, index: u64) -> Result<Vec<f64>, ImitationError> {
        self.start(EVAL_STREAM, index)
    }
}

/// Arm command realizing an action relative to the current state.
pub fn arm_command(action: &[f64], s: &RobotState, seq: u64) -> Result<RobotCommand, ImitationError> {
    if action.len() != ARM_ACTION_DIM {
        return Err(ImitationError::DimensionMismatch {
            expected: ARM_ACTION_DIM,
            got: action.len(),
        });
    }
    let dp = Vector3::new(action[0], action[1], action[2]);
    let dr = Vector3::new(action[3], action[4], action[5]);
    Ok(RobotCommand {
        source_seq: seq,
        source_ts: Timestamp::manual(0),
        paused: false,
        resolution: 1.0,
        action: CommandAction::Arm {
            target: EndEffectorTarget {
                position: s.ee.position + dp,
                orientation: UnitQuaternion::from_scaled_axis(dr) * s.ee.orientation,
            },
            gripper_toggle: action[6] > 0.5,
        },
    })
}

/// Steps the env with `cmd`; an unreachable target holds the last one.
fn step_holding(env: &mut SimEnv, cmd: &RobotCommand, dt: f64) -> Result<RobotState, ImitationError> {
    match env.step(Some(cmd), dt) {
        Ok(s) => Ok(s),
        Err(SimError::Kinematics(_)) => Ok(env.step(None, dt)?),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub start: [f64; 3],
    pub final_ee: [f64; 3],
    pub error_m: f64,
    pub success: bool,
    /// End-effector position after every step.
    pub path: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub successes: usize,
    pub episodes: Vec<EpisodeTrace>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Closed-loop rollouts from the evaluation starts.
pub fn evaluate(task: &ReachTask, policy: &dyn Policy, episodes: usize) -> Result<EvalReport, ImitationError> {
    if policy.action_dim() != ARM_ACTION_DIM {
        return Err(ImitationError::DimensionMismatch {
            expected: ARM_ACTION_DIM,
            got: policy.action_dim(),
        });
    }
    let mut report = EvalReport {
        successes: 0,
        episodes: Vec::with_capacity(episodes),
    };
    for j in 0..episodes {
        let mut env = task.env_at(&task.eval_start(j as u64)?)?;
        let mut s = env.state();
        let start = arr(&s.ee.position);
        let obs_dim = observation_features(&s).len();
        if policy.obs_dim() != obs_dim {
            return Err(ImitationError::DimensionMismatch {
                expected: obs_dim,
                got: policy.obs_dim(),
            });
        }
        let mut path = Vec::with_capacity(task.steps());
        for k in 0..task.steps() {
            let a = policy.act(&observation_features(&s))?;
            let cmd = arm_command(&a, &s, k as u64)?;
            s = step_holding(&mut env, &cmd, task.dt())?;
            path.push(arr(&s.ee.position));
        }
        let success = task.success(&s.ee.position);
        report.successes += success as usize;
        report.episodes.push(EpisodeTrace {
            start,
            final_ee: arr(&s.ee.position),
            error_m: (s.ee.position - task.target()).norm(),
            success,
            path,
        });
    }
    Ok(report)
}

/// Config for demonstration `index`: kinematic arm homed at the demo start,
/// scripted hand approaching the target exponentially.
pub fn demo_config(cfg: &Config, index: u64) -> Result<Config, ImitationError> {
    let task = ReachTask::new(&cfg.imitation.task, &cfg.robot)?;
    let q = task.demo_start(index)?;
    let mut c = cfg.clone();
    c.robot.kinematic = true;
    c.robot.arm.home = q.clone();
    let start = c.robot.arm.model.fk(&q)?.position;
    let t = &cfg.imitation.task;
    c.pipeline.robot = RobotKind::Arm;
    c.pipeline.rate_hz = t.rate_hz;
    c.pipeline.source = SourceKind::Synth;
    c.pipeline.auto_engage = true;
    c.pipeline.transform = KeypointTransform::default();
    c.retarget.resolution = 1.0;
    let base = HandPose::default();
    let delta = task.target() - start;
    let points = (0..=task.steps() + 1)
        .map(|k| {
            let time = k as f64 / t.rate_hz;
            let off = delta * (1.0 - (-time / t.approach_tau_s).exp());
            let mut pose = base;
            pose.wrist = [base.wrist[0] + off.x, base.wrist[1] + off.y, base.wrist[2] + off.z];
            Waypoint { t: time, pose }
        })
        .collect();
    c.pipeline.synth = SynthConfig {
        script: HandScript::Waypoints { points },
        hz: Some(t.rate_hz),
        seed: 0,
        noise: 0.0,
    };
    Ok(c)
}

/// Runs demonstration `index` through the lockstep pipeline and returns the
/// recorded state and command logs with the config hash.
pub fn demo_logs(cfg: &Config, index: u64) -> Result<(Vec<StreamLog>, String), ImitationError> {
    let c = demo_config(cfg, index)?;
    let task = ReachTask::new(&c.imitation.task, &c.robot)?;
    let mut ls = Lockstep::new(&c, Some(c.pipeline.synth_source()?))?;
    let mut tap = MemoryTap::new(
        ls.bus(),
        &[topics::STATE.into(), topics::COMMAND.into()],
        c.recorder.queue_bound,
    )?;
    for _ in 0..=task.steps() {
        ls.step()?;
        tap.poll()?;
    }
    Ok((tap.into_logs()?, c.hash()))
}

/// Records and compiles `n` demonstrations.
pub fn collect_demos(cfg: &Config, n: usize) -> Result<Vec<Demonstration>, ImitationError> {
    let tol = 0.5 / cfg.imitation.task.rate_hz;
    (0..n as u64)
        .map(|i| {
            let (logs, hash) = demo_logs(cfg, i)?;
            let (demo, _) = compile(&logs, topics::STATE, topics::COMMAND, Some(tol), &hash)?;
            Ok(demo)
        })
        .collect()
}

/// Replays a demonstration's actions open loop from its first observation and
/// returns the final state.
pub fn replay(robot: &RobotConfig, demo: &Demonstration, rate_hz: f64) -> Result<RobotState, ImitationError> {
    if demo.meta.robot != RobotKind::Arm {
        return Err(ImitationError::BadTask("replay supports arm demonstrations".into()));
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(ImitationError::BadTask(format!("rate {rate_hz}")));
    }
    let first = demo.steps.first().ok_or(ImitationError::EmptyDataset)?;
    let dof = robot.arm.model.dof();
    if first.obs.len() < dof {
        return Err(ImitationError::DimensionMismatch {
            expected: dof,
            got: first.obs.len(),
        });
    }
    let mut cfg = robot.clone();
    cfg.kinematic = true;
    let mut env = SimEnv::new(RobotKind::Arm, cfg)?;
    env.set_joint_positions(&first.obs[..dof])?;
    let mut s = env.state();
    for (k, step) in demo.steps.iter().enumerate() {
        let cmd = arm_command(&step.action, &s, k as u64)?;
        s = step_holding(&mut env, &cmd, 1.0 / rate_hz)?;
    }
    Ok(s)
}
