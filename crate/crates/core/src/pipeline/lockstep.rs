// SPDX-License-Identifier: Apache-2.0

//! Single-threaded, manually clocked execution of the node graph.
//!
//! Every node runs once per controller tick in a fixed order over a real bus,
//! so recorder taps see the same topics as in a live run while the outcome is
//! a pure function of the config and the hand script.

use std::collections::VecDeque;

use super::nodes::{Controller, Operator, StatsTracker};
use super::{topics, KeypointTransform, PipelineError, SynthSource};
use crate::config::Config;
use crate::simrobot::SimEnv;
use crate::wire::{Bus, Clock, ControlEvent, ControlKind, HandFrame, Payload, RobotState, Subscription};

pub struct Lockstep {
    bus: Bus,
    rate_hz: f64,
    tick: u64,
    source: Option<SynthSource>,
    next_frame: u64,
    pending_frame: Option<HandFrame>,
    transform: KeypointTransform,
    operator: Operator,
    controller: Controller,
    stats: StatsTracker,
    stats_period_ns: u64,
    next_stats_ns: u64,
    schedule: VecDeque<(u64, ControlKind)>,
    raw: Subscription,
    hand: Subscription,
    control: Subscription,
    cmd: Subscription,
    last_state: RobotState,
    errors: u64,
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

impl Lockstep {
    /// Builds the graph on a fresh manually clocked bus. Without a source,
    /// frames must be published on `hand/raw` by the caller.
    pub fn new(cfg: &Config, source: Option<SynthSource>) -> Result<Self, PipelineError> {
        cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let p = &cfg.pipeline;
        let bus = Bus::with_clock(Clock::manual());
        cfg.topics.register(&bus)?;
        let env = SimEnv::new(p.robot, cfg.robot.clone())?;
        let initial = env.state();
        let operator = Operator::new(p.robot, &cfg.retarget, &cfg.robot, &initial, p.auto_engage)?;
        Ok(Self {
            raw: bus.subscribe(topics::HAND_RAW)?,
            hand: bus.subscribe(topics::HAND)?,
            control: bus.subscribe(topics::CONTROL)?,
            cmd: bus.subscribe(topics::COMMAND)?,
            bus,
            rate_hz: p.rate_hz,
            tick: 0,
            source,
            next_frame: 0,
            pending_frame: None,
            transform: p.transform,
            operator,
            controller: Controller::new(env, p.rate_hz)?,
            stats: StatsTracker::new(crate::wire::Timestamp::manual(0), p.stale_after_s),
            stats_period_ns: secs_to_ns(p.stats_period_s),
            next_stats_ns: secs_to_ns(p.stats_period_s),
            schedule: VecDeque::new(),
            last_state: initial,
            errors: 0,
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn stats(&self) -> &StatsTracker {
        &self.stats
    }

    pub fn state(&self) -> &RobotState {
        &self.last_state
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Frames or events the operator or transformer rejected.
    pub fn errors(&self) -> u64 {
        self.errors
    }

    /// Simulated time of the next tick, seconds.
    pub fn time_secs(&self) -> f64 {
        self.tick as f64 / self.rate_hz
    }

    /// Queues a control event for the first tick at or after `t_secs`.
    pub fn schedule(&mut self, t_secs: f64, kind: ControlKind) {
        let t = secs_to_ns(t_secs.max(0.0));
        let at = self.schedule.partition_point(|(s, _)| *s <= t);
        self.schedule.insert(at, (t, kind));
    }

    fn publish(&mut self, topic: &str, payload: Payload) -> Result<u64, PipelineError> {
        Ok(self.bus.publish(topic, payload)?)
    }

    /// Runs every node once and returns the published state.
    pub fn step(&mut self) -> Result<RobotState, PipelineError> {
        let now_ns = secs_to_ns(self.tick as f64 / self.rate_hz);
        self.bus.clock().set_ns(now_ns);
        let now = self.bus.clock().now();

        while self.schedule.front().is_some_and(|(t, _)| *t <= now_ns) {
            let (_, kind) = self.schedule.pop_front().expect("front exists");
            self.publish(topics::CONTROL, Payload::Control(ControlEvent { kind, ts: now }))?;
        }

        // Detector: every scripted frame captured up to now.
        if let Some(src) = &self.source {
            loop {
                let f = match self.pending_frame.take() {
                    Some(f) => f,
                    None => src.frame(self.next_frame),
                };
                if f.ts.mono_ns > now_ns {
                    self.pending_frame = Some(f);
                    break;
                }
                self.next_frame += 1;
                self.bus.publish(topics::HAND_RAW, Payload::Hand(f))?;
            }
        }

        // Keypoint transformer.
        if let Some(env) = self.raw.latest()? {
            if let Payload::Hand(f) = &env.payload {
                match self.transform.apply(f) {
                    Ok(g) => {
                        self.publish(topics::HAND, Payload::Hand(g))?;
                        self.stats.on_hand(env.ts);
                    }
                    Err(e) => {
                        self.errors += 1;
                        log::warn!("dropping hand frame: {e}");
                    }
                }
            }
        }

        // Operator: control events first, in arrival order, so a pause is
        // never overtaken by a frame.
        let mut out = Vec::new();
        for env in self.control.drain()? {
            if let Payload::Control(ev) = &env.payload {
                match self.operator.control(ev) {
                    Ok(cmd) => out.extend(cmd),
                    Err(e) => {
                        self.errors += 1;
                        log::warn!("rejected control event: {e}");
                    }
                }
            }
        }
        if let Some(env) = self.hand.latest()? {
            if let Payload::Hand(f) = &env.payload {
                match self.operator.frame(f, env.seq) {
                    Ok(cmd) => out.extend(cmd),
                    Err(e) => {
                        self.errors += 1;
                        log::warn!("retargeting failed: {e}");
                    }
                }
            }
        }
        for c in out {
            self.publish(topics::COMMAND, Payload::Command(c))?;
        }

        // Controller.
        let cmds: Vec<_> = self
            .cmd
            .drain()?
            .iter()
            .filter_map(|e| e.payload.as_command().cloned())
            .collect();
        let state = self.controller.tick(&cmds)?;
        self.publish(topics::STATE, Payload::State(state.clone()))?;
        self.stats.on_state(now, &state);
        self.operator.observe_state(&state);

        if now_ns >= self.next_stats_ns {
            self.next_stats_ns += self.stats_period_ns;
            let dropped = self.cmd.dropped() + self.control.dropped();
            let sample = self.stats.sample(now, dropped);
            self.publish(topics::STATS, Payload::Stats(sample))?;
        }

        self.tick += 1;
        self.last_state = state.clone();
        Ok(state)
    }

    /// Steps for `secs` of simulated time and returns every published state.
    pub fn run(&mut self, secs: f64) -> Result<Vec<RobotState>, PipelineError> {
        let n = (secs * self.rate_hz).round() as u64;
        (0..n).map(|_| self.step()).collect()
    }
}
