// SPDX-License-Identifier: Apache-2.0

//! Free-running pipeline: one thread per node on the system clock.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::nodes::{percentile, Controller, Operator, StatsTracker};
use super::{topics, Gateway, PipelineError, RateLimiter, SourceKind, StaticServer};
use crate::config::Config;
use crate::simrobot::SimEnv;
use crate::wire::{Bus, Payload, StatsSample, Subscription, TcpExporter, TopicPolicy, WireError};

const POLL: Duration = Duration::from_millis(20);

/// Counters shared by the node threads.
#[derive(Debug, Default)]
struct Counters {
    hand_frames: AtomicU64,
    commands: AtomicU64,
    states: AtomicU64,
    errors: AtomicU64,
}

#[derive(Debug, Default)]
struct ControllerOut {
    ticks: u64,
    overruns: u64,
    skipped: u64,
    failures: u64,
    lateness: Vec<f64>,
    tick_span_s: f64,
    state_span_s: f64,
}

#[derive(Debug, Default)]
struct StatsOut {
    latencies_ms: Vec<f64>,
    samples: Vec<StatsSample>,
}

/// Summary of a finished run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub elapsed_s: f64,
    pub rate_hz: f64,
    pub ticks: u64,
    /// Time from the first to the last controller tick.
    pub tick_span_s: f64,
    /// Time from the first to the last published state.
    pub state_span_s: f64,
    pub overruns: u64,
    pub skipped: u64,
    pub states: u64,
    pub commands: u64,
    pub hand_frames: u64,
    /// Commands the simulated robot could not execute.
    pub failures: u64,
    /// Frames and events rejected by a node.
    pub errors: u64,
    pub dropped: u64,
    /// One entry per source frame that reached `robot/state`.
    pub latencies_ms: Vec<f64>,
    /// Controller tick lateness, seconds.
    pub lateness_s: Vec<f64>,
    pub samples: Vec<StatsSample>,
}

impl RunReport {
    /// Ticks per second over the ticked interval, so a run of N periods
    /// counts N intervals rather than N + 1 events.
    pub fn tick_hz(&self) -> f64 {
        event_rate(self.ticks, self.tick_span_s, self.elapsed_s)
    }

    pub fn state_hz(&self) -> f64 {
        event_rate(self.states, self.state_span_s, self.elapsed_s)
    }

    pub fn latency_p50_ms(&self) -> Option<f64> {
        percentile(&self.latencies_ms, 50.0)
    }

    pub fn latency_p99_ms(&self) -> Option<f64> {
        percentile(&self.latencies_ms, 99.0)
    }

    pub fn jitter_p99_s(&self) -> Option<f64> {
        percentile(&self.lateness_s, 99.0)
    }
}

fn event_rate(n: u64, span_s: f64, elapsed_s: f64) -> f64 {
    if n >= 2 && span_s > 0.0 {
        (n - 1) as f64 / span_s
    } else {
        n as f64 / elapsed_s.max(f64::MIN_POSITIVE)
    }
}

/// A running node graph. Dropping it without [`Pipeline::stop`] also stops it.
pub struct Pipeline {
    bus: Bus,
    rate_hz: f64,
    stop: Arc<AtomicBool>,
    started: Instant,
    threads: Vec<JoinHandle<()>>,
    counters: Arc<Counters>,
    controller: Arc<Mutex<ControllerOut>>,
    stats: Arc<Mutex<StatsOut>>,
    dropped: Arc<AtomicU64>,
    gateway: Option<Gateway>,
    exporter: Option<TcpExporter>,
    console: Option<StaticServer>,
}

/// Time allowed for the node threads to start before the first tick.
const START_DELAY: Duration = Duration::from_millis(5);
/// Lag of the controller tick behind the synthetic source.
const CONTROL_PHASE: Duration = Duration::from_millis(2);

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, PipelineError> {
    Ok(std::thread::Builder::new().name(name.into()).spawn(f)?)
}

fn closed(e: &WireError) -> bool {
    matches!(e, WireError::BusClosed)
}

impl Pipeline {
    /// Builds the bus and starts every node on a fresh system-clock bus.
    pub fn start(cfg: &Config) -> Result<Self, PipelineError> {
        let bus = Bus::new();
        Self::start_on(cfg, bus)
    }

    /// Starts the nodes on `bus`, registering the configured topics first.
    pub fn start_on(cfg: &Config, bus: Bus) -> Result<Self, PipelineError> {
        cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.topics.register(&bus)?;
        let p = cfg.pipeline.clone();
        let env = SimEnv::new(p.robot, cfg.robot.clone())?;
        let initial = env.state();
        let mut operator = Operator::new(p.robot, &cfg.retarget, &cfg.robot, &initial, p.auto_engage)?;
        let mut controller = Controller::new(env, p.rate_hz)?;
        // Both schedules share an epoch. With the synthetic source the
        // controller ticks a fixed phase after each frame, so the measured
        // latency is processing plus that phase rather than whatever offset
        // thread start-up happened to produce.
        let epoch = Instant::now() + START_DELAY;
        let control_phase = match p.source {
            SourceKind::Synth => CONTROL_PHASE.min(Duration::from_secs_f64(0.25 / p.rate_hz)),
            SourceKind::Console => Duration::ZERO,
        };
        let mut limiter = RateLimiter::starting_at(p.rate_hz, epoch + control_phase)?;

        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(Counters::default());
        let ctrl_out = Arc::new(Mutex::new(ControllerOut::default()));
        let stats_out = Arc::new(Mutex::new(StatsOut::default()));
        let dropped = Arc::new(AtomicU64::new(0));
        let mut threads = Vec::new();

        // Subscriptions are made before any thread starts so no early
        // message is missed.
        let mut raw = bus.subscribe(topics::HAND_RAW)?;
        let mut hand = bus.subscribe(topics::HAND)?;
        let mut control = bus.subscribe(topics::CONTROL)?;
        let mut op_state = bus.subscribe_with(topics::STATE, TopicPolicy::Conflate)?;
        let mut cmd = bus.subscribe(topics::COMMAND)?;
        let mut stats_hand = bus.subscribe_with(topics::HAND, TopicPolicy::Conflate)?;
        let mut stats_state = bus.subscribe_with(topics::STATE, TopicPolicy::queue(4096))?;

        // Detector stand-in.
        if p.source == SourceKind::Synth {
            let src = p.synth_source()?;
            let (bus, stop, counters) = (bus.clone(), stop.clone(), counters.clone());
            threads.push(spawn("source", move || {
                let mut rate = RateLimiter::starting_at(src.hz(), epoch).expect("validated source rate");
                let mut k = 0u64;
                while !stop.load(Ordering::SeqCst) {
                    rate.wait();
                    let mut f = src.frame(k);
                    f.ts = bus.clock().now();
                    k += 1;
                    match bus.publish(topics::HAND_RAW, Payload::Hand(f)) {
                        Ok(_) => {}
                        Err(e) if closed(&e) => break,
                        Err(e) => {
                            counters.errors.fetch_add(1, Ordering::Relaxed);
                            log::error!("source publish failed: {e}");
                        }
                    }
                }
            })?);
        }

        // Keypoint transformer.
        {
            let (bus, stop, counters) = (bus.clone(), stop.clone(), counters.clone());
            let delay = Duration::from_secs_f64(p.inject_delay_ms / 1e3);
            let transform = p.transform;
            threads.push(spawn("transformer", move || {
                while !stop.load(Ordering::SeqCst) {
                    let env = match raw.recv_timeout(POLL) {
                        Ok(Some(env)) => env,
                        Ok(None) => continue,
                        Err(_) => break,
                    };
                    let Payload::Hand(f) = &env.payload else { continue };
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    match transform.apply(f) {
                        Ok(g) => {
                            counters.hand_frames.fetch_add(1, Ordering::Relaxed);
                            if let Err(e) = bus.publish(topics::HAND, Payload::Hand(g)) {
                                if closed(&e) {
                                    break;
                                }
                            }
                        }
                        Err(e) => {
                            counters.errors.fetch_add(1, Ordering::Relaxed);
                            log::warn!("dropping hand frame: {e}");
                        }
                    }
                }
            })?);
        }

        // Operator.
        {
            let (bus, stop, counters) = (bus.clone(), stop.clone(), counters.clone());
            threads.push(spawn("operator", move || {
                let apply_controls = |control: &mut Subscription, operator: &mut Operator| -> Result<(), WireError> {
                    for env in control.drain()? {
                        if let Payload::Control(ev) = &env.payload {
                            match operator.control(ev) {
                                Ok(Some(c)) => {
                                    bus.publish(topics::COMMAND, Payload::Command(c))?;
                                    counters.commands.fetch_add(1, Ordering::Relaxed);
                                }
                                Ok(None) => {}
                                Err(e) => {
                                    counters.errors.fetch_add(1, Ordering::Relaxed);
                                    log::warn!("rejected control event: {e}");
                                }
                            }
                        }
                    }
                    Ok(())
                };
                while !stop.load(Ordering::SeqCst) {
                    let step = (|| -> Result<(), WireError> {
                        apply_controls(&mut control, &mut operator)?;
                        if let Some(env) = op_state.latest()? {
                            if let Payload::State(s) = &env.payload {
                                operator.observe_state(s);
                            }
                        }
                        let Some(env) = hand.recv_timeout(Duration::from_millis(2))? else {
                            return Ok(());
                        };
                        // A pause that raced this frame still wins.
                        apply_controls(&mut control, &mut operator)?;
                        let Payload::Hand(f) = &env.payload else { return Ok(()) };
                        match operator.frame(f, env.seq) {
                            Ok(Some(c)) => {
                                bus.publish(topics::COMMAND, Payload::Command(c))?;
                                counters.commands.fetch_add(1, Ordering::Relaxed);
                            }
                            Ok(None) => {}
                            Err(e) => {
                                counters.errors.fetch_add(1, Ordering::Relaxed);
                                log::warn!("retargeting failed: {e}");
                            }
                        }
                        Ok(())
                    })();
                    if let Err(e) = step {
                        if closed(&e) {
                            break;
                        }
                        log::error!("operator: {e}");
                    }
                }
            })?);
        }

        // Controller.
        {
            let (bus, stop, counters, out) = (bus.clone(), stop.clone(), counters.clone(), ctrl_out.clone());
            let dropped = dropped.clone();
            threads.push(spawn("controller", move || {
                let (mut first_tick, mut last_tick) = (None, None);
                let (mut first_state, mut last_state) = (None, None);
                while !stop.load(Ordering::SeqCst) {
                    limiter.wait();
                    let now = Instant::now();
                    first_tick.get_or_insert(now);
                    last_tick = Some(now);
                    let cmds: Vec<_> = match cmd.drain() {
                        Ok(v) => v.iter().filter_map(|e| e.payload.as_command().cloned()).collect(),
                        Err(_) => break,
                    };
                    match controller.tick(&cmds) {
                        Ok(s) => match bus.publish(topics::STATE, Payload::State(s)) {
                            Ok(_) => {
                                counters.states.fetch_add(1, Ordering::Relaxed);
                                first_state.get_or_insert(now);
                                last_state = Some(now);
                            }
                            Err(e) if closed(&e) => break,
                            Err(e) => log::error!("state publish failed: {e}"),
                        },
                        Err(e) => {
                            counters.errors.fetch_add(1, Ordering::Relaxed);
                            log::error!("controller step failed: {e}");
                        }
                    }
                    dropped.store(cmd.dropped(), Ordering::Relaxed);
                }
                let mut o = out.lock().unwrap();
                o.ticks = limiter.ticks();
                o.overruns = limiter.overruns();
                o.skipped = limiter.skipped();
                o.failures = controller.failures();
                o.lateness = limiter.lateness().collect();
                let span = |a: Option<Instant>, b: Option<Instant>| match (a, b) {
                    (Some(a), Some(b)) => b.duration_since(a).as_secs_f64(),
                    _ => 0.0,
                };
                o.tick_span_s = span(first_tick, last_tick);
                o.state_span_s = span(first_state, last_state);
            })?);
        }

        // Latency probe.
        {
            let (bus, stop, out) = (bus.clone(), stop.clone(), stats_out.clone());
            let dropped = dropped.clone();
            let period = Duration::from_secs_f64(p.stats_period_s);
            let stale_after = p.stale_after_s;
            threads.push(spawn("stats", move || {
                let mut tracker = StatsTracker::new(bus.clock().now(), stale_after);
                let mut next = Instant::now() + period;
                let mut samples = Vec::new();
                while !stop.load(Ordering::SeqCst) {
                    match stats_state.recv_timeout(POLL) {
                        Ok(Some(env)) => {
                            if let Payload::State(s) = &env.payload {
                                tracker.on_state(env.ts, s);
                            }
                        }
                        Ok(None) => {}
                        Err(_) => break,
                    }
                    if let Ok(Some(env)) = stats_hand.latest() {
                        tracker.on_hand(env.ts);
                    }
                    if Instant::now() >= next {
                        next += period;
                        let s = tracker.sample(bus.clock().now(), dropped.load(Ordering::Relaxed));
                        if s.stale {
                            log::debug!("no hand frame for over {stale_after} s, holding last command");
                        }
                        samples.push(s.clone());
                        if bus.publish(topics::STATS, Payload::Stats(s)).is_err() {
                            break;
                        }
                    }
                }
                // Count states published before the stop flag was seen.
                while let Ok(Some(env)) = stats_state.try_recv() {
                    if let Payload::State(s) = &env.payload {
                        tracker.on_state(env.ts, s);
                    }
                }
                let mut o = out.lock().unwrap();
                o.latencies_ms = tracker.latencies_ms().to_vec();
                o.samples = samples;
            })?);
        }

        let gateway = match p.gateway_addr() {
            Some(addr) => Some(Gateway::bind(&bus, &addr, p.robot, p.ws_rate_hz)?),
            None => None,
        };
        let exporter = match &cfg.bus.export_addr {
            Some(addr) => Some(TcpExporter::bind(&bus, addr.as_str())?),
            None => None,
        };
        let console = match &p.console_addr {
            Some(addr) => {
                let ws = gateway.as_ref().map(|g| format!("ws://{}", g.local_addr()));
                let discovery = serde_json::json!({
                    "ws": ws,
                    "robot": p.robot,
                    "arm": cfg.robot.arm.model,
                    "arm_home": cfg.robot.arm.home,
                    "mobile": { "lift_range": cfg.robot.mobile.lift_range, "extension_range": cfg.robot.mobile.extension_range },
                });
                Some(StaticServer::serve(
                    std::path::Path::new(&p.console_dir),
                    addr,
                    discovery,
                )?)
            }
            None => None,
        };

        Ok(Self {
            bus,
            rate_hz: p.rate_hz,
            stop,
            started: Instant::now(),
            threads,
            counters,
            controller: ctrl_out,
            stats: stats_out,
            dropped,
            gateway,
            exporter,
            console,
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn gateway(&self) -> Option<&Gateway> {
        self.gateway.as_ref()
    }

    pub fn exporter(&self) -> Option<&TcpExporter> {
        self.exporter.as_ref()
    }

    pub fn console(&self) -> Option<&StaticServer> {
        self.console.as_ref()
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    /// Published states so far.
    pub fn states(&self) -> u64 {
        self.counters.states.load(Ordering::Relaxed)
    }

    /// Runs for `secs`, then stops.
    pub fn run_for(self, secs: f64) -> RunReport {
        std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
        self.stop()
    }

    pub fn stop(mut self) -> RunReport {
        self.halt()
    }

    fn halt(&mut self) -> RunReport {
        self.stop.store(true, Ordering::SeqCst);
        let elapsed_s = self.started.elapsed().as_secs_f64();
        if let Some(g) = self.gateway.take() {
            g.shutdown();
        }
        if let Some(c) = self.console.take() {
            c.shutdown();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(x) = self.exporter.take() {
            x.shutdown();
        }
        let c = self.controller.lock().unwrap();
        let s = self.stats.lock().unwrap();
        RunReport {
            elapsed_s,
            rate_hz: self.rate_hz,
            ticks: c.ticks,
            tick_span_s: c.tick_span_s,
            state_span_s: c.state_span_s,
            overruns: c.overruns,
            skipped: c.skipped,
            states: self.counters.states.load(Ordering::Relaxed),
            commands: self.counters.commands.load(Ordering::Relaxed),
            hand_frames: self.counters.hand_frames.load(Ordering::Relaxed),
            failures: c.failures,
            errors: self.counters.errors.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
            latencies_ms: s.latencies_ms.clone(),
            lateness_s: c.lateness.clone(),
            samples: s.samples.clone(),
        }
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.halt();
        }
    }
}
