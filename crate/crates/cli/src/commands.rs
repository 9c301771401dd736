// SPDX-License-Identifier: Apache-2.0

//! Subcommand implementations. Each returns the process exit code.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use openteach_core::imitation::{collect_demos, evaluate, mse, pooled, replay, AnyPolicy, ReachTask};
use openteach_core::pipeline::{
    parse_preset, run_bench, BenchResult, DEFAULT_WS_ADDR, LATENCY_P99_MAX_MS, RATE_PRESETS,
};
use openteach_core::recorder::{compile, Demonstration, Recorder, StreamLog};
use openteach_core::wire::subscribe_remote;
use openteach_core::{Config, Pipeline, RunReport};

use crate::{
    BenchArgs, CollectArgs, Command, CompileArgs, ConfigArg, EvalArgs, RecordArgs, ReplayArgs, RunArgs, TapArgs,
    TrainArgs,
};

/// Name of the config copy `record` leaves next to the logs.
pub const RECORDED_CONFIG: &str = "config.toml";

pub fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Record(a) => record(a),
        Command::Compile(a) => compile_cmd(a),
        Command::Collect(a) => collect(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Tap(a) => tap(a),
    }
}

fn load_config(arg: &ConfigArg) -> Result<Config> {
    match &arg.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Run report without the per-sample vectors.
#[derive(Debug, Serialize)]
struct RunSummary {
    elapsed_s: f64,
    rate_hz: f64,
    tick_hz: f64,
    state_hz: f64,
    ticks: u64,
    overruns: u64,
    states: u64,
    commands: u64,
    hand_frames: u64,
    failures: u64,
    errors: u64,
    dropped: u64,
    latency_p50_ms: Option<f64>,
    latency_p99_ms: Option<f64>,
}

impl From<&RunReport> for RunSummary {
    fn from(r: &RunReport) -> Self {
        Self {
            elapsed_s: r.elapsed_s,
            rate_hz: r.rate_hz,
            tick_hz: r.tick_hz(),
            state_hz: r.state_hz(),
            ticks: r.ticks,
            overruns: r.overruns,
            states: r.states,
            commands: r.commands,
            hand_frames: r.hand_frames,
            failures: r.failures,
            errors: r.errors,
            dropped: r.dropped,
            latency_p50_ms: r.latency_p50_ms(),
            latency_p99_ms: r.latency_p99_ms(),
        }
    }
}

fn ms(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.2} ms"))
}

fn print_run(r: &RunReport, json: bool) -> Result<()> {
    let s = RunSummary::from(r);
    if json {
        return print_json(&s);
    }
    println!(
        "ran {:.2} s at {} Hz: {} ticks ({:.2} Hz), {} states ({:.2} Hz), {} commands, {} hand frames; \
         latency p50 {} p99 {}; {} errors, {} failures, {} dropped",
        s.elapsed_s,
        s.rate_hz,
        s.ticks,
        s.tick_hz,
        s.states,
        s.state_hz,
        s.commands,
        s.hand_frames,
        ms(s.latency_p50_ms),
        ms(s.latency_p99_ms),
        s.errors,
        s.failures,
        s.dropped
    );
    Ok(())
}

/// Blocks for `secs`, or until Ctrl-C when `secs` is None.
fn wait(secs: Option<f64>) -> Result<()> {
    match secs {
        Some(s) if s >= 0.0 && s.is_finite() => std::thread::sleep(Duration::from_secs_f64(s)),
        Some(s) => bail!("--secs must be a non-negative number, got {s}"),
        None => {
            let (tx, rx) = mpsc::channel();
            ctrlc::set_handler(move || {
                let _ = tx.send(());
            })
            .context("installing Ctrl-C handler")?;
            eprintln!("running; press Ctrl-C to stop");
            let _ = rx.recv();
        }
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<i32> {
    let mut cfg = load_config(&a.config)?;
    if let Some(r) = a.robot {
        cfg.pipeline.robot = r;
    }
    if let Some(s) = a.source {
        cfg.pipeline.source = s;
    }
    if let Some(r) = a.rate {
        cfg.pipeline.rate_hz = r;
    }
    if a.kinematic {
        cfg.robot.kinematic = true;
    }
    if let Some(ws) = a.ws {
        cfg.pipeline.ws_addr = Some(ws);
    }
    if let Some(port) = a.serve_console {
        cfg.pipeline.console_addr = Some(format!("127.0.0.1:{port}"));
        if cfg.pipeline.ws_addr.is_none() {
            cfg.pipeline.ws_addr = Some(DEFAULT_WS_ADDR.into());
        }
    }
    if let Some(dir) = a.console_dir {
        cfg.pipeline.console_dir = dir.display().to_string();
    }
    cfg.validate()?;
    let pipe = Pipeline::start(&cfg)?;
    if let Some(g) = pipe.gateway() {
        eprintln!("console gateway: ws://{}", g.local_addr());
    }
    if let Some(c) = pipe.console() {
        eprintln!("operator console: http://{}/", c.local_addr());
    }
    if let Some(x) = pipe.exporter() {
        eprintln!("bus exporter: tcp://{}", x.local_addr());
    }
    wait(a.secs)?;
    let report = pipe.stop();
    print_run(&report, a.json)?;
    Ok(0)
}

fn bench(a: BenchArgs) -> Result<i32> {
    let cfg = load_config(&a.config)?;
    let rates = match &a.preset {
        Some(p) => vec![parse_preset(p)?],
        None => RATE_PRESETS.to_vec(),
    };
    if !(a.secs > 0.0 && a.secs.is_finite()) {
        bail!("--secs must be positive");
    }
    let mut results: Vec<BenchResult> = Vec::new();
    let mut ok = true;
    for hz in rates {
        let (r, _) = run_bench(&cfg, hz, a.secs)?;
        let latency_ok = hz != 90.0 || r.latency_p99_ms.is_some_and(|p| p < LATENCY_P99_MAX_MS);
        ok &= r.passed() && latency_ok;
        if !a.json {
            let flag = |b: bool| if b { "ok" } else { "FAIL" };
            println!(
                "{hz} Hz for {:.1} s: ticks {:.3} Hz ({}), state {:.3} Hz ({}), latency p50 {} p99 {}{}, overruns {}",
                r.secs,
                r.tick_hz,
                flag(r.tick_ok),
                r.state_hz,
                flag(r.state_ok),
                ms(r.latency_p50_ms),
                ms(r.latency_p99_ms),
                if hz == 90.0 {
                    format!(" ({})", flag(latency_ok))
                } else {
                    String::new()
                },
                r.overruns
            );
        }
        results.push(r);
    }
    if a.json {
        print_json(&results)?;
    }
    Ok(if ok { 0 } else { 1 })
}

fn record(a: RecordArgs) -> Result<i32> {
    let mut cfg = load_config(&a.config)?;
    if let Some(r) = a.robot {
        cfg.pipeline.robot = r;
    }
    if let Some(s) = a.source {
        cfg.pipeline.source = s;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join(RECORDED_CONFIG), cfg.to_toml_string()?)?;
    let pipe = Pipeline::start(&cfg)?;
    let rec = Recorder::start(pipe.bus(), &cfg.recorder.topics, &a.out, cfg.recorder.queue_bound)?;
    wait(Some(a.secs))?;
    let summary = rec.stop()?;
    let report = pipe.stop();
    if a.json {
        print_json(&summary)?;
    } else {
        for (topic, t) in &summary.topics {
            println!("{topic}: {} written, {} dropped", t.written, t.dropped);
        }
        print_run(&report, false)?;
        println!("logs in {}", a.out.display());
    }
    Ok(0)
}

/// Config hash of a recording, from the config copy `record` writes.
fn recorded_hash(dir: &Path) -> Result<String> {
    let p = dir.join(RECORDED_CONFIG);
    if !p.exists() {
        log::warn!("{} not found; demonstration carries no config hash", p.display());
        return Ok(String::new());
    }
    Ok(Config::load(&p)?.hash())
}

#[derive(Serialize)]
struct CompileSummary<'a> {
    out: &'a Path,
    steps: usize,
    kept: usize,
    dropped: usize,
    tolerance_s: f64,
    obs_dim: usize,
    action_dim: usize,
}

fn compile_cmd(a: CompileArgs) -> Result<i32> {
    let logs = StreamLog::load_dir(&a.input).with_context(|| format!("reading logs in {}", a.input.display()))?;
    if logs.is_empty() {
        bail!("no *.ndjson logs in {}", a.input.display());
    }
    let hash = recorded_hash(&a.input)?;
    let (demo, _) = compile(&logs, &a.primary, &a.action, a.tolerance, &hash)?;
    demo.save(&a.out)?;
    let s = CompileSummary {
        out: &a.out,
        steps: demo.steps.len(),
        kept: demo.meta.kept,
        dropped: demo.meta.dropped,
        tolerance_s: demo.meta.tolerance_s,
        obs_dim: demo.meta.obs_dim,
        action_dim: demo.meta.action_dim,
    };
    if a.json {
        print_json(&s)?;
    } else {
        println!(
            "{} steps ({} aligned, {} dropped at tolerance {:.5} s), obs {} / action {} -> {}",
            s.steps,
            s.kept,
            s.dropped,
            s.tolerance_s,
            s.obs_dim,
            s.action_dim,
            a.out.display()
        );
    }
    Ok(0)
}

fn collect(a: CollectArgs) -> Result<i32> {
    let cfg = load_config(&a.config)?;
    let n = a.n.unwrap_or(cfg.imitation.demos);
    std::fs::create_dir_all(&a.out)?;
    let demos = collect_demos(&cfg, n)?;
    for (i, d) in demos.iter().enumerate() {
        let p: PathBuf = a.out.join(format!("demo_{i:03}.otd"));
        d.save(&p)?;
        println!("{}: {} steps", p.display(), d.steps.len());
    }
    Ok(0)
}

#[derive(Serialize)]
struct ReplayOut {
    steps: usize,
    q: Vec<f64>,
    ee_position: [f64; 3],
    gripper_closed: bool,
}

fn replay_cmd(a: ReplayArgs) -> Result<i32> {
    let cfg = load_config(&a.config)?;
    let demo = Demonstration::load(&a.demo)?;
    let rate = a.rate.unwrap_or(cfg.imitation.task.rate_hz);
    let s = replay(&cfg.robot, &demo, rate)?;
    let p = s.ee.position;
    print_json(&ReplayOut {
        steps: demo.steps.len(),
        q: s.joints.q.clone(),
        ee_position: [p.x, p.y, p.z],
        gripper_closed: s.gripper_closed,
    })?;
    Ok(0)
}

fn train(a: TrainArgs) -> Result<i32> {
    let mut cfg = load_config(&a.config)?;
    if let Some(r) = a.ridge {
        cfg.imitation.ridge = r;
    }
    if let Some(k) = a.k {
        cfg.imitation.k = k;
    }
    cfg.imitation.validate()?;
    let demos = a
        .demos
        .iter()
        .map(|p| Demonstration::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let policy = AnyPolicy::train(&demos, a.algo, &cfg.imitation)?;
    policy.save(&a.out)?;
    let (obs, act) = pooled(&demos)?;
    let err = mse(&policy, &obs, &act)?;
    println!(
        "{:?} policy on {} demos ({} steps), training MSE {err:.3e} -> {}",
        a.algo,
        demos.len(),
        obs.len(),
        a.out.display()
    );
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    if a.task != "reach" {
        bail!("unknown task `{}` (reach)", a.task);
    }
    let cfg = load_config(&a.config)?;
    let policy = AnyPolicy::load(&a.policy)?;
    let task = ReachTask::new(&cfg.imitation.task, &cfg.robot)?;
    let episodes = a.episodes.unwrap_or(cfg.imitation.episodes);
    let report = evaluate(&task, &policy, episodes)?;
    if a.json {
        print_json(&report)?;
    } else {
        for (i, e) in report.episodes.iter().enumerate() {
            println!(
                "episode {i}: final error {:.4} m {}",
                e.error_m,
                if e.success { "success" } else { "miss" }
            );
        }
        println!("{}/{} successes", report.successes, episodes);
    }
    Ok(0)
}

fn tap(a: TapArgs) -> Result<i32> {
    let mut sub = subscribe_remote(a.addr.as_str(), &a.topic, a.policy())
        .with_context(|| format!("subscribing to {} at {}", a.topic, a.addr))?;
    for _ in 0..a.count {
        let env = sub.recv()?;
        println!("{}", serde_json::to_string(&*env)?);
    }
    Ok(0)
}
