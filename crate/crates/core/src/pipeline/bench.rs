// SPDX-License-Identifier: Apache-2.0

//! Fixed-rate benchmark runs of the full threaded pipeline.

use serde::Serialize;

use super::{Pipeline, PipelineError, RunReport, SourceKind};
use crate::config::Config;

/// Controller rates exercised by `openteach bench`.
pub const RATE_PRESETS: [f64; 4] = [90.0, 60.0, 20.0, 5.0];
/// Allowed relative error of the measured controller tick rate.
pub const TICK_RATE_TOL: f64 = 0.01;
/// Allowed relative error of the published robot state rate.
pub const STATE_RATE_TOL: f64 = 0.02;
/// Command latency bound at 90 Hz, milliseconds.
pub const LATENCY_P99_MAX_MS: f64 = 15.0;

/// Accepts `90hz`, `90Hz` or `90`.
pub fn parse_preset(s: &str) -> Result<f64, PipelineError> {
    let t = s.trim();
    let digits = t.strip_suffix("hz").or_else(|| t.strip_suffix("Hz")).unwrap_or(t);
    let hz: f64 = digits
        .parse()
        .map_err(|_| PipelineError::Config(format!("unknown preset `{s}`; expected one of 90hz, 60hz, 20hz, 5hz")))?;
    if !RATE_PRESETS.contains(&hz) {
        return Err(PipelineError::Config(format!(
            "unknown preset `{s}`; expected one of 90hz, 60hz, 20hz, 5hz"
        )));
    }
    Ok(hz)
}

/// `base` with the synthetic source, a kinematic robot and no network services.
pub fn bench_config(base: &Config, rate_hz: f64) -> Config {
    let mut cfg = base.clone();
    cfg.robot.kinematic = true;
    cfg.pipeline.rate_hz = rate_hz;
    cfg.pipeline.source = SourceKind::Synth;
    cfg.pipeline.synth.hz = None;
    cfg.pipeline.inject_delay_ms = 0.0;
    cfg.pipeline.ws_addr = None;
    cfg.pipeline.console_addr = None;
    cfg.bus.export_addr = None;
    cfg
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub rate_hz: f64,
    pub secs: f64,
    pub tick_hz: f64,
    pub state_hz: f64,
    pub ticks: u64,
    pub states: u64,
    pub overruns: u64,
    pub latency_p50_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub jitter_p99_ms: Option<f64>,
    pub tick_ok: bool,
    pub state_ok: bool,
}

impl BenchResult {
    pub fn from_report(rate_hz: f64, r: &RunReport) -> Self {
        let rel = |v: f64| (v - rate_hz).abs() / rate_hz;
        Self {
            rate_hz,
            secs: r.elapsed_s,
            tick_hz: r.tick_hz(),
            state_hz: r.state_hz(),
            ticks: r.ticks,
            states: r.states,
            overruns: r.overruns,
            latency_p50_ms: r.latency_p50_ms(),
            latency_p99_ms: r.latency_p99_ms(),
            jitter_p99_ms: r.jitter_p99_s().map(|s| s * 1e3),
            tick_ok: rel(r.tick_hz()) <= TICK_RATE_TOL,
            state_ok: rel(r.state_hz()) <= STATE_RATE_TOL,
        }
    }

    pub fn passed(&self) -> bool {
        self.tick_ok && self.state_ok
    }
}

/// Runs the pipeline at `rate_hz` for `secs` of wall time.
pub fn run_bench(base: &Config, rate_hz: f64, secs: f64) -> Result<(BenchResult, RunReport), PipelineError> {
    let cfg = bench_config(base, rate_hz);
    let report = Pipeline::start(&cfg)?.run_for(secs);
    Ok((BenchResult::from_report(rate_hz, &report), report))
}
