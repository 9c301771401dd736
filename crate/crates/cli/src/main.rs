// SPDX-License-Identifier: Apache-2.0

//! `openteach`: run, benchmark and record the teleoperation pipeline, then
//! compile demonstrations and train and evaluate policies on them.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use openteach_core::imitation::Algo;
use openteach_core::pipeline::SourceKind;
use openteach_core::{RobotKind, TopicPolicy};

#[derive(Parser, Debug)]
#[command(name = "openteach", version, about = "Hand-pose teleoperation of simulated robots")]
struct Cli {
    /// Log filter, e.g. `info` or `openteach_core=debug` (overrides RUST_LOG).
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// TOML config; defaults apply for anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the live pipeline.
    Run(RunArgs),
    /// Measure tick rate, state rate and latency at a rate preset.
    Bench(BenchArgs),
    /// Run the pipeline and log topics to a directory.
    Record(RecordArgs),
    /// Align recorded logs into a demonstration file.
    Compile(CompileArgs),
    /// Record scripted reach demonstrations.
    Collect(CollectArgs),
    /// Replay a demonstration's actions open loop.
    Replay(ReplayArgs),
    /// Fit a policy to demonstrations.
    Train(TrainArgs),
    /// Evaluate a policy on the reach task.
    Eval(EvalArgs),
    /// Print messages from a running pipeline's TCP exporter.
    Tap(TapArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Robot to drive: arm, hand or mobile.
    #[arg(long)]
    robot: Option<RobotKind>,
    /// Hand input: synth (scripted) or console (WebSocket gateway).
    #[arg(long)]
    source: Option<SourceKind>,
    /// Serve the operator console's static files and discovery document on
    /// this port (the WebSocket gateway starts too).
    #[arg(long, value_name = "PORT")]
    serve_console: Option<u16>,
    /// Directory with the built console.
    #[arg(long)]
    console_dir: Option<PathBuf>,
    /// WebSocket gateway address, e.g. 127.0.0.1:8765.
    #[arg(long)]
    ws: Option<String>,
    /// Controller rate, Hz.
    #[arg(long)]
    rate: Option<f64>,
    /// Kinematic robot (commanded joints are reached each tick).
    #[arg(long)]
    kinematic: bool,
    /// Stop after this many seconds; otherwise run until Ctrl-C.
    #[arg(long)]
    secs: Option<f64>,
    /// Print the run report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// 90hz, 60hz, 20hz or 5hz; omit to run all four.
    #[arg(long)]
    preset: Option<String>,
    /// Duration of each preset run.
    #[arg(long, default_value_t = 10.0)]
    secs: f64,
    /// Print the results as a JSON array.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct RecordArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output directory for the per-topic logs.
    #[arg(long)]
    out: PathBuf,
    /// Recording duration.
    #[arg(long)]
    secs: f64,
    /// Robot to drive: arm, hand or mobile.
    #[arg(long)]
    robot: Option<RobotKind>,
    /// Hand input: synth (scripted) or console (WebSocket gateway).
    #[arg(long)]
    source: Option<SourceKind>,
    /// Print the recording summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CompileArgs {
    /// Directory written by `record`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Topic whose samples define the demonstration steps.
    #[arg(long, default_value = "robot/state")]
    primary: String,
    /// Topic the actions are taken from.
    #[arg(long, default_value = "robot/cmd")]
    action: String,
    /// Matching tolerance, seconds; default is half the slower stream's period.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Demonstration file to write.
    #[arg(long)]
    out: PathBuf,
    /// Print the compile summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Number of demonstrations; defaults to the config value.
    #[arg(long)]
    n: Option<usize>,
    /// Directory for the demo_NNN.otd files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Demonstration file.
    #[arg(long)]
    demo: PathBuf,
    /// Command rate, Hz; defaults to the reach task rate.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Demonstration files to pool.
    #[arg(long, num_args = 1.., required = true)]
    demos: Vec<PathBuf>,
    /// linear or knn.
    #[arg(long)]
    algo: Algo,
    /// Policy file to write.
    #[arg(long)]
    out: PathBuf,
    /// Ridge weight for the linear policy.
    #[arg(long)]
    ridge: Option<f64>,
    /// Neighbors for the kNN policy.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Policy file written by `train`.
    #[arg(long)]
    policy: PathBuf,
    /// Task to evaluate on; only reach is available.
    #[arg(long, default_value = "reach")]
    task: String,
    /// Number of episodes; defaults to the config value.
    #[arg(long)]
    episodes: Option<usize>,
    /// Print per-episode results as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TapArgs {
    /// Exporter address (`bus.export_addr` of the running pipeline).
    #[arg(long)]
    addr: String,
    /// Topic to subscribe to.
    #[arg(long, default_value = "robot/state")]
    topic: String,
    /// Stop after this many messages.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Queue up to this many messages instead of keeping only the newest.
    #[arg(long)]
    queue: Option<usize>,
}

impl TapArgs {
    fn policy(&self) -> TopicPolicy {
        match self.queue {
            Some(bound) => TopicPolicy::Queue { bound },
            None => TopicPolicy::Conflate,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if let Some(filter) = &cli.log {
        logger.parse_filters(filter);
    }
    logger.init();
    match commands::dispatch(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
