// SPDX-License-Identifier: Apache-2.0

//! End-to-end runs of the `openteach` binary.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_openteach");

// Live pipelines share one CPU; keep them apart.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn openteach(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

/// Spawns `openteach` and reads stderr until a line containing `marker`,
/// returning the text after it.
fn spawn_until(args: &[&str], marker: &str) -> (Child, String) {
    let mut child = Command::new(BIN)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    while let Some(Ok(line)) = lines.next() {
        if let Some(i) = line.find(marker) {
            let rest = line[i + marker.len()..].trim().to_string();
            // Keep draining stderr so the child never blocks on it.
            std::thread::spawn(move || for _ in lines {});
            return (child, rest);
        }
    }
    let _ = child.kill();
    let status = child.wait().unwrap();
    panic!("`{marker}` never appeared on stderr ({status})");
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    body
}

#[test]
fn help_lists_subcommands() {
    let out = ok(openteach(&["--help"]));
    for cmd in [
        "run", "bench", "record", "compile", "collect", "replay", "train", "eval", "tap",
    ] {
        assert!(out.contains(cmd), "{cmd} missing from help:\n{out}");
    }
}

#[test]
fn record_compile_train_eval() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "[robot]\nkinematic = true\n\n[pipeline]\nrate_hz = 60.0\n");
    let rec = d.join("rec");
    let out = ok(openteach(&[
        "record",
        "--config",
        &cfg,
        "--out",
        rec.to_str().unwrap(),
        "--secs",
        "1.5",
    ]));
    assert!(out.contains("robot/state:"), "{out}");
    for f in [
        "robot__state.ndjson",
        "robot__cmd.ndjson",
        "summary.json",
        "config.toml",
    ] {
        assert!(rec.join(f).exists(), "{f} not written");
    }
    let demo = d.join("demo.otd");
    let out = ok(openteach(&[
        "compile",
        "--in",
        rec.to_str().unwrap(),
        "--primary",
        "robot/state",
        "--tolerance",
        "0.00833",
        "--out",
        demo.to_str().unwrap(),
        "--json",
    ]));
    let s: Value = serde_json::from_str(&out).unwrap();
    assert!(s["steps"].as_u64().unwrap() > 50, "{s}");
    assert_eq!(s["obs_dim"], 11);
    assert_eq!(s["action_dim"], 7);

    // Scripted demos for the reach task, then both learners.
    let demos = d.join("demos");
    ok(openteach(&["collect", "--n", "4", "--out", demos.to_str().unwrap()]));
    let files: Vec<String> = (0..4)
        .map(|i| demos.join(format!("demo_{i:03}.otd")).display().to_string())
        .collect();
    for algo in ["linear", "knn"] {
        let policy = d.join(format!("{algo}.otp"));
        let mut args = vec!["train", "--algo", algo, "--out", policy.to_str().unwrap(), "--demos"];
        args.extend(files.iter().map(String::as_str));
        let out = ok(openteach(&args));
        assert!(out.contains("training MSE"), "{out}");
        let out = ok(openteach(&[
            "eval",
            "--policy",
            policy.to_str().unwrap(),
            "--task",
            "reach",
            "--episodes",
            "2",
            "--json",
        ]));
        let r: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(r["episodes"].as_array().unwrap().len(), 2);
    }
    let out = ok(openteach(&["replay", "--demo", &files[0]]));
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["q"].as_array().unwrap().len(), 7);
    // The compiled live recording is an arm demo too and replays.
    ok(openteach(&["replay", "--demo", demo.to_str().unwrap()]));
}

#[test]
fn bench_reports_and_rejects_unknown_presets() {
    let _g = serial();
    let out = ok(openteach(&["bench", "--preset", "20hz", "--secs", "1", "--json"]));
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r[0]["rate_hz"], 20.0);
    assert!(r[0]["ticks"].as_u64().unwrap() >= 19);
    let bad = openteach(&["bench", "--preset", "33hz"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown preset"));
}

#[test]
fn run_serves_console_discovery() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>console</html>").unwrap();
    let console_dir = dir.path().to_str().unwrap();
    let (child, addr) = spawn_until(
        &[
            "run",
            "--kinematic",
            "--serve-console",
            "0",
            "--console-dir",
            console_dir,
            "--ws",
            "127.0.0.1:0",
            "--secs",
            "2",
            "--json",
        ],
        "operator console: http://",
    );
    let addr = addr.trim_end_matches('/').to_string();
    let resp = http_get(&addr, "/openteach.json");
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body = &resp[resp.find("\r\n\r\n").unwrap() + 4..];
    let doc: Value = serde_json::from_str(body).unwrap();
    let index = http_get(&addr, "/");
    assert!(index.contains("<html>console</html>"), "{index}");
    assert!(doc["ws"].as_str().unwrap().starts_with("ws://127.0.0.1:"), "{doc}");
    let out = ok(child.wait_with_output().unwrap());
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!(report["states"].as_u64().unwrap() > 0);
}

#[test]
fn tap_reads_exported_topics() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[bus]\nexport_addr = \"127.0.0.1:0\"\n\n[robot]\nkinematic = true\n",
    );
    let (child, addr) = spawn_until(&["run", "--config", &cfg, "--secs", "3"], "bus exporter: tcp://");
    let out = ok(openteach(&[
        "tap",
        "--addr",
        &addr,
        "--topic",
        "robot/state",
        "--count",
        "3",
    ]));
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert_eq!(l["topic"], "robot/state");
        assert_eq!(l["payload"]["type"], "state");
    }
    ok(child.wait_with_output().unwrap());
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = openteach(&["compile", "--in", dir.path().to_str().unwrap(), "--out", "x.otd"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no *.ndjson logs"));

    let cfg = write_config(dir.path(), "[pipeline]\nrate_hz = -1.0\n");
    let o = openteach(&["run", "--config", &cfg, "--secs", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let p = dir.path().join("p.otp");
    std::fs::write(&p, "{}").unwrap();
    let o = openteach(&["eval", "--policy", p.to_str().unwrap(), "--task", "push"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown task"));

    let o = openteach(&["run", "--robot", "tank"]);
    assert_eq!(o.status.code(), Some(2));
}
