// SPDX-License-Identifier: Apache-2.0

//! Console WebSocket gateway over real sockets.

use std::net::{SocketAddr, TcpStream};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use openteach_core::pipeline::{topics, Gateway, SourceKind};
use openteach_core::{Bus, Config, ControlKind, Payload, Pipeline, RobotConfig, RobotKind, RobotState, SimEnv};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

// Timing-sensitive tests share one CPU; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn bus() -> Bus {
    let bus = Bus::new();
    Config::default().topics.register(&bus).unwrap();
    bus
}

fn connect(addr: SocketAddr) -> Client {
    let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
    }
    ws
}

/// Next text message as JSON, or None if nothing arrives before `deadline`.
fn next_json(ws: &mut Client, within: Duration) -> Option<Value> {
    let deadline = Instant::now() + within;
    while Instant::now() < deadline {
        match ws.read() {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => panic!("client read failed: {e}"),
        }
    }
    None
}

fn next_of_type(ws: &mut Client, ty: &str, within: Duration) -> Option<Value> {
    let deadline = Instant::now() + within;
    while let Some(v) = next_json(ws, deadline.saturating_duration_since(Instant::now())) {
        if v["type"] == ty {
            return Some(v);
        }
    }
    None
}

fn send(ws: &mut Client, v: &Value) {
    ws.send(Message::Text(v.to_string())).unwrap();
}

fn fixtures() -> Value {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../docs/protocol-fixtures.json"
    ))
    .unwrap();
    serde_json::from_str(&text).unwrap()
}

fn state(i: u64) -> RobotState {
    let mut s = SimEnv::new(RobotKind::Arm, RobotConfig::default()).unwrap().state();
    s.source_seq = Some(i);
    s
}

#[test]
fn hello_then_control_reaches_bus() {
    let _g = serial();
    let bus = bus();
    let mut controls = bus.subscribe(topics::CONTROL).unwrap();
    let gw = Gateway::bind(&bus, "127.0.0.1:0", RobotKind::Hand, 30.0).unwrap();
    let mut ws = connect(gw.local_addr());
    let hello = next_json(&mut ws, Duration::from_secs(2)).unwrap();
    assert_eq!(hello, json!({"type": "hello", "protocol": 1, "robot": "hand"}));

    let sent = Instant::now();
    send(&mut ws, &json!({"type": "control", "kind": "pause"}));
    let env = controls
        .recv_timeout(Duration::from_secs(1))
        .unwrap()
        .expect("pause on bus");
    // The gateway polls every 5 ms; one 90 Hz tick is 11 ms.
    assert!(sent.elapsed() < Duration::from_millis(1000 / 90 + 1) * 4);
    match &env.payload {
        Payload::Control(ev) => assert_eq!(ev.kind, ControlKind::Pause),
        other => panic!("{other:?}"),
    }
    send(
        &mut ws,
        &json!({"type": "control", "kind": "set_resolution", "value": 0.25}),
    );
    let env = controls.recv_timeout(Duration::from_secs(1)).unwrap().unwrap();
    assert_eq!(env.payload.as_control().unwrap().kind, ControlKind::SetResolution(0.25));
    assert_eq!(gw.connections(), 1);
}

#[test]
fn fixtures_are_accepted_or_rejected() {
    let _g = serial();
    let bus = bus();
    let mut hands = bus.subscribe(topics::HAND_RAW).unwrap();
    let mut controls = bus.subscribe(topics::CONTROL).unwrap();
    let gw = Gateway::bind(&bus, "127.0.0.1:0", RobotKind::Arm, 30.0).unwrap();
    let mut ws = connect(gw.local_addr());
    next_of_type(&mut ws, "hello", Duration::from_secs(2)).unwrap();
    let fx = fixtures();

    for msg in fx["valid_inbound"].as_array().unwrap() {
        send(&mut ws, msg);
        let (sub, ty) = if msg["type"] == "hand" {
            (&mut hands, "hand")
        } else {
            (&mut controls, "control")
        };
        let env = sub.recv_timeout(Duration::from_secs(1)).unwrap();
        assert!(env.is_some(), "valid {ty} message not published: {msg}");
    }
    for msg in fx["invalid_inbound"].as_array().unwrap() {
        send(&mut ws, msg);
        let err = next_of_type(&mut ws, "error", Duration::from_secs(1));
        assert!(err.is_some(), "no error for {msg}");
        assert!(!err.unwrap()["reason"].as_str().unwrap().is_empty());
    }
    // Errors never close the session.
    ws.send(Message::Binary(vec![1, 2, 3])).unwrap();
    assert!(next_of_type(&mut ws, "error", Duration::from_secs(1)).is_some());
    send(&mut ws, &fx["valid_inbound"][0]);
    assert!(hands.recv_timeout(Duration::from_secs(1)).unwrap().is_some());
    assert!(hands.drain().unwrap().is_empty());
    assert!(controls.drain().unwrap().is_empty());
    assert_eq!(gw.connections(), 1);
}

#[test]
fn fast_state_is_throttled_to_latest() {
    let _g = serial();
    let bus = bus();
    let gw = Gateway::bind(&bus, "127.0.0.1:0", RobotKind::Arm, 30.0).unwrap();
    let mut ws = connect(gw.local_addr());
    next_of_type(&mut ws, "hello", Duration::from_secs(2)).unwrap();

    // 300 Hz publisher for 2 s.
    let publisher = {
        let bus = bus.clone();
        std::thread::spawn(move || {
            let start = Instant::now();
            for i in 0..600u64 {
                let due = start + Duration::from_secs_f64(i as f64 / 300.0);
                if let Some(d) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(d);
                }
                bus.publish(topics::STATE, Payload::State(state(i))).unwrap();
            }
        })
    };
    let start = Instant::now();
    let mut received = Vec::new();
    while start.elapsed() < Duration::from_millis(2300) {
        if let Some(v) = next_of_type(&mut ws, "state", Duration::from_millis(50)) {
            received.push(v);
        }
    }
    publisher.join().unwrap();
    let n = received.len();
    assert!(n >= 20, "only {n} states");
    assert!(n as f64 <= 30.0 * 2.3 + 1.0, "{n} states in 2.3 s");
    // Strictly newer each time, and the last message carries the final state.
    let seqs: Vec<u64> = received.iter().map(|v| v["source_seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*seqs.last().unwrap(), 599);
    // Skipping shows conflation rather than queueing.
    assert!(seqs.windows(2).any(|w| w[1] - w[0] > 1));
}

#[test]
fn disconnect_publishes_pause() {
    let _g = serial();
    let bus = bus();
    let mut controls = bus.subscribe(topics::CONTROL).unwrap();
    let gw = Gateway::bind(&bus, "127.0.0.1:0", RobotKind::Arm, 30.0).unwrap();
    let ws = connect(gw.local_addr());
    let deadline = Instant::now() + Duration::from_secs(2);
    while gw.connections() == 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(1));
    }
    assert_eq!(gw.connections(), 1);
    let cut = Instant::now();
    drop(ws);
    let env = controls
        .recv_timeout(Duration::from_millis(500))
        .unwrap()
        .expect("pause after disconnect");
    assert!(cut.elapsed() < Duration::from_millis(100), "{:?}", cut.elapsed());
    assert_eq!(env.payload.as_control().unwrap().kind, ControlKind::Pause);
    let deadline = Instant::now() + Duration::from_secs(1);
    while gw.connections() == 1 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(1));
    }
    assert_eq!(gw.connections(), 0);
}

#[test]
fn pipeline_with_console_source_pauses_on_disconnect() {
    let _g = serial();
    let mut cfg = Config::default();
    cfg.robot.kinematic = true;
    cfg.pipeline.source = SourceKind::Console;
    cfg.pipeline.ws_addr = Some("127.0.0.1:0".into());
    let pipe = Pipeline::start(&cfg).unwrap();
    let addr = pipe.gateway().unwrap().local_addr();
    let mut ws = connect(addr);
    next_of_type(&mut ws, "hello", Duration::from_secs(2)).unwrap();

    let hand = fixtures()["valid_inbound"][0].clone();
    assert_eq!(hand["type"], "hand");
    send(&mut ws, &json!({"type": "control", "kind": "resume"}));
    let deadline = Instant::now() + Duration::from_secs(3);
    let mut engaged = false;
    while Instant::now() < deadline && !engaged {
        send(&mut ws, &hand);
        if let Some(s) = next_of_type(&mut ws, "state", Duration::from_millis(40)) {
            engaged = s["paused"] == false && !s["source_seq"].is_null();
        }
    }
    assert!(engaged, "pipeline never followed the console hand");

    let cut = Instant::now();
    drop(ws);
    let mut states = pipe.bus().subscribe(topics::STATE).unwrap();
    let mut paused_at = None;
    while cut.elapsed() < Duration::from_secs(1) {
        if let Some(env) = states.recv_timeout(Duration::from_millis(5)).unwrap() {
            if env.payload.as_state().unwrap().paused {
                paused_at = Some(cut.elapsed());
                break;
            }
        }
    }
    let report = pipe.stop();
    let paused_at = paused_at.expect("robot never paused");
    assert!(paused_at < Duration::from_millis(100), "paused after {paused_at:?}");
    assert!(report.states > 0);
}
