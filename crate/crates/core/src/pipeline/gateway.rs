// SPDX-License-Identifier: Apache-2.0

//! WebSocket bridge between the operator console and the bus.

// Session helpers pass tungstenite's own error type through unchanged.
#![allow(clippy::result_large_err)]

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::protocol::{decode_inbound, state_msg, stats_msg, Decoded, Outbound, PROTOCOL_VERSION};
use super::{topics, PipelineError};
use crate::simrobot::RobotKind;
use crate::wire::{Bus, ControlEvent, ControlKind, Payload, Subscription, TopicPolicy};

const POLL: Duration = Duration::from_millis(5);

/// Accepts console connections. Inbound hand and control messages are
/// published on the bus; the latest robot state and stats go back out at a
/// capped rate. A dropped connection publishes a pause.
pub struct Gateway {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connected: Arc<AtomicUsize>,
    accept: Option<JoinHandle<()>>,
    sessions: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

#[derive(Clone)]
struct Ctx {
    bus: Bus,
    robot: RobotKind,
    period: Duration,
    stop: Arc<AtomicBool>,
    connected: Arc<AtomicUsize>,
}

impl Gateway {
    pub fn bind(bus: &Bus, addr: &str, robot: RobotKind, rate_hz: f64) -> Result<Self, PipelineError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(PipelineError::BadRate(rate_hz));
        }
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connected = Arc::new(AtomicUsize::new(0));
        let sessions = Arc::new(Mutex::new(Vec::new()));
        let ctx = Ctx {
            bus: bus.clone(),
            robot,
            period: Duration::from_secs_f64(1.0 / rate_hz),
            stop: stop.clone(),
            connected: connected.clone(),
        };
        let list = sessions.clone();
        let accept = std::thread::Builder::new()
            .name("gateway-accept".into())
            .spawn(move || accept_loop(listener, ctx, list))?;
        log::info!("console gateway listening on ws://{local}");
        Ok(Self {
            addr: local,
            stop,
            connected,
            accept: Some(accept),
            sessions,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Currently open console sessions.
    pub fn connections(&self) -> usize {
        self.connected.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for h in self.sessions.lock().unwrap().drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn accept_loop(listener: TcpListener, ctx: Ctx, sessions: Arc<Mutex<Vec<JoinHandle<()>>>>) {
    while !ctx.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let ctx = ctx.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("gateway-{peer}"))
                    .spawn(move || session(stream, peer, ctx));
                match spawned {
                    Ok(h) => sessions.lock().unwrap().push(h),
                    Err(e) => log::error!("cannot spawn console session: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL * 2),
            Err(e) => {
                log::error!("gateway accept failed: {e}");
                std::thread::sleep(POLL * 10);
            }
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &Outbound) -> Result<(), tungstenite::Error> {
    let text = serde_json::to_string(msg).expect("outbound messages serialize");
    ws.send(Message::Text(text))
}

fn session(stream: TcpStream, peer: SocketAddr, ctx: Ctx) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake with {peer} failed: {e}");
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    ctx.connected.fetch_add(1, Ordering::SeqCst);
    log::info!("console connected from {peer}");
    let result = run_session(&mut ws, &ctx);
    if let Err(e) = &result {
        log::info!("console {peer} disconnected: {e}");
    }
    // Operator loss: stop following the hand until someone resumes.
    let pause = ControlEvent {
        kind: ControlKind::Pause,
        ts: ctx.bus.clock().now(),
    };
    if let Err(e) = ctx.bus.publish(topics::CONTROL, Payload::Control(pause)) {
        log::error!("could not publish pause after disconnect: {e}");
    }
    ctx.connected.fetch_sub(1, Ordering::SeqCst);
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn run_session(ws: &mut WebSocket<TcpStream>, ctx: &Ctx) -> Result<(), tungstenite::Error> {
    let mut states: Subscription = ctx
        .bus
        .subscribe_with(topics::STATE, TopicPolicy::Conflate)
        .map_err(|e| tungstenite::Error::Io(std::io::Error::other(e)))?;
    let mut stats = ctx
        .bus
        .subscribe_with(topics::STATS, TopicPolicy::Conflate)
        .map_err(|e| tungstenite::Error::Io(std::io::Error::other(e)))?;
    send(
        ws,
        &Outbound::Hello {
            protocol: PROTOCOL_VERSION,
            robot: ctx.robot,
        },
    )?;
    let mut next_out = Instant::now();
    while !ctx.stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => handle_text(ws, ctx, &text)?,
            Ok(Message::Binary(_)) => send(
                ws,
                &Outbound::Error {
                    reason: "binary messages are not supported".into(),
                },
            )?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        let now = Instant::now();
        if now >= next_out {
            next_out = now + ctx.period;
            if let Ok(Some(env)) = states.latest() {
                if let Payload::State(s) = &env.payload {
                    send(ws, &state_msg(env.seq, s))?;
                }
            }
            if let Ok(Some(env)) = stats.latest() {
                if let Payload::Stats(s) = &env.payload {
                    send(ws, &stats_msg(s))?;
                }
            }
        }
    }
    Ok(())
}

fn handle_text(ws: &mut WebSocket<TcpStream>, ctx: &Ctx, text: &str) -> Result<(), tungstenite::Error> {
    let published = match decode_inbound(text, ctx.bus.clock().now()) {
        Ok(Decoded::Hand(f)) => ctx
            .bus
            .publish(topics::HAND_RAW, Payload::Hand(f))
            .map_err(|e| e.to_string()),
        Ok(Decoded::Control(c)) => ctx
            .bus
            .publish(topics::CONTROL, Payload::Control(c))
            .map_err(|e| e.to_string()),
        Err(reason) => Err(reason),
    };
    match published {
        Ok(_) => Ok(()),
        Err(reason) => send(ws, &Outbound::Error { reason }),
    }
}
