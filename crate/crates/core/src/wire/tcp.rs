// SPDX-License-Identifier: Apache-2.0

//! Stream transport for the bus.
//!
//! A process exports its bus by binding a [`TcpExporter`]. Remote readers
//! connect, send a one-topic subscribe request, and then receive a stream of
//! encoded frames. The exporter forwards from an ordinary in-process
//! subscription, so remote readers inherit the same drop semantics.
//!
//! Subscribe request: `"OTSB" | version u8 | policy u8 (0 conflate, 1 queue)
//! | bound u32 | topic_len u16 | topic`. Reply: one status byte (0 ok,
//! 1 unknown topic, 2 bad request).

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::bus::{SubShared, Subscription};
use super::codec::{decode, encode, read_frame, MAX_TOPIC_LEN};
use super::{Bus, TopicPolicy, WireError};

const SUB_MAGIC: [u8; 4] = *b"OTSB";
const STATUS_OK: u8 = 0;
const STATUS_UNKNOWN_TOPIC: u8 = 1;
const STATUS_BAD_REQUEST: u8 = 2;

pub struct TcpExporter {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpExporter {
    pub fn bind(bus: &Bus, addr: impl ToSocketAddrs) -> Result<Self, WireError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let bus = bus.clone();
        let stop_flag = stop.clone();
        let acceptor = std::thread::Builder::new()
            .name("bus-export".into())
            .spawn(move || accept_loop(listener, bus, stop_flag))?;
        Ok(Self {
            addr,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpExporter {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn accept_loop(listener: TcpListener, bus: Bus, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Acquire) && !bus.is_closed() {
        match listener.accept() {
            Ok((stream, peer)) => {
                let bus = bus.clone();
                let stop = stop.clone();
                let _ = std::thread::Builder::new()
                    .name(format!("bus-export-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_subscriber(stream, bus, stop) {
                            log::debug!("subscriber {peer} ended: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                log::warn!("bus exporter accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Result<(String, TopicPolicy), WireError> {
    let mut head = [0u8; 4 + 1 + 1 + 4 + 2];
    stream.read_exact(&mut head)?;
    if head[..4] != SUB_MAGIC || head[4] != super::codec::VERSION {
        return Err(WireError::MalformedFrame("bad subscribe request".into()));
    }
    let bound = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let policy = match head[5] {
        0 => TopicPolicy::Conflate,
        1 if bound >= 1 => TopicPolicy::Queue { bound },
        _ => return Err(WireError::InvalidPolicy),
    };
    let len = u16::from_le_bytes([head[10], head[11]]) as usize;
    if len > MAX_TOPIC_LEN {
        return Err(WireError::TopicTooLong(len));
    }
    let mut topic = vec![0u8; len];
    stream.read_exact(&mut topic)?;
    let topic = String::from_utf8(topic).map_err(|_| WireError::MalformedFrame("topic is not UTF-8".into()))?;
    Ok((topic, policy))
}

fn serve_subscriber(mut stream: TcpStream, bus: Bus, stop: Arc<AtomicBool>) -> Result<(), WireError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let (topic, policy) = match read_request(&mut stream) {
        Ok(r) => r,
        Err(e) => {
            let _ = stream.write_all(&[STATUS_BAD_REQUEST]);
            return Err(e);
        }
    };
    let mut sub = match bus.subscribe_with(&topic, policy) {
        Ok(s) => s,
        Err(e) => {
            let _ = stream.write_all(&[STATUS_UNKNOWN_TOPIC]);
            return Err(e);
        }
    };
    stream.write_all(&[STATUS_OK])?;
    let mut out = BufWriter::new(stream);
    while !stop.load(Ordering::Acquire) {
        match sub.recv_timeout(Duration::from_millis(100)) {
            Ok(Some(env)) => {
                out.write_all(&encode(&env)?)?;
                if sub.pending() == 0 {
                    out.flush()?;
                }
            }
            Ok(None) => {}
            Err(WireError::BusClosed) => break,
            Err(e) => return Err(e),
        }
    }
    out.flush()?;
    Ok(())
}

/// Subscribes to `topic` on a remote exporter. Frames are received on a
/// background thread and queued under `policy`, preserving the remote seq.
pub fn subscribe_remote(addr: impl ToSocketAddrs, topic: &str, policy: TopicPolicy) -> Result<Subscription, WireError> {
    if topic.len() > MAX_TOPIC_LEN {
        return Err(WireError::TopicTooLong(topic.len()));
    }
    let (mode, bound) = match policy {
        TopicPolicy::Conflate => (0u8, 0u32),
        TopicPolicy::Queue { bound } if bound >= 1 => (1, bound as u32),
        TopicPolicy::Queue { .. } => return Err(WireError::InvalidPolicy),
    };
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let mut req = Vec::with_capacity(12 + topic.len());
    req.extend_from_slice(&SUB_MAGIC);
    req.push(super::codec::VERSION);
    req.push(mode);
    req.extend_from_slice(&bound.to_le_bytes());
    req.extend_from_slice(&(topic.len() as u16).to_le_bytes());
    req.extend_from_slice(topic.as_bytes());
    stream.write_all(&req)?;
    let mut status = [0u8; 1];
    stream.read_exact(&mut status)?;
    match status[0] {
        STATUS_OK => {}
        STATUS_UNKNOWN_TOPIC => return Err(WireError::UnknownTopic(topic.to_owned())),
        _ => return Err(WireError::MalformedFrame("subscribe request rejected".into())),
    }

    let shared = Arc::new(SubShared::new(policy));
    let feed = Arc::downgrade(&shared);
    std::thread::Builder::new()
        .name(format!("bus-remote-{topic}"))
        .spawn(move || {
            let mut reader = BufReader::new(stream);
            loop {
                let frame = match read_frame(&mut reader) {
                    Ok(Some(f)) => f,
                    Ok(None) => break,
                    Err(e) => {
                        log::debug!("remote stream ended: {e}");
                        break;
                    }
                };
                let Some(sub) = feed.upgrade() else { return };
                match decode(&frame) {
                    Ok(env) => sub.push(Arc::new(env)),
                    Err(e) => log::warn!("dropping undecodable frame: {e}"),
                }
            }
            if let Some(sub) = feed.upgrade() {
                sub.close();
            }
        })?;
    // Remote seqs are unknown until the first frame arrives.
    Ok(Subscription::new(topic.to_owned(), shared, None))
}
