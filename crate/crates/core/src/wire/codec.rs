// SPDX-License-Identifier: Apache-2.0

//! Binary framing for envelopes.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OTCH" | version u8 | kind u8 | topic_len u16 | topic | seq u64
//!        | mono_ns u64 | wall_us u64 | payload_len u32 | payload
//! ```
//!
//! Floats are written as their IEEE-754 bit patterns so decoding is exact.

use std::io::Read;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::message::*;
use super::{Timestamp, WireError};
use crate::geom::Pose;
use crate::retarget::{EndEffectorTarget, HandJointTarget, MobileBaseTarget, HAND_JOINTS};
use crate::simrobot::{BasePose, JointState, RobotKind};

pub const MAGIC: [u8; 4] = *b"OTCH";
pub const VERSION: u8 = 1;
pub const MAX_TOPIC_LEN: usize = 64;
pub const MAX_PAYLOAD_LEN: usize = 16 * 1024 * 1024;

const PREFIX_LEN: usize = 4 + 1 + 1 + 2;
const FIXED_TAIL_LEN: usize = 8 + 8 + 8 + 4;

pub fn encode(env: &Envelope) -> Result<Vec<u8>, WireError> {
    let topic = env.topic.as_bytes();
    if topic.len() > MAX_TOPIC_LEN {
        return Err(WireError::TopicTooLong(topic.len()));
    }
    let mut body = Writer::default();
    match &env.payload {
        Payload::Hand(p) => p.put(&mut body),
        Payload::Command(p) => p.put(&mut body),
        Payload::State(p) => p.put(&mut body),
        Payload::Control(p) => p.put(&mut body),
        Payload::Stats(p) => p.put(&mut body),
    }
    let body = body.0;
    if body.len() > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(body.len()));
    }

    let mut out = Writer(Vec::with_capacity(
        PREFIX_LEN + topic.len() + FIXED_TAIL_LEN + body.len(),
    ));
    out.bytes(&MAGIC);
    out.u8(VERSION);
    out.u8(env.payload.kind() as u8);
    out.u16(topic.len() as u16);
    out.bytes(topic);
    out.u64(env.seq);
    out.u64(env.ts.mono_ns);
    out.u64(env.ts.wall_us);
    out.u32(body.len() as u32);
    out.bytes(&body);
    Ok(out.0)
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let kind_byte = r.u8()?;
    let topic_len = r.u16()? as usize;
    if topic_len > MAX_TOPIC_LEN {
        return Err(malformed(format!("topic length {topic_len} exceeds {MAX_TOPIC_LEN}")));
    }
    let topic = std::str::from_utf8(r.take(topic_len)?)
        .map_err(|_| malformed("topic is not UTF-8"))?
        .to_owned();
    let seq = r.u64()?;
    let ts = Timestamp {
        mono_ns: r.u64()?,
        wall_us: r.u64()?,
    };
    let payload_len = r.u32()? as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(malformed(format!("payload length {payload_len} exceeds limit")));
    }
    if r.remaining() != payload_len {
        return Err(malformed(format!(
            "payload length field says {payload_len}, frame holds {}",
            r.remaining()
        )));
    }
    let kind = PayloadKind::from_u8(kind_byte).ok_or(WireError::UnknownPayloadKind(kind_byte))?;
    let payload = match kind {
        PayloadKind::HandFrame => Payload::Hand(HandFrame::get(&mut r)?),
        PayloadKind::RobotCommand => Payload::Command(RobotCommand::get(&mut r)?),
        PayloadKind::RobotState => Payload::State(RobotState::get(&mut r)?),
        PayloadKind::ControlEvent => Payload::Control(ControlEvent::get(&mut r)?),
        PayloadKind::StatsSample => Payload::Stats(StatsSample::get(&mut r)?),
    };
    if r.remaining() != 0 {
        return Err(malformed("trailing bytes after payload"));
    }
    Ok(Envelope {
        topic,
        seq,
        ts,
        payload,
    })
}

/// Reads one complete frame from a byte stream. Returns `Ok(None)` on a clean
/// end of stream at a frame boundary.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut filled = 0;
    while filled < PREFIX_LEN {
        match reader.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(malformed("stream ended inside a frame header")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if prefix[..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let topic_len = u16::from_le_bytes([prefix[6], prefix[7]]) as usize;
    if topic_len > MAX_TOPIC_LEN {
        return Err(malformed("topic too long"));
    }
    let mut frame = prefix.to_vec();
    frame.resize(PREFIX_LEN + topic_len + FIXED_TAIL_LEN, 0);
    read_exact(reader, &mut frame[PREFIX_LEN..])?;
    let n = frame.len();
    let payload_len = u32::from_le_bytes(frame[n - 4..].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(malformed("payload too large"));
    }
    frame.resize(n + payload_len, 0);
    read_exact(reader, &mut frame[n..])?;
    Ok(Some(frame))
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), WireError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            malformed("stream ended inside a frame")
        } else {
            e.into()
        }
    })
}

fn malformed(msg: impl Into<String>) -> WireError {
    WireError::MalformedFrame(msg.into())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_bits().to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        for x in v {
            self.f64(*x);
        }
    }
    fn vec3(&mut self, v: &Vector3<f64>) {
        for c in v.iter() {
            self.f64(*c);
        }
    }
    fn quat(&mut self, q: &UnitQuaternion<f64>) {
        let q = q.quaternion();
        for c in [q.w, q.i, q.j, q.k] {
            self.f64(c);
        }
    }
    fn ts(&mut self, ts: &Timestamp) {
        self.u64(ts.mono_ns);
        self.u64(ts.wall_us);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(malformed(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(malformed(format!("invalid bool byte {b}"))),
        }
    }
    fn str(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(8) > self.remaining() {
            return Err(malformed("vector length exceeds frame"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn vec3(&mut self) -> Result<Vector3<f64>, WireError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn quat(&mut self) -> Result<UnitQuaternion<f64>, WireError> {
        let (w, x, y, z) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        // Bit-exact: the encoder only ever sees unit quaternions.
        Ok(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)))
    }
    fn ts(&mut self) -> Result<Timestamp, WireError> {
        Ok(Timestamp {
            mono_ns: self.u64()?,
            wall_us: self.u64()?,
        })
    }
    fn opt<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, WireError>) -> Result<Option<T>, WireError> {
        if self.bool()? {
            Ok(Some(f(self)?))
        } else {
            Ok(None)
        }
    }
}

trait Codec: Sized {
    fn put(&self, w: &mut Writer);
    fn get(r: &mut Reader<'_>) -> Result<Self, WireError>;
}

impl Codec for HandFrame {
    fn put(&self, w: &mut Writer) {
        w.ts(&self.ts);
        w.u8(match self.hand {
            Handedness::Left => 0,
            Handedness::Right => 1,
        });
        for p in &self.keypoints {
            w.vec3(p);
        }
        w.f64(self.confidence);
    }

    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let ts = r.ts()?;
        let hand = match r.u8()? {
            0 => Handedness::Left,
            1 => Handedness::Right,
            b => return Err(malformed(format!("invalid handedness {b}"))),
        };
        let mut keypoints = [Vector3::zeros(); NUM_KEYPOINTS];
        for p in keypoints.iter_mut() {
            *p = r.vec3()?;
        }
        Ok(HandFrame {
            ts,
            hand,
            keypoints,
            confidence: r.f64()?,
        })
    }
}

impl Codec for Pose {
    fn put(&self, w: &mut Writer) {
        w.vec3(&self.position);
        w.quat(&self.orientation);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Pose::new(r.vec3()?, r.quat()?))
    }
}

impl Codec for RobotKind {
    fn put(&self, w: &mut Writer) {
        w.u8(match self {
            RobotKind::Arm => 0,
            RobotKind::Hand => 1,
            RobotKind::Mobile => 2,
        });
    }
    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        match r.u8()? {
            0 => Ok(RobotKind::Arm),
            1 => Ok(RobotKind::Hand),
            2 => Ok(RobotKind::Mobile),
            b => Err(malformed(format!("invalid robot kind {b}"))),
        }
    }
}

impl Codec for RobotCommand {
    fn put(&self, w: &mut Writer) {
        w.u64(self.source_seq);
        w.ts(&self.source_ts);
        w.bool(self.paused);
        w.f64(self.resolution);
        match &self.action {
            CommandAction::Arm { target, gripper_toggle } => {
                w.u8(0);
                w.vec3(&target.position);
                w.quat(&target.orientation);
                w.bool(*gripper_toggle);
            }
            CommandAction::Hand { target } => {
                w.u8(1);
                for a in &target.angles {
                    w.f64(*a);
                }
            }
            CommandAction::Mobile { target } => {
                w.u8(2);
                w.f64(target.base_lateral_velocity);
                w.f64(target.lift_height);
                w.f64(target.arm_extension);
                w.quat(&target.wrist_orientation);
                w.bool(target.gripper_toggle);
            }
            CommandAction::GripperToggle => w.u8(3),
        }
    }

    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let source_seq = r.u64()?;
        let source_ts = r.ts()?;
        let paused = r.bool()?;
        let resolution = r.f64()?;
        let action = match r.u8()? {
            0 => CommandAction::Arm {
                target: EndEffectorTarget {
                    position: r.vec3()?,
                    orientation: r.quat()?,
                },
                gripper_toggle: r.bool()?,
            },
            1 => {
                let mut angles = [0.0; HAND_JOINTS];
                for a in angles.iter_mut() {
                    *a = r.f64()?;
                }
                CommandAction::Hand {
                    target: HandJointTarget { angles },
                }
            }
            2 => CommandAction::Mobile {
                target: MobileBaseTarget {
                    base_lateral_velocity: r.f64()?,
                    lift_height: r.f64()?,
                    arm_extension: r.f64()?,
                    wrist_orientation: r.quat()?,
                    gripper_toggle: r.bool()?,
                },
            },
            3 => CommandAction::GripperToggle,
            b => return Err(malformed(format!("invalid command action {b}"))),
        };
        Ok(RobotCommand {
            source_seq,
            source_ts,
            paused,
            resolution,
            action,
        })
    }
}

impl Codec for RobotState {
    fn put(&self, w: &mut Writer) {
        self.kind.put(w);
        w.f64s(&self.joints.q);
        w.f64s(&self.joints.qd);
        w.ts(&self.joints.ts);
        self.ee.put(w);
        w.bool(self.gripper_closed);
        w.f64(self.base.x);
        w.f64(self.base.y);
        w.f64(self.base.theta);
        w.f64(self.lift);
        w.f64(self.extension);
        w.bool(self.source_seq.is_some());
        if let Some(s) = self.source_seq {
            w.u64(s);
        }
        w.bool(self.source_ts.is_some());
        if let Some(ts) = &self.source_ts {
            w.ts(ts);
        }
        w.bool(self.paused);
        w.f64(self.resolution);
    }

    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RobotState {
            kind: RobotKind::get(r)?,
            joints: JointState {
                q: r.f64s()?,
                qd: r.f64s()?,
                ts: r.ts()?,
            },
            ee: Pose::get(r)?,
            gripper_closed: r.bool()?,
            base: BasePose {
                x: r.f64()?,
                y: r.f64()?,
                theta: r.f64()?,
            },
            lift: r.f64()?,
            extension: r.f64()?,
            source_seq: r.opt(|r| r.u64())?,
            source_ts: r.opt(|r| r.ts())?,
            paused: r.bool()?,
            resolution: r.f64()?,
        })
    }
}

impl Codec for ControlEvent {
    fn put(&self, w: &mut Writer) {
        match self.kind {
            ControlKind::Pause => w.u8(0),
            ControlKind::Resume => w.u8(1),
            ControlKind::SetResolution(v) => {
                w.u8(2);
                w.f64(v);
            }
            ControlKind::ResetAnchor => w.u8(3),
        }
        w.ts(&self.ts);
    }

    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let kind = match r.u8()? {
            0 => ControlKind::Pause,
            1 => ControlKind::Resume,
            2 => ControlKind::SetResolution(r.f64()?),
            3 => ControlKind::ResetAnchor,
            b => return Err(malformed(format!("invalid control kind {b}"))),
        };
        Ok(ControlEvent { kind, ts: r.ts()? })
    }
}

impl Codec for StatsSample {
    fn put(&self, w: &mut Writer) {
        w.str(&self.topic);
        w.f64(self.measured_hz);
        for p in [self.latency_p50_ms, self.latency_p99_ms] {
            w.bool(p.is_some());
            if let Some(v) = p {
                w.f64(v);
            }
        }
        w.u64(self.dropped);
        w.bool(self.stale);
    }

    fn get(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(StatsSample {
            topic: r.str()?,
            measured_hz: r.f64()?,
            latency_p50_ms: r.opt(|r| r.f64())?,
            latency_p99_ms: r.opt(|r| r.f64())?,
            dropped: r.u64()?,
            stale: r.bool()?,
        })
    }
}
