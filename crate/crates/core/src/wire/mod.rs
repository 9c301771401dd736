// SPDX-License-Identifier: Apache-2.0

//! Message schemas, binary framing, and the topic bus.

mod bus;
pub mod codec;
pub mod message;
pub mod tcp;
mod time;

use thiserror::Error;

pub use bus::{Bus, Subscription, TopicInfo, TopicPolicy};
pub use codec::{decode, encode};
pub use message::*;
pub use tcp::{subscribe_remote, TcpExporter};
pub use time::{Clock, Timestamp};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("topic is {0} bytes, limit is 64")]
    TopicTooLong(usize),
    #[error("payload is {0} bytes, limit is 16 MiB")]
    PayloadTooLarge(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown payload kind {0}")]
    UnknownPayloadKind(u8),
    #[error("topic `{topic}` carries {expected:?}, got {got:?}")]
    KindMismatch {
        topic: String,
        expected: PayloadKind,
        got: PayloadKind,
    },
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("queue bound must be at least 1")]
    InvalidPolicy,
    #[error("bus closed")]
    BusClosed,
    #[error("invalid hand frame: {0}")]
    InvalidHandFrame(String),
    #[error("invalid control event: {0}")]
    InvalidControl(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
