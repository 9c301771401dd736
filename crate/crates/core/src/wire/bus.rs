// SPDX-License-Identifier: Apache-2.0

//! In-process topic bus.
//!
//! Every subscription owns a small queue governed by a [`TopicPolicy`]. The
//! publisher only ever appends to those queues (dropping the oldest entry when
//! one is full), so a stalled reader never slows a producer down.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::message::{Envelope, Payload, PayloadKind};
use super::{Clock, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TopicPolicy {
    /// Bounded FIFO; the oldest message is dropped when full.
    Queue { bound: usize },
    /// Keep only the latest message.
    Conflate,
}

impl TopicPolicy {
    pub fn queue(bound: usize) -> Self {
        TopicPolicy::Queue { bound: bound.max(1) }
    }
}

/// A bus handle. Cloning is cheap and clones share the same topics.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<BusInner>,
}

#[derive(Default)]
struct BusInner {
    clock: Clock,
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    closed: AtomicBool,
}

struct Topic {
    kind: PayloadKind,
    policy: TopicPolicy,
    state: Mutex<TopicState>,
}

#[derive(Default)]
struct TopicState {
    next_seq: u64,
    subscribers: Vec<Weak<SubShared>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopicInfo {
    pub kind: PayloadKind,
    pub policy: TopicPolicy,
    pub published: u64,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_clock(clock: Clock) -> Self {
        Self {
            inner: Arc::new(BusInner {
                clock,
                ..Default::default()
            }),
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.inner.clock
    }

    /// Registers a topic. Re-registering with the same kind is a no-op.
    pub fn register(&self, topic: &str, kind: PayloadKind, policy: TopicPolicy) -> Result<(), WireError> {
        if topic.len() > super::codec::MAX_TOPIC_LEN {
            return Err(WireError::TopicTooLong(topic.len()));
        }
        if let TopicPolicy::Queue { bound: 0 } = policy {
            return Err(WireError::InvalidPolicy);
        }
        let mut topics = self.inner.topics.write().unwrap();
        if let Some(existing) = topics.get(topic) {
            if existing.kind != kind {
                return Err(WireError::KindMismatch {
                    topic: topic.into(),
                    expected: existing.kind,
                    got: kind,
                });
            }
            return Ok(());
        }
        topics.insert(
            topic.to_owned(),
            Arc::new(Topic {
                kind,
                policy,
                state: Mutex::new(TopicState::default()),
            }),
        );
        Ok(())
    }

    pub fn topic_info(&self, topic: &str) -> Option<TopicInfo> {
        let t = self.topic(topic).ok()?;
        let published = t.state.lock().unwrap().next_seq;
        Some(TopicInfo {
            kind: t.kind,
            policy: t.policy,
            published,
        })
    }

    pub fn topics(&self) -> Vec<String> {
        let mut names: Vec<String> = self.inner.topics.read().unwrap().keys().cloned().collect();
        names.sort();
        names
    }

    fn topic(&self, topic: &str) -> Result<Arc<Topic>, WireError> {
        self.inner
            .topics
            .read()
            .unwrap()
            .get(topic)
            .cloned()
            .ok_or_else(|| WireError::UnknownTopic(topic.to_owned()))
    }

    /// Publishes a payload and returns the sequence number assigned to it.
    pub fn publish(&self, topic: &str, payload: Payload) -> Result<u64, WireError> {
        if self.is_closed() {
            return Err(WireError::BusClosed);
        }
        let t = self.topic(topic)?;
        if payload.kind() != t.kind {
            return Err(WireError::KindMismatch {
                topic: topic.to_owned(),
                expected: t.kind,
                got: payload.kind(),
            });
        }
        let mut state = t.state.lock().unwrap();
        let seq = state.next_seq;
        state.next_seq += 1;
        // Stamped under the topic lock so timestamps follow seq order.
        let env = Arc::new(Envelope {
            topic: topic.to_owned(),
            seq,
            ts: self.inner.clock.now(),
            payload,
        });
        state.subscribers.retain(|weak| match weak.upgrade() {
            Some(sub) => {
                sub.push(env.clone());
                true
            }
            None => false,
        });
        Ok(seq)
    }

    /// Subscribes with the topic's registered policy.
    pub fn subscribe(&self, topic: &str) -> Result<Subscription, WireError> {
        let policy = self.topic(topic)?.policy;
        self.subscribe_with(topic, policy)
    }

    pub fn subscribe_with(&self, topic: &str, policy: TopicPolicy) -> Result<Subscription, WireError> {
        if let TopicPolicy::Queue { bound: 0 } = policy {
            return Err(WireError::InvalidPolicy);
        }
        let t = self.topic(topic)?;
        let shared = Arc::new(SubShared::new(policy));
        if self.is_closed() {
            shared.close();
        }
        let mut state = t.state.lock().unwrap();
        state.subscribers.push(Arc::downgrade(&shared));
        Ok(Subscription::new(topic.to_owned(), shared, Some(state.next_seq)))
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    /// Closes the bus. Publishing fails from now on; subscribers drain what
    /// they already hold and then see [`WireError::BusClosed`].
    pub fn close(&self) {
        self.inner.closed.store(true, Ordering::Release);
        for t in self.inner.topics.read().unwrap().values() {
            for sub in t.state.lock().unwrap().subscribers.iter().filter_map(Weak::upgrade) {
                sub.close();
            }
        }
    }
}

pub(crate) struct SubShared {
    policy: TopicPolicy,
    queue: Mutex<SubQueue>,
    ready: Condvar,
}

#[derive(Default)]
struct SubQueue {
    items: VecDeque<Arc<Envelope>>,
    dropped: u64,
    closed: bool,
}

impl SubShared {
    pub(crate) fn new(policy: TopicPolicy) -> Self {
        Self {
            policy,
            queue: Mutex::new(SubQueue::default()),
            ready: Condvar::new(),
        }
    }

    pub(crate) fn push(&self, env: Arc<Envelope>) {
        let mut q = self.queue.lock().unwrap();
        match self.policy {
            TopicPolicy::Conflate => {
                if q.items.pop_front().is_some() {
                    q.dropped += 1;
                }
            }
            TopicPolicy::Queue { bound } => {
                while q.items.len() >= bound {
                    q.items.pop_front();
                    q.dropped += 1;
                }
            }
        }
        q.items.push_back(env);
        drop(q);
        self.ready.notify_one();
    }

    pub(crate) fn close(&self) {
        self.queue.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

/// Receiving end of one subscription.
///
/// Delivered sequence numbers are strictly increasing; any gap between them is
/// counted in [`Subscription::missed`].
pub struct Subscription {
    topic: String,
    shared: Arc<SubShared>,
    expected_seq: Option<u64>,
    missed: u64,
    received: u64,
}

impl Subscription {
    /// `first_seq` is the seq the next delivered message should carry, when known.
    pub(crate) fn new(topic: String, shared: Arc<SubShared>, first_seq: Option<u64>) -> Self {
        Self {
            topic,
            shared,
            expected_seq: first_seq,
            missed: 0,
            received: 0,
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn policy(&self) -> TopicPolicy {
        self.shared.policy
    }

    fn account(&mut self, env: &Envelope) {
        if let Some(expected) = self.expected_seq {
            if env.seq > expected {
                self.missed += env.seq - expected;
            }
        }
        self.expected_seq = Some(env.seq + 1);
        self.received += 1;
    }

    /// Non-blocking receive. `Ok(None)` means nothing is queued right now.
    pub fn try_recv(&mut self) -> Result<Option<Arc<Envelope>>, WireError> {
        let mut q = self.shared.queue.lock().unwrap();
        match q.items.pop_front() {
            Some(env) => {
                drop(q);
                self.account(&env);
                Ok(Some(env))
            }
            None if q.closed => Err(WireError::BusClosed),
            None => Ok(None),
        }
    }

    /// Blocks until a message arrives or the bus closes.
    pub fn recv(&mut self) -> Result<Arc<Envelope>, WireError> {
        let mut q = self.shared.queue.lock().unwrap();
        loop {
            if let Some(env) = q.items.pop_front() {
                drop(q);
                self.account(&env);
                return Ok(env);
            }
            if q.closed {
                return Err(WireError::BusClosed);
            }
            q = self.shared.ready.wait(q).unwrap();
        }
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Arc<Envelope>>, WireError> {
        if self.wait(timeout)? {
            self.try_recv()
        } else {
            Ok(None)
        }
    }

    /// Waits until at least one message is queued. Returns `Ok(false)` on
    /// timeout.
    pub fn wait(&self, timeout: Duration) -> Result<bool, WireError> {
        let deadline = Instant::now() + timeout;
        let mut q = self.shared.queue.lock().unwrap();
        loop {
            if !q.items.is_empty() {
                return Ok(true);
            }
            if q.closed {
                return Err(WireError::BusClosed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(false);
            }
            q = self.shared.ready.wait_timeout(q, deadline - now).unwrap().0;
        }
    }

    /// Drains the queue and returns only the newest message, if any.
    pub fn latest(&mut self) -> Result<Option<Arc<Envelope>>, WireError> {
        let mut last = None;
        loop {
            match self.try_recv() {
                Ok(Some(env)) => last = Some(env),
                Ok(None) => return Ok(last),
                Err(e) if last.is_none() => return Err(e),
                Err(_) => return Ok(last),
            }
        }
    }

    /// Drains everything currently queued.
    pub fn drain(&mut self) -> Result<Vec<Arc<Envelope>>, WireError> {
        let mut out = Vec::new();
        loop {
            match self.try_recv() {
                Ok(Some(env)) => out.push(env),
                Ok(None) => return Ok(out),
                Err(e) if out.is_empty() => return Err(e),
                Err(_) => return Ok(out),
            }
        }
    }

    pub fn pending(&self) -> usize {
        self.shared.queue.lock().unwrap().items.len()
    }

    /// Messages discarded by this subscription's policy.
    pub fn dropped(&self) -> u64 {
        self.shared.queue.lock().unwrap().dropped
    }

    /// Total sequence-number gap across delivered messages.
    pub fn missed(&self) -> u64 {
        self.missed
    }

    pub fn received(&self) -> u64 {
        self.received
    }
}

impl Iterator for Subscription {
    type Item = Arc<Envelope>;

    fn next(&mut self) -> Option<Self::Item> {
        self.recv().ok()
    }
}
