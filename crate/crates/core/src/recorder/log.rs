// SPDX-License-Identifier: Apache-2.0

//! Stream logs: one NDJSON file per topic, a header line then one record per
//! delivered message.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RecorderError;
use crate::wire::{Bus, Envelope, Payload, PayloadKind, Subscription, Timestamp, TopicPolicy, WireError};

pub const LOG_FORMAT: &str = "openteach.log";
pub const LOG_VERSION: u32 = 1;
const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogHeader {
    format: String,
    version: u32,
    topic: String,
    kind: PayloadKind,
}

/// One logged message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    /// Publication stamp; the alignment key.
    pub ts: Timestamp,
    /// When the recorder took the message off its tap.
    pub ingest: Timestamp,
    pub payload: Payload,
}

/// A topic's recorded samples in delivery order.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamLog {
    pub topic: String,
    pub kind: PayloadKind,
    pub samples: Vec<LogRecord>,
    pub path: Option<PathBuf>,
}

/// File name for a topic's log: `/` becomes `__`.
pub fn log_file_name(topic: &str) -> String {
    format!("{}.ndjson", topic.replace('/', "__"))
}

impl StreamLog {
    pub fn new(topic: &str, kind: PayloadKind) -> Self {
        Self {
            topic: topic.into(),
            kind,
            samples: Vec::new(),
            path: None,
        }
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.ts.mono_ns).collect()
    }

    pub fn check_monotonic(&self) -> Result<(), RecorderError> {
        match self.samples.windows(2).position(|w| w[1].ts < w[0].ts) {
            Some(i) => Err(RecorderError::NonMonotonic {
                topic: self.topic.clone(),
                index: i + 1,
            }),
            None => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecorderError> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let bad = |line: usize, reason: String| RecorderError::BadLog {
            path: name.clone(),
            line,
            reason,
        };
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header: LogHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?).map_err(|e| bad(1, format!("bad header: {e}")))?,
            None => return Err(bad(1, "missing header".into())),
        };
        if header.format != LOG_FORMAT {
            return Err(bad(1, format!("not a stream log ({})", header.format)));
        }
        if header.version != LOG_VERSION {
            return Err(RecorderError::SchemaVersionMismatch {
                found: header.version,
                expected: LOG_VERSION,
            });
        }
        let mut log = StreamLog::new(&header.topic, header.kind);
        log.path = Some(path.to_path_buf());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?;
            if rec.payload.kind() != header.kind {
                return Err(bad(
                    i + 2,
                    format!("{:?} payload in a {:?} log", rec.payload.kind(), header.kind),
                ));
            }
            log.samples.push(rec);
        }
        log.check_monotonic()?;
        Ok(log)
    }

    /// Loads every `*.ndjson` log in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>, RecorderError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        paths.sort();
        paths.iter().map(Self::load).collect()
    }

    /// Writes the whole log to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecorderError> {
        let mut w = LogWriter::create(path.as_ref(), &self.topic, self.kind)?;
        for r in &self.samples {
            w.write(r)?;
        }
        w.finish()
    }
}

struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    fn create(path: &Path, topic: &str, kind: PayloadKind) -> Result<Self, RecorderError> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            topic: topic.into(),
            kind,
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self { out })
    }

    fn write(&mut self, r: &LogRecord) -> Result<(), RecorderError> {
        serde_json::to_writer(&mut self.out, r).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), RecorderError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}

fn record_of(env: &Envelope, ingest: Timestamp) -> LogRecord {
    LogRecord {
        seq: env.seq,
        ts: env.ts,
        ingest,
        payload: env.payload.clone(),
    }
}

/// Per-topic outcome of a recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub written: u64,
    /// Discarded by the tap queue.
    pub dropped: u64,
    /// Gaps in the delivered sequence numbers.
    pub missed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordSummary {
    pub topics: BTreeMap<String, TopicSummary>,
}

impl RecordSummary {
    pub fn total_dropped(&self) -> u64 {
        self.topics.values().map(|t| t.dropped).sum()
    }
}

type Writer = JoinHandle<Result<TopicSummary, RecorderError>>;

/// Threaded recorder: one bounded tap and one writer thread per topic.
pub struct Recorder {
    dir: PathBuf,
    stop: Arc<AtomicBool>,
    writers: Vec<(String, Writer)>,
}

impl Recorder {
    pub fn start(
        bus: &Bus,
        topics: &[String],
        dir: impl AsRef<Path>,
        queue_bound: usize,
    ) -> Result<Self, RecorderError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let stop = Arc::new(AtomicBool::new(false));
        let mut taps = Vec::new();
        // Subscribe and open everything before any writer runs, so a bad
        // topic fails the whole start.
        for topic in topics {
            let info = bus
                .topic_info(topic)
                .ok_or_else(|| RecorderError::Wire(WireError::UnknownTopic(topic.clone())))?;
            let sub = bus.subscribe_with(topic, TopicPolicy::queue(queue_bound))?;
            let w = LogWriter::create(&dir.join(log_file_name(topic)), topic, info.kind)?;
            taps.push((topic.clone(), sub, w));
        }
        let mut writers = Vec::new();
        for (topic, sub, w) in taps {
            let (stop, clock) = (stop.clone(), bus.clock().clone());
            let h = std::thread::Builder::new()
                .name(format!("rec-{topic}"))
                .spawn(move || write_loop(sub, w, &stop, &clock))?;
            writers.push((topic, h));
        }
        Ok(Self { dir, stop, writers })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Stops all writers, flushes the logs and writes `summary.json`.
    pub fn stop(mut self) -> Result<RecordSummary, RecorderError> {
        self.stop.store(true, Ordering::SeqCst);
        let mut summary = RecordSummary::default();
        let mut first_err = None;
        for (topic, h) in self.writers.drain(..) {
            match h.join() {
                Ok(Ok(s)) => {
                    summary.topics.insert(topic, s);
                }
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(RecorderError::WriterPanicked(topic));
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)?;
        std::fs::write(self.dir.join(SUMMARY_FILE), text)?;
        Ok(summary)
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for (_, h) in self.writers.drain(..) {
            let _ = h.join();
        }
    }
}

fn write_loop(
    mut sub: Subscription,
    mut w: LogWriter,
    stop: &AtomicBool,
    clock: &crate::wire::Clock,
) -> Result<TopicSummary, RecorderError> {
    let mut written = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match sub.recv_timeout(Duration::from_millis(20)) {
            Ok(Some(env)) => {
                w.write(&record_of(&env, clock.now()))?;
                written += 1;
            }
            Ok(None) => {}
            Err(WireError::BusClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    loop {
        match sub.try_recv() {
            Ok(Some(env)) => {
                w.write(&record_of(&env, clock.now()))?;
                written += 1;
            }
            Ok(None) | Err(WireError::BusClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    w.finish()?;
    Ok(TopicSummary {
        written,
        dropped: sub.dropped(),
        missed: sub.missed(),
    })
}

/// Synchronous in-memory tap for lockstep runs: call [`MemoryTap::poll`]
/// after each step.
pub struct MemoryTap {
    taps: Vec<(Subscription, StreamLog)>,
    clock: crate::wire::Clock,
}

impl MemoryTap {
    pub fn new(bus: &Bus, topics: &[String], queue_bound: usize) -> Result<Self, RecorderError> {
        let mut taps = Vec::new();
        for topic in topics {
            let info = bus
                .topic_info(topic)
                .ok_or_else(|| RecorderError::Wire(WireError::UnknownTopic(topic.clone())))?;
            let sub = bus.subscribe_with(topic, TopicPolicy::queue(queue_bound))?;
            taps.push((sub, StreamLog::new(topic, info.kind)));
        }
        Ok(Self {
            taps,
            clock: bus.clock().clone(),
        })
    }

    pub fn poll(&mut self) -> Result<(), RecorderError> {
        for (sub, log) in &mut self.taps {
            for env in sub.drain()? {
                log.samples.push(record_of(&env, self.clock.now()));
            }
        }
        Ok(())
    }

    pub fn dropped(&self) -> u64 {
        self.taps.iter().map(|(s, _)| s.dropped()).sum()
    }

    pub fn into_logs(mut self) -> Result<Vec<StreamLog>, RecorderError> {
        self.poll()?;
        Ok(self.taps.into_iter().map(|(_, l)| l).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::topics;
    use crate::wire::{Clock, ControlEvent, ControlKind};

    fn control_bus(bound: usize) -> Bus {
        let bus = Bus::with_clock(Clock::manual());
        bus.register(topics::CONTROL, PayloadKind::ControlEvent, TopicPolicy::queue(bound))
            .unwrap();
        bus
    }

    fn pause(bus: &Bus) {
        let ev = ControlEvent {
            kind: ControlKind::Pause,
            ts: bus.clock().now(),
        };
        bus.publish(topics::CONTROL, Payload::Control(ev)).unwrap();
    }

    #[test]
    fn empty_recording_leaves_valid_logs() {
        let dir = tempfile::tempdir().unwrap();
        let bus = control_bus(8);
        let rec = Recorder::start(&bus, &[topics::CONTROL.into()], dir.path(), 8).unwrap();
        let summary = rec.stop().unwrap();
        assert_eq!(summary.topics[topics::CONTROL].written, 0);
        let log = StreamLog::load(dir.path().join(log_file_name(topics::CONTROL))).unwrap();
        assert_eq!(log.topic, topics::CONTROL);
        assert!(log.samples.is_empty());
        assert!(dir.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn records_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let bus = control_bus(64);
        let rec = Recorder::start(&bus, &[topics::CONTROL.into()], dir.path(), 64).unwrap();
        for k in 0..10 {
            bus.clock().set_ns(k * 1_000_000);
            pause(&bus);
        }
        let summary = rec.stop().unwrap();
        assert_eq!(summary.topics[topics::CONTROL].written, 10);
        let logs = StreamLog::load_dir(dir.path()).unwrap();
        assert_eq!(logs.len(), 1);
        let seqs: Vec<u64> = logs[0].samples.iter().map(|s| s.seq).collect();
        assert_eq!(seqs, (0..10).collect::<Vec<_>>());
        assert_eq!(logs[0].timestamps()[3], 3_000_000);
    }

    #[test]
    fn forced_drops_equal_sequence_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let bus = control_bus(1);
        let rec = Recorder::start(&bus, &[topics::CONTROL.into()], dir.path(), 1).unwrap();
        for _ in 0..5000 {
            pause(&bus);
        }
        let s = rec.stop().unwrap();
        let t = &s.topics[topics::CONTROL];
        assert!(t.dropped > 0);
        assert_eq!(t.dropped, t.missed);
        assert_eq!(t.written + t.dropped, 5000);
        let log = StreamLog::load(dir.path().join(log_file_name(topics::CONTROL))).unwrap();
        let gaps: u64 = log.samples.windows(2).map(|w| w[1].seq - w[0].seq - 1).sum::<u64>() + log.samples[0].seq;
        assert_eq!(gaps, t.dropped);
    }

    #[test]
    fn unknown_topic_fails_start() {
        let dir = tempfile::tempdir().unwrap();
        let bus = control_bus(1);
        assert!(Recorder::start(&bus, &["nope".into()], dir.path(), 4).is_err());
    }

    #[test]
    fn load_rejects_bad_version_and_decreasing_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ndjson");
        std::fs::write(
            &p,
            "{\"format\":\"openteach.log\",\"version\":9,\"topic\":\"control\",\"kind\":\"control_event\"}\n",
        )
        .unwrap();
        assert!(matches!(
            StreamLog::load(&p),
            Err(RecorderError::SchemaVersionMismatch { found: 9, .. })
        ));
        let mut log = StreamLog::new("control", PayloadKind::ControlEvent);
        for ns in [5u64, 3] {
            let ts = Timestamp::manual(ns);
            log.samples.push(LogRecord {
                seq: ns,
                ts,
                ingest: ts,
                payload: Payload::Control(ControlEvent {
                    kind: ControlKind::Resume,
                    ts,
                }),
            });
        }
        log.save(&p).unwrap();
        assert!(matches!(
            StreamLog::load(&p),
            Err(RecorderError::NonMonotonic { index: 1, .. })
        ));
    }
}
