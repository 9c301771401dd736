// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

static PROCESS_EPOCH: OnceLock<(Instant, u64)> = OnceLock::new();

/// Wall-clock origin used by manual clocks so their timestamps stay positive
/// and reproducible (2023-11-14T22:13:20Z).
const MANUAL_WALL_ORIGIN_US: u64 = 1_700_000_000_000_000;

fn epoch() -> &'static (Instant, u64) {
    PROCESS_EPOCH.get_or_init(|| {
        let wall = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(1);
        (Instant::now(), wall.max(1))
    })
}

/// Monotonic nanoseconds since the process epoch plus wall-clock microseconds.
///
/// `mono_ns` is the alignment key for everything produced inside one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp {
    pub mono_ns: u64,
    pub wall_us: u64,
}

impl Timestamp {
    pub fn now() -> Self {
        let (start, wall0) = *epoch();
        let mono_ns = start.elapsed().as_nanos() as u64;
        Self {
            mono_ns,
            wall_us: wall0 + mono_ns / 1_000,
        }
    }

    /// Timestamp on the manual time base, `mono_ns` after its origin.
    pub fn manual(mono_ns: u64) -> Self {
        Self {
            mono_ns,
            wall_us: MANUAL_WALL_ORIGIN_US + mono_ns / 1_000,
        }
    }

    pub fn from_secs_manual(secs: f64) -> Self {
        Self::manual((secs * 1e9).round() as u64)
    }

    pub fn secs(&self) -> f64 {
        self.mono_ns as f64 * 1e-9
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn secs_since(&self, earlier: &Timestamp) -> f64 {
        (self.mono_ns as i128 - earlier.mono_ns as i128) as f64 * 1e-9
    }
}

/// Time source for envelope stamping and node scheduling.
///
/// `Manual` is advanced explicitly and makes lockstep runs reproducible.
#[derive(Debug, Clone, Default)]
pub enum Clock {
    #[default]
    System,
    Manual(Arc<AtomicU64>),
}

impl Clock {
    pub fn manual() -> Self {
        Clock::Manual(Arc::new(AtomicU64::new(0)))
    }

    pub fn now(&self) -> Timestamp {
        match self {
            Clock::System => Timestamp::now(),
            Clock::Manual(ns) => Timestamp::manual(ns.load(Ordering::Acquire)),
        }
    }

    pub fn is_manual(&self) -> bool {
        matches!(self, Clock::Manual(_))
    }

    /// Sets a manual clock. No-op on the system clock.
    pub fn set_ns(&self, mono_ns: u64) {
        if let Clock::Manual(ns) = self {
            ns.store(mono_ns, Ordering::Release);
        }
    }

    pub fn advance_ns(&self, delta: u64) {
        if let Clock::Manual(ns) = self {
            ns.fetch_add(delta, Ordering::AcqRel);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_clock_is_monotone_and_positive() {
        let a = Timestamp::now();
        let b = Timestamp::now();
        assert!(b.mono_ns >= a.mono_ns);
        assert!(a.wall_us > 0);
    }

    #[test]
    fn manual_clock_only_moves_when_told() {
        let clock = Clock::manual();
        assert_eq!(clock.now().mono_ns, 0);
        clock.advance_ns(1_000);
        clock.advance_ns(500);
        assert_eq!(clock.now().mono_ns, 1_500);
        assert!(clock.now().wall_us > 0);
        clock.set_ns(7);
        assert_eq!(clock.now(), Timestamp::manual(7));
    }
}
