// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use super::PipelineError;

const LATENESS_WINDOW: usize = 4096;

/// Fixed-rate tick scheduler with absolute deadlines.
///
/// Deadlines are `start + k * period`, so sleep overshoot does not accumulate.
/// A tick that starts after its deadline is an overrun; the schedule only
/// skips ahead when it has fallen more than two periods behind.
#[derive(Debug)]
pub struct RateLimiter {
    period: Duration,
    next: Option<Instant>,
    ticks: u64,
    overruns: u64,
    skipped: u64,
    lateness: VecDeque<f64>,
}

impl RateLimiter {
    pub fn new(hz: f64) -> Result<Self, PipelineError> {
        if !(hz > 0.0 && hz.is_finite()) {
            return Err(PipelineError::BadRate(hz));
        }
        Ok(Self {
            period: Duration::from_secs_f64(1.0 / hz),
            next: None,
            ticks: 0,
            overruns: 0,
            skipped: 0,
            lateness: VecDeque::with_capacity(LATENESS_WINDOW),
        })
    }

    /// Like [`RateLimiter::new`], with the first deadline at `first`
    /// instead of the first call to [`RateLimiter::wait`].
    pub fn starting_at(hz: f64, first: Instant) -> Result<Self, PipelineError> {
        let mut r = Self::new(hz)?;
        r.next = Some(first);
        Ok(r)
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    /// Restart the schedule so the next tick fires immediately.
    pub fn reset(&mut self) {
        self.next = None;
    }

    /// Block until the next deadline, then count the tick. The first call
    /// returns immediately and anchors the schedule.
    pub fn wait(&mut self) {
        let now = Instant::now();
        let deadline = *self.next.get_or_insert(now);
        if now < deadline {
            std::thread::sleep(deadline - now);
        } else if now > deadline {
            // The previous tick's body ran past this deadline.
            self.overruns += 1;
            log::debug!("tick overrun: {:?} behind schedule", now - deadline);
        }
        let now = Instant::now();
        let late = now.saturating_duration_since(deadline);
        let mut next = deadline;
        if self.lateness.len() == LATENESS_WINDOW {
            self.lateness.pop_front();
        }
        self.lateness.push_back(late.as_secs_f64());
        if late > self.period * 2 {
            let missed = (late.as_nanos() / self.period.as_nanos()) as u64;
            self.skipped += missed;
            next = now;
        }
        self.next = Some(next + self.period);
        self.ticks += 1;
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn overruns(&self) -> u64 {
        self.overruns
    }

    /// Deadlines abandoned by skipping ahead.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Lateness of the most recent ticks relative to their deadlines, seconds.
    pub fn lateness(&self) -> impl Iterator<Item = f64> + '_ {
        self.lateness.iter().copied()
    }
}
