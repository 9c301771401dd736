// SPDX-License-Identifier: Apache-2.0

//! Nearest-timestamp matching of secondary streams onto a primary stream.

use serde::{Deserialize, Serialize};

use super::{RecorderError, StreamLog};

/// Index of the sample in `sorted` (non-decreasing) closest to `t`. Ties go
/// to the earlier sample, including among equal timestamps.
pub fn nearest(sorted: &[u64], t: u64) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let hi = sorted.partition_point(|&x| x < t);
    if hi == 0 {
        return Some(0);
    }
    let below = sorted[hi - 1];
    let first_below = sorted.partition_point(|&x| x < below);
    if hi == sorted.len() {
        return Some(first_below);
    }
    if sorted[hi] - t < t - below {
        Some(hi)
    } else {
        Some(first_below)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedStep {
    /// Index into the primary stream.
    pub primary: usize,
    /// Matched index into each secondary stream, in the order given.
    pub matches: Vec<usize>,
    /// Largest |Δt| across the matches, seconds.
    pub max_dt_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub primary: String,
    pub others: Vec<String>,
    pub tolerance_s: f64,
    pub steps: Vec<AlignedStep>,
    pub kept: usize,
    pub dropped: usize,
}

fn check_tolerance(t: f64) -> Result<(), RecorderError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(RecorderError::BadTolerance(t))
    }
}

/// Matches every primary timestamp against each secondary stream. A step is
/// kept only if every match lies within `tolerance_s`.
pub fn align_timestamps(
    primary: &[u64],
    others: &[&[u64]],
    tolerance_s: f64,
) -> Result<Vec<AlignedStep>, RecorderError> {
    check_tolerance(tolerance_s)?;
    let tol_ns = tolerance_s * 1e9;
    let mut steps = Vec::with_capacity(primary.len());
    'primary: for (i, &t) in primary.iter().enumerate() {
        let mut matches = Vec::with_capacity(others.len());
        let mut max_dt = 0.0f64;
        for o in others {
            let Some(j) = nearest(o, t) else { continue 'primary };
            let dt = (o[j] as f64 - t as f64).abs();
            if dt > tol_ns {
                continue 'primary;
            }
            max_dt = max_dt.max(dt);
            matches.push(j);
        }
        steps.push(AlignedStep {
            primary: i,
            matches,
            max_dt_s: max_dt * 1e-9,
        });
    }
    Ok(steps)
}

/// Aligns the named primary log against every other log.
pub fn align(logs: &[StreamLog], primary: &str, tolerance_s: f64) -> Result<Alignment, RecorderError> {
    check_tolerance(tolerance_s)?;
    let p = logs
        .iter()
        .find(|l| l.topic == primary)
        .filter(|l| !l.samples.is_empty())
        .ok_or_else(|| RecorderError::EmptyPrimary(primary.into()))?;
    for l in logs {
        l.check_monotonic()?;
    }
    let others: Vec<&StreamLog> = logs.iter().filter(|l| l.topic != primary).collect();
    let other_ts: Vec<Vec<u64>> = others.iter().map(|l| l.timestamps()).collect();
    let refs: Vec<&[u64]> = other_ts.iter().map(|v| v.as_slice()).collect();
    let steps = align_timestamps(&p.timestamps(), &refs, tolerance_s)?;
    let kept = steps.len();
    Ok(Alignment {
        primary: primary.into(),
        others: others.iter().map(|l| l.topic.clone()).collect(),
        tolerance_s,
        steps,
        kept,
        dropped: p.samples.len() - kept,
    })
}

/// Half the mean sample period of the slowest of `logs` with at least two
/// samples.
pub fn default_tolerance(logs: &[&StreamLog]) -> Option<f64> {
    logs.iter()
        .filter(|l| l.samples.len() >= 2)
        .map(|l| {
            let ts = l.timestamps();
            (ts[ts.len() - 1] - ts[0]) as f64 * 1e-9 / (ts.len() - 1) as f64
        })
        .filter(|p| *p > 0.0)
        .max_by(f64::total_cmp)
        .map(|p| p / 2.0)
}
