// SPDX-License-Identifier: Apache-2.0

//! Joint-space PD control on unit-inertia joints.
//!
//! Each joint is a double integrator driven by
//! `tau = kp (q* - q) - kd qd - bias (+ bias when compensating)`, where `bias`
//! is a constant disturbance torque standing in for gravity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("non-finite joint state or target")]
    NonFinite,
    #[error("time step {0} s outside (0, 0.01]")]
    BadTimestep(f64),
    #[error("expected {expected} joints, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub const MAX_DT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub ts: Timestamp,
}

impl JointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: vec![0.0; n],
            ts: Timestamp::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub gravity_bias: Vec<f64>,
    pub compensate: bool,
}

impl PdGains {
    pub fn uniform(n: usize, kp: f64, kd: f64, gravity_bias: f64, compensate: bool) -> Self {
        Self {
            kp: vec![kp; n],
            kd: vec![kd; n],
            gravity_bias: vec![gravity_bias; n],
            compensate,
        }
    }

    pub fn len(&self) -> usize {
        self.kp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kp.is_empty()
    }
}

/// One semi-implicit Euler step. Joints that hit a limit are clamped and
/// their velocity zeroed.
pub fn pd_step(
    js: &JointState,
    q_target: &[f64],
    gains: &PdGains,
    dt: f64,
    limits: &[(f64, f64)],
) -> Result<JointState, ControlError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(ControlError::BadTimestep(dt));
    }
    let n = js.q.len();
    for got in [
        js.qd.len(),
        q_target.len(),
        gains.kp.len(),
        gains.kd.len(),
        gains.gravity_bias.len(),
        limits.len(),
    ] {
        if got != n {
            return Err(ControlError::DimensionMismatch { expected: n, got });
        }
    }
    let finite = js.q.iter().chain(&js.qd).chain(q_target).all(|v| v.is_finite());
    if !finite {
        return Err(ControlError::NonFinite);
    }

    let mut q = js.q.clone();
    let mut qd = js.qd.clone();
    for i in 0..n {
        let bias = gains.gravity_bias[i];
        let feedforward = if gains.compensate { bias } else { 0.0 };
        let tau = gains.kp[i] * (q_target[i] - q[i]) - gains.kd[i] * qd[i] - bias + feedforward;
        qd[i] += tau * dt;
        q[i] += qd[i] * dt;
        let (lo, hi) = limits[i];
        if q[i] <= lo || q[i] >= hi {
            q[i] = q[i].clamp(lo, hi);
            qd[i] = 0.0;
        }
    }
    if !q.iter().chain(&qd).all(|v| v.is_finite()) {
        return Err(ControlError::NonFinite);
    }
    let step_ns = (dt * 1e9).round() as u64;
    Ok(JointState {
        q,
        qd,
        ts: Timestamp {
            mono_ns: js.ts.mono_ns + step_ns,
            wall_us: js.ts.wall_us + step_ns / 1_000,
        },
    })
}
