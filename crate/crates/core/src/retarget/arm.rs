// SPDX-License-Identifier: Apache-2.0

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use super::{palm_frame, EndEffectorTarget, PalmFrame, RetargetError};
use crate::geom::Pose;
use crate::wire::{HandFrame, RESOLUTION_MAX};

/// Correspondence between the operator's palm and the end effector, captured
/// when teleoperation (re)engages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub hand: PalmFrame,
    pub hand_orientation: UnitQuaternion<f64>,
    pub ee: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutchState {
    pub paused: bool,
    pub resolution: f64,
    anchor: Option<Anchor>,
}

pub enum ClutchEvent<'a> {
    Pause,
    Resume { hand: &'a HandFrame, ee: Pose },
    SetResolution(f64),
}

pub(crate) fn check_resolution(r: f64) -> Result<(), RetargetError> {
    if r > 0.0 && r <= RESOLUTION_MAX {
        Ok(())
    } else {
        Err(RetargetError::BadResolution(r))
    }
}

impl ClutchState {
    /// Paused state with no anchor; a `Resume` engages it.
    pub fn new(resolution: f64) -> Result<Self, RetargetError> {
        check_resolution(resolution)?;
        Ok(Self {
            paused: true,
            resolution,
            anchor: None,
        })
    }

    /// Engaged state anchored at `hand` and `ee`.
    pub fn engaged(hand: &HandFrame, ee: Pose, resolution: f64) -> Result<Self, RetargetError> {
        clutch(&Self::new(resolution)?, ClutchEvent::Resume { hand, ee })
    }

    pub fn anchor(&self) -> Option<&Anchor> {
        self.anchor.as_ref()
    }

    /// Anchor of an engaged state; errors if paused.
    pub(crate) fn active_anchor(&self) -> Result<&Anchor, RetargetError> {
        if self.paused {
            return Err(RetargetError::Paused);
        }
        self.anchor.as_ref().ok_or(RetargetError::NotAnchored)
    }
}

pub fn clutch(cs: &ClutchState, event: ClutchEvent<'_>) -> Result<ClutchState, RetargetError> {
    let mut next = *cs;
    match event {
        ClutchEvent::Pause => next.paused = true,
        ClutchEvent::Resume { hand, ee } => {
            let palm = palm_frame(hand)?;
            next.anchor = Some(Anchor {
                hand: palm,
                hand_orientation: palm.orientation(),
                ee,
            });
            next.paused = false;
        }
        ClutchEvent::SetResolution(r) => {
            check_resolution(r)?;
            next.resolution = r;
        }
    }
    Ok(next)
}

/// Rotation taking the anchor palm orientation to the current one.
pub(crate) fn orientation_delta(anchor: &Anchor, palm: &PalmFrame) -> UnitQuaternion<f64> {
    let now = palm.orientation();
    if now == anchor.hand_orientation {
        return UnitQuaternion::identity();
    }
    let q = now * anchor.hand_orientation.inverse();
    UnitQuaternion::new_normalize(q.into_inner())
}

pub fn arm_retarget(cs: &ClutchState, f: &HandFrame) -> Result<EndEffectorTarget, RetargetError> {
    let anchor = cs.active_anchor()?;
    let palm = palm_frame(f)?;
    let dp = (palm.origin - anchor.hand.origin) * cs.resolution;
    Ok(EndEffectorTarget {
        position: anchor.ee.position + dp,
        orientation: orientation_delta(anchor, &palm) * anchor.ee.orientation,
    })
}
