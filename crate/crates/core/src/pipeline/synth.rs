// SPDX-License-Identifier: Apache-2.0

//! Scripted hand-pose source standing in for a headset hand tracker.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::PipelineError;
use crate::wire::{Finger, HandFrame, Handedness, Timestamp, NUM_KEYPOINTS};

/// Knuckle positions of the template (right hand, palm down, fingers along
/// +x, thumb toward +y), index through pinky.
const KNUCKLES: [[f64; 2]; 4] = [[0.09, 0.018], [0.095, 0.0], [0.09, -0.018], [0.08, -0.034]];
const BONES: [f64; 3] = [0.045, 0.025, 0.02];
const THUMB_OPEN: [[f64; 3]; 4] = [
    [0.025, 0.03, -0.01],
    [0.05, 0.048, -0.015],
    [0.075, 0.056, -0.02],
    [0.095, 0.06, -0.025],
];
/// Thumb tip at full curl: tucked under the index knuckle.
const THUMB_TUCKED: [f64; 3] = [0.08, 0.01, -0.035];
/// How far the thumb tip stops short of the target tip in a pinch.
const PINCH_GAP: f64 = 0.005;

/// One posed hand: where the wrist is, how the palm is turned, and how
/// each finger is curled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandPose {
    pub hand: Handedness,
    pub wrist: [f64; 3],
    /// Palm orientation as yaw (about z), pitch (about y), roll (about x),
    /// applied in that order.
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Curl in [0, 1] per finger, thumb through pinky. Curl c bends each
    /// interior joint of a long finger by c * pi/2.
    pub curls: [f64; 5],
    /// Finger whose tip the thumb tip is pressed against, if any.
    pub pinch: Option<Finger>,
}

impl Default for HandPose {
    fn default() -> Self {
        Self {
            hand: Handedness::Right,
            wrist: [0.0, 0.0, 1.0],
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            curls: [0.0; 5],
            pinch: None,
        }
    }
}

impl HandPose {
    fn validate(&self) -> Result<(), PipelineError> {
        let finite = self
            .wrist
            .iter()
            .chain([self.yaw, self.pitch, self.roll].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(PipelineError::BadScript("non-finite pose".into()));
        }
        if !self.curls.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(PipelineError::BadScript("curls must be within [0, 1]".into()));
        }
        if self.pinch == Some(Finger::Thumb) {
            return Err(PipelineError::BadScript("the thumb cannot pinch itself".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    /// The 21 keypoints of this pose.
    pub fn keypoints(&self) -> [Vector3<f64>; NUM_KEYPOINTS] {
        let mut k = [Vector3::zeros(); NUM_KEYPOINTS];
        for (f, knuckle) in KNUCKLES.iter().enumerate() {
            let finger = Finger::ALL[f + 1];
            let dir = Vector2::from(*knuckle).normalize();
            let d = Vector3::new(dir.x, dir.y, 0.0);
            let idx = finger.indices();
            let mut p = Vector3::new(knuckle[0], knuckle[1], 0.0);
            k[idx[0]] = p;
            let step = self.curls[f + 1] * FRAC_PI_2;
            for (j, len) in BONES.iter().enumerate() {
                let phi = step * (j + 1) as f64;
                p += (d * phi.cos() - Vector3::z() * phi.sin()) * *len;
                k[idx[j + 1]] = p;
            }
        }
        let thumb = Finger::Thumb.indices();
        let c = self.curls[0];
        for (j, base) in THUMB_OPEN.iter().enumerate() {
            k[thumb[j]] = Vector3::from(*base);
        }
        // Curling swings the two distal thumb points toward the tucked tip.
        let tucked = Vector3::from(THUMB_TUCKED);
        let tip = k[thumb[3]] * (1.0 - c) + tucked * c;
        k[thumb[3]] = tip;
        k[thumb[2]] = (k[thumb[1]] + tip) * 0.5 + Vector3::new(0.0, 0.006 * c, 0.0);
        if let Some(target) = self.pinch {
            let tip = k[target.indices()[3]] - Vector3::z() * PINCH_GAP;
            k[thumb[3]] = tip;
            k[thumb[2]] = (k[thumb[1]] + tip) * 0.5 - Vector3::z() * 0.01;
        }
        let mirror = self.hand == Handedness::Left;
        let r = self.rotation();
        let wrist = Vector3::from(self.wrist);
        for p in k.iter_mut() {
            if mirror {
                p.y = -p.y;
            }
            *p = r * *p + wrist;
        }
        k
    }

    pub fn frame(&self, ts: Timestamp) -> HandFrame {
        HandFrame::new(ts, self.hand, self.keypoints())
    }

    fn lerp(&self, other: &HandPose, s: f64) -> HandPose {
        let l = |a: f64, b: f64| a + (b - a) * s;
        let mut out = *self;
        for i in 0..3 {
            out.wrist[i] = l(self.wrist[i], other.wrist[i]);
        }
        out.yaw = l(self.yaw, other.yaw);
        out.pitch = l(self.pitch, other.pitch);
        out.roll = l(self.roll, other.roll);
        for i in 0..5 {
            out.curls[i] = l(self.curls[i], other.curls[i]);
        }
        out
    }
}

/// Neutral abduction rays of the template's index, middle and ring fingers
/// in the palm frame (radians, positive toward the thumb).
pub fn template_neutral_rays() -> [f64; 3] {
    let angle = |k: [f64; 2]| k[1].atan2(k[0]);
    let reference = angle(KNUCKLES[0]);
    [0, 1, 2].map(|i| angle(KNUCKLES[i]) - reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds from the start of the script.
    pub t: f64,
    pub pose: HandPose,
}

/// What the synthetic source plays back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HandScript {
    Constant {
        pose: HandPose,
    },
    /// Piecewise-linear interpolation between waypoints; pinch and handedness
    /// follow the earlier waypoint. Holds the last pose after the end.
    Waypoints {
        points: Vec<Waypoint>,
    },
    /// Wrist circles `center` in the horizontal plane.
    Orbit {
        center: [f64; 3],
        radius: f64,
        freq_hz: f64,
        pose: HandPose,
    },
}

impl Default for HandScript {
    fn default() -> Self {
        HandScript::Orbit {
            center: [0.0, 0.0, 1.0],
            radius: 0.05,
            freq_hz: 0.25,
            pose: HandPose::default(),
        }
    }
}

impl HandScript {
    pub fn validate(&self) -> Result<(), PipelineError> {
        match self {
            HandScript::Constant { pose } => pose.validate(),
            HandScript::Waypoints { points } => {
                if points.is_empty() {
                    return Err(PipelineError::BadScript("no waypoints".into()));
                }
                for w in points.windows(2) {
                    if !(w[1].t > w[0].t) {
                        return Err(PipelineError::BadScript("waypoint times must increase".into()));
                    }
                }
                if !points[0].t.is_finite() || !points[points.len() - 1].t.is_finite() {
                    return Err(PipelineError::BadScript("non-finite waypoint time".into()));
                }
                points.iter().try_for_each(|w| w.pose.validate())
            }
            HandScript::Orbit {
                center,
                radius,
                freq_hz,
                pose,
            } => {
                if !(center.iter().all(|v| v.is_finite()) && *radius >= 0.0 && freq_hz.is_finite()) {
                    return Err(PipelineError::BadScript(
                        "orbit needs finite center/frequency and radius >= 0".into(),
                    ));
                }
                pose.validate()
            }
        }
    }

    /// Pose at script time `t` seconds.
    pub fn pose_at(&self, t: f64) -> HandPose {
        match self {
            HandScript::Constant { pose } => *pose,
            HandScript::Waypoints { points } => {
                let i = points.partition_point(|w| w.t <= t);
                if i == 0 {
                    return points[0].pose;
                }
                if i == points.len() {
                    return points[i - 1].pose;
                }
                let (a, b) = (&points[i - 1], &points[i]);
                a.pose.lerp(&b.pose, (t - a.t) / (b.t - a.t))
            }
            HandScript::Orbit {
                center,
                radius,
                freq_hz,
                pose,
            } => {
                let a = 2.0 * PI * freq_hz * t;
                let mut p = *pose;
                p.wrist = [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]];
                p
            }
        }
    }
}

/// Frame generator: frame `k` is the script sampled at `k / hz`, plus optional
/// uniform keypoint noise drawn from a per-frame stream of a seeded generator.
#[derive(Debug, Clone)]
pub struct SynthSource {
    script: HandScript,
    hz: f64,
    seed: u64,
    noise: f64,
}

impl SynthSource {
    pub fn new(script: HandScript, hz: f64, seed: u64, noise: f64) -> Result<Self, PipelineError> {
        script.validate()?;
        if !(hz > 0.0 && hz.is_finite()) {
            return Err(PipelineError::BadRate(hz));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(PipelineError::BadScript("noise must be >= 0".into()));
        }
        Ok(Self {
            script,
            hz,
            seed,
            noise,
        })
    }

    pub fn hz(&self) -> f64 {
        self.hz
    }

    pub fn script(&self) -> &HandScript {
        &self.script
    }

    /// Frame `k`, stamped on the manual time base at `k / hz`.
    pub fn frame(&self, k: u64) -> HandFrame {
        let t = k as f64 / self.hz;
        let mut f = self.script.pose_at(t).frame(Timestamp::from_secs_manual(t));
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(k);
            for p in f.keypoints.iter_mut() {
                for v in p.iter_mut() {
                    *v += rng.gen_range(-self.noise..=self.noise);
                }
            }
        }
        f
    }
}
