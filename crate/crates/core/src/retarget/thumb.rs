// SPDX-License-Identifier: Apache-2.0

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{palm_frame, RetargetError, COLLINEAR_AREA};
use crate::simrobot::{ik_dls, IkConfig, IkTarget, KinematicModel, KinematicsError};
use crate::wire::{keypoint, HandFrame};

/// Projective map of the plane, normalized so `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    /// Direct linear transform from four point correspondences.
    pub fn from_correspondences(src: &[Vector2<f64>; 4], dst: &[Vector2<f64>; 4]) -> Result<Self, RetargetError> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let (x, y) = (src[i].x, src[i].y);
            let (u, v) = (dst[i].x, dst[i].y);
            let r = 2 * i;
            a.row_mut(r)
                .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1)
                .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .filter(|h| h.iter().all(|v| v.is_finite()))
            .ok_or_else(|| RetargetError::BadBounds("homography is singular".into()))?;
        Ok(Self(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0)))
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        Vector2::new(v.x / v.z, v.y / v.z)
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn signed_area(q: &[Vector2<f64>; 4]) -> f64 {
    (0..4).map(|i| cross2(&q[i], &q[(i + 1) % 4])).sum::<f64>() * 0.5
}

fn check_quad(name: &str, q: &[Vector2<f64>; 4]) -> Result<(), RetargetError> {
    if !q.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
        return Err(RetargetError::BadBounds(format!("{name} has non-finite corners")));
    }
    if !(signed_area(q) > COLLINEAR_AREA) {
        return Err(RetargetError::BadBounds(format!(
            "{name} must be counterclockwise with area > {COLLINEAR_AREA}"
        )));
    }
    for i in 0..4 {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        if cross2(&(b - a), &(c - b)) <= 0.0 {
            return Err(RetargetError::BadBounds(format!(
                "{name} is not strictly convex at corner {}",
                (i + 1) % 4
            )));
        }
    }
    Ok(())
}

/// Closest point of a convex counterclockwise quad to `p`; `p` itself when
/// it is inside or on the boundary.
pub fn closest_point_in_quad(quad: &[Vector2<f64>; 4], p: &Vector2<f64>) -> Vector2<f64> {
    let inside = (0..4).all(|i| cross2(&(quad[(i + 1) % 4] - quad[i]), &(p - quad[i])) >= 0.0);
    if inside {
        return *p;
    }
    let mut best = quad[0];
    let mut best_d = f64::INFINITY;
    for i in 0..4 {
        let (a, b) = (quad[i], quad[(i + 1) % 4]);
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let c = a + ab * t;
        let d = (p - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Serializable thumb workspace description; see [`ThumbBounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThumbBoundsSpec {
    pub human_quad: [[f64; 2]; 4],
    pub robot_quad: [[f64; 2]; 4],
    pub human_height: (f64, f64),
    pub robot_height: (f64, f64),
}

impl Default for ThumbBoundsSpec {
    fn default() -> Self {
        Self {
            human_quad: [[0.03, -0.09], [0.12, -0.07], [0.12, 0.02], [0.03, -0.01]],
            // A box inside the reference thumb's reachable workspace, so every
            // mapped target converges without restarts.
            robot_quad: [[0.04, -0.035], [0.067, -0.035], [0.067, -0.007], [0.04, -0.007]],
            human_height: (-0.01, 0.05),
            robot_height: (0.041, 0.06),
        }
    }
}

/// Validated thumb workspace: a human quad in palm coordinates (u, y), the
/// matching robot quad in the robot hand frame, and the two height ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct ThumbBounds {
    pub human_quad: [Vector2<f64>; 4],
    pub robot_quad: [Vector2<f64>; 4],
    pub human_height: (f64, f64),
    pub robot_height: (f64, f64),
    homography: Homography,
}

impl ThumbBounds {
    pub fn new(
        human_quad: [Vector2<f64>; 4],
        robot_quad: [Vector2<f64>; 4],
        human_height: (f64, f64),
        robot_height: (f64, f64),
    ) -> Result<Self, RetargetError> {
        check_quad("human quad", &human_quad)?;
        check_quad("robot quad", &robot_quad)?;
        for (name, (lo, hi)) in [("human height", human_height), ("robot height", robot_height)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(RetargetError::BadBounds(format!("{name} needs min < max")));
            }
        }
        let homography = Homography::from_correspondences(&human_quad, &robot_quad)?;
        Ok(Self {
            human_quad,
            robot_quad,
            human_height,
            robot_height,
            homography,
        })
    }

    pub fn from_spec(s: &ThumbBoundsSpec) -> Result<Self, RetargetError> {
        let quad = |q: &[[f64; 2]; 4]| q.map(|p| Vector2::new(p[0], p[1]));
        Self::new(quad(&s.human_quad), quad(&s.robot_quad), s.human_height, s.robot_height)
    }

    pub fn homography(&self) -> &Homography {
        &self.homography
    }

    /// Map a point in palm coordinates `(u, y, height)` to the robot frame.
    pub fn map(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let q = closest_point_in_quad(&self.human_quad, &Vector2::new(p.x, p.y));
        let r = self.homography.apply(&q);
        let (h0, h1) = self.human_height;
        let (r0, r1) = self.robot_height;
        let s = ((p.z - h0) / (h1 - h0)).clamp(0.0, 1.0);
        Vector3::new(r.x, r.y, r0 + s * (r1 - r0))
    }
}

/// Thumb-tip target in the robot hand frame.
pub fn thumb_retarget(f: &HandFrame, b: &ThumbBounds) -> Result<Vector3<f64>, RetargetError> {
    let palm = palm_frame(f)?;
    let tip = f.keypoints[keypoint::THUMB_TIP];
    if !tip.iter().all(|v| v.is_finite()) {
        return Err(RetargetError::NonFinite);
    }
    Ok(b.map(&palm.to_local(&tip)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThumbIkResult {
    pub q: [f64; 4],
    /// Set when the target could not be reached within tolerance.
    pub clamped: bool,
    pub residual: f64,
}

/// Position-only damped least squares for a 4-joint thumb, warm-started
/// from `seed`. If that does not converge (joint limits can trap the
/// iteration), it restarts from a fixed lattice of seeds inside the limits and
/// keeps the best result.
pub fn thumb_ik(
    tip: &Vector3<f64>,
    chain: &KinematicModel,
    seed: &[f64; 4],
    cfg: &IkConfig,
) -> Result<ThumbIkResult, RetargetError> {
    if chain.dof() != 4 {
        return Err(RetargetError::BadThumbChain(chain.dof()));
    }
    if !tip.iter().chain(seed.iter()).all(|v| v.is_finite()) {
        return Err(RetargetError::NonFinite);
    }
    let mut best = solve_from(tip, chain, seed, cfg)?;
    if !best.clamped {
        return Ok(best);
    }
    for s in restart_seeds(chain) {
        let r = solve_from(tip, chain, &s, cfg)?;
        if r.residual < best.residual {
            best = r;
        }
        if !best.clamped {
            break;
        }
    }
    Ok(best)
}

fn solve_from(
    tip: &Vector3<f64>,
    chain: &KinematicModel,
    seed: &[f64; 4],
    cfg: &IkConfig,
) -> Result<ThumbIkResult, RetargetError> {
    let to_array = |q: &[f64]| [q[0], q[1], q[2], q[3]];
    match ik_dls(chain, IkTarget::Position(*tip), seed, cfg) {
        Ok(s) => Ok(ThumbIkResult {
            q: to_array(&s.q),
            clamped: false,
            residual: s.position_residual,
        }),
        Err(KinematicsError::NoConvergence {
            best_q,
            position_residual,
            ..
        }) => Ok(ThumbIkResult {
            q: to_array(&best_q),
            clamped: true,
            residual: position_residual,
        }),
        Err(_) => Err(RetargetError::NonFinite),
    }
}

/// Every combination of three points (near each limit and the middle) of
/// each joint range, 81 seeds in all.
fn restart_seeds(chain: &KinematicModel) -> impl Iterator<Item = [f64; 4]> + '_ {
    const LEVELS: [f64; 3] = [0.5, 0.1, 0.9];
    let limits = chain.limits();
    (0..81usize).map(move |mut code| {
        let mut q = [0.0; 4];
        for (i, (lo, hi)) in limits.iter().enumerate() {
            q[i] = lo + LEVELS[code % 3] * (hi - lo);
            code /= 3;
        }
        q
    })
}
