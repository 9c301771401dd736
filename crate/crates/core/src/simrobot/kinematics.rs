// SPDX-License-Identifier: Apache-2.0

//! Serial revolute chains: forward kinematics, geometric Jacobian, and a
//! damped least-squares IK solver.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{rotation_error, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {0}: axis must be non-zero")]
    ZeroAxis(usize),
    #[error("joint {0}: lower limit must be below upper limit")]
    BadLimits(usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("IK did not converge: position residual {position_residual:.3e} m, orientation residual {orientation_residual:.3e} rad")]
    NoConvergence {
        best_q: Vec<f64>,
        position_residual: f64,
        orientation_residual: f64,
    },
}

/// One revolute joint: a fixed transform from the previous frame, then a
/// rotation about `axis` (expressed in the transformed frame).
#[derive(Debug, Clone, PartialEq)]
pub struct RevoluteJoint {
    pub axis: Unit<Vector3<f64>>,
    pub link: Isometry3<f64>,
    pub limits: (f64, f64),
}

/// Serializable description used in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub axis: [f64; 3],
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub tool_translation: [f64; 3],
    #[serde(default)]
    pub tool_rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct KinematicModel {
    pub joints: Vec<RevoluteJoint>,
    /// Fixed transform from the last joint to the end effector.
    pub tool: Isometry3<f64>,
}

fn iso(t: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(t[0], t[1], t[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

impl TryFrom<ModelSpec> for KinematicModel {
    type Error = KinematicsError;

    fn try_from(spec: ModelSpec) -> Result<Self, Self::Error> {
        let joints = spec
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let axis = Vector3::from(j.axis);
                if !(axis.norm() > 1e-12) {
                    return Err(KinematicsError::ZeroAxis(i));
                }
                if !(j.limits[0] < j.limits[1]) {
                    return Err(KinematicsError::BadLimits(i));
                }
                Ok(RevoluteJoint {
                    axis: Unit::new_normalize(axis),
                    link: iso(j.translation, j.rpy),
                    limits: (j.limits[0], j.limits[1]),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            joints,
            tool: iso(spec.tool_translation, spec.tool_rpy),
        })
    }
}

impl From<KinematicModel> for ModelSpec {
    fn from(m: KinematicModel) -> Self {
        let rpy = |q: &UnitQuaternion<f64>| {
            let (r, p, y) = q.euler_angles();
            [r, p, y]
        };
        let t = |i: &Isometry3<f64>| [i.translation.x, i.translation.y, i.translation.z];
        ModelSpec {
            joints: m
                .joints
                .iter()
                .map(|j| JointSpec {
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    translation: t(&j.link),
                    rpy: rpy(&j.link.rotation),
                    limits: [j.limits.0, j.limits.1],
                })
                .collect(),
            tool_translation: t(&m.tool),
            tool_rpy: rpy(&m.tool.rotation),
        }
    }
}

/// World-frame joint origins and axes for a configuration, plus the tool pose.
struct ChainFrames {
    origins: Vec<Vector3<f64>>,
    axes: Vec<Vector3<f64>>,
    ee: Isometry3<f64>,
}

impl KinematicModel {
    pub fn from_spec(spec: ModelSpec) -> Result<Self, KinematicsError> {
        spec.try_into()
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| j.limits).collect()
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits.0, j.limits.1);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joints)
            .all(|(v, j)| *v >= j.limits.0 && *v <= j.limits.1)
    }

    /// Upper bound on the distance from the first joint to the tool point.
    pub fn reach(&self) -> f64 {
        self.joints
            .iter()
            .skip(1)
            .map(|j| j.link.translation.vector.norm())
            .sum::<f64>()
            + self.tool.translation.vector.norm()
    }

    /// World position of the first joint.
    pub fn base_origin(&self) -> Vector3<f64> {
        self.joints
            .first()
            .map(|j| j.link.translation.vector)
            .unwrap_or_else(Vector3::zeros)
    }

    fn check(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    fn frames(&self, q: &[f64]) -> ChainFrames {
        let mut t = Isometry3::identity();
        let mut origins = Vec::with_capacity(self.dof());
        let mut axes = Vec::with_capacity(self.dof());
        for (joint, &angle) in self.joints.iter().zip(q) {
            t *= joint.link;
            origins.push(t.translation.vector);
            axes.push(t.rotation * joint.axis.into_inner());
            t *= UnitQuaternion::from_axis_angle(&joint.axis, angle);
        }
        ChainFrames {
            origins,
            axes,
            ee: t * self.tool,
        }
    }

    pub fn fk_isometry(&self, q: &[f64]) -> Result<Isometry3<f64>, KinematicsError> {
        self.check(q)?;
        Ok(self.frames(q).ee)
    }

    /// End-effector pose in the base frame.
    pub fn fk(&self, q: &[f64]) -> Result<Pose, KinematicsError> {
        Ok(Pose::from_isometry(&self.fk_isometry(q)?))
    }

    /// Geometric Jacobian, linear rows first (6 x dof).
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        self.check(q)?;
        Ok(jacobian_from(&self.frames(q)))
    }
}

fn jacobian_from(f: &ChainFrames) -> DMatrix<f64> {
    let p = f.ee.translation.vector;
    let mut j = DMatrix::zeros(6, f.axes.len());
    for (i, (a, o)) in f.axes.iter().zip(&f.origins).enumerate() {
        let v = a.cross(&(p - o));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(a);
    }
    j
}

/// Convenience forward kinematics.
pub fn fk(model: &KinematicModel, q: &[f64]) -> Result<Pose, KinematicsError> {
    model.fk(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub damping: f64,
    pub position_tol: f64,
    pub orientation_tol: f64,
    pub max_iter: usize,
    /// Largest joint-space step per iteration (radians, infinity norm).
    pub max_step: f64,
    /// Extra attempts from fixed pseudo-random seeds when the warm start
    /// does not converge; used by [`ik_solve`].
    pub restarts: usize,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.05,
            position_tol: 1e-6,
            orientation_tol: 1e-5,
            max_iter: 300,
            max_step: 0.4,
            restarts: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IkTarget {
    Pose(Pose),
    Position(Vector3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub position_residual: f64,
    pub orientation_residual: f64,
    pub iterations: usize,
}

const MIN_DAMPING: f64 = 1e-6;

/// Damped least squares: `dq = J^T (J J^T + l^2 I)^-1 e`, clamped to the joint
/// limits after every step. The seed is clamped into the limits first. The
/// damping `l` is `cfg.damping` far from the target and shrinks with the error
/// norm near it, so the last few iterations behave like Gauss-Newton.
pub fn ik_dls(
    model: &KinematicModel,
    target: IkTarget,
    seed: &[f64],
    cfg: &IkConfig,
) -> Result<IkSolution, KinematicsError> {
    model.check(seed)?;
    let finite = match &target {
        IkTarget::Pose(p) => p
            .position
            .iter()
            .chain(p.orientation.coords.iter())
            .all(|v| v.is_finite()),
        IkTarget::Position(p) => p.iter().all(|v| v.is_finite()),
    };
    if !finite {
        return Err(KinematicsError::NonFinite);
    }

    let rows = match target {
        IkTarget::Pose(_) => 6,
        IkTarget::Position(_) => 3,
    };
    let n = model.dof();

    let mut q = seed.to_vec();
    model.clamp(&mut q);

    let residuals = |frames: &ChainFrames| -> (DVector<f64>, f64, f64) {
        let ee = &frames.ee;
        match target {
            IkTarget::Pose(t) => {
                let dp = t.position - ee.translation.vector;
                let dr = rotation_error(&ee.rotation, &t.orientation);
                let e = DVector::from_iterator(6, dp.iter().chain(dr.iter()).copied());
                (e, dp.norm(), dr.norm())
            }
            IkTarget::Position(t) => {
                let dp = t - ee.translation.vector;
                (DVector::from_column_slice(dp.as_slice()), dp.norm(), 0.0)
            }
        }
    };
    let score = |pos: f64, ori: f64| pos + ori;

    let mut best = (q.clone(), f64::INFINITY, f64::INFINITY);
    for iter in 0..=cfg.max_iter {
        let frames = model.frames(&q);
        let (e, pos_err, ori_err) = residuals(&frames);
        if score(pos_err, ori_err) < score(best.1, best.2) {
            best = (q.clone(), pos_err, ori_err);
        }
        if pos_err < cfg.position_tol && ori_err < cfg.orientation_tol {
            return Ok(IkSolution {
                q,
                position_residual: pos_err,
                orientation_residual: ori_err,
                iterations: iter,
            });
        }
        if iter == cfg.max_iter {
            break;
        }
        let j_full = jacobian_from(&frames);
        let j = j_full.rows(0, rows).into_owned();
        let lambda = cfg.damping.min(e.norm()).max(MIN_DAMPING);
        let mut jjt = &j * j.transpose();
        for i in 0..rows {
            jjt[(i, i)] += lambda * lambda;
        }
        let Some(chol) = jjt.cholesky() else { break };
        let mut dq = j.transpose() * chol.solve(&e);
        let peak = dq.amax();
        if peak > cfg.max_step {
            dq *= cfg.max_step / peak;
        }
        for i in 0..n {
            q[i] += dq[i];
        }
        model.clamp(&mut q);
    }
    Err(KinematicsError::NoConvergence {
        best_q: best.0,
        position_residual: best.1,
        orientation_residual: best.2,
    })
}

/// [`ik_dls`] from `seed`, then from up to `cfg.restarts` configurations drawn
/// from a fixed-seed generator, returning the first converged solution.
pub fn ik_solve(
    model: &KinematicModel,
    target: IkTarget,
    seed: &[f64],
    cfg: &IkConfig,
) -> Result<IkSolution, KinematicsError> {
    let first = ik_dls(model, target, seed, cfg);
    let Err(KinematicsError::NoConvergence { .. }) = &first else {
        return first;
    };
    let mut best = first;
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    for _ in 0..cfg.restarts {
        let q: Vec<f64> = model
            .joints
            .iter()
            .map(|j| rng.gen_range(j.limits.0..=j.limits.1))
            .collect();
        let r = ik_dls(model, target, &q, cfg);
        match (&r, &best) {
            (Ok(_), _) => return r,
            (
                Err(KinematicsError::NoConvergence {
                    position_residual: a,
                    orientation_residual: b,
                    ..
                }),
                Err(KinematicsError::NoConvergence {
                    position_residual: c,
                    orientation_residual: d,
                    ..
                }),
            ) if a + b < c + d => best = r,
            _ => {}
        }
    }
    best
}

const RESTART_SEED: u64 = 0x1c0ffee;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simrobot::models;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar(lengths: &[f64]) -> KinematicModel {
        // First joint at the origin, each further joint one link along x.
        let mut joints = Vec::new();
        let mut offset = 0.0;
        for &l in lengths {
            joints.push(JointSpec {
                axis: [0.0, 0.0, 1.0],
                translation: [offset, 0.0, 0.0],
                rpy: [0.0; 3],
                limits: [-3.0, 3.0],
            });
            offset = l;
        }
        KinematicModel::from_spec(ModelSpec {
            joints,
            tool_translation: [offset, 0.0, 0.0],
            tool_rpy: [0.0; 3],
        })
        .unwrap()
    }

    /// Independent FK: multiply 4x4 homogeneous matrices built by hand.
    fn fk_by_matrices(model: &KinematicModel, q: &[f64]) -> Vector3<f64> {
        let mut t = nalgebra::Matrix4::<f64>::identity();
        for (j, &a) in model.joints.iter().zip(q) {
            t *= j.link.to_homogeneous();
            t *= nalgebra::Rotation3::from_axis_angle(&j.axis, a).to_homogeneous();
        }
        t *= model.tool.to_homogeneous();
        Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
    }

    #[test]
    fn quarter_turn_single_joint() {
        let m = planar(&[1.0]);
        let p = m.fk(&[FRAC_PI_2]).unwrap().position;
        assert_relative_eq!(p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn planar_two_link() {
        let m = planar(&[1.0, 1.0]);
        let p = m.fk(&[0.0, FRAC_PI_2]).unwrap().position;
        assert_relative_eq!(p, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn reference_arm_home_matches_matrix_chain() {
        let m = models::reference_arm();
        let q = vec![0.0; 7];
        let oracle = fk_by_matrices(&m, &q);
        assert_relative_eq!(m.fk(&q).unwrap().position, oracle, epsilon = 1e-12);
        // Straight up: 0.3 + 0.3 + 0.3 + 0.1 above the base.
        assert_relative_eq!(oracle, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn fk_matches_matrix_chain_on_random_configurations() {
        let m = models::reference_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = models::random_q(&m, &mut rng);
            assert_relative_eq!(m.fk(&q).unwrap().position, fk_by_matrices(&m, &q), epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = planar(&[1.0, 1.0]);
        assert!(matches!(
            m.fk(&[0.0]),
            Err(KinematicsError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = models::reference_arm();
        let q = models::arm_home();
        let j = m.jacobian(&q).unwrap();
        let h = 1e-6;
        for i in 0..7 {
            let mut qp = q.clone();
            qp[i] += h;
            let mut qm = q.clone();
            qm[i] -= h;
            let d = (m.fk(&qp).unwrap().position - m.fk(&qm).unwrap().position) / (2.0 * h);
            for r in 0..3 {
                assert!((j[(r, i)] - d[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ik_fixed_point() {
        let m = models::reference_arm();
        let seed = models::arm_home();
        let target = m.fk(&seed).unwrap();
        let sol = ik_dls(&m, IkTarget::Pose(target), &seed, &IkConfig::default()).unwrap();
        assert_eq!(sol.q, seed);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn ik_from_nearby_seed() {
        let m = models::reference_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q_star = models::random_q(&m, &mut rng);
            let mut seed = q_star.clone();
            for s in seed.iter_mut() {
                *s += rng.gen_range(-0.2..0.2);
            }
            m.clamp(&mut seed);
            let target = m.fk(&q_star).unwrap();
            let sol = ik_dls(&m, IkTarget::Pose(target), &seed, &IkConfig::default()).unwrap();
            let got = m.fk(&sol.q).unwrap();
            assert!((got.position - target.position).norm() < 1e-6);
            assert!(m.within_limits(&sol.q));
        }
    }

    #[test]
    fn out_of_reach_reports_residual() {
        let m = models::reference_arm();
        let seed = models::arm_home();
        let base = m.base_origin();
        let target = base + Vector3::new(10.0, 0.0, 0.0);
        match ik_dls(&m, IkTarget::Position(target), &seed, &IkConfig::default()) {
            Err(KinematicsError::NoConvergence {
                position_residual,
                best_q,
                ..
            }) => {
                let expected = 10.0 - m.reach();
                assert!(position_residual >= expected - 1e-9);
                assert!(
                    (position_residual - expected).abs() < 0.02,
                    "residual {position_residual} vs {expected}"
                );
                assert!(m.within_limits(&best_q));
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn position_only_two_link_full_extension() {
        let m = planar(&[1.0, 1.0]);
        let sol = ik_dls(
            &m,
            IkTarget::Position(Vector3::new(2.0, 0.0, 0.0)),
            &[0.0, 0.0],
            &IkConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.q, vec![0.0, 0.0]);
        assert_eq!(sol.position_residual, 0.0);
    }

    #[test]
    fn spec_round_trip_and_validation() {
        let m = models::reference_arm();
        let spec: ModelSpec = m.clone().into();
        let back = KinematicModel::from_spec(spec.clone()).unwrap();
        for (a, b) in m.joints.iter().zip(&back.joints) {
            assert_relative_eq!(a.link.translation.vector, b.link.translation.vector, epsilon = 1e-12);
            assert_eq!(a.limits, b.limits);
        }
        let mut bad = spec.clone();
        bad.joints[0].axis = [0.0; 3];
        assert_eq!(KinematicModel::from_spec(bad), Err(KinematicsError::ZeroAxis(0)));
        let mut bad = spec;
        bad.joints[2].limits = [1.0, 1.0];
        assert_eq!(KinematicModel::from_spec(bad), Err(KinematicsError::BadLimits(2)));
    }
}
