// SPDX-License-Identifier: Apache-2.0

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{RetargetError, COLLINEAR_AREA};
use crate::geom::quat_from_matrix;
use crate::wire::{keypoint, HandFrame};

/// Orthonormal frame on the palm: columns are `u` (wrist to index knuckle),
/// `y` (in the palm plane, toward the little finger) and `n` (palm normal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmFrame {
    pub origin: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl PalmFrame {
    pub fn orientation(&self) -> UnitQuaternion<f64> {
        quat_from_matrix(&self.rotation)
    }

    /// Coordinates of a world point in this frame.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.origin)
    }
}

pub fn palm_frame(f: &HandFrame) -> Result<PalmFrame, RetargetError> {
    let wrist = f.keypoints[keypoint::WRIST];
    let to_index = f.keypoints[keypoint::INDEX_KNUCKLE] - wrist;
    let to_pinky = f.keypoints[keypoint::PINKY_KNUCKLE] - wrist;
    if !(wrist
        .iter()
        .chain(to_index.iter())
        .chain(to_pinky.iter())
        .all(|v| v.is_finite()))
    {
        return Err(RetargetError::NonFinite);
    }
    let area = 0.5 * to_index.cross(&to_pinky).norm();
    if !(area > COLLINEAR_AREA) {
        return Err(RetargetError::DegenerateHand);
    }
    let u = to_index.normalize();
    let n = u.cross(&to_pinky).normalize();
    let y = n.cross(&u);
    Ok(PalmFrame {
        origin: wrist,
        rotation: Matrix3::from_columns(&[u, y, n]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retarget::testing::{flat_hand, transformed};
    use crate::wire::{Handedness, Timestamp, NUM_KEYPOINTS};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn three_point_hand(index: [f64; 3], pinky: [f64; 3]) -> HandFrame {
        let mut k = [Vector3::zeros(); NUM_KEYPOINTS];
        k[keypoint::INDEX_KNUCKLE] = Vector3::from(index);
        k[keypoint::PINKY_KNUCKLE] = Vector3::from(pinky);
        HandFrame::new(Timestamp::manual(0), Handedness::Right, k)
    }

    #[test]
    fn axis_aligned_hand_gives_identity() {
        let p = palm_frame(&three_point_hand([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])).unwrap();
        assert_eq!(p.origin, Vector3::zeros());
        assert_relative_eq!(p.rotation, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let f = transformed(
            &three_point_hand([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            &rz,
            Vector3::zeros(),
        );
        let p = palm_frame(&f).unwrap();
        assert_relative_eq!(p.rotation, *rz.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn collinear_knuckles_are_degenerate() {
        assert_eq!(
            palm_frame(&three_point_hand([1.0, 0.0, 0.0], [2.0, 0.0, 0.0])),
            Err(RetargetError::DegenerateHand)
        );
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -3.1..3.1f64).prop_filter_map("axis", |(x, y, z, a)| {
            let v = Vector3::new(x, y, z);
            (v.norm() > 1e-3).then(|| Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(v), a))
        })
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(
            ix in -1.0..1.0f64, iy in -1.0..1.0f64, iz in -1.0..1.0f64,
            px in -1.0..1.0f64, py in -1.0..1.0f64, pz in -1.0..1.0f64,
        ) {
            let f = three_point_hand([ix, iy, iz], [px, py, pz]);
            if let Ok(p) = palm_frame(&f) {
                let r = p.rotation;
                prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
                prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn rigid_motion_equivariance(r in arb_rotation(), tx in -1.0..1.0f64, ty in -1.0..1.0f64, tz in -1.0..1.0f64) {
            let f = flat_hand();
            let g = transformed(&f, &r, Vector3::new(tx, ty, tz));
            let pf = palm_frame(&f).unwrap();
            let pg = palm_frame(&g).unwrap();
            prop_assert!((pg.rotation - r.matrix() * pf.rotation).amax() < 1e-9);
            prop_assert!((pg.origin - (r * pf.origin + Vector3::new(tx, ty, tz))).amax() < 1e-12);
        }
    }
}
