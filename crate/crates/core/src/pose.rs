//! SE(2) elements stored as a 2x2 rotation matrix plus a translation vector.
//!
//! Rotations stay in matrix form so that every cost expression in the rest of
//! the crate is plain matrix algebra; angle accessors exist for I/O only.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the orthonormality / determinant check on rotations.
pub const SO2_TOL: f64 = 1e-9;

/// Wrap an angle to the interval (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Rotation matrix for a given angle.
pub fn rot2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// True when `r` is orthonormal with determinant +1 within `tol`.
pub fn is_so2(r: &Matrix2<f64>, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Matrix2::identity()).norm();
    ortho <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// A 2-D pose: rotation matrix and translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl Pose2 {
    /// Validating constructor; rejects rotations outside SO(2).
    pub fn new(rotation: Matrix2<f64>, translation: Vector2<f64>) -> Result<Self> {
        if !is_so2(&rotation, SO2_TOL) {
            return Err(Error::InvalidPose(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix2::identity(),
            translation: Vector2::zeros(),
        }
    }

    pub fn from_xy_theta(x: f64, y: f64, theta: f64) -> Self {
        Self {
            rotation: rot2(theta),
            translation: Vector2::new(x, y),
        }
    }

    /// Heading angle in (-pi, pi].
    pub fn angle(&self) -> f64 {
        wrap_angle(self.rotation[(1, 0)].atan2(self.rotation[(0, 0)]))
    }

    pub fn x(&self) -> f64 {
        self.translation[0]
    }

    pub fn y(&self) -> f64 {
        self.translation[1]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Group composition: `self` followed by `other` in `self`'s frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Relative pose taking `self` to `other`: `self^{-1} * other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }
}

/// Composition as a free function, mirroring the group operation.
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pose_close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
        (a.rotation - b.rotation).norm() <= tol && (a.translation - b.translation).norm() <= tol
    }

    #[test]
    fn compose_identity_is_noop() {
        let p = Pose2::from_xy_theta(1.5, -2.0, 0.7);
        let q = compose(&Pose2::identity(), &p);
        assert!(pose_close(&q, &p, 0.0));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose2::from_xy_theta(3.0, 4.0, -1.2);
        let q = compose(&p, &p.inverse());
        assert!(pose_close(&q, &Pose2::identity(), 1e-12));
    }

    #[test]
    fn rotation_angles_add() {
        let rot90 = Pose2::from_xy_theta(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let rot180 = Pose2::from_xy_theta(0.0, 0.0, std::f64::consts::PI);
        let q = compose(&rot90, &rot90);
        assert!(pose_close(&q, &rot180, 1e-12));
    }

    #[test]
    fn new_rejects_non_rotation() {
        let m = Matrix2::new(1.0, 0.0, 0.0, 2.0);
        assert!(Pose2::new(m, Vector2::zeros()).is_err());
        let refl = Matrix2::new(1.0, 0.0, 0.0, -1.0);
        assert!(Pose2::new(refl, Vector2::zeros()).is_err());
    }

    #[test]
    fn angle_roundtrip() {
        for &a in &[0.0, 0.5, -0.5, 3.1, -3.1, std::f64::consts::PI] {
            assert_relative_eq!(Pose2::from_xy_theta(0.0, 0.0, a).angle(), a, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrap_angle_boundary() {
        assert_relative_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(0.1 - 4.0 * std::f64::consts::PI), 0.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn compose_is_associative(
            a in (-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64),
            b in (-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64),
            c in (-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64),
        ) {
            let (pa, pb, pc) = (
                Pose2::from_xy_theta(a.0, a.1, a.2),
                Pose2::from_xy_theta(b.0, b.1, b.2),
                Pose2::from_xy_theta(c.0, c.1, c.2),
            );
            let left = compose(&compose(&pa, &pb), &pc);
            let right = compose(&pa, &compose(&pb, &pc));
            prop_assert!(pose_close(&left, &right, 1e-12));
        }

        #[test]
        fn between_inverts_compose(
            a in (-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64),
            b in (-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64),
        ) {
            let pa = Pose2::from_xy_theta(a.0, a.1, a.2);
            let rel = Pose2::from_xy_theta(b.0, b.1, b.2);
            let pb = compose(&pa, &rel);
            prop_assert!(pose_close(&pa.between(&pb), &rel, 1e-10));
        }
    }
}
