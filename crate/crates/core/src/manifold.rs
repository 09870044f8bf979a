//! Primitives on SO(3) and the two-sphere.
//!
//! Rotations and link directions are stored as plain matrices/vectors wrapped
//! in newtypes that check their group constraints on construction. All maps
//! here are pure and allocation free.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Body or link angular velocity, rad/s.
pub type AngularVelocity = Vec3;

/// Tolerance for the orthogonality and unit-norm checks.
pub const MANIFOLD_TOL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;

pub fn e1() -> Vec3 {
    Vec3::x()
}

pub fn e2() -> Vec3 {
    Vec3::y()
}

pub fn e3() -> Vec3 {
    Vec3::z()
}

/// Skew-symmetric matrix with `hat(a) * y == a.cross(y)`.
pub fn hat(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds
/// [`MANIFOLD_TOL`].
pub fn vee(s: &Mat3) -> Result<Vec3> {
    let asymmetry = (s + s.transpose()).norm();
    if asymmetry >= MANIFOLD_TOL {
        return Err(Error::NotSkew { asymmetry });
    }
    Ok(vee_unchecked(s))
}

/// Extracts the axial vector of the skew part without validation.
pub(crate) fn vee_unchecked(s: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (s[(2, 1)] - s[(1, 2)]),
        0.5 * (s[(0, 2)] - s[(2, 0)]),
        0.5 * (s[(1, 0)] - s[(0, 1)]),
    )
}

/// Rodrigues' formula, with a second-order series near the origin.
pub fn exp_so3(a: &Vec3) -> Rotation {
    let theta = a.norm();
    let k = hat(a);
    let k2 = k * k;
    let m = if theta < SMALL_ANGLE {
        Mat3::identity() + k + 0.5 * k2
    } else {
        let (s, c) = theta.sin_cos();
        Mat3::identity() + (s / theta) * k + ((1.0 - c) / (theta * theta)) * k2
    };
    Rotation(m)
}

/// Principal logarithm; the returned vector has norm in `[0, pi]`.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = &r.0;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axial = vee_unchecked(m);
    let theta = axial.norm().atan2(cos);
    if theta < 1e-6 {
        // sin(theta)/theta ~ 1 - theta^2/6
        return axial * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-6 {
        return axial * (theta / theta.sin());
    }
    // Near a half turn: R ~ 2 n n^T - I, read the axis off the largest diagonal.
    let b = (m + Mat3::identity()) * 0.5;
    let k = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut n = b.column(k).into_owned();
    n /= n.norm();
    if n.dot(&axial) < 0.0 {
        n = -n;
    }
    n * theta
}

fn jacobian_coeffs(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

/// Right Jacobian of the exponential: `d/dt exp(phi) = exp(phi) hat(J_r(phi) phi_dot)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let (a, b) = jacobian_coeffs(phi.norm());
    let k = hat(phi);
    Mat3::identity() - a * k + b * k * k
}

/// Left Jacobian: `d/dt exp(phi) = hat(J_l(phi) phi_dot) exp(phi)`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    right_jacobian(&(-phi))
}

fn inverse_jacobian_coeff(theta: f64) -> f64 {
    if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    }
}

pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let c = inverse_jacobian_coeff(phi.norm());
    let k = hat(phi);
    Mat3::identity() + 0.5 * k + c * k * k
}

pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    right_jacobian_inv(&(-phi))
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validating constructor.
    pub fn new(m: Mat3) -> Result<Self> {
        let orth = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if !m.iter().all(|v| v.is_finite())
            || orth > MANIFOLD_TOL
            || (det - 1.0).abs() > MANIFOLD_TOL
        {
            return Err(Error::validation(
                "rotation",
                format!("|R^T R - I| = {orth:.3e}, det = {det:.12}"),
            ));
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn project_to_so3(m: &Mat3) -> Self {
        let svd = SVD::new(*m, true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return Rotation::identity();
        };
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::about_axis(&e1(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::about_axis(&e2(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::about_axis(&e3(), angle)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `R * exp(hat(phi))`.
    pub fn retract(&self, phi: &Vec3) -> Self {
        Rotation(self.0 * exp_so3(phi).0)
    }

    /// `|R^T R - I|_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn column(&self, k: usize) -> Vec3 {
        self.0.column(k).into_owned()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Rotation::new(Mat3::from_fn(|i, j| rows[i][j]))
    }
}

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        let m = r.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// A point on the two-sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector(Vec3);

impl UnitVector {
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > MANIFOLD_TOL {
            return Err(Error::validation(
                "unit vector",
                format!("norm {n:.12} is not 1"),
            ));
        }
        Ok(UnitVector(v))
    }

    /// Normalizes `v`; fails for (near) zero vectors.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::validation("unit vector", "cannot normalize a zero vector"));
        }
        Ok(UnitVector(v / n))
    }

    pub(crate) fn from_vec_unchecked(v: Vec3) -> Self {
        UnitVector(v)
    }

    pub fn e3() -> Self {
        UnitVector(e3())
    }

    pub fn vec(&self) -> &Vec3 {
        &self.0
    }

    /// `exp(hat(phi)) q`.
    pub fn rotate(&self, phi: &Vec3) -> Self {
        UnitVector(exp_so3(phi).0 * self.0)
    }

    /// Rotation vector `xi`, orthogonal to `from`, with `exp(hat(xi)) from = self`.
    pub fn log_from(&self, from: &UnitVector) -> Vec3 {
        let axis = from.0.cross(&self.0);
        let s = axis.norm();
        let c = from.0.dot(&self.0).clamp(-1.0, 1.0);
        let angle = s.atan2(c);
        if s < 1e-15 {
            return Vec3::zeros();
        }
        axis * (angle / s)
    }
}

impl TryFrom<[f64; 3]> for UnitVector {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        UnitVector::new(Vec3::from(v))
    }
}

impl From<UnitVector> for [f64; 3] {
    fn from(q: UnitVector) -> Self {
        [q.0.x, q.0.y, q.0.z]
    }
}

/// Configuration error `Psi = tr(I - Rc^T R)/2` and the attitude error
/// vector `eR = (Rc^T R - R^T Rc)^vee / 2`.
pub fn attitude_error(r: &Rotation, rc: &Rotation) -> (f64, Vec3) {
    let rel = rc.0.transpose() * r.0;
    let psi = 0.5 * (3.0 - rel.trace());
    let e_r = vee_unchecked(&(0.5 * (rel - rel.transpose())));
    (psi.clamp(0.0, 2.0), e_r)
}

/// `e_Omega = Omega - R^T Rc Omega_c`.
pub fn angular_velocity_error(
    r: &Rotation,
    rc: &Rotation,
    omega: &Vec3,
    omega_c: &Vec3,
) -> Vec3 {
    omega - r.0.transpose() * (rc.0 * omega_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-5.0f64..5.0).prop_map(Vec3::from)
    }

    #[test]
    fn hat_layout() {
        let m = hat(&Vec3::new(1.0, 2.0, 3.0));
        let expected = Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn vee_inverts_hat_and_rejects_symmetric() {
        let a = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(&a)).unwrap(), a);
        assert_eq!(vee(&Mat3::zeros()).unwrap(), Vec3::zeros());
        assert!(matches!(
            vee(&Mat3::identity()),
            Err(Error::NotSkew { .. })
        ));
    }

    #[test]
    fn exp_special_values() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        let half = exp_so3(&Vec3::new(PI, 0.0, 0.0));
        assert_relative_eq!(
            *half.matrix(),
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
            epsilon = 1e-15
        );
        let tiny = Vec3::new(1e-12, -4e-13, 7e-13);
        let r = exp_so3(&tiny);
        assert!((r.matrix() - (Mat3::identity() + hat(&tiny))).amax() < 1e-20);
    }

    #[test]
    fn attitude_error_examples() {
        let r = Rotation::rot_y(0.3);
        let (psi, e) = attitude_error(&r, &r);
        assert_eq!(psi, 0.0);
        assert!(e.norm() < 1e-16);

        let (psi, e) = attitude_error(&Rotation::rot_x(PI), &Rotation::identity());
        assert_relative_eq!(psi, 2.0, epsilon = 1e-15);
        assert!(e.norm() < 1e-15);

        // sin(theta) * axis for a 90 degree turn about e1
        let (psi, e) = attitude_error(&Rotation::rot_x(PI / 2.0), &Rotation::identity());
        assert_relative_eq!(psi, 1.0, epsilon = 1e-15);
        assert_relative_eq!(e, e1(), epsilon = 1e-15);
    }

    #[test]
    fn angular_velocity_error_examples() {
        let r = Rotation::rot_z(0.4);
        let w = Vec3::new(0.1, -0.2, 0.3);
        assert_eq!(angular_velocity_error(&r, &r, &w, &w).norm() < 1e-16, true);
        assert_eq!(angular_velocity_error(&r, &Rotation::rot_x(1.0), &w, &Vec3::zeros()), w);
    }

    #[test]
    fn log_near_half_turn() {
        for angle in [PI, PI - 1e-9, PI - 1e-3] {
            let a = Vec3::new(0.3, -0.5, 0.8).normalize() * angle;
            let back = log_so3(&exp_so3(&a));
            assert_relative_eq!(exp_so3(&back).matrix(), exp_so3(&a).matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_repairs_drift() {
        let mut m = *Rotation::rot_x(0.7).matrix();
        m[(0, 1)] += 1e-6;
        let r = Rotation::project_to_so3(&m);
        assert!(r.orthogonality_defect() < 1e-14);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_vector_log_roundtrip() {
        let q = UnitVector::normalize(Vec3::new(0.2, -0.4, 0.9)).unwrap();
        let xi = q.log_from(&UnitVector::e3());
        assert!(xi.z.abs() < 1e-15);
        assert_relative_eq!(*UnitVector::e3().rotate(&xi).vec(), *q.vec(), epsilon = 1e-14);
        assert!(UnitVector::new(Vec3::new(1.0, 1.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn hat_is_cross_product(a in vec3(), y in vec3()) {
            let d = hat(&a) * y - a.cross(&y);
            prop_assert!(d.amax() <= 1e-15 * (1.0 + a.norm() * y.norm()));
            prop_assert_eq!(hat(&a).transpose(), -hat(&a));
        }

        #[test]
        fn exp_stays_on_group(a in prop::array::uniform3(-10.0 * PI..10.0 * PI)) {
            let r = exp_so3(&Vec3::from(a));
            prop_assert!(r.orthogonality_defect() < 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn error_norm_identity(a in vec3(), b in vec3()) {
            let (psi, e) = attitude_error(&exp_so3(&a), &exp_so3(&b));
            prop_assert!((0.0..=2.0).contains(&psi));
            prop_assert!((e.norm_squared() - psi * (2.0 - psi)).abs() < 1e-12);
        }

        #[test]
        fn jacobians_match_finite_differences(phi in prop::array::uniform3(-2.0f64..2.0), d in vec3()) {
            let phi = Vec3::from(phi);
            let h = 1e-6;
            let r = exp_so3(&phi);
            let rp = exp_so3(&(phi + d * h));
            let rm = exp_so3(&(phi - d * h));
            let rdot = (rp.matrix() - rm.matrix()) / (2.0 * h);
            let body = vee_unchecked(&(r.matrix().transpose() * rdot));
            let spatial = vee_unchecked(&(rdot * r.matrix().transpose()));
            prop_assert!((body - right_jacobian(&phi) * d).norm() < 1e-6 * (1.0 + d.norm()));
            prop_assert!((spatial - left_jacobian(&phi) * d).norm() < 1e-6 * (1.0 + d.norm()));
            prop_assert!((right_jacobian_inv(&phi) * right_jacobian(&phi) - Mat3::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn random_pairs_error_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = Vec3::from_fn(|_, _| rng.random_range(-4.0..4.0));
            let b = Vec3::from_fn(|_, _| rng.random_range(-4.0..4.0));
            let (psi, e) = attitude_error(&exp_so3(&a), &exp_so3(&b));
            assert!((e.norm_squared() - psi * (2.0 - psi)).abs() < 1e-12);
        }
    }
}
