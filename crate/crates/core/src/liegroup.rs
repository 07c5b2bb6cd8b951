//! SO(3)/SE(3) primitives.
//!
//! Poses are stored as a rotation matrix plus a translation. Tangent vectors
//! are ordered rotation-first: `[ω₁ ω₂ ω₃ | ρ₁ ρ₂ ρ₃]`. All Jacobians in the
//! crate use the right-perturbation convention `x ← x·exp(δ)`.

use nalgebra::{Matrix3, Matrix4, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element of se(3) in rotation-first coordinates.
pub type Tangent = Vector6<f64>;

/// Below this angle exp/log use Taylor expansions of their coefficients.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Rotations whose angle is within this distance of π have no unique log.
pub const NEAR_PI: f64 = 1e-6;
/// Orthogonality drift above which a composed rotation is re-projected onto SO(3).
pub const ORTHO_DRIFT: f64 = 1e-12;

// The Jacobian coefficients cancel catastrophically much earlier than the
// exp/log ones, so they switch to series at a larger angle.
const JACOBIAN_SERIES_ANGLE: f64 = 1e-2;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A 3×3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthogonality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Projects an arbitrary matrix onto the closest rotation (SVD polar factor).
    pub fn from_matrix_projected(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self(r)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(q.to_rotation_matrix().into_inner())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(self.0))
    }

    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Rodrigues formula.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta = omega.norm();
        let w = hat(omega);
        let w2 = w * w;
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
        } else {
            let half = 0.5 * theta;
            (theta.sin() / theta, 2.0 * (half.sin() / theta).powi(2))
        };
        Self(Matrix3::identity() + w * a + w2 * b)
    }

    /// Principal-branch logarithm; fails within [`NEAR_PI`] of a half turn.
    pub fn log(&self) -> Result<Vector3<f64>> {
        let r = &self.0;
        let skew = vee(&(r - r.transpose())) * 0.5;
        let sin_theta = skew.norm();
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = sin_theta.atan2(cos_theta);
        if std::f64::consts::PI - theta < NEAR_PI {
            return Err(Error::NearPiLog { angle: theta });
        }
        if theta < SMALL_ANGLE {
            // sinθ/θ ≈ 1 − θ²/6
            return Ok(skew * (1.0 + theta * theta / 6.0));
        }
        Ok(skew * (theta / sin_theta))
    }

    pub fn angle(&self) -> f64 {
        let skew = vee(&(self.0 - self.0.transpose())) * 0.5;
        skew.norm()
            .atan2(((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0))
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Left Jacobian of SO(3), also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (
            0.5 - theta * theta / 24.0,
            1.0 / 6.0 - theta * theta / 120.0,
        )
    } else {
        let half = 0.5 * theta;
        (
            2.0 * (half.sin() / theta).powi(2),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Inverse of [`so3_left_jacobian`].
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let c = if theta < JACOBIAN_SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

/// The off-diagonal block of the SE(3) left Jacobian for `[φ; ρ]`.
fn se3_q_block(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let p = hat(phi);
    let r = hat(rho);
    let (a, b, c) = if theta < JACOBIAN_SERIES_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let t4 = t2 * t2;
        let t5 = t4 * theta;
        let a = (theta - s) / t3;
        let b = (0.5 * t2 + co - 1.0) / t4;
        let c = (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t5);
        (a, b, c)
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * a + (p * pr + rp * p - prp * 3.0) * b + (prp * p + p * prp) * c
}

/// Left Jacobian of SE(3) in rotation-first coordinates.
pub fn se3_left_jacobian(xi: &Tangent) -> Matrix6<f64> {
    let phi = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&se3_q_block(&phi, &rho));
    out
}

/// Inverse right Jacobian of SE(3): `log(exp(ξ)·exp(δ)) ≈ ξ + Jr⁻¹(ξ)·δ`.
pub fn se3_right_jacobian_inv(xi: &Tangent) -> Matrix6<f64> {
    let neg = -xi;
    let phi = neg.fixed_rows::<3>(0).into_owned();
    let rho = neg.fixed_rows::<3>(3).into_owned();
    let j_inv = so3_left_jacobian_inv(&phi);
    let q = se3_q_block(&phi, &rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j_inv * q * j_inv));
    out
}

/// A rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn exp(nu: &Tangent) -> Self {
        let omega = nu.fixed_rows::<3>(0).into_owned();
        let rho = nu.fixed_rows::<3>(3).into_owned();
        Self::new(Rotation::exp(&omega), so3_left_jacobian(&omega) * rho)
    }

    pub fn log(&self) -> Result<Tangent> {
        let omega = self.rotation.log()?;
        let rho = so3_left_jacobian_inv(&omega) * self.translation;
        Ok(Tangent::new(omega.x, omega.y, omega.z, rho.x, rho.y, rho.z))
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if rotation.orthogonality_error() > ORTHO_DRIFT {
            rotation = Rotation::from_matrix_projected(rotation.matrix());
        }
        Pose::new(
            rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// `self ⊖ x = log(x⁻¹ · self)`.
    pub fn ominus(&self, x: &Pose) -> Result<Tangent> {
        x.inverse().compose(self).log()
    }

    /// `self · exp(δ)`.
    pub fn retract(&self, delta: &Tangent) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    /// Adjoint in rotation-first coordinates: `T·exp(ξ)·T⁻¹ = exp(Ad_T ξ)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    /// Largest absolute entry difference between homogeneous matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.to_matrix() - other.to_matrix()).abs().max()
    }
}
