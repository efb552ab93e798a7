//! Rigid-body transforms in 3D and the Lie-group machinery the optimizer needs.
//!
//! Tangent vectors are ordered `(rho, theta)`: translational coordinates first,
//! axis-angle rotation second. Perturbations are applied on the right,
//! `x <- x * exp(delta)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Distance from pi below which the principal logarithm is rejected.
pub const PI_GUARD: f64 = 1e-6;

/// Rigid transform: unit-quaternion rotation plus translation in meters.
///
/// The quaternion is kept normalized and in the `w >= 0` hemisphere, so two
/// poses describing the same transform have identical components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// Minimal 6-dof coordinates of a transform: `rho` (m) and axis-angle `theta` (rad).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub theta: Vector3<f64>,
}

fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let q = if q.w < 0.0 { -q } else { q };
    UnitQuaternion::new_normalize(q)
}

pub(crate) fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation.into_inner()),
            translation,
        }
    }

    /// Builds a pose from raw quaternion components, renormalizing them.
    ///
    /// Returns `None` for a zero or non-finite quaternion.
    pub fn from_components(translation: [f64; 3], quat_wxyz: [f64; 4]) -> Option<Self> {
        let [w, x, y, z] = quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm == 0.0 || translation.iter().any(|c| !c.is_finite()) {
            return None;
        }
        Some(Self {
            rotation: canonical(q),
            translation: Vector3::from(translation),
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: canonical((self.rotation * other.rotation).into_inner()),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: canonical(inv.into_inner()),
            translation: -(inv * self.translation),
        }
    }

    /// `self^-1 * other`, the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn exp(v: &Twist) -> Pose {
        Pose {
            rotation: so3_exp(&v.theta),
            translation: so3_left_jacobian(&v.theta) * v.rho,
        }
    }

    /// Principal logarithm. Fails when the rotation angle is within
    /// [`PI_GUARD`] of pi.
    pub fn log(&self) -> Result<Twist> {
        let theta = so3_log(&self.rotation)?;
        Ok(Twist {
            rho: so3_left_jacobian_inv(&theta) * self.translation,
            theta,
        })
    }

    /// Logarithm that never fails: rotations at pi map to a rotation vector
    /// of length exactly pi.
    pub(crate) fn log_clamped(&self) -> Twist {
        let theta = so3_log_clamped(&self.rotation);
        Twist {
            rho: so3_left_jacobian_inv(&theta) * self.translation,
            theta,
        }
    }

    /// Adjoint for `(rho, theta)` ordered tangents: `[[R, t^ R], [0, R]]`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    /// Largest absolute difference over the 7 stored components.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dt = (self.translation - other.translation).abs().max();
        let dq = (self.rotation.coords - other.rotation.coords).abs().max();
        dt.max(dq)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose(t: [{:.4}, {:.4}, {:.4}], q: [w {:.4}, x {:.4}, y {:.4}, z {:.4}])",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k
        )
    }
}

impl Twist {
    pub fn new(rho: Vector3<f64>, theta: Vector3<f64>) -> Self {
        Self { rho, theta }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rho: v.fixed_rows::<3>(0).into_owned(),
            theta: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x,
            self.rho.y,
            self.rho.z,
            self.theta.x,
            self.theta.y,
            self.theta.z,
        )
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        Twist {
            rho: -self.rho,
            theta: -self.theta,
        }
    }
}

fn so3_exp(theta: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle2 = theta.norm_squared();
    let angle = angle2.sqrt();
    let (w, k) = if angle < 1e-8 {
        (1.0 - angle2 / 8.0, 0.5 - angle2 / 48.0)
    } else {
        let half = 0.5 * angle;
        (half.cos(), half.sin() / angle)
    };
    canonical(Quaternion::new(w, k * theta.x, k * theta.y, k * theta.z))
}

fn so3_log(q: &UnitQuaternion<f64>) -> Result<Vector3<f64>> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s2 = v.norm_squared();
    let s = s2.sqrt();
    let angle = 2.0 * s.atan2(w);
    if std::f64::consts::PI - angle <= PI_GUARD {
        return Err(Error::AngleAtPi { angle });
    }
    // 2 atan(s / w) / s, expanded near s = 0.
    let k = if s < 1e-8 {
        2.0 / w * (1.0 - s2 / (3.0 * w * w))
    } else {
        angle / s
    };
    Ok(v * k)
}

/// Rotation vector with angle clamped to pi; never fails. Used where only a
/// magnitude is needed.
pub(crate) fn so3_log_clamped(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    match so3_log(q) {
        Ok(v) => v,
        Err(_) => {
            let v = q.quaternion().imag();
            let n = v.norm();
            if n > 0.0 {
                v * (std::f64::consts::PI / n)
            } else {
                Vector3::zeros()
            }
        }
    }
}

/// SO(3) left Jacobian, the `V` matrix of the SE(3) exponential.
pub(crate) fn so3_left_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    let (b, c) = if a < 1e-4 {
        (0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0)
    } else {
        let half_sin = (0.5 * a).sin();
        (2.0 * half_sin * half_sin / a2, (a - a.sin()) / (a2 * a))
    };
    let w = hat(theta);
    Matrix3::identity() + w * b + w * w * c
}

pub(crate) fn so3_left_jacobian_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    let d = if a < 1e-2 {
        1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    } else {
        let half = 0.5 * a;
        1.0 / a2 - half.cos() / (half.sin() * 2.0 * a)
    };
    let w = hat(theta);
    Matrix3::identity() - w * 0.5 + w * w * d
}

/// Coupling block `Q(rho, theta)` of the SE(3) left Jacobian.
fn se3_q(rho: &Vector3<f64>, theta: &Vector3<f64>) -> Matrix3<f64> {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    let (c1, c2, c3) = if a < 1e-2 {
        (
            1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0,
            1.0 / 24.0 - a2 / 720.0 + a2 * a2 / 40320.0,
            1.0 / 120.0 - a2 / 2520.0 + a2 * a2 / 120960.0,
        )
    } else {
        let (s, c) = a.sin_cos();
        let a4 = a2 * a2;
        (
            (a - s) / (a2 * a),
            (a2 + 2.0 * c - 2.0) / (2.0 * a4),
            (2.0 * a - 3.0 * s + a * c) / (2.0 * a4 * a),
        )
    };
    let p = hat(rho);
    let w = hat(theta);
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    let ww = w * w;
    p * 0.5
        + (wp + pw + wpw) * c1
        + (ww * p + pw * w - wpw * 3.0) * c2
        + (wpw * w + ww * p * w) * c3
}

/// Inverse of the SE(3) right Jacobian at `v`.
pub fn right_jacobian_inv(v: &Twist) -> Matrix6<f64> {
    // Jr(v) = Jl(-v)
    let rho = -v.rho;
    let theta = -v.theta;
    let j_inv = so3_left_jacobian_inv(&theta);
    let q = se3_q(&rho, &theta);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-j_inv * q * j_inv));
    out
}

/// Relative-pose residual `log(z^-1 * xi^-1 * xj)`.
pub fn relative_error(xi: &Pose, xj: &Pose, zij: &Pose) -> Result<Twist> {
    zij.inverse().compose(&xi.between(xj)).log()
}

/// Jacobians of [`relative_error`] with respect to right perturbations of
/// `xi` and `xj`, evaluated at zero perturbation.
pub fn error_jacobians(xi: &Pose, xj: &Pose, zij: &Pose) -> Result<(Matrix6<f64>, Matrix6<f64>)> {
    let e = relative_error(xi, xj, zij)?;
    let jr_inv = right_jacobian_inv(&e);
    let ad = xj.between(xi).adjoint();
    Ok((-(jr_inv * ad), jr_inv))
}
