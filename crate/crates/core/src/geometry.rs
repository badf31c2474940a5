//! Rotation and rigid-transform algebra.
//!
//! Quaternions follow the Hamilton convention. Two perturbation forms are
//! used across the crate and each Jacobian states which one it refers to:
//!
//! * world (left) form, `retract(q, θ) = Exp(θ) ⊗ q`, used by the mapper's
//!   rotation-constrained update;
//! * body (right) form, `q ⊗ Exp(δθ)`, used for every state in the sliding
//!   window and for the pre-integrated rotation.
//!
//! The two are related by `Exp(θ) ⊗ q = q ⊗ Exp(Rᵀθ)`.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle exponential.
pub fn exp_so3(theta: &Vec3) -> Quat {
    let angle = theta.norm();
    let (w, s) = if angle < SMALL_ANGLE {
        // cos(a/2) and sin(a/2)/a to third order
        (1.0 - angle * angle / 8.0, 0.5 - angle * angle / 48.0)
    } else {
        let half = 0.5 * angle;
        (half.cos(), half.sin() / angle)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, s * theta.x, s * theta.y, s * theta.z))
}

/// Inverse of [`exp_so3`], returning the shortest-arc rotation vector.
pub fn log_so3(q: &Quat) -> Vec3 {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < SMALL_ANGLE {
        // 2 atan2(n, w) / n ≈ (2 / w)(1 - n² / (3 w²))
        return v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w));
    }
    v * (2.0 * n.atan2(w) / n)
}

/// Right Jacobian of SO(3): `Exp(θ + δ) ≈ Exp(θ) Exp(Jr(θ) δ)`.
pub fn right_jacobian(theta: &Vec3) -> Mat3 {
    let a = theta.norm();
    let k = skew(theta);
    if a < 1e-5 {
        return Mat3::identity() - 0.5 * k + k * k / 6.0;
    }
    let a2 = a * a;
    Mat3::identity() - (1.0 - a.cos()) / a2 * k + (a - a.sin()) / (a2 * a) * k * k
}

/// Inverse of [`right_jacobian`]: `Log(Exp(θ) Exp(δ)) ≈ θ + Jr⁻¹(θ) δ`.
pub fn right_jacobian_inv(theta: &Vec3) -> Mat3 {
    let a = theta.norm();
    let k = skew(theta);
    if a < 1e-5 {
        return Mat3::identity() + 0.5 * k + k * k / 12.0;
    }
    let coeff = 1.0 / (a * a) - (1.0 + a.cos()) / (2.0 * a * a.sin());
    Mat3::identity() + 0.5 * k + coeff * k * k
}

/// World-frame retraction `Exp(θ) ⊗ q`.
pub fn retract(q: &Quat, theta: &Vec3) -> Quat {
    renormalize(exp_so3(theta) * q)
}

/// Inverse of [`retract`]: the θ with `retract(q, θ) == target`.
pub fn local_coordinates(q: &Quat, target: &Quat) -> Vec3 {
    log_so3(&(target * q.inverse()))
}

/// Body-frame increment `q ⊗ Exp(δθ)`.
pub fn plus_body(q: &Quat, delta: &Vec3) -> Quat {
    renormalize(q * exp_so3(delta))
}

/// Inverse of [`plus_body`]: `Log(q⁻¹ ⊗ target)`.
pub fn minus_body(q: &Quat, target: &Quat) -> Vec3 {
    log_so3(&(q.inverse() * target))
}

/// Geodesic angle between two rotations, in `[0, π]`.
pub fn angle_between(a: &Quat, b: &Quat) -> f64 {
    minus_body(a, b).norm()
}

fn renormalize(q: Quat) -> Quat {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Rigid transform `T^a_b`: maps points from frame `b` into frame `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Quat::identity(), translation)
    }

    /// Quaternion in `(qx, qy, qz, qw)` storage order.
    pub fn from_xyzw(translation: Vec3, xyzw: [f64; 4]) -> Self {
        let q = Quaternion::new(xyzw[3], xyzw[0], xyzw[1], xyzw[2]);
        // Already-unit input is kept bit-exact so text round trips are lossless.
        let rotation = if (q.norm_squared() - 1.0).abs() < 1e-14 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Self::new(rotation, translation)
    }

    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation;
        [q.i, q.j, q.k, q.w]
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            renormalize(self.rotation * other.rotation),
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `self⁻¹ ∘ other`, the pose of `other` expressed in this frame.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a pose from a homogeneous matrix whose upper-left block is a
    /// rotation (orthonormalized on the way in).
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        let r: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rot = nalgebra::Rotation3::from_matrix(&r);
        Pose::new(
            UnitQuaternion::from_rotation_matrix(&rot),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Translation lerp and shortest-arc slerp; `s` must lie in `[0, 1]`.
    pub fn interpolate(p0: &Pose, p1: &Pose, s: f64) -> Result<Pose> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::domain(format!(
                "interpolation parameter {s} outside [0, 1]"
            )));
        }
        Ok(Self::interpolate_unchecked(p0, p1, s))
    }

    pub(crate) fn interpolate_unchecked(p0: &Pose, p1: &Pose, s: f64) -> Pose {
        let delta = minus_body(&p0.rotation, &p1.rotation);
        let rotation = plus_body(&p0.rotation, &(delta * s));
        let translation = p0.translation + (p1.translation - p0.translation) * s;
        Pose::new(rotation, translation)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Roll, pitch and yaw (intrinsic Z-Y-X) of a rotation.
pub fn roll_pitch_yaw(q: &Quat) -> (f64, f64, f64) {
    q.euler_angles()
}
