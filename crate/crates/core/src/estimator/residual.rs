use nalgebra::{Matrix3, RowVector3, SMatrix, Vector6};

use crate::frontend::RelativeMeasurement;
use crate::geometry::{minus_body, skew, Pose};

pub type Row6 = SMatrix<f64, 1, 6>;

/// Point-to-plane residual of a feature of sweep `α` against a plane fitted
/// in the pivot lidar frame, with Jacobians w.r.t. `[δp, δθ]` of the pivot
/// body pose, the `α` body pose and the extrinsic `T^L_B`. All rotations use
/// body (right) perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarResidual {
    pub r: f64,
    pub j_pivot: Row6,
    pub j_alpha: Row6,
    pub j_ext: Row6,
}

/// `r = ωᵀ(T^L_B (T^W_{B_p})⁻¹ T^W_{B_α} (T^L_B)⁻¹ x) + d`.
pub fn relative_lidar_residual(
    m: &RelativeMeasurement,
    pivot: &Pose,
    alpha: &Pose,
    ext: &Pose,
) -> LidarResidual {
    let r_lb = ext.rotation_matrix();
    let r_p = pivot.rotation_matrix();
    let r_a = alpha.rotation_matrix();
    let w = m.normal;

    let y1 = r_lb.transpose() * (m.x - ext.translation);
    let y2 = r_a * y1 + alpha.translation;
    let y3 = r_p.transpose() * (y2 - pivot.translation);
    let y4 = r_lb * y3 + ext.translation;
    let r = w.dot(&y4) + m.d;

    let wt: RowVector3<f64> = w.transpose();
    let a = wt * r_lb * r_p.transpose();
    let a_ra = a * r_a;
    let rel: Matrix3<f64> = r_lb * r_p.transpose() * r_a * r_lb.transpose();

    let mut j_alpha = Row6::zeros();
    j_alpha.fixed_view_mut::<1, 3>(0, 0).copy_from(&a);
    j_alpha
        .fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&(-a_ra * skew(&y1)));

    let mut j_pivot = Row6::zeros();
    j_pivot.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-a));
    j_pivot
        .fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&(wt * r_lb * skew(&y3)));

    let mut j_ext = Row6::zeros();
    j_ext
        .fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&(wt * (Matrix3::identity() - rel)));
    j_ext
        .fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&(a_ra * skew(&y1) - wt * r_lb * skew(&y3)));

    LidarResidual {
        r,
        j_pivot,
        j_alpha,
        j_ext,
    }
}

/// Soft anchor of the extrinsic at its configured value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicPrior {
    pub pose: Pose,
    pub translation_weight: f64,
    pub rotation_weight: f64,
}

impl ExtrinsicPrior {
    /// `[√w_t · (p − p̄), √w_r · Log(R̄ᵀR)]`. The Jacobian w.r.t. the
    /// extrinsic tangent is taken as `diag(√w_t · I, √w_r · I)`, exact in
    /// translation and to first order in rotation.
    pub fn residual(&self, ext: &Pose) -> Vector6<f64> {
        let mut r = Vector6::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(
            &((ext.translation - self.pose.translation) * self.translation_weight.max(0.0).sqrt()),
        );
        r.fixed_rows_mut::<3>(3).copy_from(
            &(minus_body(&self.pose.rotation, &ext.rotation)
                * self.rotation_weight.max(0.0).sqrt()),
        );
        r
    }

    pub fn jacobian_diagonal(&self) -> [f64; 6] {
        let (t, r) = (
            self.translation_weight.max(0.0).sqrt(),
            self.rotation_weight.max(0.0).sqrt(),
        );
        [t, t, t, r, r, r]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quat, Vec3};

    #[test]
    fn degenerate_window_reduces_to_plane_distance() {
        let m = RelativeMeasurement {
            x: Vec3::new(1.0, 2.0, 3.0),
            normal: Vec3::new(0.0, 0.6, 0.8),
            d: -0.5,
        };
        let p = Pose::new(
            Quat::from_euler_angles(0.1, 0.2, 0.3),
            Vec3::new(1.0, -1.0, 0.5),
        );
        let r = relative_lidar_residual(&m, &p, &p, &Pose::identity());
        assert!((r.r - (m.normal.dot(&m.x) + m.d)).abs() < 1e-12);
    }

    #[test]
    fn extrinsic_prior_basics() {
        let e = Pose::new(
            Quat::from_euler_angles(0.01, 0.0, 0.0),
            Vec3::new(0.1, 0.2, 0.3),
        );
        let p = ExtrinsicPrior {
            pose: e,
            translation_weight: 100.0,
            rotation_weight: 1e4,
        };
        assert_eq!(p.residual(&e), Vector6::zeros());
        let r = p.residual(&Pose::identity());
        assert!((r.fixed_rows::<3>(0) + Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!((r[3] + 1.0).abs() < 1e-9 && r[4].abs() < 1e-12);
        let off = ExtrinsicPrior {
            translation_weight: 0.0,
            rotation_weight: 0.0,
            ..p
        };
        assert_eq!(off.residual(&Pose::identity()), Vector6::zeros());
    }
}
