use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Least-squares plane `ωᵀx + d = 0` through a neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub d: f64,
    pub valid: bool,
    /// Largest point-to-plane distance among the neighbours.
    pub max_distance: f64,
}

/// Ratio `λ_mid / λ_max` of the centred scatter below which a neighbourhood
/// counts as collinear.
pub const MIN_SPREAD_RATIO: f64 = 0.01;

/// Fits a plane by taking the smallest eigenvector of the centred scatter.
/// The normal is oriented so that `d ≤ 0`.
pub fn fit_plane(neighbors: &[Vec3], inlier_tol: f64) -> Result<PlaneFit> {
    if neighbors.len() < 3 {
        return Err(Error::domain(format!(
            "plane fit needs at least 3 points, got {}",
            neighbors.len()
        )));
    }
    let n = neighbors.len() as f64;
    let centroid = neighbors.iter().sum::<Vec3>() / n;
    let mut scatter = Mat3::zeros();
    for p in neighbors {
        let c = p - centroid;
        scatter += c * c.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_min, l_mid, l_max) = (
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    let mut normal: Vec3 = eig.eigenvectors.column(idx[0]).into_owned().normalize();
    let mut d = -normal.dot(&centroid);
    if d > 0.0 {
        normal = -normal;
        d = -d;
    }
    let max_distance = neighbors
        .iter()
        .map(|p| (normal.dot(p) + d).abs())
        .fold(0.0, f64::max);
    let spread_ok = l_max > 0.0 && l_mid >= MIN_SPREAD_RATIO * l_max && l_min.is_finite();
    Ok(PlaneFit {
        normal,
        d,
        valid: spread_ok && max_distance <= inlier_tol,
        max_distance,
    })
}
