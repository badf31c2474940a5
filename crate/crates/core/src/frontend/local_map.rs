use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::plane::fit_plane;
use super::{FeatureCloud, RelativeMeasurement};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationOptions {
    /// Neighbours per plane fit.
    pub k: usize,
    pub plane_inlier_tol: f64,
    /// Neighbourhoods reaching further than this from the query are dropped.
    pub max_neighbor_dist: f64,
    /// Features further than this from their fitted plane at the guess are
    /// treated as unmatched.
    pub max_residual: f64,
}

impl Default for AssociationOptions {
    fn default() -> Self {
        Self {
            k: 5,
            plane_inlier_tol: 0.2,
            max_neighbor_dist: 1.0,
            max_residual: 0.1,
        }
    }
}

pub(crate) fn voxel_key(x: &Vec3, size: f64) -> (i64, i64, i64) {
    (
        (x.x / size).floor() as i64,
        (x.y / size).floor() as i64,
        (x.z / size).floor() as i64,
    )
}

/// Keeps the first point falling in each voxel, preserving input order.
/// Returns the kept indices.
pub fn voxel_downsample(points: &[Vec3], size: f64) -> Vec<usize> {
    if !(size > 0.0) {
        return (0..points.len()).collect();
    }
    let mut seen = HashSet::with_capacity(points.len());
    (0..points.len())
        .filter(|&i| seen.insert(voxel_key(&points[i], size)))
        .collect()
}

/// Features of several sweeps merged into the pivot frame.
#[derive(Debug, Clone)]
pub struct LocalMap {
    tree: KdTree,
    /// Input cloud index each stored point came from.
    source: Vec<usize>,
}

impl LocalMap {
    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
}

/// Transforms each cloud by its pose (`T^{L_p}_{L_γ}`), concatenates them in
/// order and voxel-filters the result.
pub fn build_local_map(features: &[&FeatureCloud], poses: &[Pose], voxel: f64) -> Result<LocalMap> {
    if features.len() != poses.len() {
        return Err(Error::domain(format!(
            "{} feature clouds but {} poses",
            features.len(),
            poses.len()
        )));
    }
    let mut pts = Vec::new();
    let mut src = Vec::new();
    for (i, (f, t)) in features.iter().zip(poses).enumerate() {
        pts.extend(f.transformed(t));
        src.extend(std::iter::repeat_n(i, f.len()));
    }
    let keep = voxel_downsample(&pts, voxel);
    let points: Vec<Vec3> = keep.iter().map(|&i| pts[i]).collect();
    let source = keep.iter().map(|&i| src[i]).collect();
    Ok(LocalMap {
        tree: KdTree::build(&points),
        source,
    })
}

/// Fits a plane to the K map neighbours of each transformed feature and
/// keeps those passing the planarity gate. Map points tagged with
/// `exclude_source` are ignored, so a sweep is never matched against its
/// own returns.
pub fn associate(
    features: &FeatureCloud,
    guess: &Pose,
    map: &KdTree,
    source: Option<(&[usize], usize)>,
    opts: &AssociationOptions,
) -> Result<Vec<RelativeMeasurement>> {
    if opts.k < 3 {
        return Err(Error::domain(format!(
            "association needs K >= 3, got {}",
            opts.k
        )));
    }
    let mut out = Vec::with_capacity(features.len());
    let max_d2 = opts.max_neighbor_dist * opts.max_neighbor_dist;
    let mut nb = Vec::with_capacity(opts.k);
    for x in &features.points {
        let y = guess.transform_point(x);
        let hits = match source {
            Some((tags, own)) => map.knn_filtered(&y, opts.k, |i| tags[i] != own),
            None => map.knn(&y, opts.k),
        };
        if hits.len() < opts.k || hits.last().map(|h| h.1 > max_d2).unwrap_or(true) {
            continue;
        }
        nb.clear();
        nb.extend(hits.iter().map(|h| map.points()[h.0]));
        let fit = fit_plane(&nb, opts.plane_inlier_tol)?;
        if fit.valid && (fit.normal.dot(&y) + fit.d).abs() <= opts.max_residual {
            out.push(RelativeMeasurement {
                x: *x,
                normal: fit.normal,
                d: fit.d,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;

    fn grid(z: f64) -> FeatureCloud {
        let mut f = FeatureCloud::default();
        for i in 0..10 {
            for j in 0..10 {
                f.points.push(Vec3::new(i as f64 * 0.3, j as f64 * 0.3, z));
                f.curvature.push(0.0);
                f.time.push(0.0);
            }
        }
        f
    }

    #[test]
    fn single_identity_cloud() {
        let f = grid(1.0);
        let m = build_local_map(&[&f], &[Pose::identity()], 0.2).unwrap();
        assert_eq!(m.points(), &f.points[..]);
        assert!(build_local_map(&[&f], &[], 0.2).is_err());
    }

    #[test]
    fn downsampling_never_grows() {
        let f = grid(1.0);
        let t = Pose::new(
            Quat::from_euler_angles(0.0, 0.0, 0.3),
            Vec3::new(0.1, 0.05, 0.0),
        );
        let m = build_local_map(&[&f, &f], &[Pose::identity(), t], 0.5).unwrap();
        assert!(m.len() <= 2 * f.len());
        assert!(m.source().iter().all(|s| *s < 2));
    }

    #[test]
    fn on_plane_measurement_has_zero_residual() {
        let f = grid(1.0);
        let m = build_local_map(&[&f], &[Pose::identity()], 0.0).unwrap();
        let q = FeatureCloud {
            points: vec![Vec3::new(1.05, 1.2, 1.0)],
            curvature: vec![0.0],
            time: vec![0.0],
        };
        let ms = associate(
            &q,
            &Pose::identity(),
            m.tree(),
            None,
            &AssociationOptions::default(),
        )
        .unwrap();
        assert_eq!(ms.len(), 1);
        assert!(ms[0].distance(&Pose::identity()).abs() < 1e-9);
        let own = associate(
            &q,
            &Pose::identity(),
            m.tree(),
            Some((m.source(), 0)),
            &AssociationOptions::default(),
        )
        .unwrap();
        assert!(own.is_empty());
    }
}
