//! Sweep de-skewing, planar feature extraction and plane association
//! against a local map.

mod features;
pub(crate) mod local_map;
mod plane;

pub use features::{extract_planar_features, FeatureOptions};
pub use local_map::{associate, build_local_map, voxel_downsample, AssociationOptions, LocalMap};
pub use plane::{fit_plane, PlaneFit};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    /// Position in the sweep's capture frame, metres.
    pub x: Vec3,
    /// Acquisition time, seconds.
    pub t: f64,
    pub ring: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<LidarPoint>,
    pub t_start: f64,
    pub t_end: f64,
}

impl Sweep {
    pub fn new(points: Vec<LidarPoint>, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::domain(format!(
                "sweep interval [{t_start}, {t_end}] is empty"
            )));
        }
        Ok(Self {
            points,
            t_start,
            t_end,
        })
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Point indices per ring, each list ordered by acquisition time.
    pub fn rings(&self) -> Vec<Vec<usize>> {
        let n = self
            .points
            .iter()
            .map(|p| p.ring as usize + 1)
            .max()
            .unwrap_or(0);
        let mut rings = vec![Vec::new(); n];
        for (i, p) in self.points.iter().enumerate() {
            rings[p.ring as usize].push(i);
        }
        for r in &mut rings {
            r.sort_by(|&a, &b| {
                self.points[a]
                    .t
                    .total_cmp(&self.points[b].t)
                    .then(a.cmp(&b))
            });
        }
        rings
    }
}

/// Moves every point into the sweep-end frame.
///
/// `relative_motion` is the pose of the sweep-start frame expressed in the
/// sweep-end frame; a point captured at fraction `s` of the sweep is mapped
/// through `interpolate(relative_motion, identity, s)`.
pub fn deskew(sweep: &Sweep, relative_motion: &Pose) -> Result<Sweep> {
    let dur = sweep.duration();
    if !(dur > 0.0) {
        return Err(Error::domain("cannot de-skew a zero-duration sweep"));
    }
    let identity = Pose::identity();
    let points = sweep
        .points
        .iter()
        .map(|p| {
            let s = ((p.t - sweep.t_start) / dur).clamp(0.0, 1.0);
            let t = Pose::interpolate_unchecked(relative_motion, &identity, s);
            LidarPoint {
                x: t.transform_point(&p.x),
                ..*p
            }
        })
        .collect();
    Ok(Sweep {
        points,
        t_start: sweep.t_start,
        t_end: sweep.t_end,
    })
}

/// Planar feature points in the capture frame, with their acquisition
/// times so they can be de-skewed after selection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCloud {
    pub points: Vec<Vec3>,
    pub curvature: Vec<f64>,
    pub time: Vec<f64>,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> Vec<Vec3> {
        self.points
            .iter()
            .map(|x| pose.transform_point(x))
            .collect()
    }

    /// Same point-wise correction as [`deskew`], applied to the features.
    pub fn deskewed(
        &self,
        t_start: f64,
        t_end: f64,
        relative_motion: &Pose,
    ) -> Result<FeatureCloud> {
        let dur = t_end - t_start;
        if !(dur > 0.0) {
            return Err(Error::domain("cannot de-skew a zero-duration sweep"));
        }
        let identity = Pose::identity();
        let points = self
            .points
            .iter()
            .zip(&self.time)
            .map(|(x, t)| {
                let s = ((t - t_start) / dur).clamp(0.0, 1.0);
                Pose::interpolate_unchecked(relative_motion, &identity, s).transform_point(x)
            })
            .collect();
        Ok(FeatureCloud {
            points,
            curvature: self.curvature.clone(),
            time: self.time.clone(),
        })
    }
}

/// A feature point tied to a plane `ωᵀy + d = 0` fitted in another frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMeasurement {
    pub x: Vec3,
    pub normal: Vec3,
    pub d: f64,
}

impl RelativeMeasurement {
    /// Signed distance of `pose · x` to the plane.
    pub fn distance(&self, pose: &Pose) -> f64 {
        self.normal.dot(&pose.transform_point(&self.x)) + self.d
    }
}
