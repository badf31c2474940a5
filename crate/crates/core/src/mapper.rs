//! Rotation-constrained registration of odometry sweeps against a global
//! map.
//!
//! The refinement solves point-to-plane Gauss-Newton with the orientation
//! Jacobian rescaled by `R̆ᵀ·diag(εx, εy, 1)` and applies the increment as a
//! world-frame rotation. Rescaling alone does not change a Gauss-Newton
//! step, so the odometry rotation enters as a virtual measurement on the
//! world x/y axes carrying the information the rescaling removed,
//! `(1 − ε²)·h`. With ε = 1 the solve is plain Gauss-Newton; with ε = 0
//! roll and pitch never move.

use std::collections::HashSet;

use nalgebra::{Matrix6, RowVector3, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::local_map::voxel_key;
use crate::frontend::{associate, AssociationOptions, FeatureCloud, RelativeMeasurement};
use crate::geometry::{log_so3, plus_body, retract, skew, Mat3, Pose, Quat, Vec3};
use crate::kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperOptions {
    /// When false the pipeline reports odometry only.
    pub enabled: bool,
    /// Neighbours per plane fit.
    pub k: usize,
    pub plane_inlier_tol: f64,
    pub max_neighbor_dist: f64,
    /// Features further than this from their plane at the prior are
    /// treated as unmatched, metres.
    pub max_residual: f64,
    /// Global-map voxel edge, metres.
    pub voxel_size: f64,
    pub max_iterations: usize,
    /// Stop once the increment norm drops below this.
    pub step_tol: f64,
    /// Huber threshold on point-to-plane distance, metres.
    pub huber_delta: f64,
    /// Fixed (εx, εy). When absent they are taken from the odometry's
    /// orientation information.
    pub epsilon: Option<[f64; 2]>,
    pub epsilon_floor: f64,
    /// Fewer matches than this leave the prior unchanged.
    pub min_associations: usize,
    /// Eigen-directions of the 6×6 system below this fraction of the
    /// largest eigenvalue are not updated.
    pub degeneracy_ratio: f64,
    /// Drop queued sweeps when the mapper falls behind.
    pub realtime_skip: bool,
    pub queue_depth: usize,
}

impl Default for MapperOptions {
    fn default() -> Self {
        Self {
            enabled: true,
            k: 5,
            plane_inlier_tol: 0.2,
            max_neighbor_dist: 1.0,
            max_residual: 0.3,
            voxel_size: 0.2,
            max_iterations: 10,
            step_tol: 1e-9,
            huber_delta: 0.1,
            epsilon: None,
            epsilon_floor: 0.01,
            min_associations: 30,
            degeneracy_ratio: 1e-6,
            realtime_skip: false,
            queue_depth: 2,
        }
    }
}

impl MapperOptions {
    fn association(&self) -> AssociationOptions {
        AssociationOptions {
            k: self.k,
            plane_inlier_tol: self.plane_inlier_tol,
            max_neighbor_dist: self.max_neighbor_dist,
            max_residual: self.max_residual,
        }
    }
}

/// Voxel-filtered planar features in the world frame.
#[derive(Debug, Clone)]
pub struct GlobalMap {
    voxel: f64,
    points: Vec<Vec3>,
    occupied: HashSet<(i64, i64, i64)>,
    tree: KdTree,
    /// (timestamp, points added) per insert.
    log: Vec<(f64, usize)>,
}

impl GlobalMap {
    pub fn new(voxel: f64) -> Result<Self> {
        if !(voxel > 0.0) {
            return Err(Error::domain(format!(
                "map voxel size must be positive, got {voxel}"
            )));
        }
        Ok(Self {
            voxel,
            points: Vec::new(),
            occupied: HashSet::new(),
            tree: KdTree::build(&[]),
            log: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn insertions(&self) -> &[(f64, usize)] {
        &self.log
    }

    /// Adds the features at pose `T^W_L`, skipping occupied voxels.
    /// Returns the number of points added.
    pub fn insert(&mut self, t: f64, features: &FeatureCloud, pose: &Pose) -> Result<usize> {
        if !pose.is_finite() {
            return Err(Error::domain("cannot insert features at a non-finite pose"));
        }
        let before = self.points.len();
        for x in features.transformed(pose) {
            if self.occupied.insert(voxel_key(&x, self.voxel)) {
                self.points.push(x);
            }
        }
        let added = self.points.len() - before;
        if added > 0 {
            self.tree = KdTree::build(&self.points);
        }
        self.log.push((t, added));
        Ok(added)
    }
}

/// Point-to-plane distance of a world-frame plane measurement at `T^W_L`,
/// with Jacobians w.r.t. translation and the body-frame orientation error.
pub fn map_residual(
    m: &RelativeMeasurement,
    pose: &Pose,
) -> (f64, RowVector3<f64>, RowVector3<f64>) {
    let r = m.distance(pose);
    let j_p = m.normal.transpose();
    let j_theta = -m.normal.transpose() * pose.rotation_matrix() * skew(&m.x);
    (r, j_p, j_theta)
}

/// `ε` and the last-iterate rotation `R̆`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationConstraint {
    pub epsilon: [f64; 2],
    pub rotation: Quat,
}

impl RotationConstraint {
    pub fn new(epsilon: [f64; 2], rotation: Quat) -> Result<Self> {
        if epsilon.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::domain(format!(
                "epsilon must lie in [0, 1], got {epsilon:?}"
            )));
        }
        Ok(Self { epsilon, rotation })
    }

    fn omega(&self) -> Vec3 {
        Vec3::new(self.epsilon[0], self.epsilon[1], 1.0)
    }
}

/// `J_θ · R̆ᵀ · diag(εx, εy, 1)`: the orientation Jacobian w.r.t. a
/// world-frame increment, with the x and y columns scaled down.
pub fn constrain_jacobian(j_theta: &RowVector3<f64>, c: &RotationConstraint) -> RowVector3<f64> {
    let world = j_theta * c.rotation.to_rotation_matrix().into_inner().transpose();
    world.component_mul(&c.omega().transpose())
}

/// `ε` from orientation information in world axes: how much better the x
/// and y axes are known than z, `I_zz / I_xx`, clamped to `[floor, 1]`.
pub fn epsilon_from_information(info: &Mat3, floor: f64) -> [f64; 2] {
    let ratio = |i: f64| {
        if i > 0.0 && info[(2, 2)].is_finite() {
            (info[(2, 2)].max(0.0) / i).clamp(floor, 1.0)
        } else {
            1.0
        }
    };
    [ratio(info[(0, 0)]), ratio(info[(1, 1)])]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub pose: Pose,
    /// Pose after each iteration.
    pub iterates: Vec<Pose>,
    pub associations: usize,
    /// Too few matches; `pose` is the prior.
    pub flagged: bool,
    pub converged: bool,
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        1.0
    } else {
        delta / r.abs()
    }
}

/// Solves `H δ = −g` on the eigen-directions of `H` above the degeneracy
/// threshold.
fn projected_solve(h: &Matrix6<f64>, g: &Vector6<f64>, ratio: f64) -> Vector6<f64> {
    let eig = SymmetricEigen::new(*h);
    let top = eig.eigenvalues.max();
    let mut dx = Vector6::zeros();
    if !(top > 0.0) {
        return dx;
    }
    for i in 0..6 {
        let l = eig.eigenvalues[i];
        if l > ratio * top {
            let v = eig.eigenvectors.column(i);
            dx -= v * (v.dot(g) / l);
        }
    }
    dx
}

/// Registers `features` (lidar frame) against `map`, starting from
/// `prior` (`T^W_L`). With `epsilon = None` the orientation is updated
/// freely in the body frame; otherwise the rotation-constrained step is
/// used with the virtual measurement anchored at the prior's rotation.
pub fn refine(
    prior: &Pose,
    features: &FeatureCloud,
    map: &GlobalMap,
    epsilon: Option<[f64; 2]>,
    opts: &MapperOptions,
) -> Result<RefineResult> {
    if map.is_empty() {
        return Err(Error::domain("refinement needs a non-empty map"));
    }
    let assoc = opts.association();
    let mut pose = *prior;
    let mut iterates = Vec::new();
    let mut associations = 0;
    let mut converged = false;
    for it in 0..opts.max_iterations {
        let ms = associate(features, &pose, map.tree(), None, &assoc)?;
        if it == 0 {
            associations = ms.len();
            if ms.len() < opts.min_associations {
                return Ok(RefineResult {
                    pose: *prior,
                    iterates,
                    associations,
                    flagged: true,
                    converged: false,
                });
            }
        }
        let c = epsilon
            .map(|e| RotationConstraint::new(e, pose.rotation))
            .transpose()?;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut h_world = Vec3::zeros();
        for m in &ms {
            let (r, j_p, j_theta) = map_residual(m, &pose);
            let w = huber_weight(r, opts.huber_delta);
            let j_rot = match &c {
                Some(c) => {
                    let unscaled =
                        j_theta * c.rotation.to_rotation_matrix().into_inner().transpose();
                    h_world += unscaled.transpose().component_mul(&unscaled.transpose()) * w;
                    constrain_jacobian(&j_theta, c)
                }
                None => j_theta,
            };
            let mut j = Vector6::zeros();
            j.fixed_rows_mut::<3>(0).copy_from(&j_p.transpose());
            j.fixed_rows_mut::<3>(3).copy_from(&j_rot.transpose());
            h += j * j.transpose() * w;
            g += j * (w * r);
        }
        if let Some(c) = &c {
            // Virtual measurement: world x/y rotation offset from the prior.
            let e = log_so3(&(pose.rotation * prior.rotation.inverse()));
            for a in 0..2 {
                let d = (1.0 - c.epsilon[a] * c.epsilon[a]) * h_world[a];
                h[(3 + a, 3 + a)] += d;
                g[3 + a] += d * e[a];
            }
        }
        let dx = projected_solve(&h, &g, opts.degeneracy_ratio);
        if !dx.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(
                "refinement produced a non-finite step".into(),
            ));
        }
        let dp = dx.fixed_rows::<3>(0).into_owned();
        let dth = dx.fixed_rows::<3>(3).into_owned();
        let rotation = match c {
            Some(_) => retract(&pose.rotation, &dth),
            None => plus_body(&pose.rotation, &dth),
        };
        pose = Pose::new(rotation, pose.translation + dp);
        iterates.push(pose);
        if dx.norm() < opts.step_tol {
            converged = true;
            break;
        }
    }
    Ok(RefineResult {
        pose,
        iterates,
        associations,
        flagged: false,
        converged,
    })
}

/// One refined sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedPose {
    pub t: f64,
    /// Refined `T^W_L`.
    pub pose: Pose,
    pub epsilon: [f64; 2],
    pub associations: usize,
    pub iterations: usize,
    pub flagged: bool,
    pub refine_ms: f64,
}

/// Owns the global map and the running odometry-to-map correction.
#[derive(Debug, Clone)]
pub struct Mapper {
    opts: MapperOptions,
    map: GlobalMap,
    /// `T_map · T_odom⁻¹` from the last refined sweep; the next prior is
    /// this correction applied to the next odometry pose.
    correction: Pose,
}

impl Mapper {
    pub fn new(opts: MapperOptions) -> Result<Self> {
        Ok(Self {
            map: GlobalMap::new(opts.voxel_size)?,
            opts,
            correction: Pose::identity(),
        })
    }

    pub fn map(&self) -> &GlobalMap {
        &self.map
    }

    pub fn options(&self) -> &MapperOptions {
        &self.opts
    }

    /// Refines one odometry pose and inserts its features. The first sweep
    /// is inserted at the odometry pose as is.
    pub fn process(
        &mut self,
        t: f64,
        odometry: &Pose,
        features: &FeatureCloud,
        orientation_information: Option<&Mat3>,
    ) -> Result<MappedPose> {
        let start = std::time::Instant::now();
        let epsilon = self
            .opts
            .epsilon
            .or_else(|| {
                orientation_information
                    .map(|i| epsilon_from_information(i, self.opts.epsilon_floor))
            })
            .unwrap_or([1.0, 1.0]);
        if self.map.is_empty() {
            self.map.insert(t, features, odometry)?;
            return Ok(MappedPose {
                t,
                pose: *odometry,
                epsilon,
                associations: 0,
                iterations: 0,
                flagged: false,
                refine_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        let prior = self.correction.compose(odometry);
        let res = refine(&prior, features, &self.map, Some(epsilon), &self.opts)?;
        if !res.flagged {
            self.correction = res.pose.compose(&odometry.inverse());
        }
        self.map.insert(t, features, &res.pose)?;
        Ok(MappedPose {
            t,
            pose: res.pose,
            epsilon,
            associations: res.associations,
            iterations: res.iterates.len(),
            flagged: res.flagged,
            refine_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}
