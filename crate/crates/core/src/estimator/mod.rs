//! Fixed-lag smoother over IMU pre-integration and relative point-to-plane
//! lidar factors.

mod bootstrap;
mod prior;
mod residual;
mod solver;
mod window;

pub use bootstrap::{
    finite_difference_velocities, gravity_aligned_orientation, BootstrapMode, BootstrapOptions,
};
pub use prior::{schur_complement, MarginalPrior, SchurResult};
pub use residual::{relative_lidar_residual, ExtrinsicPrior, LidarResidual, Row6};
pub use solver::{
    scaled_conditioning, ImuFactor, LidarFactor, LidarNoise, NormalEquations, Problem, SolveReport,
    SolverOptions, Termination,
};
pub use window::{Estimator, OdometryOutput, StepTimings};

use serde::{Deserialize, Serialize};

use crate::frontend::{AssociationOptions, FeatureOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    /// Optimized states in the window (N_s).
    pub window_size: usize,
    /// Sweeps contributing to the local map (N_m).
    pub map_window: usize,
    /// Local-map voxel edge, metres.
    pub voxel_size: f64,
    /// Associate-then-solve passes per sweep.
    pub outer_iterations: usize,
    /// Lidar point-to-plane standard deviation, metres.
    pub lidar_sigma: f64,
    /// Huber threshold on lidar residuals, metres.
    pub huber_delta: f64,
    /// Fewer associations than this on the newest sweep marks it degraded.
    pub min_associations: usize,
    /// Smallest-to-largest eigenvalue ratio of the newest sweep's
    /// translational lidar information below which observability is low.
    pub low_observability_ratio: f64,
    pub deskew: bool,
    pub estimate_extrinsic: bool,
    /// Extrinsic directions whose information from a single window falls
    /// below this (1/m² or 1/rad², after whitening) are not updated.
    pub extrinsic_min_information: f64,
    /// Weight of the extrinsic translation prior (1/m²); 0 disables it.
    pub extrinsic_prior_weight: f64,
    /// Weight of the extrinsic rotation prior (1/rad²); 0 disables it.
    pub extrinsic_rotation_prior_weight: f64,
    /// Re-integrate an IMU factor once its start-state accelerometer bias
    /// moves further than this from the linearization point.
    pub repropagate_acc_bias: f64,
    pub repropagate_gyro_bias: f64,
    /// Fold the departing pivot's lidar factors into the marginal prior.
    /// Without them the prior only carries the IMU chain and the relative
    /// lidar geometry of the departing pivot is lost.
    pub marginalize_lidar: bool,
    pub features: FeatureOptions,
    pub association: AssociationOptions,
    pub solver: SolverOptions,
    pub bootstrap: BootstrapOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            window_size: 4,
            map_window: 12,
            voxel_size: 0.2,
            outer_iterations: 2,
            lidar_sigma: 0.03,
            huber_delta: 0.1,
            min_associations: 30,
            low_observability_ratio: 0.02,
            deskew: true,
            estimate_extrinsic: true,
            extrinsic_min_information: 0.0,
            extrinsic_prior_weight: 1e6,
            extrinsic_rotation_prior_weight: 1e6,
            repropagate_acc_bias: 0.05,
            repropagate_gyro_bias: 0.005,
            marginalize_lidar: true,
            features: FeatureOptions::default(),
            association: AssociationOptions::default(),
            solver: SolverOptions::default(),
            bootstrap: BootstrapOptions::default(),
        }
    }
}
