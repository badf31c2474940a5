//! Pipeline configuration, loaded from TOML.
//!
//! Every key is optional; missing keys take the defaults shown by
//! `lio config` and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorOptions;
use crate::geometry::{Pose, Quat, Vec3};
use crate::imu::ImuNoiseModel;
use crate::mapper::MapperOptions;
use crate::sim::SimConfig;

/// Lidar mounting on the body: the pose of the lidar frame in the IMU body
/// frame (`T^B_L`), as translation in metres and roll/pitch/yaw in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extrinsic {
    pub translation: [f64; 3],
    pub rpy_deg: [f64; 3],
}

impl Default for Extrinsic {
    fn default() -> Self {
        Self {
            translation: [0.05, 0.0, 0.12],
            rpy_deg: [0.0, 0.0, 0.0],
        }
    }
}

impl Extrinsic {
    pub fn body_from_lidar(&self) -> Pose {
        let [r, p, y] = self.rpy_deg.map(f64::to_radians);
        Pose::new(
            Quat::from_euler_angles(r, p, y),
            Vec3::from(self.translation),
        )
    }

    /// `T^L_B`.
    pub fn lidar_from_body(&self) -> Pose {
        self.body_from_lidar().inverse()
    }

    pub fn from_lidar_from_body(t: &Pose) -> Self {
        let b = t.inverse();
        let (r, p, y) = b.rotation.euler_angles();
        Self {
            translation: b.translation.into(),
            rpy_deg: [r.to_degrees(), p.to_degrees(), y.to_degrees()],
        }
    }

    /// Mounting offset by `dt` metres and `dr` degrees (applied about x, y
    /// and z alike).
    pub fn perturbed(&self, dt: [f64; 3], dr_deg: [f64; 3]) -> Self {
        let mut e = *self;
        for k in 0..3 {
            e.translation[k] += dt[k];
            e.rpy_deg[k] += dr_deg[k];
        }
        e
    }
}

/// Driver settings that are not part of any processing stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Warn when consecutive sweeps are further apart than this many
    /// median sweep periods.
    pub gap_warning_factor: f64,
    /// Poses used for trajectory alignment in `eval`; all when absent.
    pub align_first: Option<usize>,
    /// Export the global map as PLY.
    pub write_map: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            gap_warning_factor: 1.5,
            align_first: None,
            write_map: true,
        }
    }
}

/// Everything `lio` reads from its config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Configured lidar mounting: the initial extrinsic estimate and the
    /// centre of its prior.
    pub extrinsic: Extrinsic,
    pub imu_noise: ImuNoiseModel,
    pub estimator: EstimatorOptions,
    pub mapper: MapperOptions,
    pub run: RunOptions,
    /// Dataset synthesized by `lio simulate`.
    pub sim: SimConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.estimator;
        let bad = |m: String| Err(Error::Config(m));
        if e.window_size < 2 || e.window_size > e.map_window {
            return bad(format!(
                "estimator.window_size must be in [2, map_window = {}], got {}",
                e.map_window, e.window_size
            ));
        }
        if e.outer_iterations == 0 {
            return bad("estimator.outer_iterations must be at least 1".into());
        }
        for (name, v) in [
            ("estimator.voxel_size", e.voxel_size),
            ("estimator.lidar_sigma", e.lidar_sigma),
            ("estimator.huber_delta", e.huber_delta),
            (
                "estimator.association.max_neighbor_dist",
                e.association.max_neighbor_dist,
            ),
            ("mapper.voxel_size", self.mapper.voxel_size),
            ("mapper.huber_delta", self.mapper.huber_delta),
            ("run.gap_warning_factor", self.run.gap_warning_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if e.association.k < 3 || self.mapper.k < 3 {
            return bad("association needs k >= 3".into());
        }
        if e.extrinsic_rotation_prior_weight < 0.0 {
            return bad(format!(
                "estimator.extrinsic_rotation_prior_weight must be >= 0, got {}",
                e.extrinsic_rotation_prior_weight
            ));
        }
        if e.extrinsic_prior_weight < 0.0 {
            return bad(format!(
                "estimator.extrinsic_prior_weight must be >= 0, got {}",
                e.extrinsic_prior_weight
            ));
        }
        if let Some(eps) = self.mapper.epsilon {
            if eps.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad(format!("mapper.epsilon must lie in [0, 1], got {eps:?}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mapper.epsilon_floor) {
            return bad(format!(
                "mapper.epsilon_floor must lie in [0, 1], got {}",
                self.mapper.epsilon_floor
            ));
        }
        if self.mapper.queue_depth == 0 {
            return bad("mapper.queue_depth must be at least 1".into());
        }
        self.imu_noise.validate()?;
        self.sim.rig().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_key() {
        let mut cfg = PipelineConfig::default();
        cfg.mapper.epsilon = Some([0.1, 0.2]);
        cfg.run.align_first = Some(50);
        cfg.estimator.window_size = 5;
        let text = cfg.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            PipelineConfig::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[estimator]\nwindow_size = 20"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[mapper]\nepsilon = [2.0, 0.0]"),
            Err(Error::Config(_))
        ));
        let partial = PipelineConfig::from_toml("[estimator]\nwindow_size = 3").unwrap();
        assert_eq!(partial.estimator.window_size, 3);
        assert_eq!(partial.mapper, MapperOptions::default());
    }
}
