use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalyticTrajectory;
use super::{
    synthesize_imu, synthesize_sweep, ImuModel, ImuStream, LidarModel, PlaneWorld, Scene,
    SensorRig, SimSweep, TrajectoryPreset,
};
use crate::config::Extrinsic;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::imu::ImuNoiseModel;
use crate::io::{write_dataset, Dataset, TimedPose};

/// Everything needed to synthesize one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scene: Scene,
    pub trajectory: TrajectoryPreset,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    pub lidar: LidarModel,
    pub imu_rate: f64,
    /// Zero densities give a noiseless IMU.
    pub acc_noise: f64,
    pub gyro_noise: f64,
    pub acc_walk: f64,
    pub gyro_walk: f64,
    pub acc_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    /// True lidar mounting on the body.
    pub extrinsic: Extrinsic,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: Scene::Room,
            trajectory: TrajectoryPreset::RoomMedium,
            duration: 30.0,
            seed: 0,
            lidar: LidarModel::default(),
            imu_rate: 400.0,
            acc_noise: 0.0,
            gyro_noise: 0.0,
            acc_walk: 0.0,
            gyro_walk: 0.0,
            acc_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            extrinsic: Extrinsic::default(),
        }
    }
}

impl SimConfig {
    /// MTi-100-class IMU noise and 2 cm range noise, with small constant
    /// bias offsets.
    pub fn with_realistic_noise(mut self) -> Self {
        let n = ImuNoiseModel::default();
        self.acc_noise = n.acc_noise;
        self.gyro_noise = n.gyro_noise;
        self.acc_walk = n.acc_walk;
        self.gyro_walk = n.gyro_walk;
        self.acc_bias = [0.02, -0.015, 0.03];
        self.gyro_bias = [0.002, -0.001, 0.0015];
        self.lidar.range_noise = 0.02;
        self
    }

    pub fn rig(&self) -> SensorRig {
        SensorRig {
            extrinsic: self.extrinsic.lidar_from_body(),
            lidar: self.lidar,
            imu: ImuModel {
                rate: self.imu_rate,
                noise: ImuNoiseModel {
                    acc_noise: self.acc_noise,
                    gyro_noise: self.gyro_noise,
                    acc_walk: self.acc_walk,
                    gyro_walk: self.gyro_walk,
                    ..Default::default()
                },
                initial_acc_bias: Vec3::from(self.acc_bias),
                initial_gyro_bias: Vec3::from(self.gyro_bias),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub trajectory: AnalyticTrajectory,
    pub world: PlaneWorld,
    pub rig: SensorRig,
    pub imu: ImuStream,
    pub sweeps: Vec<SimSweep>,
    /// `T^W_L` at each sweep end.
    pub gt_lidar: Vec<TimedPose>,
    /// `T^W_B` at each sweep end.
    pub gt_body: Vec<TimedPose>,
    pub gt_velocity: Vec<Vec3>,
}

impl SimDataset {
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            imu: self.imu.samples.clone(),
            sweeps: self.sweeps.iter().map(|s| s.sweep.clone()).collect(),
            groundtruth: Some(self.gt_lidar.clone()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_dataset(dir, &self.to_dataset())
    }
}

/// Sweeps tile the trajectory back to back; every sweep boundary falls on
/// an IMU sample time.
pub fn generate(cfg: &SimConfig) -> Result<SimDataset> {
    if !(cfg.duration > 0.0) {
        return Err(Error::Config(format!(
            "simulation duration must be positive, got {}",
            cfg.duration
        )));
    }
    let rig = cfg.rig();
    rig.validate()?;
    let trajectory = cfg.trajectory.build(cfg.duration);
    let world = PlaneWorld::preset(cfg.scene);
    let imu = synthesize_imu(&trajectory, &rig, cfg.seed)?;
    let per_sweep = (cfg.lidar.sweep_period * cfg.imu_rate).round() as usize;
    if per_sweep == 0 {
        return Err(Error::Config(
            "sweep period shorter than one IMU interval".into(),
        ));
    }
    let n_sweeps = (imu.samples.len() - 1) / per_sweep;
    let mut sweeps = Vec::with_capacity(n_sweeps);
    let mut gt_lidar = Vec::with_capacity(n_sweeps);
    let mut gt_body = Vec::with_capacity(n_sweeps);
    let mut gt_velocity = Vec::with_capacity(n_sweeps);
    for j in 0..n_sweeps {
        let t0 = imu.samples[j * per_sweep].t;
        let t1 = imu.samples[(j + 1) * per_sweep].t;
        sweeps.push(synthesize_sweep(
            &trajectory,
            &world,
            &rig,
            t0,
            t1,
            cfg.seed,
            j as u64,
        )?);
        let k = trajectory.kinematics(t1)?;
        gt_body.push(TimedPose::new(t1, k.pose));
        gt_lidar.push(TimedPose::new(t1, rig.lidar_pose(&k.pose)));
        gt_velocity.push(k.velocity);
    }
    Ok(SimDataset {
        config: cfg.clone(),
        trajectory,
        world,
        rig,
        imu,
        sweeps,
        gt_lidar,
        gt_body,
        gt_velocity,
    })
}
