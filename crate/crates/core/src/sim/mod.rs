//! Plane-patch worlds, analytic trajectories and sensor models that produce
//! exact ground truth.

mod dataset;
mod trajectory;
mod world;

pub use dataset::{generate, SimConfig, SimDataset};
pub use trajectory::{AnalyticTrajectory, Channel, Kinematics, TrajectoryPreset};
pub use world::{Patch, PlaneWorld, Scene};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{LidarPoint, Sweep};
use crate::geometry::{Pose, Vec3};
use crate::imu::{ImuNoiseModel, ImuSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarModel {
    pub rings: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Firing columns per revolution.
    pub azimuth_steps: usize,
    pub sweep_period: f64,
    /// Range noise standard deviation, metres.
    pub range_noise: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            rings: 16,
            min_elevation_deg: -15.0,
            max_elevation_deg: 15.0,
            azimuth_steps: 900,
            sweep_period: 0.1,
            range_noise: 0.0,
            min_range: 0.5,
            max_range: 100.0,
        }
    }
}

impl LidarModel {
    pub fn elevation(&self, ring: usize) -> f64 {
        if self.rings <= 1 {
            return 0.0;
        }
        let s = ring as f64 / (self.rings - 1) as f64;
        (self.min_elevation_deg + s * (self.max_elevation_deg - self.min_elevation_deg))
            .to_radians()
    }
}

/// Simulated IMU. Noise densities may be zero here, unlike in the estimator
/// model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuModel {
    pub rate: f64,
    pub noise: ImuNoiseModel,
    pub initial_acc_bias: Vec3,
    pub initial_gyro_bias: Vec3,
}

impl ImuModel {
    pub fn noiseless(rate: f64) -> Self {
        Self {
            rate,
            noise: ImuNoiseModel {
                acc_noise: 0.0,
                gyro_noise: 0.0,
                acc_walk: 0.0,
                gyro_walk: 0.0,
                ..Default::default()
            },
            initial_acc_bias: Vec3::zeros(),
            initial_gyro_bias: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRig {
    /// `T^L_B`: maps body-frame points into the lidar frame.
    pub extrinsic: Pose,
    pub lidar: LidarModel,
    pub imu: ImuModel,
}

impl SensorRig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lidar.sweep_period > 0.0) {
            return Err(Error::Config("sweep period must be positive".into()));
        }
        if self.imu.rate < 10.0 / self.lidar.sweep_period {
            return Err(Error::Config(format!(
                "IMU rate {} Hz below 10x the sweep rate",
                self.imu.rate
            )));
        }
        Ok(())
    }

    /// `T^W_L` for a body pose `T^W_B`.
    pub fn lidar_pose(&self, body: &Pose) -> Pose {
        body.compose(&self.extrinsic.inverse())
    }
}

/// IMU stream with the true bias at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    pub acc_bias: Vec<Vec3>,
    pub gyro_bias: Vec<Vec3>,
}

fn normal3(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Sample times `t0 + k / rate` covering the trajectory domain.
pub fn imu_times(traj: &AnalyticTrajectory, rate: f64) -> Vec<f64> {
    let n = ((traj.t1 - traj.t0) * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| traj.t0 + k as f64 / rate).collect()
}

/// Specific force `Rᵀ(a − g) + b_a + n_a` and rate `ω + b_g + n_g`, with
/// white noise scaled by `1/√dt` and biases following a random walk.
pub fn synthesize_imu(traj: &AnalyticTrajectory, rig: &SensorRig, seed: u64) -> Result<ImuStream> {
    let m = &rig.imu;
    let dt = 1.0 / m.rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut ba = m.initial_acc_bias;
    let mut bg = m.initial_gyro_bias;
    let times = imu_times(traj, m.rate);
    let mut out = ImuStream {
        samples: Vec::with_capacity(times.len()),
        acc_bias: Vec::with_capacity(times.len()),
        gyro_bias: Vec::with_capacity(times.len()),
    };
    let white_a = m.noise.acc_noise / dt.sqrt();
    let white_g = m.noise.gyro_noise / dt.sqrt();
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            ba += normal3(&mut rng) * (m.noise.acc_walk * dt.sqrt());
            bg += normal3(&mut rng) * (m.noise.gyro_walk * dt.sqrt());
        }
        let kin = traj.kinematics(t)?;
        let acc = kin.pose.rotation.inverse() * (kin.acceleration - m.noise.gravity)
            + ba
            + normal3(&mut rng) * white_a;
        let gyro = kin.angular_velocity + bg + normal3(&mut rng) * white_g;
        out.samples.push(ImuSample::new(t, acc, gyro));
        out.acc_bias.push(ba);
        out.gyro_bias.push(bg);
    }
    Ok(out)
}

/// A raw sweep plus the true lidar pose `T^W_L` at each point's firing time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSweep {
    pub sweep: Sweep,
    pub point_pose: Vec<Pose>,
    pub patch: Vec<usize>,
}

/// Ray-casts one revolution. Column `c` fires at
/// `t_start + (c + 1) / n · period`, so the last column coincides with the
/// sweep end. Each point is expressed in the lidar frame at its firing time.
pub fn synthesize_sweep(
    traj: &AnalyticTrajectory,
    world: &PlaneWorld,
    rig: &SensorRig,
    t_start: f64,
    t_end: f64,
    seed: u64,
    stream: u64,
) -> Result<SimSweep> {
    let lm = &rig.lidar;
    traj.pose(t_start)?;
    traj.pose(t_end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    let n = lm.azimuth_steps;
    let elev: Vec<(f64, f64)> = (0..lm.rings).map(|r| lm.elevation(r).sin_cos()).collect();
    let mut out = SimSweep {
        sweep: Sweep::new(Vec::with_capacity(n * lm.rings), t_start, t_end)?,
        point_pose: Vec::with_capacity(n * lm.rings),
        patch: Vec::with_capacity(n * lm.rings),
    };
    for c in 0..n {
        let t = if c + 1 == n {
            t_end
        } else {
            t_start + (c + 1) as f64 / n as f64 * (t_end - t_start)
        };
        let pose = rig.lidar_pose(&traj.pose(t)?);
        let (sa, ca) = (std::f64::consts::TAU * c as f64 / n as f64).sin_cos();
        for (ring, &(se, ce)) in elev.iter().enumerate() {
            let d = Vec3::new(ce * ca, ce * sa, se);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let Some((range, patch)) = world.raycast(&pose.translation, &(pose.rotation * d))
            else {
                continue;
            };
            let r = range + noise * lm.range_noise;
            if r < lm.min_range || r > lm.max_range {
                continue;
            }
            out.sweep.points.push(LidarPoint {
                x: d * r,
                t,
                ring: ring as u16,
            });
            out.point_pose.push(pose);
            out.patch.push(patch);
        }
    }
    Ok(out)
}
