use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Quat, Vec3};
use crate::imu::ImuSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMode {
    /// Seed the first window from the dataset's ground-truth poses.
    GroundTruth,
    /// Register the first sweeps against each other, starting from a
    /// gravity-aligned identity pose.
    ScanMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapOptions {
    pub mode: BootstrapMode,
    /// Prior standard deviation on the first pose (metres and radians).
    pub pose_sigma: f64,
    pub acc_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
    /// Prior standard deviation on the extrinsic (metres and radians).
    pub extrinsic_sigma: f64,
    /// Peak seed speed below which the motion counts as unexcited, m/s.
    pub min_excitation: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            mode: BootstrapMode::GroundTruth,
            pose_sigma: 1e-3,
            acc_bias_sigma: 0.5,
            gyro_bias_sigma: 0.05,
            extrinsic_sigma: 0.05,
            min_excitation: 0.05,
        }
    }
}

/// Velocities from positions: central differences inside, second-order
/// one-sided differences at the ends (first order with two samples).
pub fn finite_difference_velocities(times: &[f64], poses: &[Pose]) -> Result<Vec<Vec3>> {
    let n = poses.len();
    if n < 2 || times.len() != n {
        return Err(Error::domain(format!(
            "need at least 2 timed poses, got {n}"
        )));
    }
    let p = |k: usize| poses[k].translation;
    if n == 2 {
        let v = (p(1) - p(0)) / (times[1] - times[0]);
        return Ok(vec![v, v]);
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b, c) = match k {
            0 => (0, 1, 2),
            k if k == n - 1 => (n - 3, n - 2, n - 1),
            k => (k - 1, k, k + 1),
        };
        // Derivative of the quadratic through three (possibly uneven) samples.
        let (ta, tb, tc, t) = (times[a], times[b], times[c], times[k]);
        let la = (2.0 * t - tb - tc) / ((ta - tb) * (ta - tc));
        let lb = (2.0 * t - ta - tc) / ((tb - ta) * (tb - tc));
        let lc = (2.0 * t - ta - tb) / ((tc - ta) * (tc - tb));
        out.push(p(a) * la + p(b) * lb + p(c) * lc);
    }
    Ok(out)
}

/// Roll and pitch from the mean specific force, zero yaw.
pub fn gravity_aligned_orientation(samples: &[ImuSample]) -> Result<Quat> {
    if samples.is_empty() {
        return Err(Error::Data("no IMU samples for gravity alignment".into()));
    }
    let f = samples.iter().map(|s| s.acc).sum::<Vec3>() / samples.len() as f64;
    if f.norm() < 1e-6 {
        return Err(Error::Data(
            "specific force vanishes; cannot align gravity".into(),
        ));
    }
    // At rest f = Rᵀ(−g) points "up" in the body frame.
    let up = f.normalize();
    let roll = up.y.atan2(up.z);
    let pitch = (-up.x).atan2((up.y * up.y + up.z * up.z).sqrt());
    Ok(Quat::from_euler_angles(roll, pitch, 0.0))
}
