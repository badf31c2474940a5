use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Quat, Vec3};

/// `c0 + c1·t + Σ a·sin(2π f t + φ)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Channel {
    pub c0: f64,
    pub c1: f64,
    /// (amplitude, frequency in Hz, phase in rad).
    pub waves: Vec<(f64, f64, f64)>,
}

impl Channel {
    pub fn constant(c0: f64) -> Self {
        Self {
            c0,
            ..Default::default()
        }
    }

    pub fn linear(c0: f64, c1: f64) -> Self {
        Self {
            c0,
            c1,
            waves: vec![],
        }
    }

    pub fn wave(mut self, amp: f64, freq: f64, phase: f64) -> Self {
        self.waves.push((amp, freq, phase));
        self
    }

    /// Value and its first two derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let mut v = self.c0 + self.c1 * t;
        let mut d = self.c1;
        let mut dd = 0.0;
        for &(a, f, ph) in &self.waves {
            let w = TAU * f;
            let arg = w * t + ph;
            v += a * arg.sin();
            d += a * w * arg.cos();
            dd -= a * w * w * arg.sin();
        }
        (v, d, dd)
    }
}

/// Smooth body trajectory `T^W_B(t)`; orientation is intrinsic Z-Y-X
/// (yaw, pitch, roll).
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticTrajectory {
    /// x, y, z, yaw, pitch, roll.
    pub channels: [Channel; 6],
    pub t0: f64,
    pub t1: f64,
}

/// Kinematic quantities at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub pose: Pose,
    /// World frame.
    pub velocity: Vec3,
    /// World frame.
    pub acceleration: Vec3,
    /// Body frame.
    pub angular_velocity: Vec3,
}

impl AnalyticTrajectory {
    fn check(&self, t: f64) -> Result<()> {
        if t < self.t0 - 1e-9 || t > self.t1 + 1e-9 {
            return Err(Error::domain(format!(
                "time {t} outside trajectory domain [{}, {}]",
                self.t0, self.t1
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn pose(&self, t: f64) -> Result<Pose> {
        Ok(self.kinematics(t)?.pose)
    }

    pub fn kinematics(&self, t: f64) -> Result<Kinematics> {
        self.check(t)?;
        let e: Vec<(f64, f64, f64)> = self.channels.iter().map(|c| c.eval(t)).collect();
        let (yaw, pitch, roll) = (e[3], e[4], e[5]);
        let q = Quat::from_euler_angles(roll.0, pitch.0, yaw.0);
        let (sr, cr) = roll.0.sin_cos();
        let (sp, cp) = pitch.0.sin_cos();
        let w = Vec3::new(
            roll.1 - yaw.1 * sp,
            pitch.1 * cr + yaw.1 * sr * cp,
            -pitch.1 * sr + yaw.1 * cr * cp,
        );
        Ok(Kinematics {
            pose: Pose::new(q, Vec3::new(e[0].0, e[1].0, e[2].0)),
            velocity: Vec3::new(e[0].1, e[1].1, e[2].1),
            acceleration: Vec3::new(e[0].2, e[1].2, e[2].2),
            angular_velocity: w,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryPreset {
    Static,
    /// Constant world velocity and constant yaw rate. Midpoint IMU
    /// integration and linear de-skew are both exact on it.
    ConstantTwist,
    Circle,
    RoomSlow,
    RoomMedium,
    RoomFast,
    Corridor,
    Outdoor,
}

impl TrajectoryPreset {
    pub fn build(self, duration: f64) -> AnalyticTrajectory {
        use Channel as C;
        let ch: [Channel; 6] = match self {
            TrajectoryPreset::Static => [
                C::constant(0.5),
                C::constant(-0.3),
                C::constant(1.4),
                C::constant(0.4),
                C::constant(0.05),
                C::constant(-0.03),
            ],
            TrajectoryPreset::ConstantTwist => [
                C::linear(-1.0, 0.12),
                C::linear(-0.5, 0.05),
                C::constant(1.4),
                C::linear(0.2, 0.25),
                C::constant(0.04),
                C::constant(-0.03),
            ],
            TrajectoryPreset::Circle => {
                let f = 0.5;
                [
                    C::constant(0.0).wave(2.0, f, PI / 2.0),
                    C::constant(0.0).wave(2.0, f, 0.0),
                    C::constant(1.4).wave(0.1, 0.3, 0.0),
                    C::linear(PI, TAU * f),
                    C::constant(0.0).wave(0.05, 0.4, 0.3),
                    C::constant(0.0).wave(0.05, 0.35, 1.0),
                ]
            }
            TrajectoryPreset::RoomSlow => room_profile(0.5),
            TrajectoryPreset::RoomMedium => room_profile(1.0),
            TrajectoryPreset::RoomFast => room_profile(1.8),
            TrajectoryPreset::Corridor => [
                C::linear(-12.0, 0.8).wave(0.2, 0.1, 0.0),
                C::constant(0.0).wave(0.3, 0.13, 0.5),
                C::constant(1.4).wave(0.1, 0.2, 0.0),
                C::constant(0.0).wave(0.15, 0.15, 0.2),
                C::constant(0.0).wave(0.05, 0.3, 0.0),
                C::constant(0.0).wave(0.05, 0.25, 1.2),
            ],
            TrajectoryPreset::Outdoor => [
                C::constant(0.0)
                    .wave(10.0, 0.03, PI / 2.0)
                    .wave(1.0, 0.11, 0.0),
                C::constant(0.0).wave(10.0, 0.03, 0.0).wave(1.0, 0.07, 0.3),
                C::constant(1.8).wave(0.1, 0.2, 0.0),
                C::linear(PI, TAU * 0.03).wave(0.1, 0.2, 0.0),
                C::constant(0.0).wave(0.03, 0.3, 0.0),
                C::constant(0.0).wave(0.03, 0.4, 1.0),
            ],
        };
        AnalyticTrajectory {
            channels: ch,
            t0: 0.0,
            t1: duration,
        }
    }
}

/// Lissajous-style motion inside the room; `speed` scales every frequency.
fn room_profile(speed: f64) -> [Channel; 6] {
    let s = speed;
    [
        Channel::constant(0.0)
            .wave(2.5, 0.05 * s, 0.0)
            .wave(0.4, 0.17 * s, 1.0),
        Channel::constant(0.0)
            .wave(1.6, 0.07 * s, 0.7)
            .wave(0.3, 0.19 * s, 0.2),
        Channel::constant(1.4).wave(0.3, 0.11 * s, 0.0),
        Channel::linear(0.0, 0.3 * s).wave(0.6, 0.09 * s, 0.0),
        Channel::constant(0.0)
            .wave(0.12, 0.23 * s, 0.0)
            .wave(0.05, 0.41 * s, 0.5),
        Channel::constant(0.0)
            .wave(0.12, 0.29 * s, 1.0)
            .wave(0.05, 0.37 * s, 0.1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{log_so3, Quat};

    #[test]
    fn derivatives_match_finite_differences() {
        for preset in [
            TrajectoryPreset::Circle,
            TrajectoryPreset::RoomFast,
            TrajectoryPreset::Corridor,
        ] {
            let tr = preset.build(20.0);
            let h = 1e-4;
            for &t in &[1.0, 5.3, 11.7] {
                let k = tr.kinematics(t).unwrap();
                let a = tr.kinematics(t - h).unwrap();
                let b = tr.kinematics(t + h).unwrap();
                let v = (b.pose.translation - a.pose.translation) / (2.0 * h);
                assert!((v - k.velocity).norm() < 1e-6);
                let acc = (b.velocity - a.velocity) / (2.0 * h);
                assert!((acc - k.acceleration).norm() < 1e-6);
                let w = log_so3(&(a.pose.rotation.inverse() * b.pose.rotation)) / (2.0 * h);
                assert!((w - k.angular_velocity).norm() < 1e-6, "{preset:?}");
            }
        }
    }

    #[test]
    fn domain_is_enforced() {
        let tr = TrajectoryPreset::Static.build(1.0);
        assert!(tr.pose(-0.1).is_err());
        assert!(tr.pose(1.1).is_err());
        assert_eq!(
            tr.pose(0.5).unwrap().rotation,
            Quat::from_euler_angles(-0.03, 0.05, 0.4)
        );
    }
}
