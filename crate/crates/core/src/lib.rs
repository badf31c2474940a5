//! Tightly coupled lidar-IMU odometry over a fixed-lag window, with a
//! rotation-constrained global-map refinement stage, a plane-world sensor
//! simulator and trajectory evaluation tools.

pub mod config;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod imu;
pub mod io;
pub mod kdtree;
pub mod mapper;
pub mod pipeline;
pub mod selftest;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Mat3, Pose, Quat, Vec3};
