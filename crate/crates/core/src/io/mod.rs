//! On-disk dataset formats.
//!
//! A dataset directory holds `imu.csv`, one `sweeps/<t_end>.ply` per sweep
//! and optionally `groundtruth.tum` with lidar poses at sweep ends.

mod imu_csv;
mod ply;
mod tum;

pub use imu_csv::{format_imu_csv, parse_imu_csv, read_imu_csv, write_imu_csv};
pub use ply::{
    format_sweep_ply, parse_sweep_ply, read_sweep_ply, write_points_ply, write_sweep_ply,
};
pub use tum::{format_tum, parse_tum, read_tum, write_tum, TimedPose};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frontend::Sweep;
use crate::imu::ImuSample;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub sweeps: Vec<Sweep>,
    pub groundtruth: Option<Vec<TimedPose>>,
}

pub fn sweep_file_name(t_end: f64) -> String {
    format!("{t_end:020.9}.ply")
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    write_imu_csv(&dir.join("imu.csv"), &ds.imu)?;
    let sweeps = dir.join("sweeps");
    std::fs::create_dir_all(&sweeps).map_err(|e| Error::io(&sweeps, e))?;
    for s in &ds.sweeps {
        write_sweep_ply(&sweeps.join(sweep_file_name(s.t_end)), s)?;
    }
    if let Some(gt) = &ds.groundtruth {
        write_tum(&dir.join("groundtruth.tum"), gt)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let imu = read_imu_csv(&dir.join("imu.csv"))?;
    let sweep_dir = dir.join("sweeps");
    let entries = std::fs::read_dir(&sweep_dir).map_err(|e| Error::io(&sweep_dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(&sweep_dir, e))?.path();
        if p.extension().and_then(|x| x.to_str()) == Some("ply") {
            files.push(p);
        }
    }
    files.sort();
    let mut sweeps = files
        .iter()
        .map(|p| read_sweep_ply(p))
        .collect::<Result<Vec<_>>>()?;
    sweeps.sort_by(|a, b| a.t_end.total_cmp(&b.t_end));
    if imu.is_empty() || sweeps.is_empty() {
        return Err(Error::Data(format!(
            "dataset {} is empty ({} IMU samples, {} sweeps)",
            dir.display(),
            imu.len(),
            sweeps.len()
        )));
    }
    let gt_path = dir.join("groundtruth.tum");
    let groundtruth = if gt_path.exists() {
        Some(read_tum(&gt_path)?)
    } else {
        None
    };
    Ok(Dataset {
        imu,
        sweeps,
        groundtruth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::LidarPoint;
    use crate::geometry::{Pose, Quat, Vec3};

    #[test]
    fn tum_round_trip_is_exact() {
        let poses = vec![
            TimedPose::new(
                0.1,
                Pose::new(
                    Quat::from_euler_angles(0.1, -0.2, 0.3),
                    Vec3::new(1.0 / 3.0, 2.5e-7, -4.0),
                ),
            ),
            TimedPose::new(0.2, Pose::identity()),
        ];
        let text = format_tum(&poses);
        let back = parse_tum(&text, Path::new("x")).unwrap();
        assert_eq!(format_tum(&back), text);
        assert_eq!(back[0].pose.translation, poses[0].pose.translation);
    }

    #[test]
    fn imu_round_trip_and_errors() {
        let s = vec![
            ImuSample::new(0.0, Vec3::new(0.1, 0.2, 9.81), Vec3::new(1e-5, 0.0, -0.3)),
            ImuSample::new(0.0025, Vec3::new(1.0 / 7.0, 0.0, 9.8), Vec3::zeros()),
        ];
        let text = format_imu_csv(&s);
        assert_eq!(parse_imu_csv(&text, Path::new("x")).unwrap(), s);
        assert!(matches!(
            parse_imu_csv("t,a\n", Path::new("x")),
            Err(Error::Parse { .. })
        ));
        let bad = format!(
            "{HEADER}\n0,1,2,3,4,5,6\n0,1,2,3,4,5,6\n",
            HEADER = "t,ax,ay,az,gx,gy,gz"
        );
        assert!(matches!(
            parse_imu_csv(&bad, Path::new("x")),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn ply_round_trip_is_exact() {
        let pts = vec![
            LidarPoint {
                x: Vec3::new(1.0 / 3.0, -2.0, 0.5),
                t: 10.0125,
                ring: 3,
            },
            LidarPoint {
                x: Vec3::new(4.0, 5.0, 6.0),
                t: 10.05,
                ring: 15,
            },
        ];
        let s = Sweep::new(pts, 10.0, 10.1).unwrap();
        let back = parse_sweep_ply(&format_sweep_ply(&s), Path::new("x"), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_dataset_is_io_error() {
        let e = load_dataset(Path::new("/nonexistent/dataset")).unwrap_err();
        assert_eq!(e.category(), "io");
    }
}
