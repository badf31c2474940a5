use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

impl TimedPose {
    pub fn new(t: f64, pose: Pose) -> Self {
        Self { t, pose }
    }
}

/// `t tx ty tz qx qy qz qw`, shortest round-trip formatting.
pub fn format_tum(poses: &[TimedPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let tr = p.pose.translation;
        let q = p.pose.quaternion_xyzw();
        writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            p.t, tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
        )
        .unwrap();
    }
    s
}

pub fn parse_tum(text: &str, path: &Path) -> Result<Vec<TimedPose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if v.len() != 8 {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected 8 fields, got {}", v.len()),
            ));
        }
        let qn = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
        if !(qn > 0.5 && qn < 1.5) {
            return Err(Error::parse(
                path,
                n + 1,
                format!("quaternion norm {qn} is not near 1"),
            ));
        }
        let pose = Pose::from_xyzw(Vec3::new(v[1], v[2], v[3]), [v[4], v[5], v[6], v[7]]);
        out.push(TimedPose::new(v[0], pose));
    }
    Ok(out)
}

pub fn write_tum(path: &Path, poses: &[TimedPose]) -> Result<()> {
    write_text(path, &format_tum(poses))
}

pub fn read_tum(path: &Path) -> Result<Vec<TimedPose>> {
    parse_tum(&read_text(path)?, path)
}
