use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::imu::ImuSample;

pub const HEADER: &str = "t,ax,ay,az,gx,gy,gz";

pub fn format_imu_csv(samples: &[ImuSample]) -> String {
    let mut s = String::with_capacity(samples.len() * 120);
    s.push_str(HEADER);
    s.push('\n');
    for x in samples {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            x.t, x.acc.x, x.acc.y, x.acc.z, x.gyro.x, x.gyro.y, x.gyro.z
        )
        .unwrap();
    }
    s
}

pub fn parse_imu_csv(text: &str, path: &Path) -> Result<Vec<ImuSample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(Error::parse(path, 1, format!("expected header `{HEADER}`"))),
    }
    let mut out: Vec<ImuSample> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if v.len() != 7 {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected 7 fields, got {}", v.len()),
            ));
        }
        if let Some(prev) = out.last() {
            if !(v[0] > prev.t) {
                return Err(Error::parse(
                    path,
                    n + 1,
                    "timestamps not strictly increasing",
                ));
            }
        }
        out.push(ImuSample::new(
            v[0],
            Vec3::new(v[1], v[2], v[3]),
            Vec3::new(v[4], v[5], v[6]),
        ));
    }
    Ok(out)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    write_text(path, &format_imu_csv(samples))
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    parse_imu_csv(&read_text(path)?, path)
}
