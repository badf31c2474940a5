use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::frontend::{LidarPoint, Sweep};
use crate::geometry::Vec3;

pub fn format_sweep_ply(sweep: &Sweep) -> String {
    let mut s = String::with_capacity(sweep.points.len() * 80 + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "comment t_start {}", sweep.t_start).unwrap();
    writeln!(s, "comment t_end {}", sweep.t_end).unwrap();
    writeln!(s, "element vertex {}", sweep.points.len()).unwrap();
    for p in ["x", "y", "z", "t"] {
        writeln!(s, "property double {p}").unwrap();
    }
    s.push_str("property int ring\nend_header\n");
    for p in &sweep.points {
        writeln!(s, "{} {} {} {} {}", p.x.x, p.x.y, p.x.z, p.t, p.ring).unwrap();
    }
    s
}

/// Parses an ASCII sweep. Vertex properties may come in any order and as
/// `float` or `double`; `t_start`/`t_end` are read from header comments
/// when present, otherwise taken from the point stamps and `t_end_hint`.
pub fn parse_sweep_ply(text: &str, path: &Path, t_end_hint: Option<f64>) -> Result<Sweep> {
    let mut lines = text.lines().enumerate();
    let bad = |n: usize, m: &str| Error::parse(path, n + 1, m.to_string());
    if lines.next().map(|l| l.1.trim()) != Some("ply") {
        return Err(bad(0, "missing `ply` magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut t_start = None;
    let mut t_end = None;
    let mut in_vertex = false;
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(bad(0, "unterminated header"));
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(bad(n, "only ASCII PLY is supported")),
            ["comment", "t_start", v] => {
                t_start = Some(v.parse::<f64>().map_err(|e| bad(n, &e.to_string()))?)
            }
            ["comment", "t_end", v] => {
                t_end = Some(v.parse::<f64>().map_err(|e| bad(n, &e.to_string()))?)
            }
            ["comment", ..] => {}
            ["element", "vertex", c] => {
                count = Some(c.parse::<usize>().map_err(|e| bad(n, &e.to_string()))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(bad(n, &format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| bad(0, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| bad(0, &format!("missing vertex property `{name}`")))
    };
    let (ix, iy, iz, it, ir) = (col("x")?, col("y")?, col("z")?, col("t")?, col("ring")?);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let Some((n, line)) = lines.next() else {
            return Err(bad(0, &format!("expected {count} vertices")));
        };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(n, &e.to_string()))?;
        if v.len() != props.len() {
            return Err(bad(
                n,
                &format!("expected {} values, got {}", props.len(), v.len()),
            ));
        }
        let ring = v[ir];
        if !(ring >= 0.0 && ring <= u16::MAX as f64 && ring.fract() == 0.0) {
            return Err(bad(n, &format!("invalid ring index {ring}")));
        }
        points.push(LidarPoint {
            x: Vec3::new(v[ix], v[iy], v[iz]),
            t: v[it],
            ring: ring as u16,
        });
    }
    let min_t = points.iter().map(|p| p.t).fold(f64::INFINITY, f64::min);
    let max_t = points.iter().map(|p| p.t).fold(f64::NEG_INFINITY, f64::max);
    let t_end = t_end.or(t_end_hint).unwrap_or(max_t);
    let t_start = t_start.unwrap_or(min_t);
    Sweep::new(points, t_start, t_end).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_sweep_ply(path: &Path, sweep: &Sweep) -> Result<()> {
    write_text(path, &format_sweep_ply(sweep))
}

pub fn read_sweep_ply(path: &Path) -> Result<Sweep> {
    let hint = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<f64>().ok());
    parse_sweep_ply(&read_text(path)?, path, hint)
}

/// Point cloud with x, y, z only.
pub fn write_points_ply(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut s = String::with_capacity(points.len() * 60 + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", points.len()).unwrap();
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    write_text(path, &s)
}
