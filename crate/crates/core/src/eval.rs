//! Trajectory alignment and error metrics.

use std::path::Path;

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, Pose, Quat, Vec3};
use crate::io::{read_text, write_text, TimedPose};

/// Index pairs `(est, gt)` whose timestamps differ by at most `max_dt`,
/// matching each estimate to its nearest ground-truth time.
pub fn associate_timestamps(
    est: &[TimedPose],
    gt: &[TimedPose],
    max_dt: f64,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if gt.is_empty() {
        return out;
    }
    for (i, e) in est.iter().enumerate() {
        let j = gt.partition_point(|g| g.t < e.t);
        let best = [j.checked_sub(1), (j < gt.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (gt[a].t - e.t).abs().total_cmp(&(gt[b].t - e.t).abs()));
        if let Some(j) = best {
            if (gt[j].t - e.t).abs() <= max_dt {
                out.push((i, j));
            }
        }
    }
    out
}

/// Rigid transform `T` minimizing `Σ‖gt − T·est‖²` over matched
/// positions (scale fixed to 1).
pub fn umeyama(est: &[Vec3], gt: &[Vec3]) -> Result<Pose> {
    if est.len() != gt.len() {
        return Err(Error::domain(format!(
            "{} estimates but {} references",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 3 {
        return Err(Error::domain(format!(
            "alignment needs at least 3 positions, got {}",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vec3>() / n;
    let mu_g = gt.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        cov += (g - mu_g) * (e - mu_e).transpose();
        spread += (e - mu_e) * (e - mu_e).transpose();
    }
    let s = SVD::new(spread, false, false).singular_values;
    if !(s[1] > 1e-12 * s[0].max(1e-300)) {
        return Err(Error::Numerical(
            "positions are collinear; alignment is degenerate".into(),
        ));
    }
    let svd = SVD::new(cov / n, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let q = Quat::from_matrix(&r);
    Ok(Pose::new(q, mu_g - q * mu_e))
}

/// Aligns `est` to `gt` using the first `n_first` matched poses (all when
/// `None`).
pub fn align_umeyama(
    est: &[TimedPose],
    gt: &[TimedPose],
    n_first: Option<usize>,
    max_dt: f64,
) -> Result<Pose> {
    let pairs = associate_timestamps(est, gt, max_dt);
    let take = n_first.unwrap_or(pairs.len()).min(pairs.len());
    let (e, g): (Vec<Vec3>, Vec<Vec3>) = pairs[..take]
        .iter()
        .map(|&(i, j)| (est[i].pose.translation, gt[j].pose.translation))
        .unzip();
    umeyama(&e, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub translation: f64,
    pub rotation: f64,
    pub est: [f64; 3],
    pub gt: [f64; 3],
}

/// Wall-clock milliseconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load_ms: f64,
    pub bootstrap_ms: f64,
    pub odometry_ms: f64,
    /// Waiting for the mapper to drain after the last sweep.
    pub mapping_drain_ms: f64,
    pub write_ms: f64,
    pub total_ms: f64,
    /// Mean per-sweep odometry time.
    pub odometry_mean_ms: f64,
    /// Mean per-sweep refinement time (runs concurrently with odometry).
    pub mapping_mean_ms: f64,
    /// Mean IMU propagation time per sample.
    pub prediction_per_sample_ms: f64,
}

impl StageTimings {
    pub fn stage_sum_ms(&self) -> f64 {
        self.load_ms + self.bootstrap_ms + self.odometry_ms + self.mapping_drain_ms + self.write_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub translation_rmse: f64,
    /// Geodesic angle, radians.
    pub rotation_rmse: f64,
    pub series: Vec<ErrorSample>,
    /// Applied to the estimate before comparison.
    pub alignment: [f64; 7],
    pub timings: Option<StageTimings>,
}

impl EvalReport {
    pub fn alignment_pose(&self) -> Pose {
        let a = self.alignment;
        Pose::from_xyzw(Vec3::new(a[0], a[1], a[2]), [a[3], a[4], a[5], a[6]])
    }
}

/// RMSE of `alignment · est` against `gt` over timestamps matched within
/// `max_dt`.
pub fn compute_rmse(
    est: &[TimedPose],
    gt: &[TimedPose],
    alignment: &Pose,
    max_dt: f64,
) -> Result<EvalReport> {
    let pairs = associate_timestamps(est, gt, max_dt);
    if pairs.is_empty() {
        return Err(Error::Data(
            "no estimated pose matches a ground-truth timestamp".into(),
        ));
    }
    let series: Vec<ErrorSample> = pairs
        .iter()
        .map(|&(i, j)| {
            let e = alignment.compose(&est[i].pose);
            let g = &gt[j].pose;
            ErrorSample {
                t: est[i].t,
                translation: (e.translation - g.translation).norm(),
                rotation: angle_between(&g.rotation, &e.rotation),
                est: e.translation.into(),
                gt: g.translation.into(),
            }
        })
        .collect();
    let n = series.len() as f64;
    let rms =
        |f: fn(&ErrorSample) -> f64| (series.iter().map(|s| f(s).powi(2)).sum::<f64>() / n).sqrt();
    let q = alignment.quaternion_xyzw();
    let p = alignment.translation;
    Ok(EvalReport {
        translation_rmse: rms(|s| s.translation),
        rotation_rmse: rms(|s| s.rotation),
        series,
        alignment: [p.x, p.y, p.z, q[0], q[1], q[2], q[3]],
        timings: None,
    })
}

/// Aligns on the first `n_first` matches, then scores every match.
pub fn evaluate(
    est: &[TimedPose],
    gt: &[TimedPose],
    n_first: Option<usize>,
    max_dt: f64,
) -> Result<EvalReport> {
    let a = align_umeyama(est, gt, n_first, max_dt)?;
    compute_rmse(est, gt, &a, max_dt)
}

pub const ERRORS_HEADER: &str = "t,translation_error,rotation_error";
pub const TRAJECTORY_HEADER: &str = "t,est_x,est_y,est_z,gt_x,gt_y,gt_z";

/// Writes `errors.csv` and `trajectory.csv` into `dir`.
pub fn emit_plots(report: &EvalReport, dir: &Path) -> Result<()> {
    let mut errors = String::from(ERRORS_HEADER);
    errors.push('\n');
    let mut traj = String::from(TRAJECTORY_HEADER);
    traj.push('\n');
    for s in &report.series {
        errors.push_str(&format!("{:?},{:?},{:?}\n", s.t, s.translation, s.rotation));
        traj.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            s.t, s.est[0], s.est[1], s.est[2], s.gt[0], s.gt[1], s.gt[2]
        ));
    }
    write_text(&dir.join("errors.csv"), &errors)?;
    write_text(&dir.join("trajectory.csv"), &traj)
}

fn parse_rows<const N: usize>(path: &Path, header: &str) -> Result<Vec<[f64; N]>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::parse(path, 1, format!("expected header `{header}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        let row: [f64; N] = vals.try_into().map_err(|v: Vec<f64>| {
            Error::parse(
                path,
                i + 2,
                format!("expected {N} columns, got {}", v.len()),
            )
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Reads back the series written by [`emit_plots`].
pub fn read_plots(dir: &Path) -> Result<Vec<ErrorSample>> {
    let errors = parse_rows::<3>(&dir.join("errors.csv"), ERRORS_HEADER)?;
    let traj = parse_rows::<7>(&dir.join("trajectory.csv"), TRAJECTORY_HEADER)?;
    if errors.len() != traj.len() {
        return Err(Error::Data(format!(
            "{} error rows but {} trajectory rows",
            errors.len(),
            traj.len()
        )));
    }
    Ok(errors
        .iter()
        .zip(&traj)
        .map(|(e, p)| ErrorSample {
            t: e[0],
            translation: e[1],
            rotation: e[2],
            est: [p[1], p[2], p[3]],
            gt: [p[4], p[5], p[6]],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(n: usize) -> Vec<TimedPose> {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.1;
                TimedPose::new(
                    t,
                    Pose::new(
                        Quat::from_euler_angles(0.1 * t, 0.0, t),
                        Vec3::new(t.cos() * 2.0, t.sin() * 2.0, 0.3 * t),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn identical_is_zero() {
        let t = traj(30);
        let r = evaluate(&t, &t, None, 0.05).unwrap();
        assert!(r.translation_rmse < 1e-12 && r.rotation_rmse < 1e-7);
        assert_eq!(r.series.len(), 30);
    }

    #[test]
    fn constant_offset_without_alignment() {
        let gt = traj(20);
        let est: Vec<_> = gt
            .iter()
            .map(|p| {
                TimedPose::new(
                    p.t,
                    Pose::new(
                        p.pose.rotation,
                        p.pose.translation + Vec3::new(0.1, 0.0, 0.0),
                    ),
                )
            })
            .collect();
        let r = compute_rmse(&est, &gt, &Pose::identity(), 0.05).unwrap();
        assert!((r.translation_rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn recovers_rigid_transform() {
        let gt = traj(40);
        let t = Pose::new(
            Quat::from_euler_angles(0.2, -0.1, 1.0),
            Vec3::new(3.0, -1.0, 0.5),
        );
        let est: Vec<_> = gt
            .iter()
            .map(|p| TimedPose::new(p.t, t.inverse().compose(&p.pose)))
            .collect();
        let a = align_umeyama(&est, &gt, Some(10), 0.05).unwrap();
        assert!((a.translation - t.translation).norm() < 1e-9);
        assert!(angle_between(&a.rotation, &t.rotation) < 1e-9);
        assert!(compute_rmse(&est, &gt, &a, 0.05).unwrap().translation_rmse < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Vec3> = (0..5).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        assert!(umeyama(&line, &line).is_err());
        assert!(umeyama(&line[..2], &line[..2]).is_err());
        assert!(compute_rmse(&traj(3), &[], &Pose::identity(), 0.05).is_err());
    }

    #[test]
    fn association_respects_window() {
        let gt = traj(5);
        let est = vec![
            TimedPose::new(0.14, Pose::identity()),
            TimedPose::new(0.26, Pose::identity()),
        ];
        assert_eq!(associate_timestamps(&est, &gt, 0.05), vec![(0, 1), (1, 3)]);
        assert!(associate_timestamps(&est, &gt, 0.03).is_empty());
    }
}
