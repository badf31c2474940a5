//! Dataset driver: bootstrap, odometry and mapping on two threads, and
//! output files.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::estimator::{
    gravity_aligned_orientation, BootstrapMode, Estimator, OdometryOutput, StepTimings,
};
use crate::eval::StageTimings;
use crate::frontend::{extract_planar_features, FeatureCloud, Sweep};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::imu::ImuSample;
use crate::io::{load_dataset, write_points_ply, write_text, write_tum, Dataset, TimedPose};
use crate::mapper::{refine, GlobalMap, MappedPose, Mapper, MapperOptions};

/// Refinement summary attached to a sweep's diagnostics line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MappingDiagnostics {
    pub associations: usize,
    pub iterations: usize,
    pub epsilon: [f64; 2],
    pub flagged: bool,
    pub refine_ms: f64,
}

/// One JSON line per sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepDiagnostics {
    pub t: f64,
    pub associations: usize,
    pub observability_ratio: f64,
    pub degraded: bool,
    pub low_observability: bool,
    pub failed: bool,
    pub message: Option<String>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Option<String>,
    pub velocity: [f64; 3],
    pub acc_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    /// `T^L_B` as `tx ty tz qx qy qz qw`.
    pub extrinsic: [f64; 7],
    pub timings: StepTimings,
    pub mapping: Option<MappingDiagnostics>,
}

impl SweepDiagnostics {
    fn from_output(o: &OdometryOutput) -> Self {
        let q = o.extrinsic.quaternion_xyzw();
        let p = o.extrinsic.translation;
        Self {
            t: o.t,
            associations: o.associations,
            observability_ratio: o.observability_ratio,
            degraded: o.degraded,
            low_observability: o.low_observability,
            failed: o.failed,
            message: o.message.clone(),
            iterations: o.report.map(|r| r.iterations).unwrap_or(0),
            initial_cost: o.report.map(|r| r.initial_cost).unwrap_or(f64::NAN),
            final_cost: o.report.map(|r| r.final_cost).unwrap_or(f64::NAN),
            termination: o.report.map(|r| format!("{:?}", r.termination)),
            velocity: o.state.v.into(),
            acc_bias: o.state.ba.into(),
            gyro_bias: o.state.bg.into(),
            extrinsic: [p.x, p.y, p.z, q[0], q[1], q[2], q[3]],
            timings: o.timings,
            mapping: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Odometry `T^W_L` per sweep.
    pub odometry: Vec<TimedPose>,
    /// Refined poses; empty when mapping is disabled.
    pub mapped: Vec<TimedPose>,
    pub diagnostics: Vec<SweepDiagnostics>,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
    pub map_points: Vec<Vec3>,
    /// Final `T^L_B` estimate.
    pub extrinsic: Pose,
    /// Sweeps the mapper dropped to keep up.
    pub skipped: usize,
}

impl PipelineOutput {
    /// Refined trajectory when mapping ran, odometry otherwise.
    pub fn best(&self) -> &[TimedPose] {
        if self.mapped.is_empty() {
            &self.odometry
        } else {
            &self.mapped
        }
    }
}

/// Timestamp gaps in the sweep and IMU streams.
pub fn check_gaps(ds: &Dataset, factor: f64) -> Vec<String> {
    let mut out = Vec::new();
    let mut scan = |name: &str, t: Vec<f64>| {
        if t.len() < 3 {
            return;
        }
        let mut dt: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let mut sorted = dt.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        for (i, d) in dt.drain(..).enumerate() {
            if d > factor * median {
                out.push(format!(
                    "{name} gap of {d:.4} s after t = {:.6} (median period {median:.4} s)",
                    t[i]
                ));
            }
        }
    };
    scan("sweep", ds.sweeps.iter().map(|s| s.t_end).collect());
    scan("IMU", ds.imu.iter().map(|s| s.t).collect());
    out
}

/// Registers the first sweeps against each other, starting from a
/// gravity-aligned pose at the origin. Returns lidar poses `T^W_L`.
pub fn scan_matching_seeds(
    sweeps: &[Sweep],
    imu: &[ImuSample],
    ext: &Pose,
    cfg: &PipelineConfig,
) -> Result<Vec<TimedPose>> {
    let first = sweeps
        .first()
        .ok_or_else(|| Error::Data("no sweeps to bootstrap from".into()))?;
    let rest: Vec<ImuSample> = imu.iter().filter(|s| s.t <= first.t_end).copied().collect();
    let q = gravity_aligned_orientation(if rest.is_empty() { imu } else { &rest })?;
    let body = Pose::new(q, Vec3::zeros());
    let mut poses = vec![body.compose(&ext.inverse())];
    let opts = MapperOptions {
        min_associations: cfg.estimator.min_associations,
        ..cfg.mapper
    };
    let mut map = GlobalMap::new(cfg.estimator.voxel_size)?;
    let features: Vec<FeatureCloud> = sweeps
        .iter()
        .map(|s| extract_planar_features(s, &cfg.estimator.features))
        .collect();
    map.insert(first.t_end, &features[0], &poses[0])?;
    for k in 1..sweeps.len() {
        let prev = poses[k - 1];
        let guess = if k >= 2 {
            prev.compose(&poses[k - 2].between(&prev))
        } else {
            prev
        };
        let r = refine(&guess, &features[k], &map, None, &opts)?;
        if r.flagged {
            return Err(Error::Data(format!(
                "scan-matching bootstrap found only {} associations on sweep {k}",
                r.associations
            )));
        }
        map.insert(sweeps[k].t_end, &features[k], &r.pose)?;
        poses.push(r.pose);
    }
    Ok(sweeps
        .iter()
        .zip(poses)
        .map(|(s, p)| TimedPose::new(s.t_end, p))
        .collect())
}

fn ground_truth_seeds(sweeps: &[Sweep], gt: &[TimedPose]) -> Result<Vec<TimedPose>> {
    sweeps
        .iter()
        .map(|s| {
            let tol = 0.5 * s.duration();
            gt.iter()
                .min_by(|a, b| (a.t - s.t_end).abs().total_cmp(&(b.t - s.t_end).abs()))
                .filter(|g| (g.t - s.t_end).abs() <= tol)
                .map(|g| TimedPose::new(s.t_end, g.pose))
                .ok_or_else(|| {
                    Error::Data(format!("no ground-truth pose near sweep end {}", s.t_end))
                })
        })
        .collect()
}

struct MapJob {
    t: f64,
    pose: Pose,
    features: FeatureCloud,
    info: Option<Mat3>,
}

/// Bounded FIFO between the odometry and mapping threads. With `skip` a
/// full queue drops its oldest job instead of blocking the producer.
struct JobQueue {
    state: Mutex<(VecDeque<MapJob>, bool, usize)>,
    ready: Condvar,
    space: Condvar,
    depth: usize,
    skip: bool,
}

impl JobQueue {
    fn new(depth: usize, skip: bool) -> Self {
        Self {
            state: Mutex::new((VecDeque::new(), false, 0)),
            ready: Condvar::new(),
            space: Condvar::new(),
            depth,
            skip,
        }
    }

    fn push(&self, job: MapJob) {
        let mut s = self.state.lock().expect("queue lock");
        while s.0.len() >= self.depth {
            if self.skip {
                s.0.pop_front();
                s.2 += 1;
            } else {
                s = self.space.wait(s).expect("queue lock");
            }
        }
        s.0.push_back(job);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.state.lock().expect("queue lock").1 = true;
        self.ready.notify_all();
    }

    fn pop(&self) -> Option<MapJob> {
        let mut s = self.state.lock().expect("queue lock");
        loop {
            if let Some(j) = s.0.pop_front() {
                self.space.notify_one();
                return Some(j);
            }
            if s.1 {
                return None;
            }
            s = self.ready.wait(s).expect("queue lock");
        }
    }

    fn skipped(&self) -> usize {
        self.state.lock().expect("queue lock").2
    }
}

fn run_mapper(mut mapper: Mapper, queue: &JobQueue) -> Result<(Vec<MappedPose>, Vec<Vec3>)> {
    let mut out = Vec::new();
    let mut err = None;
    while let Some(job) = queue.pop() {
        if err.is_some() {
            continue;
        }
        match mapper.process(job.t, &job.pose, &job.features, job.info.as_ref()) {
            Ok(m) => out.push(m),
            Err(e) => err = Some(e),
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok((out, mapper.map().points().to_vec())),
    }
}

/// Runs bootstrap, odometry and (optionally) mapping over a loaded
/// dataset.
pub fn run_pipeline(cfg: &PipelineConfig, ds: &Dataset) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    if ds.sweeps.is_empty() || ds.imu.is_empty() {
        return Err(Error::Data(
            "dataset has no sweeps or no IMU samples".into(),
        ));
    }
    let n = cfg.estimator.window_size;
    if ds.sweeps.len() < n {
        return Err(Error::Data(format!(
            "need at least {n} sweeps to bootstrap, dataset has {}",
            ds.sweeps.len()
        )));
    }
    let mut warnings = check_gaps(ds, cfg.run.gap_warning_factor);
    let ext = cfg.extrinsic.lidar_from_body();

    let t_boot = Instant::now();
    let seeds = match cfg.estimator.bootstrap.mode {
        BootstrapMode::GroundTruth => {
            let gt = ds.groundtruth.as_deref().ok_or_else(|| {
                Error::Data(
                    "ground-truth bootstrap requested but the dataset has no groundtruth.tum"
                        .into(),
                )
            })?;
            ground_truth_seeds(&ds.sweeps[..n], gt)?
        }
        BootstrapMode::ScanMatching => scan_matching_seeds(&ds.sweeps[..n], &ds.imu, &ext, cfg)?,
    };
    let (mut est, boot) = Estimator::bootstrap(
        cfg.estimator,
        cfg.imu_noise,
        ext,
        &seeds,
        &ds.sweeps[..n],
        &ds.imu,
    )?;
    if est.unexcited() {
        warnings.push(
            "bootstrap motion is below the excitation threshold; biases are weakly observable"
                .into(),
        );
    }
    let bootstrap_ms = ms(t_boot);

    let queue = JobQueue::new(cfg.mapper.queue_depth, cfg.mapper.realtime_skip);
    let mapping = cfg.mapper.enabled;
    let mapper = Mapper::new(cfg.mapper)?;
    let mut odometry = Vec::with_capacity(ds.sweeps.len());
    let mut diagnostics = Vec::with_capacity(ds.sweeps.len());
    let mut odometry_ms = 0.0;
    let mut mapping_drain_ms = 0.0;

    let (odo_result, map_result) = std::thread::scope(|scope| {
        let handle = mapping.then(|| scope.spawn(|| run_mapper(mapper, &queue)));
        let t_odo = Instant::now();
        let mut emit = |o: OdometryOutput| {
            odometry.push(o.timed_pose());
            diagnostics.push(SweepDiagnostics::from_output(&o));
            if mapping {
                queue.push(MapJob {
                    t: o.t,
                    pose: o.pose,
                    features: o.features,
                    info: o.orientation_information,
                });
            }
        };
        let mut result = Ok(());
        for o in boot {
            emit(o);
        }
        for sweep in &ds.sweeps[n..] {
            match est.process_sweep(sweep, &ds.imu) {
                Ok(o) => emit(o),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        odometry_ms = ms(t_odo);
        queue.close();
        let t_drain = Instant::now();
        let mapped = handle.map(|h| h.join().expect("mapper thread panicked"));
        mapping_drain_ms = ms(t_drain);
        (result, mapped)
    });
    odo_result?;
    let (mapped, map_points) = match map_result {
        Some(r) => r?,
        None => (Vec::new(), Vec::new()),
    };

    let mut by_t = mapped.iter().peekable();
    for d in diagnostics.iter_mut() {
        while by_t.peek().is_some_and(|m| m.t < d.t) {
            by_t.next();
        }
        if let Some(m) = by_t.peek().filter(|m| m.t == d.t) {
            d.mapping = Some(MappingDiagnostics {
                associations: m.associations,
                iterations: m.iterations,
                epsilon: m.epsilon,
                flagged: m.flagged,
                refine_ms: m.refine_ms,
            });
        }
    }
    let failed = diagnostics.iter().filter(|d| d.failed).count();
    if failed > 0 {
        warnings.push(format!("{failed} sweeps fell back to IMU prediction"));
    }
    let low = diagnostics.iter().filter(|d| d.low_observability).count();
    if low > 0 {
        warnings.push(format!("{low} sweeps flagged low observability"));
    }

    let count = diagnostics.len().saturating_sub(n).max(1) as f64;
    let steps = &diagnostics[n.min(diagnostics.len())..];
    let samples: usize = steps.iter().map(|d| d.timings.imu_samples).sum();
    let timings = StageTimings {
        load_ms: 0.0,
        bootstrap_ms,
        odometry_ms,
        mapping_drain_ms,
        write_ms: 0.0,
        total_ms: ms(start),
        odometry_mean_ms: steps.iter().map(|d| d.timings.total_ms).sum::<f64>() / count,
        mapping_mean_ms: if mapped.is_empty() {
            0.0
        } else {
            mapped.iter().map(|m| m.refine_ms).sum::<f64>() / mapped.len() as f64
        },
        prediction_per_sample_ms: if samples > 0 {
            steps.iter().map(|d| d.timings.prediction_ms).sum::<f64>() / samples as f64
        } else {
            0.0
        },
    };
    Ok(PipelineOutput {
        odometry,
        mapped: mapped.iter().map(|m| TimedPose::new(m.t, m.pose)).collect(),
        diagnostics,
        warnings,
        timings,
        map_points,
        extrinsic: est.extrinsic(),
        skipped: queue.skipped(),
    })
}

/// Output file locations inside an output directory.
pub struct OutputPaths {
    pub odometry: PathBuf,
    pub mapped: PathBuf,
    pub diagnostics: PathBuf,
    pub map: PathBuf,
    pub timings: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            odometry: dir.join("odometry.tum"),
            mapped: dir.join("mapped.tum"),
            diagnostics: dir.join("diagnostics.jsonl"),
            map: dir.join("map.ply"),
            timings: dir.join("timings.json"),
        }
    }
}

/// Writes trajectories, diagnostics, timings and (optionally) the map.
pub fn write_outputs(out: &mut PipelineOutput, dir: &Path, write_map: bool) -> Result<()> {
    let t = Instant::now();
    let paths = OutputPaths::new(dir);
    write_tum(&paths.odometry, &out.odometry)?;
    if !out.mapped.is_empty() {
        write_tum(&paths.mapped, &out.mapped)?;
    }
    let mut lines = String::new();
    for d in &out.diagnostics {
        lines.push_str(&serde_json::to_string(d).map_err(|e| Error::Data(e.to_string()))?);
        lines.push('\n');
    }
    write_text(&paths.diagnostics, &lines)?;
    if write_map && !out.map_points.is_empty() {
        write_points_ply(&paths.map, &out.map_points)?;
    }
    out.timings.write_ms = ms(t);
    out.timings.total_ms += out.timings.write_ms;
    let json =
        serde_json::to_string_pretty(&out.timings).map_err(|e| Error::Data(e.to_string()))?;
    write_text(&paths.timings, &json)
}

/// Loads a dataset directory, runs the pipeline and writes the outputs.
/// Nothing is written unless the run succeeds.
pub fn run_dataset(
    cfg: &PipelineConfig,
    dataset: &Path,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    let t = Instant::now();
    let ds = load_dataset(dataset)?;
    let load_ms = ms(t);
    let mut out = run_pipeline(cfg, &ds)?;
    out.timings.load_ms = load_ms;
    out.timings.total_ms += load_ms;
    if let Some(dir) = out_dir {
        write_outputs(&mut out, dir, cfg.run.write_map)?;
    }
    Ok(out)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
