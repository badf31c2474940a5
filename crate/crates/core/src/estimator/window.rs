use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use super::bootstrap::finite_difference_velocities;
use super::prior::MarginalPrior;
use super::residual::ExtrinsicPrior;
use super::solver::{ImuFactor, LidarFactor, LidarNoise, Problem, SolveReport};
use super::EstimatorOptions;
use crate::error::{Error, Result};
use crate::frontend::{associate, build_local_map, extract_planar_features, FeatureCloud, Sweep};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::imu::{
    imu_segment, preintegrate, propagate, ImuNoiseModel, ImuSample, ImuState, BA, BG, P, TH,
};
use crate::io::TimedPose;

/// One sweep's contribution to the local map.
#[derive(Debug, Clone)]
struct MapEntry {
    t: f64,
    /// De-skewed features in the sweep's own lidar frame.
    features: FeatureCloud,
    /// Latest body pose `T^W_B`. Lidar poses are derived with the current
    /// extrinsic so the whole map stays consistent when it changes.
    body: Pose,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepTimings {
    /// Pre-integration plus propagation of the sweep's IMU segment.
    pub prediction_ms: f64,
    pub imu_samples: usize,
    pub features_ms: f64,
    /// De-skew, local-map build and association, summed over passes.
    pub association_ms: f64,
    /// Association passes plus solves.
    pub solve_ms: f64,
    pub total_ms: f64,
}

/// Per-sweep odometry result.
#[derive(Debug, Clone)]
pub struct OdometryOutput {
    pub t: f64,
    /// `T^W_L`.
    pub pose: Pose,
    pub state: ImuState,
    /// `T^L_B` estimate.
    pub extrinsic: Pose,
    /// Too few associations on this sweep.
    pub degraded: bool,
    pub low_observability: bool,
    /// The solve failed; `pose` is the IMU prediction and the window was
    /// rolled back.
    pub failed: bool,
    pub message: Option<String>,
    pub associations: usize,
    pub observability_ratio: f64,
    pub report: Option<SolveReport>,
    /// De-skewed features in this sweep's lidar frame.
    pub features: FeatureCloud,
    /// Marginal orientation information of this pose in world axes.
    pub orientation_information: Option<Mat3>,
    pub timings: StepTimings,
}

impl OdometryOutput {
    pub fn timed_pose(&self) -> TimedPose {
        TimedPose::new(self.t, self.pose)
    }
}

/// The sliding-window estimator. Cloning it snapshots the full window,
/// which is how a failed sweep is rolled back.
#[derive(Debug, Clone)]
pub struct Estimator {
    opts: EstimatorOptions,
    noise: ImuNoiseModel,
    times: Vec<f64>,
    ids: Vec<u64>,
    states: Vec<ImuState>,
    /// Features as extracted, before de-skew.
    raw: Vec<FeatureCloud>,
    sweep_start: Vec<f64>,
    next_id: u64,
    ext: Pose,
    ext_prior: Option<ExtrinsicPrior>,
    imu_factors: Vec<ImuFactor>,
    lidar_factors: Vec<LidarFactor>,
    priors: Vec<MarginalPrior>,
    history: VecDeque<MapEntry>,
    unexcited: bool,
}

struct PassResult {
    report: SolveReport,
    associations: usize,
    observability_ratio: f64,
    association_ms: f64,
}

impl Estimator {
    /// Seeds a full window from lidar poses `T^W_L` at sweep ends.
    ///
    /// Velocities come from finite differences, biases start at zero and a
    /// weak prior on the first pose, the biases and the extrinsic fixes the
    /// gauge. The window is then optimized once.
    pub fn bootstrap(
        opts: EstimatorOptions,
        noise: ImuNoiseModel,
        ext: Pose,
        seeds: &[TimedPose],
        sweeps: &[Sweep],
        imu: &[ImuSample],
    ) -> Result<(Self, Vec<OdometryOutput>)> {
        noise.validate()?;
        if opts.window_size < 2 || opts.map_window < opts.window_size {
            return Err(Error::Config(format!(
                "window sizes must satisfy 2 <= window_size <= map_window, got {} and {}",
                opts.window_size, opts.map_window
            )));
        }
        if seeds.len() < 2 {
            return Err(Error::domain(format!(
                "bootstrap needs at least 2 poses, got {}",
                seeds.len()
            )));
        }
        if sweeps.len() != seeds.len() {
            return Err(Error::domain(format!(
                "{} seed poses for {} sweeps",
                seeds.len(),
                sweeps.len()
            )));
        }
        let start = Instant::now();
        let times: Vec<f64> = seeds.iter().map(|s| s.t).collect();
        let bodies: Vec<Pose> = seeds.iter().map(|s| s.pose.compose(&ext)).collect();
        let vel = finite_difference_velocities(&times, &bodies)?;
        let states: Vec<ImuState> = bodies
            .iter()
            .zip(&vel)
            .map(|(b, v)| ImuState::from_pose(b, *v))
            .collect();
        let unexcited =
            vel.iter().map(|v| v.norm()).fold(0.0, f64::max) < opts.bootstrap.min_excitation;

        let mut imu_factors = Vec::with_capacity(states.len() - 1);
        for k in 1..states.len() {
            let seg = imu_segment(imu, times[k - 1], times[k])?;
            let z = preintegrate(&seg, &Vec3::zeros(), &Vec3::zeros(), &noise)?;
            imu_factors.push(ImuFactor::new(k - 1, k, z)?);
        }

        let t0 = Instant::now();
        let raw: Vec<FeatureCloud> = sweeps
            .iter()
            .map(|s| extract_planar_features(s, &opts.features))
            .collect();
        let features_ms = ms(t0);

        let mut est = Self {
            opts,
            noise,
            times: times.clone(),
            ids: (0..states.len() as u64).collect(),
            states,
            raw,
            sweep_start: sweeps.iter().map(|s| s.t_start).collect(),
            next_id: seeds.len() as u64,
            ext,
            ext_prior: (opts.extrinsic_prior_weight > 0.0
                || opts.extrinsic_rotation_prior_weight > 0.0)
                .then_some(ExtrinsicPrior {
                    pose: ext,
                    translation_weight: opts.extrinsic_prior_weight,
                    rotation_weight: opts.extrinsic_rotation_prior_weight,
                }),
            imu_factors,
            lidar_factors: Vec::new(),
            priors: Vec::new(),
            history: VecDeque::new(),
            unexcited,
        };
        for k in 0..seeds.len() {
            let features = est.deskew_features(k)?;
            est.history.push_back(MapEntry {
                t: times[k],
                features,
                body: bodies[k],
            });
        }
        est.priors.push(est.bootstrap_prior());

        let pass = est.optimize()?;
        let mut outs = Vec::with_capacity(seeds.len());
        for k in 0..est.states.len() {
            let mut o = est.output(k, &pass, features_ms)?;
            o.timings.total_ms = ms(start) / seeds.len() as f64;
            outs.push(o);
        }
        Ok((est, outs))
    }

    fn bootstrap_prior(&self) -> MarginalPrior {
        let b = &self.opts.bootstrap;
        let estimate_ext = self.opts.estimate_extrinsic;
        let dim = 15 + if estimate_ext { 6 } else { 0 };
        let mut h = nalgebra::DMatrix::zeros(dim, dim);
        let mut set = |off: usize, sigma: f64| {
            for k in off..off + 3 {
                h[(k, k)] = 1.0 / (sigma * sigma);
            }
        };
        set(P, b.pose_sigma);
        set(TH, b.pose_sigma);
        set(BA, b.acc_bias_sigma);
        set(BG, b.gyro_bias_sigma);
        if estimate_ext {
            set(15, b.extrinsic_sigma);
            set(18, b.extrinsic_sigma);
        }
        MarginalPrior::from_information(
            vec![self.ids[0]],
            vec![self.states[0]],
            estimate_ext.then_some(self.ext),
            &h,
            &nalgebra::DVector::zeros(dim),
        )
    }

    pub fn options(&self) -> &EstimatorOptions {
        &self.opts
    }

    pub fn extrinsic(&self) -> Pose {
        self.ext
    }

    pub fn states(&self) -> &[ImuState] {
        &self.states
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn priors(&self) -> &[MarginalPrior] {
        &self.priors
    }

    /// Static or near-static seed motion; biases are weakly observable.
    pub fn unexcited(&self) -> bool {
        self.unexcited
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("window is never empty")
    }

    pub fn last_state(&self) -> ImuState {
        *self.states.last().expect("window is never empty")
    }

    fn lidar_pose(&self, k: usize) -> Pose {
        self.states[k].pose().compose(&self.ext.inverse())
    }

    fn history_index(&self, k: usize) -> usize {
        self.history.len() - self.states.len() + k
    }

    /// De-skews window sweep `k` with the current motion estimate. The
    /// oldest sweep has no predecessor in the window, so its start pose is
    /// extrapolated from the following interval at constant world-frame
    /// velocity.
    fn deskew_features(&self, k: usize) -> Result<FeatureCloud> {
        let raw = &self.raw[k];
        if !self.opts.deskew {
            return Ok(raw.clone());
        }
        let rel = if k > 0 {
            self.lidar_pose(k).between(&self.lidar_pose(k - 1))
        } else if self.states.len() > 1 {
            let (a, b) = (self.lidar_pose(0), self.lidar_pose(1));
            let prev = Pose::new(
                a.rotation * b.rotation.inverse() * a.rotation,
                a.translation * 2.0 - b.translation,
            );
            a.between(&prev)
        } else {
            Pose::identity()
        };
        raw.deskewed(self.sweep_start[k], self.times[k], &rel)
    }

    fn problem<'a>(&'a self, lidar: &'a [LidarFactor]) -> Problem<'a> {
        Problem {
            states: self.states.clone(),
            ids: self.ids.clone(),
            ext: self.ext,
            imu: &self.imu_factors,
            lidar,
            priors: &self.priors,
            ext_prior: self.ext_prior,
            estimate_extrinsic: self.opts.estimate_extrinsic,
            gravity: self.noise.gravity,
            noise: LidarNoise {
                sigma: self.opts.lidar_sigma,
                huber_delta: self.opts.huber_delta,
            },
            ext_min_information: self.opts.extrinsic_min_information,
        }
    }

    /// Cost of the current window under the factors of the last solve.
    pub fn window_cost(&self) -> f64 {
        self.problem(&self.lidar_factors).cost()
    }

    /// Associate-then-solve passes over the current window.
    fn optimize(&mut self) -> Result<PassResult> {
        let n = self.states.len();
        let mut last = None;
        let mut association_ms = 0.0;
        for _ in 0..self.opts.outer_iterations.max(1) {
            let t0 = Instant::now();
            for k in 1..n {
                let h = self.history_index(k);
                self.history[h].features = self.deskew_features(k)?;
            }
            for k in 0..n {
                let h = self.history_index(k);
                self.history[h].body = self.states[k].pose();
            }

            let pivot_inv = self.lidar_pose(0).inverse();
            let ext_inv = self.ext.inverse();
            let map_len = self.history.len() - 1;
            let clouds: Vec<&FeatureCloud> = self
                .history
                .iter()
                .take(map_len)
                .map(|e| &e.features)
                .collect();
            let poses: Vec<Pose> = self
                .history
                .iter()
                .take(map_len)
                .map(|e| pivot_inv.compose(&e.body.compose(&ext_inv)))
                .collect();
            let map = build_local_map(&clouds, &poses, self.opts.voxel_size)?;

            let mut factors = Vec::new();
            let mut info = Mat3::zeros();
            let mut newest = 0;
            for a in 1..n {
                let h = self.history_index(a);
                let guess = pivot_inv.compose(&self.lidar_pose(a));
                let own = (h < map_len).then_some((map.source(), h));
                let ms = associate(
                    &self.history[h].features,
                    &guess,
                    map.tree(),
                    own,
                    &self.opts.association,
                )?;
                if a == n - 1 {
                    newest = ms.len();
                    for m in &ms {
                        info += m.normal * m.normal.transpose();
                    }
                }
                factors.extend(ms.into_iter().map(|m| LidarFactor {
                    pivot: 0,
                    alpha: a,
                    m,
                }));
            }

            association_ms += ms(t0);
            let eig = SymmetricEigen::new(info).eigenvalues;
            let ratio = if eig.max() > 0.0 {
                eig.min().max(0.0) / eig.max()
            } else {
                0.0
            };
            let mut problem = self.problem(&factors);
            // A degenerate scene cannot calibrate the extrinsic; hold it.
            problem.estimate_extrinsic &= ratio >= self.opts.low_observability_ratio;
            let report = problem.solve(&self.opts.solver)?;
            let (states, ext) = (problem.states, problem.ext);
            if states.iter().any(|s| !s.is_finite()) || !ext.is_finite() {
                return Err(Error::Numerical(
                    "solver produced a non-finite estimate".into(),
                ));
            }
            self.states = states;
            self.ext = ext;
            self.lidar_factors = factors;
            self.repropagate()?;
            last = Some(PassResult {
                report,
                associations: newest,
                observability_ratio: ratio,
                association_ms,
            });
        }
        for k in 0..n {
            let h = self.history_index(k);
            self.history[h].body = self.states[k].pose();
        }
        Ok(last.expect("at least one pass"))
    }

    fn repropagate(&mut self) -> Result<()> {
        for f in &mut self.imu_factors {
            let x = &self.states[f.i];
            if (x.ba - f.z.ba_lin).norm() > self.opts.repropagate_acc_bias
                || (x.bg - f.z.bg_lin).norm() > self.opts.repropagate_gyro_bias
            {
                *f = ImuFactor::new(f.i, f.j, f.z.repropagate(&x.ba, &x.bg))?;
            }
        }
        Ok(())
    }

    /// Marginalizes the pivot and drops it from the window.
    fn slide(&mut self) -> Result<()> {
        let lidar: &[LidarFactor] = if self.opts.marginalize_lidar {
            &self.lidar_factors
        } else {
            &[]
        };
        let (prior, _regularized) = self.problem(lidar).marginalize(0)?;
        let id0 = self.ids[0];
        self.priors.retain(|p| !p.ids.contains(&id0));
        self.priors.push(prior);
        self.states.remove(0);
        self.ids.remove(0);
        self.times.remove(0);
        self.raw.remove(0);
        self.sweep_start.remove(0);
        self.imu_factors.remove(0);
        for f in &mut self.imu_factors {
            f.i -= 1;
            f.j -= 1;
        }
        self.lidar_factors.clear();
        Ok(())
    }

    fn output(&self, k: usize, pass: &PassResult, features_ms: f64) -> Result<OdometryOutput> {
        let problem = self.problem(&self.lidar_factors);
        let info = problem
            .linearize()
            .ok()
            .and_then(|ne| problem.orientation_covariance(&ne, k))
            .and_then(|c| {
                let r = self.states[k].q.to_rotation_matrix().into_inner();
                c.try_inverse().map(|i| r * i * r.transpose())
            });
        let newest = k + 1 == self.states.len();
        Ok(OdometryOutput {
            t: self.times[k],
            pose: self.lidar_pose(k),
            state: self.states[k],
            extrinsic: self.ext,
            degraded: newest && pass.associations < self.opts.min_associations,
            low_observability: newest
                && pass.observability_ratio < self.opts.low_observability_ratio,
            failed: false,
            message: None,
            associations: if newest { pass.associations } else { 0 },
            observability_ratio: pass.observability_ratio,
            report: Some(pass.report),
            features: self.history[self.history_index(k)].features.clone(),
            orientation_information: info,
            timings: StepTimings {
                features_ms,
                association_ms: pass.association_ms,
                ..Default::default()
            },
        })
    }

    /// Adds one sweep: predict, de-skew, associate against the local map,
    /// solve, and slide. A failed solve rolls the window back and reports
    /// the IMU prediction instead.
    pub fn process_sweep(&mut self, sweep: &Sweep, imu: &[ImuSample]) -> Result<OdometryOutput> {
        let t_prev = self.last_time();
        if !(sweep.t_end > t_prev) {
            return Err(Error::domain(format!(
                "sweep ending at {} does not follow the window end {t_prev}",
                sweep.t_end
            )));
        }
        let seg = imu_segment(imu, t_prev, sweep.t_end)?;
        let snapshot = self.clone();
        match self.step(sweep, &seg) {
            Ok(o) => Ok(o),
            Err(e @ (Error::Numerical(_) | Error::Domain(_))) => {
                *self = snapshot;
                let pred = propagate(&self.last_state(), &seg, &self.noise)?;
                let pose = pred.pose().compose(&self.ext.inverse());
                Ok(OdometryOutput {
                    t: sweep.t_end,
                    pose,
                    state: pred,
                    extrinsic: self.ext,
                    degraded: true,
                    low_observability: false,
                    failed: true,
                    message: Some(e.to_string()),
                    associations: 0,
                    observability_ratio: 0.0,
                    report: None,
                    features: FeatureCloud::default(),
                    orientation_information: None,
                    timings: StepTimings::default(),
                })
            }
            Err(e) => Err(e),
        }
    }

    fn step(&mut self, sweep: &Sweep, seg: &[ImuSample]) -> Result<OdometryOutput> {
        let start = Instant::now();
        if self.states.len() >= self.opts.window_size {
            self.slide()?;
        }
        let last = self.last_state();
        let tp = Instant::now();
        let z = preintegrate(seg, &last.ba, &last.bg, &self.noise)?;
        let pred = propagate(&last, seg, &self.noise)?;
        let prediction_ms = ms(tp);
        let n = self.states.len();
        self.imu_factors.push(ImuFactor::new(n - 1, n, z)?);
        self.states.push(pred);
        self.times.push(sweep.t_end);
        self.ids.push(self.next_id);
        self.next_id += 1;
        self.sweep_start.push(sweep.t_start);

        let t0 = Instant::now();
        self.raw
            .push(extract_planar_features(sweep, &self.opts.features));
        let features_ms = ms(t0);
        let features = self.deskew_features(n)?;
        self.history.push_back(MapEntry {
            t: sweep.t_end,
            features,
            body: pred.pose(),
        });

        let t1 = Instant::now();
        let pass = self.optimize()?;
        let opt_ms = ms(t1);

        let keep = self.opts.map_window.max(self.states.len());
        while self.history.len() > keep {
            self.history.pop_front();
        }
        let mut out = self.output(self.states.len() - 1, &pass, features_ms)?;
        out.timings.solve_ms = opt_ms;
        out.timings.prediction_ms = prediction_ms;
        out.timings.imu_samples = seg.len();
        out.timings.total_ms = ms(start);
        Ok(out)
    }

    /// Timestamps of the sweeps currently in the local map.
    pub fn map_times(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.t).collect()
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, SimConfig, TrajectoryPreset};

    fn window(estimate_extrinsic: bool) -> Estimator {
        let cfg = SimConfig {
            trajectory: TrajectoryPreset::RoomMedium,
            duration: 1.0,
            seed: 3,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let opts = EstimatorOptions {
            estimate_extrinsic,
            ..Default::default()
        };
        let n = opts.window_size;
        let sweeps: Vec<Sweep> = ds.sweeps.iter().map(|s| s.sweep.clone()).collect();
        let (mut est, _) = Estimator::bootstrap(
            opts,
            ImuNoiseModel::default(),
            ds.rig.extrinsic,
            &ds.gt_lidar[..n],
            &sweeps[..n],
            &ds.imu.samples,
        )
        .unwrap();
        for k in n..n + 2 {
            est.process_sweep(&sweeps[k], &ds.imu.samples).unwrap();
        }
        est
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let est = window(true);
        let mut problem = est.problem(&est.lidar_factors);
        // Move off the optimum so the gradient is not tiny.
        let mut dx = nalgebra::DVector::zeros(problem.dim());
        for k in 0..dx.len() {
            dx[k] = 1e-3 * ((k * 37 % 11) as f64 - 5.0);
        }
        let (s, e) = problem.retract(&problem.states, &problem.ext, &dx);
        problem.states = s;
        problem.ext = e;
        let ne = problem.linearize().unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..problem.dim() {
            let mut d = nalgebra::DVector::zeros(problem.dim());
            d[k] = h;
            let (sp, ep) = problem.retract(&problem.states, &problem.ext, &d);
            d[k] = -h;
            let (sm, em) = problem.retract(&problem.states, &problem.ext, &d);
            let g = (problem.cost_at(&sp, &ep) - problem.cost_at(&sm, &em)) / (2.0 * h) / 2.0;
            let err = (g - ne.b[k]).abs() / (1.0 + g.abs());
            if err > 1e-3 {
                eprintln!("dim {k}: fd {g:.6e} analytic {:.6e}", ne.b[k]);
            }
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "worst relative gradient error {worst}");
    }
}
