use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::prior::{schur_complement, MarginalPrior};
use super::residual::{relative_lidar_residual, ExtrinsicPrior};
use crate::error::{Error, Result};
use crate::frontend::RelativeMeasurement;
use crate::geometry::{plus_body, Mat3, Pose, Vec3};
use crate::imu::{imu_residual, ImuState, Mat15, PreintegratedImu, Vec15, P, TH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when the largest gradient entry falls below this.
    pub gradient_tol: f64,
    /// Stop when the step norm falls below this.
    pub step_tol: f64,
    /// Stop when an accepted step lowers the cost by less than this
    /// fraction.
    pub cost_tol: f64,
    /// Initial Marquardt damping factor.
    pub initial_lambda: f64,
    pub max_lambda: f64,
    /// Smallest-to-largest eigenvalue ratio of the Jacobi-scaled normal
    /// matrix below which the problem is rejected as gauge deficient.
    pub gauge_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            gradient_tol: 1e-9,
            step_tol: 1e-9,
            cost_tol: 1e-8,
            initial_lambda: 1e-10,
            max_lambda: 1e10,
            gauge_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    MaxIterations,
    /// Damping hit its ceiling without finding a decreasing step.
    NoProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Smallest-to-largest eigenvalue ratio of the Jacobi-scaled normal
    /// matrix at the start of the solve.
    pub conditioning: f64,
}

#[derive(Debug, Clone)]
pub struct ImuFactor {
    pub i: usize,
    pub j: usize,
    pub z: PreintegratedImu,
    pub sqrt_info: Mat15,
}

impl ImuFactor {
    pub fn new(i: usize, j: usize, z: PreintegratedImu) -> Result<Self> {
        let sqrt_info = z.sqrt_information()?;
        Ok(Self { i, j, z, sqrt_info })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarFactor {
    pub pivot: usize,
    pub alpha: usize,
    pub m: RelativeMeasurement,
}

/// Robust weighting of lidar residuals, in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarNoise {
    pub sigma: f64,
    pub huber_delta: f64,
}

impl LidarNoise {
    /// Huber cost (already divided by σ²) and IRLS weight.
    pub fn rho(&self, r: f64) -> (f64, f64) {
        let a = r.abs();
        let s2 = self.sigma * self.sigma;
        if a <= self.huber_delta {
            (r * r / s2, 1.0)
        } else {
            (
                (2.0 * self.huber_delta * a - self.huber_delta * self.huber_delta) / s2,
                self.huber_delta / a,
            )
        }
    }
}

/// Joint cost over the window: IMU factors, lidar factors, marginal priors
/// and the optional extrinsic translation prior.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub states: Vec<ImuState>,
    pub ids: Vec<u64>,
    pub ext: Pose,
    pub imu: &'a [ImuFactor],
    pub lidar: &'a [LidarFactor],
    pub priors: &'a [MarginalPrior],
    pub ext_prior: Option<ExtrinsicPrior>,
    pub estimate_extrinsic: bool,
    pub gravity: Vec3,
    pub noise: LidarNoise,
    /// Extrinsic directions whose information from the window's own
    /// measurements (priors excluded, states eliminated) is below this are
    /// held fixed during the solve. 0 disables the check.
    pub ext_min_information: f64,
}

/// Accumulated `H = ΣJᵀJ`, `b = ΣJᵀr` and the cost `Σ‖r‖²`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cost: f64,
}

impl NormalEquations {
    fn new(dim: usize) -> Self {
        Self {
            h: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
            cost: 0.0,
        }
    }

    /// Adds a factor whose Jacobian is split into column blocks starting at
    /// the given offsets. `j` rows are residual components.
    fn add(&mut self, r: &[f64], blocks: &[(usize, DMatrix<f64>)], weight: f64) {
        for (oa, ja) in blocks {
            let jtr = ja.transpose() * DVector::from_column_slice(r) * weight;
            let mut bv = self.b.rows_mut(*oa, ja.ncols());
            bv += jtr;
            for (ob, jb) in blocks {
                let mut hv = self.h.view_mut((*oa, *ob), (ja.ncols(), jb.ncols()));
                hv += ja.transpose() * jb * weight;
            }
        }
    }
}

fn to_dyn<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Which factors to include when linearizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    All,
    Touching(usize),
}

impl<'a> Problem<'a> {
    pub fn dim(&self) -> usize {
        15 * self.states.len() + 6
    }

    pub fn ext_offset(&self) -> usize {
        15 * self.states.len()
    }

    fn prior_columns(&self, prior: &MarginalPrior) -> Result<Vec<usize>> {
        let mut cols = Vec::with_capacity(prior.dim());
        for id in &prior.ids {
            let k = self.ids.iter().position(|x| x == id).ok_or_else(|| {
                Error::Numerical(format!("prior references state {id} outside the window"))
            })?;
            cols.extend(15 * k..15 * k + 15);
        }
        if prior.ext.is_some() {
            cols.extend(self.ext_offset()..self.ext_offset() + 6);
        }
        Ok(cols)
    }

    pub(crate) fn prior_states(&self, prior: &MarginalPrior, states: &[ImuState]) -> Vec<ImuState> {
        prior
            .ids
            .iter()
            .map(|id| states[self.ids.iter().position(|x| x == id).unwrap()])
            .collect()
    }

    /// Total cost at the given estimate.
    pub fn cost_at(&self, states: &[ImuState], ext: &Pose) -> f64 {
        let mut c = 0.0;
        for f in self.imu {
            let r = imu_residual(&states[f.i], &states[f.j], &f.z, &self.gravity).residual;
            c += (f.sqrt_info * r).norm_squared();
        }
        for f in self.lidar {
            let r = relative_lidar_residual(
                &f.m,
                &states[f.pivot].pose(),
                &states[f.alpha].pose(),
                ext,
            )
            .r;
            c += self.noise.rho(r).0;
        }
        for p in self.priors {
            let (r, _) = p.evaluate(&self.prior_states(p, states), Some(ext));
            c += r.norm_squared();
        }
        if let Some(p) = &self.ext_prior {
            c += p.residual(ext).norm_squared();
        }
        c
    }

    pub fn cost(&self) -> f64 {
        self.cost_at(&self.states, &self.ext)
    }

    fn linearize_scope(&self, scope: Scope) -> Result<NormalEquations> {
        let dim = self.dim();
        let eo = self.ext_offset();
        let mut ne = NormalEquations::new(dim);
        let touches = |k: &[usize]| match scope {
            Scope::All => true,
            Scope::Touching(s) => k.contains(&s),
        };
        for f in self.imu.iter().filter(|f| touches(&[f.i, f.j])) {
            let res = imu_residual(&self.states[f.i], &self.states[f.j], &f.z, &self.gravity);
            let r: Vec15 = f.sqrt_info * res.residual;
            ne.cost += r.norm_squared();
            ne.add(
                r.as_slice(),
                &[
                    (15 * f.i, to_dyn(&(f.sqrt_info * res.jac_i))),
                    (15 * f.j, to_dyn(&(f.sqrt_info * res.jac_j))),
                ],
                1.0,
            );
        }
        for f in self.lidar.iter().filter(|f| touches(&[f.pivot, f.alpha])) {
            let res = relative_lidar_residual(
                &f.m,
                &self.states[f.pivot].pose(),
                &self.states[f.alpha].pose(),
                &self.ext,
            );
            let (c, w) = self.noise.rho(res.r);
            ne.cost += c;
            let s = 1.0 / self.noise.sigma;
            // Rank-1 update over the 18 touched columns; pivot and alpha may
            // coincide, in which case the repeated indices simply add up.
            let mut idx = [0usize; 18];
            let mut val = [0.0; 18];
            for (n, (off, j)) in [
                (15 * f.pivot, &res.j_pivot),
                (15 * f.alpha, &res.j_alpha),
                (eo, &res.j_ext),
            ]
            .into_iter()
            .enumerate()
            {
                for c in 0..6 {
                    idx[6 * n + c] = if n == 2 {
                        off + c
                    } else if c < 3 {
                        off + P + c
                    } else {
                        off + TH + c - 3
                    };
                    val[6 * n + c] = j[c] * s;
                }
            }
            let rs = res.r * s;
            for a in 0..18 {
                let wa = w * val[a];
                ne.b[idx[a]] += wa * rs;
                for b in 0..18 {
                    ne.h[(idx[a], idx[b])] += wa * val[b];
                }
            }
        }
        for p in self.priors {
            let cols = self.prior_columns(p)?;
            if let Scope::Touching(s) = scope {
                if !cols.contains(&(15 * s)) {
                    continue;
                }
            }
            let (r, j) = p.evaluate(&self.prior_states(p, &self.states), Some(&self.ext));
            ne.cost += r.norm_squared();
            let jtj = j.transpose() * &j;
            let jtr = j.transpose() * &r;
            for (a, &ca) in cols.iter().enumerate() {
                ne.b[ca] += jtr[a];
                for (b, &cb) in cols.iter().enumerate() {
                    ne.h[(ca, cb)] += jtj[(a, b)];
                }
            }
        }
        if let (Some(p), Scope::All) = (&self.ext_prior, scope) {
            let r = p.residual(&self.ext);
            ne.cost += r.norm_squared();
            let j = DMatrix::from_diagonal(&DVector::from_row_slice(&p.jacobian_diagonal()));
            ne.add(r.as_slice(), &[(eo, j)], 1.0);
        }
        if !self.estimate_extrinsic {
            for k in eo..dim {
                ne.h.row_mut(k).fill(0.0);
                ne.h.column_mut(k).fill(0.0);
                ne.h[(k, k)] = 1.0;
                ne.b[k] = 0.0;
            }
        }
        Ok(ne)
    }

    pub fn linearize(&self) -> Result<NormalEquations> {
        self.linearize_scope(Scope::All)
    }

    /// Applies a tangent step to the estimate.
    pub fn retract(
        &self,
        states: &[ImuState],
        ext: &Pose,
        dx: &DVector<f64>,
    ) -> (Vec<ImuState>, Pose) {
        let s = states
            .iter()
            .enumerate()
            .map(|(k, x)| x.oplus(&Vec15::from_column_slice(dx.rows(15 * k, 15).as_slice())))
            .collect();
        let eo = self.ext_offset();
        let e = if self.estimate_extrinsic {
            let dp = Vec3::from_column_slice(dx.rows(eo, 3).as_slice());
            let dth = Vec3::from_column_slice(dx.rows(eo + 3, 3).as_slice());
            Pose::new(plus_body(&ext.rotation, &dth), ext.translation + dp)
        } else {
            *ext
        };
        (s, e)
    }

    /// Levenberg-Marquardt with accept/reject. On error the estimate is
    /// left untouched.
    pub fn solve(&mut self, opts: &SolverOptions) -> Result<SolveReport> {
        let mut ne = self.linearize()?;
        let initial_cost = ne.cost;
        if !initial_cost.is_finite() {
            return Err(Error::Numerical("non-finite initial cost".into()));
        }
        let conditioning = scaled_conditioning(&ne.h);
        let freeze = self.degenerate_extrinsic_directions()?;
        if conditioning < opts.gauge_tol {
            return Err(Error::Numerical(format!(
                "gauge deficiency: normal matrix is rank deficient (conditioning {conditioning:.3e})"
            )));
        }
        let mut lambda = opts.initial_lambda;
        let mut nu = 2.0;
        let mut cost = ne.cost;
        let mut iterations = 0;
        let mut termination = Termination::MaxIterations;
        'outer: while iterations < opts.max_iterations {
            if ne.b.amax() < opts.gradient_tol {
                termination = Termination::Gradient;
                break;
            }
            loop {
                let mut a = ne.h.clone();
                if let Some(f) = &freeze {
                    let eo = self.ext_offset();
                    let mut v = a.view_mut((eo, eo), (6, 6));
                    v += f;
                }
                for k in 0..a.nrows() {
                    a[(k, k)] += lambda * ne.h[(k, k)].max(1e-12);
                }
                let step = a.cholesky().map(|c| -c.solve(&ne.b));
                if let Some(dx) = step {
                    let (s, e) = self.retract(&self.states, &self.ext, &dx);
                    let new_cost = self.cost_at(&s, &e);
                    // Reduction predicted by the quadratic model ‖r + J dx‖².
                    let predicted = -(2.0 * ne.b.dot(&dx) + dx.dot(&(&ne.h * &dx)));
                    if new_cost.is_finite() && new_cost <= cost && predicted > 0.0 {
                        let rho = (cost - new_cost) / predicted;
                        self.states = s;
                        self.ext = e;
                        let small_change = cost - new_cost <= opts.cost_tol * cost.max(1e-300);
                        cost = new_cost;
                        iterations += 1;
                        lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                        lambda = lambda.max(1e-15);
                        nu = 2.0;
                        if dx.norm() < opts.step_tol || small_change {
                            termination = Termination::Step;
                            break 'outer;
                        }
                        break;
                    }
                }
                lambda *= nu;
                nu *= 2.0;
                if lambda > opts.max_lambda {
                    termination = Termination::NoProgress;
                    break 'outer;
                }
            }
            ne = self.linearize()?;
        }
        Ok(SolveReport {
            initial_cost,
            final_cost: cost,
            iterations,
            termination,
            conditioning,
        })
    }

    /// Penalty on the extrinsic block that pins its poorly observed
    /// directions, or `None` when every direction is informed.
    fn degenerate_extrinsic_directions(&self) -> Result<Option<nalgebra::Matrix6<f64>>> {
        if !self.estimate_extrinsic || !(self.ext_min_information > 0.0) {
            return Ok(None);
        }
        let data = Problem {
            priors: &[],
            ext_prior: None,
            ..self.clone()
        };
        let ne = data.linearize()?;
        let eo = self.ext_offset();
        let states: Vec<usize> = (0..eo).collect();
        // Regularize the state block slightly: it carries a gauge freedom
        // once the priors are removed.
        let mut h = ne.h;
        let scale = (0..eo).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1.0);
        for i in 0..eo {
            h[(i, i)] += 1e-9 * scale;
        }
        let s = schur_complement(&h, &ne.b, &states);
        let info = nalgebra::Matrix6::from_fn(|i, j| s.h[(i, j)]);
        let eig = SymmetricEigen::new((info + info.transpose()) * 0.5);
        let mut penalty = nalgebra::Matrix6::zeros();
        let big = 1e12;
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l < self.ext_min_information {
                let v = eig.eigenvectors.column(i);
                penalty += v * v.transpose() * big;
            }
        }
        Ok((penalty != nalgebra::Matrix6::zeros()).then_some(penalty))
    }

    /// Eliminates state `k` (normally the pivot) from every factor touching
    /// it and returns the resulting prior over the remaining states and the
    /// extrinsic. The second value reports whether the eliminated block
    /// needed regularization.
    pub fn marginalize(&self, k: usize) -> Result<(MarginalPrior, bool)> {
        let ne = self.linearize_scope(Scope::Touching(k))?;
        let mut marg: Vec<usize> = (15 * k..15 * k + 15).collect();
        if !self.estimate_extrinsic {
            marg.extend(self.ext_offset()..self.dim());
        }
        let mut h = ne.h;
        let mut b = ne.b;
        if !self.estimate_extrinsic {
            // The extrinsic is a constant here: drop it rather than eliminate it.
            for i in self.ext_offset()..self.dim() {
                h.row_mut(i).fill(0.0);
                h.column_mut(i).fill(0.0);
                b[i] = 0.0;
                h[(i, i)] = 1.0;
            }
        }
        let s = schur_complement(&h, &b, &marg);
        let keep: Vec<usize> = (0..self.states.len()).filter(|&i| i != k).collect();
        let prior = MarginalPrior::from_information(
            keep.iter().map(|&i| self.ids[i]).collect(),
            keep.iter().map(|&i| self.states[i]).collect(),
            self.estimate_extrinsic.then_some(self.ext),
            &s.h,
            &s.b,
        );
        Ok((prior, s.regularized))
    }

    /// Marginal covariance of the orientation of state `k` (body frame).
    pub fn orientation_covariance(&self, ne: &NormalEquations, k: usize) -> Option<Mat3> {
        let inv = ne.h.clone().cholesky()?.inverse();
        let o = 15 * k + TH;
        Some(inv.fixed_view::<3, 3>(o, o).into_owned())
    }
}

/// Smallest-to-largest eigenvalue ratio of `D H D` with `D = diag(H)^{-½}`.
pub fn scaled_conditioning(h: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = (0..h.nrows())
        .map(|i| {
            let v = h[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig.amax();
    if max <= 0.0 || d.iter().any(|x| *x == 0.0) {
        return 0.0;
    }
    eig.min().max(0.0) / max
}
