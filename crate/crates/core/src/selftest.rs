//! Oracle suites run by `lio selftest`: analytic Jacobians against central
//! differences, pre-integration consistency, marginalization against batch
//! solutions and rotation-constraint identities.

use nalgebra::{DMatrix, DVector, RowVector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::estimator::{relative_lidar_residual, schur_complement, Row6};
use crate::frontend::RelativeMeasurement;
use crate::geometry::{angle_between, exp_so3, plus_body, Pose, Vec3};
use crate::imu::{
    apply_delta, correct_bias, imu_residual, preintegrate, propagate, ImuNoiseModel, ImuSample,
    ImuState, Vec15,
};
use crate::mapper::{constrain_jacobian, map_residual, RotationConstraint};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub instances: usize,
    /// Largest observed error.
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error < self.tolerance
    }
}

fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize) -> Vec<ImuSample> {
    let mut t = rng.random_range(0.0..10.0);
    (0..n)
        .map(|_| {
            t += 0.0025;
            ImuSample::new(t, Vec3::new(0.0, 0.0, 9.81) + rv(rng, 2.0), rv(rng, 1.0))
        })
        .collect()
}

fn random_state(rng: &mut ChaCha8Rng) -> ImuState {
    ImuState {
        p: rv(rng, 5.0),
        v: rv(rng, 2.0),
        q: exp_so3(&rv(rng, 3.0)),
        ba: rv(rng, 0.05),
        bg: rv(rng, 0.01),
    }
}

fn random_pose(rng: &mut ChaCha8Rng, t: f64) -> Pose {
    Pose::new(exp_so3(&rv(rng, 3.0)), rv(rng, t))
}

fn random_measurement(rng: &mut ChaCha8Rng) -> RelativeMeasurement {
    RelativeMeasurement {
        x: rv(rng, 10.0),
        normal: rv(rng, 1.0).normalize(),
        d: rng.random_range(-5.0..5.0),
    }
}

/// `[δp, δθ]` with additive translation and a right rotation perturbation.
fn pose_plus(p: &Pose, d: &[f64; 6]) -> Pose {
    Pose::new(
        plus_body(&p.rotation, &Vec3::new(d[3], d[4], d[5])),
        p.translation + Vec3::new(d[0], d[1], d[2]),
    )
}

fn unit6(k: usize, h: f64) -> [f64; 6] {
    let mut d = [0.0; 6];
    d[k] = h;
    d
}

pub fn imu_jacobians(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ImuNoiseModel::default();
    let h = FD_STEP;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let s = random_stream(&mut rng, 41);
        let xi = random_state(&mut rng);
        let ba = xi.ba + rv(&mut rng, 0.01);
        let bg = xi.bg + rv(&mut rng, 0.01);
        let Ok(z) = preintegrate(&s, &ba, &bg, &noise) else {
            return failed("jacobians", "imu_residual", n, 1e-4);
        };
        let Ok(xj) = propagate(&xi, &s, &noise) else {
            return failed("jacobians", "imu_residual", n, 1e-4);
        };
        let xj = xj.oplus(&Vec15::from_fn(|_, _| rng.random_range(-0.1..0.1)));
        let r = imu_residual(&xi, &xj, &z, &noise.gravity);
        for k in 0..15 {
            let e = Vec15::from_fn(|i, _| if i == k { h } else { 0.0 });
            let fd_i = (imu_residual(&xi.oplus(&e), &xj, &z, &noise.gravity).residual
                - imu_residual(&xi.oplus(&-e), &xj, &z, &noise.gravity).residual)
                / (2.0 * h);
            let fd_j = (imu_residual(&xi, &xj.oplus(&e), &z, &noise.gravity).residual
                - imu_residual(&xi, &xj.oplus(&-e), &z, &noise.gravity).residual)
                / (2.0 * h);
            worst = worst
                .max((fd_i - r.jac_i.column(k)).amax())
                .max((fd_j - r.jac_j.column(k)).amax());
        }
    }
    Check {
        suite: "jacobians",
        name: "imu_residual",
        instances: n,
        max_error: worst,
        tolerance: 1e-4,
    }
}

pub fn lidar_jacobians(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let m = random_measurement(&mut rng);
        let pivot = random_pose(&mut rng, 5.0);
        let alpha = random_pose(&mut rng, 5.0);
        let ext = Pose::new(exp_so3(&rv(&mut rng, 0.5)), rv(&mut rng, 0.3));
        let r = relative_lidar_residual(&m, &pivot, &alpha, &ext);
        let mut fd = [Row6::zeros(); 3];
        for k in 0..6 {
            let (p, q) = (unit6(k, h), unit6(k, -h));
            let f = |a: &Pose, b: &Pose, c: &Pose| relative_lidar_residual(&m, a, b, c).r;
            fd[0][k] = (f(&pose_plus(&pivot, &p), &alpha, &ext)
                - f(&pose_plus(&pivot, &q), &alpha, &ext))
                / (2.0 * h);
            fd[1][k] = (f(&pivot, &pose_plus(&alpha, &p), &ext)
                - f(&pivot, &pose_plus(&alpha, &q), &ext))
                / (2.0 * h);
            fd[2][k] = (f(&pivot, &alpha, &pose_plus(&ext, &p))
                - f(&pivot, &alpha, &pose_plus(&ext, &q)))
                / (2.0 * h);
        }
        for (a, b) in fd.iter().zip([r.j_pivot, r.j_alpha, r.j_ext]) {
            worst = worst.max((a - b).amax());
        }
    }
    Check {
        suite: "jacobians",
        name: "relative_lidar_residual",
        instances: n,
        max_error: worst,
        tolerance: 1e-4,
    }
}

pub fn map_jacobians(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let m = random_measurement(&mut rng);
        let pose = random_pose(&mut rng, 20.0);
        let (_, j_p, j_th) = map_residual(&m, &pose);
        let mut fd = Row6::zeros();
        for k in 0..6 {
            fd[k] = (map_residual(&m, &pose_plus(&pose, &unit6(k, h))).0
                - map_residual(&m, &pose_plus(&pose, &unit6(k, -h))).0)
                / (2.0 * h);
        }
        let mut an = Row6::zeros();
        an.fixed_view_mut::<1, 3>(0, 0).copy_from(&j_p);
        an.fixed_view_mut::<1, 3>(0, 3).copy_from(&j_th);
        worst = worst.max((fd - an).amax());
    }
    Check {
        suite: "jacobians",
        name: "map_residual",
        instances: n,
        max_error: worst,
        tolerance: 1e-4,
    }
}

fn failed(suite: &'static str, name: &'static str, instances: usize, tolerance: f64) -> Check {
    Check {
        suite,
        name,
        instances,
        max_error: f64::INFINITY,
        tolerance,
    }
}

fn state_gap(a: &ImuState, b: &ImuState) -> f64 {
    (a.p - b.p)
        .amax()
        .max((a.v - b.v).amax())
        .max(angle_between(&a.q, &b.q))
}

/// Direct propagation against pre-integration followed by `apply_delta`.
pub fn propagate_vs_preintegrate(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ImuNoiseModel::default();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let s = random_stream(&mut rng, 81);
        let x0 = random_state(&mut rng);
        let (Ok(direct), Ok(z)) = (
            propagate(&x0, &s, &noise),
            preintegrate(&s, &x0.ba, &x0.bg, &noise),
        ) else {
            return failed("preintegration", "propagate_vs_apply", n, 1e-9);
        };
        let via = apply_delta(&x0, &correct_bias(&z, &x0.ba, &x0.bg), z.dt, &noise.gravity);
        worst = worst.max(state_gap(&direct, &via));
    }
    Check {
        suite: "preintegration",
        name: "propagate_vs_apply",
        instances: n,
        max_error: worst,
        tolerance: 1e-9,
    }
}

pub fn split_and_chain(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ImuNoiseModel::default();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let s = random_stream(&mut rng, 81);
        let k = rng.random_range(1..80);
        let (ba, bg) = (rv(&mut rng, 0.05), rv(&mut rng, 0.01));
        let parts = (
            preintegrate(&s, &ba, &bg, &noise),
            preintegrate(&s[..=k], &ba, &bg, &noise),
            preintegrate(&s[k..], &ba, &bg, &noise),
        );
        let (Ok(full), Ok(a), Ok(c)) = parts else {
            return failed("preintegration", "split_and_chain", n, 1e-9);
        };
        let (dp, dv, dq, dt) = a.chain(&c);
        worst = worst
            .max((dp - full.delta_p).amax())
            .max((dv - full.delta_v).amax())
            .max(angle_between(&dq, &full.delta_q))
            .max((dt - full.dt).abs());
    }
    Check {
        suite: "preintegration",
        name: "split_and_chain",
        instances: n,
        max_error: worst,
        tolerance: 1e-9,
    }
}

/// First-order bias correction against re-integration for bias deltas up
/// to 1e-3.
pub fn bias_correction(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ImuNoiseModel::default();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let s = random_stream(&mut rng, 41);
        let Ok(z) = preintegrate(&s, &Vec3::zeros(), &Vec3::zeros(), &noise) else {
            return failed("preintegration", "bias_correction", n, 1e-6);
        };
        let (dba, dbg) = (rv(&mut rng, 1e-3), rv(&mut rng, 1e-3));
        let c = correct_bias(&z, &dba, &dbg);
        let re = z.repropagate(&dba, &dbg);
        worst = worst
            .max((c.delta_p - re.delta_p).amax())
            .max((c.delta_v - re.delta_v).amax())
            .max(angle_between(&c.delta_q, &re.delta_q));
    }
    Check {
        suite: "preintegration",
        name: "bias_correction",
        instances: n,
        max_error: worst,
        tolerance: 1e-6,
    }
}

/// Random linear-Gaussian chains of up to five 2-D states: an absolute
/// prior on the first state, odometry between neighbours and a few
/// absolute observations. Eliminating a random subset by Schur complement
/// must give the batch conditional of the rest: information equal to the
/// inverse of the batch marginal covariance and mean equal to the batch
/// solution.
pub fn marginalization(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let states = rng.random_range(2..=5usize);
        let dim = 2 * states;
        let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
        let unit = |i: usize, s: f64| {
            let mut a = DVector::zeros(dim);
            a[i] = s;
            a
        };
        for c in 0..2 {
            rows.push((
                unit(c, 1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
            ));
        }
        for k in 1..states {
            for c in 0..2 {
                let mut a = unit(2 * k + c, 1.0);
                a[2 * (k - 1) + c] = -1.0;
                rows.push((a, rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0)));
            }
        }
        for _ in 0..states {
            let i = rng.random_range(0..dim);
            rows.push((
                unit(i, rng.random_range(0.5..1.5)),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.5..2.0),
            ));
        }
        let mut h = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for (a, z, sigma) in &rows {
            let w = 1.0 / (sigma * sigma);
            h += a * a.transpose() * w;
            b -= a * (z * w);
        }
        let marg: Vec<usize> = {
            let k = rng.random_range(1..states);
            (0..2 * k).collect()
        };
        let keep: Vec<usize> = (0..dim).filter(|i| !marg.contains(i)).collect();
        let s = schur_complement(&h, &b, &marg);
        let Some(cov) = h.clone().try_inverse() else {
            return failed("marginalization", "schur_vs_batch", n, 1e-10);
        };
        let mean = -&cov * &b;
        let cov_rr = DMatrix::from_fn(keep.len(), keep.len(), |i, j| cov[(keep[i], keep[j])]);
        let Some(info_rr) = cov_rr.try_inverse() else {
            return failed("marginalization", "schur_vs_batch", n, 1e-10);
        };
        let Some(hs_inv) = s.h.clone().try_inverse() else {
            return failed("marginalization", "schur_vs_batch", n, 1e-10);
        };
        let mean_s = -hs_inv * &s.b;
        let scale = h.amax();
        worst = worst.max((&s.h - info_rr).amax() / scale);
        for (i, &k) in keep.iter().enumerate() {
            worst = worst.max((mean_s[i] - mean[k]).abs());
        }
        if s.regularized {
            worst = f64::INFINITY;
        }
    }
    Check {
        suite: "marginalization",
        name: "schur_vs_batch",
        instances: n,
        max_error: worst,
        tolerance: 1e-10,
    }
}

/// `ε = 1` must be a pure change of frame (`J_θ Rᵀ`), and `ε = 0` must
/// remove the world x/y columns.
pub fn rotation_constraint(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let q = exp_so3(&rv(&mut rng, 3.0));
        let j: RowVector3<f64> = rv(&mut rng, 2.0).transpose();
        let r_t = q.to_rotation_matrix().into_inner().transpose();
        let (Ok(one), Ok(zero)) = (
            RotationConstraint::new([1.0, 1.0], q),
            RotationConstraint::new([0.0, 0.0], q),
        ) else {
            return failed("constraint", "epsilon_limits", n, 1e-12);
        };
        worst = worst.max((constrain_jacobian(&j, &one) - j * r_t).amax());
        let z = constrain_jacobian(&j, &zero);
        worst = worst
            .max(z[0].abs())
            .max(z[1].abs())
            .max((z[2] - (j * r_t)[2]).abs());
    }
    Check {
        suite: "constraint",
        name: "epsilon_limits",
        instances: n,
        max_error: worst,
        tolerance: 1e-12,
    }
}

/// Every suite with its default instance counts.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        imu_jacobians(seed, 100),
        lidar_jacobians(seed.wrapping_add(1), 100),
        map_jacobians(seed.wrapping_add(2), 100),
        propagate_vs_preintegrate(seed.wrapping_add(3), 50),
        split_and_chain(seed.wrapping_add(4), 50),
        bias_correction(seed.wrapping_add(5), 50),
        marginalization(seed.wrapping_add(6), 200),
        rotation_constraint(seed.wrapping_add(7), 100),
    ]
}
