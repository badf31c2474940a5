use lio_core::geometry::{angle_between, exp_so3, Quat, Vec3};
use lio_core::imu::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

#[test]
fn propagate_matches_preintegrate_then_apply() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = ImuNoiseModel::default();
    for _ in 0..50 {
        let s = random_stream(&mut rng, 81);
        let x0 = random_state(&mut rng);
        let direct = propagate(&x0, &s, &noise).unwrap();
        let z = preintegrate(&s, &x0.ba, &x0.bg, &noise).unwrap();
        let via = apply_delta(&x0, &correct_bias(&z, &x0.ba, &x0.bg), z.dt, &noise.gravity);
        assert!((direct.p - via.p).norm() < 1e-9);
        assert!((direct.v - via.v).norm() < 1e-9);
        assert!(angle_between(&direct.q, &via.q) < 1e-9);
        let r = imu_residual(&x0, &direct, &z, &noise.gravity);
        assert!(r.residual.norm() < 1e-8);
    }
}

#[test]
fn split_and_chain_matches_single_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = ImuNoiseModel::default();
    for _ in 0..50 {
        let s = random_stream(&mut rng, 81);
        let k = rng.random_range(1..80);
        let b = (rv(&mut rng, 0.05), rv(&mut rng, 0.01));
        let full = preintegrate(&s, &b.0, &b.1, &noise).unwrap();
        let a = preintegrate(&s[..=k], &b.0, &b.1, &noise).unwrap();
        let c = preintegrate(&s[k..], &b.0, &b.1, &noise).unwrap();
        let (dp, dv, dq, dt) = a.chain(&c);
        assert!((dp - full.delta_p).norm() < 1e-9);
        assert!((dv - full.delta_v).norm() < 1e-9);
        assert!(angle_between(&dq, &full.delta_q) < 1e-9);
        assert!((dt - full.dt).abs() < 1e-9);
    }
}

#[test]
fn bias_correction_matches_reintegration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = ImuNoiseModel::default();
    for _ in 0..50 {
        let s = random_stream(&mut rng, 41);
        let z = preintegrate(&s, &Vec3::zeros(), &Vec3::zeros(), &noise).unwrap();
        let dba = rv(&mut rng, 1e-3);
        let dbg = rv(&mut rng, 1e-3);
        let c = correct_bias(&z, &dba, &dbg);
        let re = z.repropagate(&dba, &dbg);
        assert!((c.delta_p - re.delta_p).norm() < 1e-6);
        assert!((c.delta_v - re.delta_v).norm() < 1e-6);
        assert!(angle_between(&c.delta_q, &re.delta_q) < 1e-6);
    }
}

#[test]
fn residual_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = ImuNoiseModel::default();
    let h = 1e-6;
    for _ in 0..100 {
        let s = random_stream(&mut rng, 41);
        let xi = random_state(&mut rng);
        let z = preintegrate(
            &s,
            &(xi.ba + rv(&mut rng, 0.01)),
            &(xi.bg + rv(&mut rng, 0.01)),
            &noise,
        )
        .unwrap();
        let mut xj = propagate(&xi, &s, &noise).unwrap();
        xj = xj.oplus(&(Vec15::from_fn(|_, _| rng.random_range(-0.1..0.1))));
        let r = imu_residual(&xi, &xj, &z, &noise.gravity);
        for k in 0..15 {
            let e = Vec15::from_fn(|i, _| if i == k { h } else { 0.0 });
            let fd_i = (imu_residual(&xi.oplus(&e), &xj, &z, &noise.gravity).residual
                - imu_residual(&xi.oplus(&-e), &xj, &z, &noise.gravity).residual)
                / (2.0 * h);
            let fd_j = (imu_residual(&xi, &xj.oplus(&e), &z, &noise.gravity).residual
                - imu_residual(&xi, &xj.oplus(&-e), &z, &noise.gravity).residual)
                / (2.0 * h);
            let ei = (fd_i - r.jac_i.column(k)).amax();
            let ej = (fd_j - r.jac_j.column(k)).amax();
            assert!(ei < 1e-4 && ej < 1e-4, "col {k}: {ei} {ej}");
        }
    }
}

#[test]
fn position_residual_directional_derivative() {
    let noise = ImuNoiseModel::default();
    let s: Vec<_> = (0..41)
        .map(|k| {
            ImuSample::new(
                k as f64 * 0.0025,
                Vec3::new(0.2, 0.0, 9.81),
                Vec3::new(0.0, 0.0, 0.3),
            )
        })
        .collect();
    let xi = ImuState {
        q: Quat::from_euler_angles(0.1, 0.2, 0.3),
        ..Default::default()
    };
    let z = preintegrate(&s, &Vec3::zeros(), &Vec3::zeros(), &noise).unwrap();
    let xj = propagate(&xi, &s, &noise).unwrap();
    let eps = 1e-7;
    let mut xj2 = xj;
    xj2.p.x += eps;
    let d = imu_residual(&xi, &xj2, &z, &noise.gravity).residual
        - imu_residual(&xi, &xj, &z, &noise.gravity).residual;
    let expected = xi.q.inverse() * Vec3::new(eps, 0.0, 0.0);
    assert!((d.fixed_rows::<3>(P) - expected).norm() < 1e-12);
}

/// Monte Carlo check that the propagated covariance matches the scatter of
/// deltas integrated from noisy copies of one stream: the mean Mahalanobis
/// distance over `(δp, δv, δθ)` is close to its dimension.
#[test]
fn covariance_is_consistent_with_sampled_noise() {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = ImuNoiseModel {
        acc_noise: 0.02,
        gyro_noise: 0.005,
        ..Default::default()
    };
    let clean = random_stream(&mut rng, 41);
    let dt = clean[1].t - clean[0].t;
    let truth = preintegrate(&clean, &Vec3::zeros(), &Vec3::zeros(), &noise).unwrap();
    let cov = truth.covariance.fixed_view::<9, 9>(0, 0).into_owned();
    let info = cov.try_inverse().unwrap();
    let trials = 2000;
    let mut sum = 0.0;
    for _ in 0..trials {
        let mut draw = |s: f64| {
            let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            Vec3::from(n) * (s / dt.sqrt())
        };
        let noisy: Vec<ImuSample> = clean
            .iter()
            .map(|s| {
                ImuSample::new(
                    s.t,
                    s.acc + draw(noise.acc_noise),
                    s.gyro + draw(noise.gyro_noise),
                )
            })
            .collect();
        let z = preintegrate(&noisy, &Vec3::zeros(), &Vec3::zeros(), &noise).unwrap();
        let mut e = nalgebra::SVector::<f64, 9>::zeros();
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(z.delta_p - truth.delta_p));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&(z.delta_v - truth.delta_v));
        e.fixed_rows_mut::<3>(6)
            .copy_from(&lio_core::geometry::minus_body(&truth.delta_q, &z.delta_q));
        sum += (e.transpose() * info * e)[0];
    }
    let mean = sum / trials as f64;
    // Standard error of the mean of a 9-dof chi-square over 2000 draws is
    // about 0.095.
    assert!((mean - 9.0).abs() < 0.6, "mean chi-square {mean}");
}
