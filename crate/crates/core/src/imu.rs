//! IMU propagation and pre-integration.
//!
//! Both the world-frame propagation and the pre-integration use the same
//! midpoint scheme over each sample interval, so applying a pre-integrated
//! delta to a start state reproduces direct propagation to round-off.
//!
//! Error state ordering is `[δp, δv, δθ, δb_a, δb_g]`, with orientation
//! errors in body (right) form, `q ⊗ Exp(δθ)`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{
    exp_so3, log_so3, minus_body, plus_body, right_jacobian, right_jacobian_inv, skew, Mat3, Pose,
    Quat, Vec3,
};

pub type Vec15 = SVector<f64, 15>;
pub type Mat15 = SMatrix<f64, 15, 15>;

pub const P: usize = 0;
pub const V: usize = 3;
pub const TH: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

/// Time tolerance used when matching sample stamps to interval boundaries.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// Specific force, m/s².
    pub acc: Vec3,
    /// Angular rate, rad/s.
    pub gyro: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, acc: Vec3, gyro: Vec3) -> Self {
        Self { t, acc, gyro }
    }

    fn lerp(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let s = if b.t > a.t {
            (t - a.t) / (b.t - a.t)
        } else {
            0.0
        };
        ImuSample::new(
            t,
            a.acc + (b.acc - a.acc) * s,
            a.gyro + (b.gyro - a.gyro) * s,
        )
    }
}

/// Body state in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuState {
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quat,
    pub ba: Vec3,
    pub bg: Vec3,
}

impl Default for ImuState {
    fn default() -> Self {
        Self {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            q: Quat::identity(),
            ba: Vec3::zeros(),
            bg: Vec3::zeros(),
        }
    }
}

impl ImuState {
    pub fn from_pose(pose: &Pose, v: Vec3) -> Self {
        Self {
            p: pose.translation,
            v,
            q: pose.rotation,
            ..Default::default()
        }
    }

    /// `T^W_B`.
    pub fn pose(&self) -> Pose {
        Pose::new(self.q, self.p)
    }

    /// Applies a tangent increment (body-frame rotation).
    pub fn oplus(&self, d: &Vec15) -> ImuState {
        ImuState {
            p: self.p + d.fixed_rows::<3>(P),
            v: self.v + d.fixed_rows::<3>(V),
            q: plus_body(&self.q, &d.fixed_rows::<3>(TH).into_owned()),
            ba: self.ba + d.fixed_rows::<3>(BA),
            bg: self.bg + d.fixed_rows::<3>(BG),
        }
    }

    /// Tangent difference with `self.oplus(self.ominus(other)) == other`.
    pub fn ominus(&self, other: &ImuState) -> Vec15 {
        let mut d = Vec15::zeros();
        d.fixed_rows_mut::<3>(P).copy_from(&(other.p - self.p));
        d.fixed_rows_mut::<3>(V).copy_from(&(other.v - self.v));
        d.fixed_rows_mut::<3>(TH)
            .copy_from(&minus_body(&self.q, &other.q));
        d.fixed_rows_mut::<3>(BA).copy_from(&(other.ba - self.ba));
        d.fixed_rows_mut::<3>(BG).copy_from(&(other.bg - self.bg));
        d
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(self.v.iter())
            .chain(self.ba.iter())
            .chain(self.bg.iter())
            .all(|x| x.is_finite())
            && self.q.coords.iter().all(|x| x.is_finite())
    }
}

/// Continuous-time noise densities and the fixed gravity vector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoiseModel {
    /// Accelerometer white noise, m/s²/√Hz.
    pub acc_noise: f64,
    /// Gyroscope white noise, rad/s/√Hz.
    pub gyro_noise: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub acc_walk: f64,
    /// Gyroscope bias random walk, rad/s²/√Hz.
    pub gyro_walk: f64,
    /// Gravity in the world frame, m/s².
    pub gravity: Vec3,
}

impl Default for ImuNoiseModel {
    fn default() -> Self {
        Self {
            acc_noise: 6.0e-4,
            gyro_noise: 1.75e-4,
            acc_walk: 1.0e-4,
            gyro_walk: 1.0e-5,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

impl ImuNoiseModel {
    pub fn validate(&self) -> Result<()> {
        let sig = [
            self.acc_noise,
            self.gyro_noise,
            self.acc_walk,
            self.gyro_walk,
        ];
        if sig.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "IMU noise densities must be positive, got {sig:?}"
            )));
        }
        let g = self.gravity.norm();
        if !(9.0..=10.5).contains(&g) {
            return Err(Error::Config(format!(
                "gravity magnitude {g} outside [9.0, 10.5]"
            )));
        }
        Ok(())
    }
}

fn check_stream(samples: &[ImuSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::domain("empty IMU sample stream"));
    }
    for w in samples.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::domain(format!(
                "IMU timestamps not strictly increasing ({} then {})",
                w[0].t, w[1].t
            )));
        }
    }
    Ok(())
}

/// Rotation increment and averaged specific force (in the frame `q0` maps
/// into) for one midpoint interval.
struct MidpointStep {
    dt: f64,
    q1: Quat,
    a_mid: Vec3,
    /// Bias-corrected mean angular rate.
    w: Vec3,
    a0: Vec3,
    a1: Vec3,
}

fn midpoint_step(q0: &Quat, s0: &ImuSample, s1: &ImuSample, ba: &Vec3, bg: &Vec3) -> MidpointStep {
    let dt = s1.t - s0.t;
    let w = 0.5 * (s0.gyro + s1.gyro) - bg;
    let q1 = plus_body(q0, &(w * dt));
    let a0 = s0.acc - ba;
    let a1 = s1.acc - ba;
    let a_mid = 0.5 * (q0 * a0 + q1 * a1);
    MidpointStep {
        dt,
        q1,
        a_mid,
        w,
        a0,
        a1,
    }
}

/// Propagates `x_i` through the sample stream with biases held fixed.
pub fn propagate(x_i: &ImuState, samples: &[ImuSample], noise: &ImuNoiseModel) -> Result<ImuState> {
    check_stream(samples)?;
    let g = noise.gravity;
    let mut x = *x_i;
    for pair in samples.windows(2) {
        let step = midpoint_step(&x.q, &pair[0], &pair[1], &x_i.ba, &x_i.bg);
        let a = step.a_mid + g;
        x.p += x.v * step.dt + 0.5 * a * step.dt * step.dt;
        x.v += a * step.dt;
        x.q = step.q1;
    }
    Ok(x)
}

/// Relative motion between two timestamps, expressed in the first body frame.
#[derive(Debug, Clone)]
pub struct PreintegratedImu {
    pub delta_p: Vec3,
    pub delta_v: Vec3,
    pub delta_q: Quat,
    pub dt: f64,
    /// Covariance over `[δp, δv, δθ, δb_a, δb_g]`.
    pub covariance: Mat15,
    /// Rows `(p, v, θ)`, columns `(b_a, b_g)`.
    pub bias_jacobian: SMatrix<f64, 9, 6>,
    pub ba_lin: Vec3,
    pub bg_lin: Vec3,
    samples: Vec<ImuSample>,
    noise: ImuNoiseModel,
}

impl PreintegratedImu {
    pub fn dp_dba(&self) -> Mat3 {
        self.bias_jacobian.fixed_view::<3, 3>(P, 0).into_owned()
    }
    pub fn dp_dbg(&self) -> Mat3 {
        self.bias_jacobian.fixed_view::<3, 3>(P, 3).into_owned()
    }
    pub fn dv_dba(&self) -> Mat3 {
        self.bias_jacobian.fixed_view::<3, 3>(V, 0).into_owned()
    }
    pub fn dv_dbg(&self) -> Mat3 {
        self.bias_jacobian.fixed_view::<3, 3>(V, 3).into_owned()
    }
    /// Right-form: `Δq(b_g + δ) ≈ Δq ⊗ Exp(dq_dbg · δ)`.
    pub fn dq_dbg(&self) -> Mat3 {
        self.bias_jacobian.fixed_view::<3, 3>(TH, 3).into_owned()
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Re-runs the integration about new bias linearization points.
    pub fn repropagate(&self, ba: &Vec3, bg: &Vec3) -> PreintegratedImu {
        preintegrate(&self.samples, ba, bg, &self.noise).expect("stream validated at construction")
    }

    /// Upper-triangular factor `S` with `Sᵀ S = C⁻¹`.
    pub fn sqrt_information(&self) -> Result<Mat15> {
        let sym = 0.5 * (self.covariance + self.covariance.transpose());
        let chol = sym.cholesky().ok_or_else(|| {
            Error::Numerical("pre-integration covariance not positive definite".into())
        })?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&Mat15::identity())
            .ok_or_else(|| Error::Numerical("singular pre-integration covariance factor".into()))?;
        Ok(l_inv)
    }

    /// Concatenates the delta of `next` (which must start where this one ends).
    pub fn chain(&self, next: &PreintegratedImu) -> (Vec3, Vec3, Quat, f64) {
        let dp = self.delta_p + self.delta_v * next.dt + self.delta_q * next.delta_p;
        let dv = self.delta_v + self.delta_q * next.delta_v;
        let dq = plus_body(&self.delta_q, &log_so3(&next.delta_q));
        (dp, dv, dq, self.dt + next.dt)
    }
}

/// Pre-integrates a sample stream about the given bias linearization point.
pub fn preintegrate(
    samples: &[ImuSample],
    ba: &Vec3,
    bg: &Vec3,
    noise: &ImuNoiseModel,
) -> Result<PreintegratedImu> {
    check_stream(samples)?;
    let mut dp = Vec3::zeros();
    let mut dv = Vec3::zeros();
    let mut dq = Quat::identity();
    let mut cov = Mat15::zeros();
    let mut jac = SMatrix::<f64, 9, 6>::zeros();
    let mut total = 0.0;

    let var_a = noise.acc_noise * noise.acc_noise;
    let var_g = noise.gyro_noise * noise.gyro_noise;
    let var_ba = noise.acc_walk * noise.acc_walk;
    let var_bg = noise.gyro_walk * noise.gyro_walk;

    for pair in samples.windows(2) {
        let r0 = dq.to_rotation_matrix().into_inner();
        let step = midpoint_step(&dq, &pair[0], &pair[1], ba, bg);
        let dt = step.dt;
        let r1 = step.q1.to_rotation_matrix().into_inner();
        let phi = step.w * dt;
        let e_t = exp_so3(&phi).to_rotation_matrix().into_inner().transpose();
        let jr = right_jacobian(&phi);

        // d(a_mid)/d(δθ_k), d(a_mid)/d(δb_a), d(a_mid)/d(δb_g)
        let a_th = -0.5 * r0 * skew(&step.a0) - 0.5 * r1 * skew(&step.a1) * e_t;
        let a_ba = -0.5 * (r0 + r1);
        let a_bg = 0.5 * r1 * skew(&step.a1) * jr * dt;

        let mut f = Mat15::identity();
        f.fixed_view_mut::<3, 3>(P, V)
            .copy_from(&(Mat3::identity() * dt));
        f.fixed_view_mut::<3, 3>(P, TH)
            .copy_from(&(0.5 * dt * dt * a_th));
        f.fixed_view_mut::<3, 3>(P, BA)
            .copy_from(&(0.5 * dt * dt * a_ba));
        f.fixed_view_mut::<3, 3>(P, BG)
            .copy_from(&(0.5 * dt * dt * a_bg));
        f.fixed_view_mut::<3, 3>(V, TH).copy_from(&(dt * a_th));
        f.fixed_view_mut::<3, 3>(V, BA).copy_from(&(dt * a_ba));
        f.fixed_view_mut::<3, 3>(V, BG).copy_from(&(dt * a_bg));
        f.fixed_view_mut::<3, 3>(TH, TH).copy_from(&e_t);
        f.fixed_view_mut::<3, 3>(TH, BG).copy_from(&(-jr * dt));

        // Measurement noise enters exactly like a bias error over one interval.
        let g_a = f.fixed_view::<9, 3>(0, BA).into_owned();
        let g_g = f.fixed_view::<9, 3>(0, BG).into_owned();
        let mut q = Mat15::zeros();
        q.fixed_view_mut::<9, 9>(0, 0).copy_from(
            &(g_a * g_a.transpose() * (var_a / dt) + g_g * g_g.transpose() * (var_g / dt)),
        );
        q.fixed_view_mut::<3, 3>(BA, BA)
            .copy_from(&(Mat3::identity() * var_ba * dt));
        q.fixed_view_mut::<3, 3>(BG, BG)
            .copy_from(&(Mat3::identity() * var_bg * dt));
        cov = f * cov * f.transpose() + q;

        // Bias Jacobians: the bias columns of the accumulated transition.
        let f_nn = f.fixed_view::<9, 9>(0, 0).into_owned();
        let f_nb = f.fixed_view::<9, 6>(0, BA).into_owned();
        jac = f_nn * jac + f_nb;

        dp += dv * dt + 0.5 * step.a_mid * dt * dt;
        dv += step.a_mid * dt;
        dq = step.q1;
        total += dt;
    }

    Ok(PreintegratedImu {
        delta_p: dp,
        delta_v: dv,
        delta_q: dq,
        dt: total,
        covariance: 0.5 * (cov + cov.transpose()),
        bias_jacobian: jac,
        ba_lin: *ba,
        bg_lin: *bg,
        samples: samples.to_vec(),
        noise: *noise,
    })
}

/// Pre-integrated deltas after a first-order bias update.
#[derive(Debug, Clone, Copy)]
pub struct CorrectedDelta {
    pub delta_p: Vec3,
    pub delta_v: Vec3,
    pub delta_q: Quat,
}

pub fn correct_bias(z: &PreintegratedImu, ba: &Vec3, bg: &Vec3) -> CorrectedDelta {
    let dba = ba - z.ba_lin;
    let dbg = bg - z.bg_lin;
    CorrectedDelta {
        delta_p: z.delta_p + z.dp_dba() * dba + z.dp_dbg() * dbg,
        delta_v: z.delta_v + z.dv_dba() * dba + z.dv_dbg() * dbg,
        delta_q: plus_body(&z.delta_q, &(z.dq_dbg() * dbg)),
    }
}

/// Applies pre-integrated deltas to a start state.
pub fn apply_delta(x_i: &ImuState, d: &CorrectedDelta, dt: f64, gravity: &Vec3) -> ImuState {
    ImuState {
        p: x_i.p + x_i.v * dt + 0.5 * gravity * dt * dt + x_i.q * d.delta_p,
        v: x_i.v + gravity * dt + x_i.q * d.delta_v,
        q: plus_body(&x_i.q, &log_so3(&d.delta_q)),
        ba: x_i.ba,
        bg: x_i.bg,
    }
}

/// Unweighted 15-dim residual with Jacobians w.r.t. the tangents of both
/// states.
#[derive(Debug, Clone)]
pub struct ImuResidual {
    pub residual: Vec15,
    pub jac_i: Mat15,
    pub jac_j: Mat15,
}

pub fn imu_residual(
    x_i: &ImuState,
    x_j: &ImuState,
    z: &PreintegratedImu,
    gravity: &Vec3,
) -> ImuResidual {
    let dt = z.dt;
    let d = correct_bias(z, &x_i.ba, &x_i.bg);
    let ri_t = x_i.q.to_rotation_matrix().into_inner().transpose();
    let rj = x_j.q.to_rotation_matrix().into_inner();

    let w_p = x_j.p - x_i.p - x_i.v * dt - 0.5 * gravity * dt * dt;
    let w_v = x_j.v - x_i.v - gravity * dt;
    let e = d.delta_q.inverse() * x_i.q.inverse() * x_j.q;
    let r_th = log_so3(&e);

    let mut r = Vec15::zeros();
    r.fixed_rows_mut::<3>(P)
        .copy_from(&(ri_t * w_p - d.delta_p));
    r.fixed_rows_mut::<3>(V)
        .copy_from(&(ri_t * w_v - d.delta_v));
    r.fixed_rows_mut::<3>(TH).copy_from(&r_th);
    r.fixed_rows_mut::<3>(BA).copy_from(&(x_j.ba - x_i.ba));
    r.fixed_rows_mut::<3>(BG).copy_from(&(x_j.bg - x_i.bg));

    let jr_inv = right_jacobian_inv(&r_th);
    let phi = z.dq_dbg() * (x_i.bg - z.bg_lin);
    let re_t = e.to_rotation_matrix().into_inner().transpose();

    let mut ji = Mat15::zeros();
    ji.fixed_view_mut::<3, 3>(P, P).copy_from(&(-ri_t));
    ji.fixed_view_mut::<3, 3>(P, V).copy_from(&(-ri_t * dt));
    ji.fixed_view_mut::<3, 3>(P, TH)
        .copy_from(&skew(&(ri_t * w_p)));
    ji.fixed_view_mut::<3, 3>(P, BA).copy_from(&(-z.dp_dba()));
    ji.fixed_view_mut::<3, 3>(P, BG).copy_from(&(-z.dp_dbg()));
    ji.fixed_view_mut::<3, 3>(V, V).copy_from(&(-ri_t));
    ji.fixed_view_mut::<3, 3>(V, TH)
        .copy_from(&skew(&(ri_t * w_v)));
    ji.fixed_view_mut::<3, 3>(V, BA).copy_from(&(-z.dv_dba()));
    ji.fixed_view_mut::<3, 3>(V, BG).copy_from(&(-z.dv_dbg()));
    ji.fixed_view_mut::<3, 3>(TH, TH)
        .copy_from(&(-jr_inv * rj.transpose() * ri_t.transpose()));
    ji.fixed_view_mut::<3, 3>(TH, BG)
        .copy_from(&(-jr_inv * re_t * right_jacobian(&phi) * z.dq_dbg()));
    ji.fixed_view_mut::<3, 3>(BA, BA)
        .copy_from(&(-Mat3::identity()));
    ji.fixed_view_mut::<3, 3>(BG, BG)
        .copy_from(&(-Mat3::identity()));

    let mut jj = Mat15::zeros();
    jj.fixed_view_mut::<3, 3>(P, P).copy_from(&ri_t);
    jj.fixed_view_mut::<3, 3>(V, V).copy_from(&ri_t);
    jj.fixed_view_mut::<3, 3>(TH, TH).copy_from(&jr_inv);
    jj.fixed_view_mut::<3, 3>(BA, BA)
        .copy_from(&Mat3::identity());
    jj.fixed_view_mut::<3, 3>(BG, BG)
        .copy_from(&Mat3::identity());

    ImuResidual {
        residual: r,
        jac_i: ji,
        jac_j: jj,
    }
}

/// Samples covering `[t0, t1]`, with linearly interpolated end points when
/// the stream has no sample at a boundary. Outside the stream the nearest
/// sample is held.
pub fn imu_segment(stream: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    if stream.is_empty() {
        return Err(Error::Data("no IMU samples available".into()));
    }
    if !(t1 > t0) {
        return Err(Error::domain(format!("empty IMU interval [{t0}, {t1}]")));
    }
    let at = |t: f64| -> ImuSample {
        let idx = stream.partition_point(|s| s.t < t);
        if idx < stream.len() && (stream[idx].t - t).abs() <= TIME_EPS {
            return ImuSample { t, ..stream[idx] };
        }
        if idx > 0 && (stream[idx - 1].t - t).abs() <= TIME_EPS {
            return ImuSample {
                t,
                ..stream[idx - 1]
            };
        }
        if idx == 0 {
            ImuSample { t, ..stream[0] }
        } else if idx == stream.len() {
            ImuSample {
                t,
                ..stream[stream.len() - 1]
            }
        } else {
            ImuSample::lerp(&stream[idx - 1], &stream[idx], t)
        }
    };
    let mut out = vec![at(t0)];
    out.extend(
        stream
            .iter()
            .filter(|s| s.t > t0 + TIME_EPS && s.t < t1 - TIME_EPS)
            .copied(),
    );
    out.push(at(t1));
    Ok(out)
}
