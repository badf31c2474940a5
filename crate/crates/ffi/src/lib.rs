//! C interface to `lio-core`.
//!
//! Objects cross the boundary as opaque handles created and released by
//! matching `*_new`/`*_free` functions. Every fallible call returns a
//! [`LioStatus`]; the message of the last failure on the calling thread is
//! available from [`lio_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lio_core::config::PipelineConfig;
use lio_core::eval::evaluate;
use lio_core::io::{read_tum, TimedPose};
use lio_core::pipeline::{run_dataset, PipelineOutput};
use lio_core::{selftest, sim, Error};

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LioStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Data = 6,
    Domain = 7,
    Numerical = 8,
    Panic = 9,
}

/// Which trajectory of a run to read.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LioTrajectory {
    Odometry = 0,
    Mapped = 1,
}

/// A timestamped pose; quaternion in `x y z w` order.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LioPose {
    pub t: f64,
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

/// Pipeline configuration handle.
pub struct LioConfig(PipelineConfig);

/// Output of one pipeline run.
pub struct LioRun(PipelineOutput);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LioStatus {
    match e {
        Error::Config(_) => LioStatus::Config,
        Error::Io { .. } => LioStatus::Io,
        Error::Parse { .. } => LioStatus::Parse,
        Error::Data(_) => LioStatus::Data,
        Error::Domain(_) => LioStatus::Domain,
        Error::Numerical(_) => LioStatus::Numerical,
    }
}

fn fail(status: LioStatus, msg: &str) -> LioStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), LioStatus>) -> LioStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LioStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(LioStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: lio_core::Result<T>) -> Result<T, LioStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn string_arg(p: *const c_char, name: &str) -> Result<String, LioStatus> {
    if p.is_null() {
        return Err(fail(LioStatus::NullPointer, &format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| {
        fail(
            LioStatus::InvalidArgument,
            &format!("{name} is not valid UTF-8"),
        )
    })
}

/// Message for the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lio_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default configuration. Release with [`lio_config_free`].
#[no_mangle]
pub extern "C" fn lio_config_new() -> *mut LioConfig {
    Box::into_raw(Box::new(LioConfig(PipelineConfig::default())))
}

/// Parses TOML text into a new configuration handle.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lio_config_from_toml(
    toml: *const c_char,
    out: *mut *mut LioConfig,
) -> LioStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LioStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let text = string_arg(toml, "toml")?;
        let cfg = lift(PipelineConfig::from_toml(&text))?;
        *out = Box::into_raw(Box::new(LioConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn lio_config_free(cfg: *mut LioConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Toggles the ablation switches: de-skewing, online extrinsic estimation
/// and the mapping stage.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lio_config_set_modes(
    cfg: *mut LioConfig,
    deskew: bool,
    estimate_extrinsic: bool,
    mapping: bool,
) -> LioStatus {
    guard(|| {
        let c = cfg
            .as_mut()
            .ok_or_else(|| fail(LioStatus::NullPointer, "cfg is null"))?;
        c.0.estimator.deskew = deskew;
        c.0.estimator.estimate_extrinsic = estimate_extrinsic;
        c.0.mapper.enabled = mapping;
        Ok(())
    })
}

/// Synthesizes the dataset described by the configuration's `sim` section
/// into `dir`, overriding its seed.
///
/// # Safety
/// `cfg` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn lio_simulate(
    cfg: *const LioConfig,
    dir: *const c_char,
    seed: u64,
) -> LioStatus {
    guard(|| {
        let c = cfg
            .as_ref()
            .ok_or_else(|| fail(LioStatus::NullPointer, "cfg is null"))?;
        let dir = PathBuf::from(string_arg(dir, "dir")?);
        let mut s = c.0.sim.clone();
        s.seed = seed;
        let ds = lift(sim::generate(&s))?;
        lift(ds.write(&dir))
    })
}

/// Runs the pipeline on a dataset directory. When `out_dir` is non-null the
/// output files are written there. Release the result with
/// [`lio_run_free`].
///
/// # Safety
/// `cfg` must be a live handle, `dataset` a NUL-terminated path, `out_dir`
/// null or a NUL-terminated path, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lio_run(
    cfg: *const LioConfig,
    dataset: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut LioRun,
) -> LioStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LioStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let c = cfg
            .as_ref()
            .ok_or_else(|| fail(LioStatus::NullPointer, "cfg is null"))?;
        let dataset = PathBuf::from(string_arg(dataset, "dataset")?);
        let out_dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(string_arg(out_dir, "out_dir")?))
        };
        let r = lift(run_dataset(&c.0, &dataset, out_dir.as_deref()))?;
        *out = Box::into_raw(Box::new(LioRun(r)));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`lio_run`] and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn lio_run_free(run: *mut LioRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

fn trajectory(run: &LioRun, which: LioTrajectory) -> &[TimedPose] {
    match which {
        LioTrajectory::Odometry => &run.0.odometry,
        LioTrajectory::Mapped => &run.0.mapped,
    }
}

/// Number of poses in a trajectory; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lio_run_pose_count(run: *const LioRun, which: LioTrajectory) -> usize {
    run.as_ref().map_or(0, |r| trajectory(r, which).len())
}

/// Copies pose `index` of a trajectory (lidar frame in world) into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lio_run_pose(
    run: *const LioRun,
    which: LioTrajectory,
    index: usize,
    out: *mut LioPose,
) -> LioStatus {
    guard(|| {
        let r = run
            .as_ref()
            .ok_or_else(|| fail(LioStatus::NullPointer, "run is null"))?;
        let o = out
            .as_mut()
            .ok_or_else(|| fail(LioStatus::NullPointer, "out is null"))?;
        let traj = trajectory(r, which);
        let p = traj.get(index).ok_or_else(|| {
            fail(
                LioStatus::InvalidArgument,
                &format!("index {index} out of range for {} poses", traj.len()),
            )
        })?;
        *o = LioPose {
            t: p.t,
            position: p.pose.translation.into(),
            quaternion: p.pose.quaternion_xyzw(),
        };
        Ok(())
    })
}

/// Number of warnings the run produced.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lio_run_warning_count(run: *const LioRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.warnings.len())
}

/// Aligns the TUM trajectory at `estimate` to the one at `groundtruth` and
/// writes the translation (m) and rotation (rad) RMSE.
///
/// # Safety
/// Paths must be NUL-terminated strings; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lio_eval(
    estimate: *const c_char,
    groundtruth: *const c_char,
    max_dt: f64,
    translation_rmse: *mut f64,
    rotation_rmse: *mut f64,
) -> LioStatus {
    guard(|| {
        if translation_rmse.is_null() || rotation_rmse.is_null() {
            return Err(fail(LioStatus::NullPointer, "output pointer is null"));
        }
        let est = lift(read_tum(&PathBuf::from(string_arg(estimate, "estimate")?)))?;
        let gt = lift(read_tum(&PathBuf::from(string_arg(
            groundtruth,
            "groundtruth",
        )?)))?;
        let rep = lift(evaluate(&est, &gt, None, max_dt))?;
        *translation_rmse = rep.translation_rmse;
        *rotation_rmse = rep.rotation_rmse;
        Ok(())
    })
}

/// Runs the oracle suites; writes how many checks ran and passed.
///
/// # Safety
/// Outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lio_selftest(
    seed: u64,
    total: *mut usize,
    passed: *mut usize,
) -> LioStatus {
    guard(|| {
        if total.is_null() || passed.is_null() {
            return Err(fail(LioStatus::NullPointer, "output pointer is null"));
        }
        let checks = selftest::run_all(seed);
        *total = checks.len();
        *passed = checks.iter().filter(|c| c.passed()).count();
        Ok(())
    })
}
