use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use lio_core::config::PipelineConfig;
use lio_core::estimator::BootstrapMode;
use lio_core::eval::{compute_rmse, emit_plots, evaluate, StageTimings};
use lio_core::io::{read_text, read_tum};
use lio_core::pipeline::run_dataset;
use lio_core::sim::{generate, Scene, TrajectoryPreset};
use lio_core::{selftest, Error, Pose, Result};

#[derive(Parser)]
#[command(name = "lio", version, about = "Lidar-inertial odometry and mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset (IMU CSV, sweep PLYs, ground truth).
    Simulate(SimulateArgs),
    /// Run odometry and mapping over a dataset directory.
    Run(RunArgs),
    /// Align an estimated trajectory to ground truth and report RMSE.
    Eval(EvalArgs),
    /// Run the built-in oracle suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration (defaults when no file is given).
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory to create.
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// room, corridor or outdoor-blocks.
    #[arg(long, value_parser = kebab::<Scene>)]
    scene: Option<Scene>,
    /// static, constant-twist, circle, room-slow, room-medium, room-fast,
    /// corridor or outdoor.
    #[arg(long, value_parser = kebab::<TrajectoryPreset>)]
    trajectory: Option<TrajectoryPreset>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Realistic IMU and range noise.
    #[arg(long)]
    noisy: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory.
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Seed for the synthesized dataset recorded in the config; the
    /// pipeline itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_deskew: bool,
    #[arg(long)]
    no_extrinsic_estimation: bool,
    #[arg(long)]
    odometry_only: bool,
    /// ground-truth or scan-matching.
    #[arg(long, value_parser = kebab::<BootstrapMode>)]
    bootstrap: Option<BootstrapMode>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    groundtruth: PathBuf,
    /// Align on the first N matched poses only.
    #[arg(long, conflicts_with = "no_align")]
    align_first: Option<usize>,
    /// Score the trajectories in their own frames, without alignment.
    #[arg(long)]
    no_align: bool,
    /// Largest timestamp difference for a match, seconds.
    #[arg(long, default_value_t = 0.05)]
    max_dt: f64,
    /// timings.json written by `lio run`, attached to the report.
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Directory for errors.csv and trajectory.csv.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Data(e.to_string()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut sim = cfg.sim.clone();
    if a.noisy {
        sim = sim.with_realistic_noise();
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(s) = a.scene {
        sim.scene = s;
    }
    if let Some(t) = a.trajectory {
        sim.trajectory = t;
    }
    if let Some(d) = a.duration {
        sim.duration = d;
    }
    let ds = generate(&sim)?;
    ds.write(&a.output_dir)?;
    println!(
        "wrote {} sweeps and {} IMU samples to {}",
        ds.sweeps.len(),
        ds.imu.samples.len(),
        a.output_dir.display()
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.sim.seed = s;
    }
    if a.no_deskew {
        cfg.estimator.deskew = false;
    }
    if a.no_extrinsic_estimation {
        cfg.estimator.estimate_extrinsic = false;
    }
    if a.odometry_only {
        cfg.mapper.enabled = false;
    }
    if let Some(m) = a.bootstrap {
        cfg.estimator.bootstrap.mode = m;
    }
    let out = run_dataset(&cfg, &a.dataset, a.output_dir.as_deref())?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let summary = serde_json::json!({
        "sweeps": out.odometry.len(),
        "mapped": out.mapped.len(),
        "map_points": out.map_points.len(),
        "skipped": out.skipped,
        "timings": out.timings,
    });
    println!("{}", to_json(&summary)?);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let est = read_tum(&a.estimate)?;
    let gt = read_tum(&a.groundtruth)?;
    let mut report = if a.no_align {
        compute_rmse(&est, &gt, &Pose::identity(), a.max_dt)?
    } else {
        evaluate(&est, &gt, a.align_first, a.max_dt)?
    };
    if let Some(p) = &a.timings {
        let t: StageTimings = serde_json::from_str(&read_text(p)?)
            .map_err(|e| Error::parse(p, e.line(), e.to_string()))?;
        report.timings = Some(t);
    }
    if let Some(dir) = &a.output_dir {
        emit_plots(&report, dir)?;
    }
    let summary = serde_json::json!({
        "matched": report.series.len(),
        "translation_rmse": report.translation_rmse,
        "rotation_rmse": report.rotation_rmse,
        "alignment": report.alignment,
        "timings": report.timings,
    });
    println!("{}", to_json(&summary)?);
    Ok(())
}

fn run_selftest(seed: u64) -> Result<bool> {
    let checks = selftest::run_all(seed);
    for c in &checks {
        println!(
            "{} {}/{} ({} instances): max error {:.3e} (tol {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.instances,
            c.max_error,
            c.tolerance
        );
    }
    Ok(checks.iter().all(|c| c.passed()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Run(a) => run(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Selftest { seed } => run_selftest(seed),
        Command::Config { config } => load_config(config.as_deref())
            .and_then(|c| c.to_toml())
            .map(|s| {
                print!("{s}");
                true
            }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[selftest]: one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
