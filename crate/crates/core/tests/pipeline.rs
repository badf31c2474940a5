use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lio_core::config::PipelineConfig;
use lio_core::estimator::BootstrapMode;
use lio_core::eval::{compute_rmse, read_plots};
use lio_core::io::{format_imu_csv, load_dataset, read_tum};
use lio_core::pipeline::{run_dataset, run_pipeline};
use lio_core::sim::{generate, SimConfig, TrajectoryPreset};

fn lio(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lio"))
        .args(args)
        .output()
        .expect("spawn lio")
}

fn short_room(dir: &Path, duration: f64) {
    let sim = SimConfig {
        trajectory: TrajectoryPreset::RoomSlow,
        duration,
        seed: 3,
        ..Default::default()
    }
    .with_realistic_noise();
    generate(&sim).unwrap().write(dir).unwrap();
}

#[test]
fn empty_dataset_is_rejected_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(data.join("sweeps")).unwrap();
    std::fs::write(data.join("imu.csv"), format_imu_csv(&[])).unwrap();
    let out = dir.path().join("out");
    let err = run_dataset(&PipelineConfig::default(), &data, Some(&out)).unwrap_err();
    assert_eq!(err.category(), "data");
    assert!(!out.exists());

    let o = lio(&[
        "run",
        data.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(err.exit_code()));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[data]"));
    assert!(!out.exists());
}

#[test]
fn missing_dataset_is_an_io_error() {
    let o = lio(&["run", "/nonexistent/lio-dataset"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[io]"));
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[estimator]\nwindow_size = 0\n").unwrap();
    let o = lio(&["config", "--config", cfg.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error["));
}

#[test]
fn printed_config_loads_back() {
    let o = lio(&["config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        PipelineConfig::from_toml(&text).unwrap(),
        PipelineConfig::default()
    );
}

#[test]
fn stage_timings_account_for_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    short_room(&data, 4.0);
    let t = Instant::now();
    let out = run_dataset(
        &PipelineConfig::default(),
        &data,
        Some(&dir.path().join("out")),
    )
    .unwrap();
    let wall = t.elapsed().as_secs_f64() * 1e3;
    let tm = out.timings;
    let stages = tm.stage_sum_ms();
    assert!(stages <= tm.total_ms + 1e-9);
    assert!(
        (stages - wall).abs() <= 0.1 * wall,
        "stages {stages} ms, wall {wall} ms"
    );
    assert!(tm.odometry_mean_ms > 0.0 && tm.prediction_per_sample_ms > 0.0);
}

#[test]
fn dropped_sweep_raises_a_gap_warning() {
    let sim = SimConfig {
        trajectory: TrajectoryPreset::RoomSlow,
        duration: 3.0,
        seed: 5,
        ..Default::default()
    };
    let mut ds = generate(&sim).unwrap().to_dataset();
    ds.sweeps.remove(12);
    let out = run_pipeline(&PipelineConfig::default(), &ds).unwrap();
    assert!(
        out.warnings.iter().any(|w| w.starts_with("sweep gap")),
        "{:?}",
        out.warnings
    );
    assert_eq!(out.odometry.len(), ds.sweeps.len());
}

#[test]
fn scan_matching_bootstrap_tracks_the_truth() {
    let sim = SimConfig {
        trajectory: TrajectoryPreset::RoomSlow,
        duration: 6.0,
        seed: 8,
        ..Default::default()
    }
    .with_realistic_noise();
    let ds = generate(&sim).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.estimator.bootstrap.mode = BootstrapMode::ScanMatching;
    let out = run_pipeline(&cfg, &ds.to_dataset()).unwrap();
    // The bootstrap fixes the gauge at its own origin; compare in the frame
    // that maps its first pose onto the truth.
    let gauge = ds.gt_lidar[0].pose.compose(&out.odometry[0].pose.inverse());
    let rep = compute_rmse(&out.odometry, &ds.gt_lidar, &gauge, 0.05).unwrap();
    assert!(
        rep.translation_rmse < 0.05,
        "translation rmse {}",
        rep.translation_rmse
    );
    assert!(
        rep.rotation_rmse < 0.02,
        "rotation rmse {}",
        rep.rotation_rmse
    );
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let plots = dir.path().join("plots");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let o = lio(&[
        "simulate",
        "--output-dir",
        &s(&data),
        "--trajectory",
        "room-slow",
        "--duration",
        "3",
        "--noisy",
        "--seed",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = load_dataset(&data).unwrap();
    assert_eq!(ds.sweeps.len(), 30);

    let o = lio(&["run", &s(&data), "--output-dir", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["sweeps"], 30);
    for f in [
        "odometry.tum",
        "mapped.tum",
        "diagnostics.jsonl",
        "map.ply",
        "timings.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(read_tum(&out.join("mapped.tum")).unwrap().len(), 30);

    let o = lio(&[
        "eval",
        "--estimate",
        &s(&out.join("mapped.tum")),
        "--groundtruth",
        &s(&data.join("groundtruth.tum")),
        "--timings",
        &s(&out.join("timings.json")),
        "--output-dir",
        &s(&plots),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["matched"], 30);
    assert!(rep["translation_rmse"].as_f64().unwrap() < 0.1);
    assert!(rep["timings"]["total_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(read_plots(&plots).unwrap().len(), 30);
}

#[test]
fn odometry_only_writes_no_mapped_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    short_room(&data, 2.0);
    let out = dir.path().join("out");
    let o = lio(&[
        "run",
        data.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--odometry-only",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("odometry.tum").is_file());
    assert!(!out.join("mapped.tum").exists());
}
