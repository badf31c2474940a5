use lio_core::sim::{generate, SimConfig, SimDataset, TrajectoryPreset};

/// Fraction of points within `tol` of their source plane when each point is
/// placed with `pose_of(sweep, point)`.
fn fraction_on_planes(
    ds: &SimDataset,
    tol: f64,
    pose_of: impl Fn(usize, usize) -> lio_core::Pose,
) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, sw) in ds.sweeps.iter().enumerate() {
        for (i, p) in sw.sweep.points.iter().enumerate() {
            let w = pose_of(s, i).transform_point(&p.x);
            total += 1;
            if ds.world.patches[sw.patch[i]].plane_distance(&w).abs() <= tol {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

#[test]
fn true_motion_puts_points_on_their_planes() {
    let cfg = SimConfig {
        trajectory: TrajectoryPreset::RoomFast,
        duration: 2.0,
        seed: 2,
        ..Default::default()
    }
    .with_realistic_noise();
    let ds = generate(&cfg).unwrap();
    let tol = 3.0 * cfg.lidar.range_noise;
    let deskewed = fraction_on_planes(&ds, tol, |s, i| ds.sweeps[s].point_pose[i]);
    assert!(deskewed >= 0.99, "{deskewed}");
    // Treating every point as captured at the sweep end smears the walls.
    let raw = fraction_on_planes(&ds, tol, |s, _| ds.gt_lidar[s].pose);
    assert!(raw < deskewed - 0.1, "raw {raw}, de-skewed {deskewed}");
}

#[test]
fn noiseless_points_lie_exactly_on_planes() {
    let cfg = SimConfig {
        trajectory: TrajectoryPreset::RoomMedium,
        duration: 1.0,
        seed: 1,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    assert_eq!(
        fraction_on_planes(&ds, 1e-9, |s, i| ds.sweeps[s].point_pose[i]),
        1.0
    );
}

#[test]
fn sweeps_tile_the_run_and_end_at_ground_truth() {
    let cfg = SimConfig {
        trajectory: TrajectoryPreset::Circle,
        duration: 3.0,
        seed: 3,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    assert_eq!(ds.sweeps.len(), 30);
    for (k, w) in ds.sweeps.windows(2).enumerate() {
        assert_eq!(w[0].sweep.t_end, w[1].sweep.t_start, "sweep {k}");
    }
    for (sw, gt) in ds.sweeps.iter().zip(&ds.gt_lidar) {
        assert_eq!(sw.sweep.t_end, gt.t);
        let last = sw
            .sweep
            .points
            .iter()
            .rposition(|p| p.t == sw.sweep.t_end)
            .expect("point at sweep end");
        let d = sw.point_pose[last].translation - gt.pose.translation;
        assert!(d.norm() < 1e-12);
        assert!(sw
            .sweep
            .points
            .iter()
            .all(|p| p.t > sw.sweep.t_start && p.t <= sw.sweep.t_end));
    }
}
