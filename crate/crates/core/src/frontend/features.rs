use serde::{Deserialize, Serialize};

use super::{FeatureCloud, Sweep};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    /// Neighbours on each side used for the curvature score.
    pub half_window: usize,
    /// Equal-size azimuthal sectors per ring.
    pub sectors: usize,
    pub per_sector: usize,
    /// Points scoring above this are never planar features.
    pub planar_threshold: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Consecutive returns whose range differs by more than this fraction
    /// of the nearer range form an occlusion boundary.
    pub range_jump_ratio: f64,
    /// Reject points where the local scan line is within this cosine of
    /// the beam direction (surface nearly parallel to the beam).
    pub parallel_cos: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            half_window: 5,
            sectors: 6,
            per_sector: 4,
            planar_threshold: 0.02,
            min_range: 0.5,
            max_range: 80.0,
            range_jump_ratio: 0.1,
            parallel_cos: 0.95,
        }
    }
}

/// LOAM-style smoothness score `‖Σ_j (x_j − x_i)‖ / (|W| ‖x_i‖)` over the
/// `2·half_window` ring neighbours of `i`.
pub fn curvature(line: &[Vec3], i: usize, half_window: usize) -> f64 {
    let mut sum = Vec3::zeros();
    for j in i - half_window..=i + half_window {
        if j != i {
            sum += line[j] - line[i];
        }
    }
    sum.norm() / (2.0 * half_window as f64 * line[i].norm())
}

/// Selects the smoothest points of each ring sector.
///
/// Points next to an occlusion boundary, points on surfaces nearly parallel
/// to the beam, and points whose window straddles a range jump are never
/// selected. After a point is picked its window neighbours are suppressed
/// so features spread along the ring.
pub fn extract_planar_features(sweep: &Sweep, opts: &FeatureOptions) -> FeatureCloud {
    let hw = opts.half_window.max(1);
    let mut out = FeatureCloud::default();
    for ring in sweep.rings() {
        let kept: Vec<usize> = ring
            .iter()
            .copied()
            .filter(|&i| {
                let r = sweep.points[i].x.norm();
                r >= opts.min_range && r <= opts.max_range
            })
            .collect();
        let line: Vec<Vec3> = kept.iter().map(|&i| sweep.points[i].x).collect();
        let n = line.len();
        if n < 2 * hw + 1 {
            continue;
        }
        let range: Vec<f64> = line.iter().map(|x| x.norm()).collect();

        // A jump between k and k+1 poisons every window containing both.
        let mut jump = vec![false; n];
        for k in 0..n - 1 {
            let (a, b) = (range[k], range[k + 1]);
            if (a - b).abs() > opts.range_jump_ratio * a.min(b) {
                jump[k] = true;
            }
        }
        let mut jump_prefix = vec![0usize; n + 1];
        for k in 0..n {
            jump_prefix[k + 1] = jump_prefix[k] + jump[k] as usize;
        }

        let mut score = vec![f64::INFINITY; n];
        for i in hw..n - hw {
            if jump_prefix[i + hw] - jump_prefix[i - hw] > 0 {
                continue;
            }
            let tangent = line[i + 1] - line[i - 1];
            let tn = tangent.norm();
            if tn > 0.0 && (tangent.dot(&line[i]) / (tn * range[i])).abs() > opts.parallel_cos {
                continue;
            }
            score[i] = curvature(&line, i, hw);
        }

        let mut picked = vec![false; n];
        let mut blocked = vec![false; n];
        let span = n - 2 * hw;
        let sectors = opts.sectors.max(1);
        for s in 0..sectors {
            let lo = hw + span * s / sectors;
            let hi = hw + span * (s + 1) / sectors;
            let mut cand: Vec<usize> = (lo..hi)
                .filter(|&i| score[i] < opts.planar_threshold)
                .collect();
            cand.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
            let mut taken = 0;
            for i in cand {
                if taken >= opts.per_sector {
                    break;
                }
                if blocked[i] {
                    continue;
                }
                picked[i] = true;
                taken += 1;
                for b in blocked
                    .iter_mut()
                    .take((i + hw + 1).min(n))
                    .skip(i.saturating_sub(hw))
                {
                    *b = true;
                }
            }
        }
        for i in 0..n {
            if picked[i] {
                out.points.push(line[i]);
                out.curvature.push(score[i]);
                out.time.push(sweep.points[kept[i]].t);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::LidarPoint;
    use super::*;

    fn ring_on(f: impl Fn(f64) -> Vec3, n: usize) -> Sweep {
        let pts = (0..n)
            .map(|k| LidarPoint {
                x: f(k as f64 / n as f64),
                t: k as f64 / n as f64 * 0.1,
                ring: 0,
            })
            .collect();
        Sweep::new(pts, 0.0, 0.1).unwrap()
    }

    #[test]
    fn plane_fills_caps() {
        // A straight scan line across a wall at x = 4.
        let s = ring_on(|u| Vec3::new(4.0, -3.0 + 6.0 * u, 0.5), 300);
        let opts = FeatureOptions::default();
        let f = extract_planar_features(&s, &opts);
        assert_eq!(f.len(), opts.sectors * opts.per_sector);
        assert!(f.curvature.iter().all(|c| *c < 1e-6));
    }

    #[test]
    fn empty_and_short() {
        let f = extract_planar_features(
            &Sweep::new(vec![], 0.0, 0.1).unwrap(),
            &FeatureOptions::default(),
        );
        assert!(f.is_empty());
        let s = ring_on(|u| Vec3::new(4.0, u, 0.0), 8);
        assert!(extract_planar_features(&s, &FeatureOptions::default()).is_empty());
    }

    #[test]
    fn deterministic() {
        let s = ring_on(
            |u| Vec3::new(4.0 + (u * 40.0).sin() * 0.01, -3.0 + 6.0 * u, 0.5),
            500,
        );
        let o = FeatureOptions::default();
        assert_eq!(
            extract_planar_features(&s, &o),
            extract_planar_features(&s, &o)
        );
    }
}
