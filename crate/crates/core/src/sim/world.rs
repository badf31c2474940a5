use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Rectangular patch `corner + u·e1 + v·e2`, `u, v ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub corner: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Patch {
    pub fn new(corner: Vec3, e1: Vec3, e2: Vec3) -> Result<Self> {
        if e1.cross(&e2).norm() < 1e-12 * e1.norm().max(1.0) * e2.norm().max(1.0) {
            return Err(Error::domain("patch edges are linearly dependent"));
        }
        Ok(Self { corner, e1, e2 })
    }

    pub fn normal(&self) -> Vec3 {
        self.e1.cross(&self.e2).normalize()
    }

    /// Signed distance of `x` to the patch's supporting plane.
    pub fn plane_distance(&self, x: &Vec3) -> f64 {
        self.normal().dot(&(x - self.corner))
    }

    /// Ray parameter of the first hit, if any.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.e1.cross(&self.e2);
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.corner - origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let rel = origin + dir * t - self.corner;
        let g11 = self.e1.dot(&self.e1);
        let g12 = self.e1.dot(&self.e2);
        let g22 = self.e2.dot(&self.e2);
        let det = g11 * g22 - g12 * g12;
        let b1 = rel.dot(&self.e1);
        let b2 = rel.dot(&self.e2);
        let u = (g22 * b1 - g12 * b2) / det;
        let v = (g11 * b2 - g12 * b1) / det;
        const EDGE: f64 = 1e-12;
        if (-EDGE..=1.0 + EDGE).contains(&u) && (-EDGE..=1.0 + EDGE).contains(&v) {
            Some(t)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scene {
    Room,
    Corridor,
    OutdoorBlocks,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaneWorld {
    pub patches: Vec<Patch>,
}

impl PlaneWorld {
    pub fn preset(scene: Scene) -> Self {
        match scene {
            Scene::Room => Self::room(),
            Scene::Corridor => Self::corridor(),
            Scene::OutdoorBlocks => Self::outdoor_blocks(),
        }
    }

    fn push(&mut self, corner: Vec3, e1: Vec3, e2: Vec3) {
        self.patches
            .push(Patch::new(corner, e1, e2).expect("preset patches are non-degenerate"));
    }

    /// Six faces of an axis-aligned box.
    pub fn add_box(&mut self, lo: Vec3, hi: Vec3) {
        let d = hi - lo;
        let (ex, ey, ez) = (
            Vec3::new(d.x, 0.0, 0.0),
            Vec3::new(0.0, d.y, 0.0),
            Vec3::new(0.0, 0.0, d.z),
        );
        self.push(lo, ey, ex);
        self.push(lo + ez, ex, ey);
        self.push(lo, ex, ez);
        self.push(lo + ey, ez, ex);
        self.push(lo, ez, ey);
        self.push(lo + ex, ey, ez);
    }

    /// 12 × 8 × 3 m room with two pillars, a low cabinet and a slanted panel.
    pub fn room() -> Self {
        let mut w = Self::default();
        w.add_box(Vec3::new(-6.0, -4.0, 0.0), Vec3::new(6.0, 4.0, 3.0));
        w.add_box(Vec3::new(3.0, 1.8, 0.0), Vec3::new(3.6, 2.4, 3.0));
        w.add_box(Vec3::new(-3.4, -2.6, 0.0), Vec3::new(-2.8, -2.0, 3.0));
        w.add_box(Vec3::new(-5.0, 2.5, 0.0), Vec3::new(-3.5, 3.5, 1.0));
        w.push(
            Vec3::new(4.5, -3.5, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(1.0, 0.0, 2.0),
        );
        w
    }

    /// Two parallel walls plus floor and ceiling, 100 m long. Every normal
    /// lies in the y-z plane.
    pub fn corridor() -> Self {
        let mut w = Self::default();
        let len = Vec3::new(100.0, 0.0, 0.0);
        let start = Vec3::new(-50.0, 0.0, 0.0);
        w.push(
            start + Vec3::new(0.0, -1.5, 0.0),
            len,
            Vec3::new(0.0, 0.0, 3.0),
        );
        w.push(
            start + Vec3::new(0.0, 1.5, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
            len,
        );
        w.push(
            start + Vec3::new(0.0, -1.5, 0.0),
            Vec3::new(0.0, 3.0, 0.0),
            len,
        );
        w.push(
            start + Vec3::new(0.0, -1.5, 3.0),
            len,
            Vec3::new(0.0, 3.0, 0.0),
        );
        w
    }

    /// Ground plane with a grid of building blocks of varying size.
    pub fn outdoor_blocks() -> Self {
        let mut w = Self::default();
        w.push(
            Vec3::new(-100.0, -100.0, 0.0),
            Vec3::new(200.0, 0.0, 0.0),
            Vec3::new(0.0, 200.0, 0.0),
        );
        for i in -3i32..=3 {
            for j in -3i32..=3 {
                if i == 0 || j == 0 {
                    continue;
                }
                let c = Vec3::new(i as f64 * 20.0, j as f64 * 20.0, 0.0);
                let half = 4.0 + ((i * 7 + j * 3).rem_euclid(5)) as f64;
                let h = 6.0 + ((i * 5 + j * 11).rem_euclid(7)) as f64 * 2.0;
                w.add_box(
                    c - Vec3::new(half, half * 0.8, 0.0),
                    c + Vec3::new(half, half * 0.8, h),
                );
            }
        }
        w
    }

    /// Nearest hit as (range, patch index).
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.patches.iter().enumerate() {
            if let Some(t) = p.intersect(origin, dir) {
                if best.map(|b| t < b.0).unwrap_or(true) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Rank of the set of distinct patch normals (up to sign).
    pub fn normal_rank(&self) -> usize {
        let mut s = Mat3::zeros();
        for p in &self.patches {
            let n = p.normal();
            s += n * n.transpose();
        }
        s.symmetric_eigenvalues()
            .iter()
            .filter(|e| **e > 1e-9)
            .count()
    }
}
