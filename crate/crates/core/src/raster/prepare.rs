//! Per-view surfel setup: camera-frame transform, screen bounds, global depth
//! sort and tile binning.

use nalgebra::Vector3;

use super::{RenderConfig, SurfelHit, NEAR_PLANE, PARALLEL_EPS};
use crate::frame::Rgb;
use crate::geometry::{Intrinsics, Pose};
use crate::par;
use crate::surfel_map::Surfel;

pub(crate) const TILE_SIZE: usize = 16;

/// A surfel expressed in the camera frame.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    /// Index in the map.
    pub id: usize,
    pub center: Vector3<f64>,
    pub tu: Vector3<f64>,
    pub tv: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub su: f64,
    pub sv: f64,
    pub opacity: f64,
    pub color: Rgb,
    /// Inclusive pixel bounds `[col0, row0, col1, row1]`.
    pub bbox: [i64; 4],
}

impl Projected {
    pub fn from_surfel(id: usize, s: &Surfel, pose: &Pose) -> Self {
        let frame = pose.rotation * s.frame();
        let [su, sv] = s.scales();
        Self {
            id,
            center: pose.transform_point(&s.position),
            tu: frame.column(0).into_owned(),
            tv: frame.column(1).into_owned(),
            normal: frame.column(2).into_owned(),
            su,
            sv,
            opacity: s.opacity(),
            color: s.color,
            bbox: [0, 0, -1, -1],
        }
    }

    /// Screen bounds of the `√cutoff`-sigma square around the center, or
    /// `None` when the surfel lies entirely before the near plane or off
    /// screen.
    fn screen_bounds(&self, k: &Intrinsics, cutoff: f64) -> Option<[i64; 4]> {
        let ext = cutoff.sqrt();
        let du = self.tu * (ext * self.su);
        let dv = self.tv * (ext * self.sv);
        let corners = [
            self.center + du + dv,
            self.center + du - dv,
            self.center - du + dv,
            self.center - du - dv,
        ];
        let in_front = corners.iter().filter(|c| c.z > NEAR_PLANE).count();
        let (w, h) = (k.width as i64, k.height as i64);
        if in_front == 0 {
            return None;
        }
        if in_front < 4 {
            // straddles the near plane; do not try to bound the projection
            return Some([0, 0, w - 1, h - 1]);
        }
        let (mut c0, mut r0, mut c1, mut r1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for c in &corners {
            let (x, y) = k.project(c);
            c0 = c0.min(x);
            r0 = r0.min(y);
            c1 = c1.max(x);
            r1 = r1.max(y);
        }
        let clamp = |v: f64, hi: i64| -> i64 { v.clamp(-1.0, hi as f64) as i64 };
        let b = [
            clamp(c0.floor(), w),
            clamp(r0.floor(), h),
            clamp(c1.ceil(), w),
            clamp(r1.ceil(), h),
        ];
        let b = [b[0].max(0), b[1].max(0), b[2].min(w - 1), b[3].min(h - 1)];
        (b[0] <= b[2] && b[1] <= b[3]).then_some(b)
    }

    #[inline]
    pub fn covers(&self, col: i64, row: i64) -> bool {
        col >= self.bbox[0] && col <= self.bbox[2] && row >= self.bbox[1] && row <= self.bbox[3]
    }

    /// Ray-plane intersection for a ray with unit z component.
    #[inline]
    pub fn intersect(&self, ray: &Vector3<f64>, cutoff: f64) -> Option<SurfelHit> {
        let denom = self.normal.dot(ray);
        if denom.abs() < PARALLEL_EPS {
            return None;
        }
        let z = self.normal.dot(&self.center) / denom;
        if !(z > NEAR_PLANE) {
            return None;
        }
        let r = ray * z - self.center;
        let u = self.tu.dot(&r) / self.su;
        let v = self.tv.dot(&r) / self.sv;
        let rho2 = u * u + v * v;
        if rho2 > cutoff {
            return None;
        }
        Some(SurfelHit {
            u,
            v,
            z,
            gaussian: (-0.5 * rho2).exp(),
        })
    }
}

/// Everything the per-pixel traversal needs for one view.
pub(crate) struct Prepared {
    /// Visible surfels sorted front to back.
    pub prims: Vec<Projected>,
    /// Per tile, indices into `prims` in front-to-back order.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    width: usize,
    height: usize,
}

impl Prepared {
    pub fn new(surfels: &[Surfel], pose: &Pose, k: &Intrinsics, cfg: &RenderConfig) -> Self {
        let projected = par::map_range(surfels.len(), |i| {
            let s = &surfels[i];
            let mut p = Projected::from_surfel(i, s, pose);
            if p.opacity < cfg.min_alpha {
                return None;
            }
            p.bbox = p.screen_bounds(k, cfg.gauss_cutoff)?;
            Some(p)
        });
        let mut prims: Vec<Projected> = projected.into_iter().flatten().collect();
        prims.sort_by(|a, b| a.center.z.total_cmp(&b.center.z).then(a.id.cmp(&b.id)));

        let tiles_x = k.width.div_ceil(TILE_SIZE);
        let tiles_y = k.height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        let ts = TILE_SIZE as i64;
        for (pi, p) in prims.iter().enumerate() {
            let [c0, r0, c1, r1] = p.bbox;
            for ty in (r0 / ts)..=(r1 / ts) {
                for tx in (c0 / ts)..=(c1 / ts) {
                    tiles[ty as usize * tiles_x + tx as usize].push(pi as u32);
                }
            }
        }
        Self {
            prims,
            tiles,
            tiles_x,
            width: k.width,
            height: k.height,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile_list(&self, t: usize) -> &[u32] {
        &self.tiles[t]
    }

    pub fn tile_of(&self, col: usize, row: usize) -> usize {
        (row / TILE_SIZE) * self.tiles_x + col / TILE_SIZE
    }

    /// Pixel `(col, row)` pairs of a tile in row-major order.
    pub fn tile_coords(&self, t: usize) -> impl Iterator<Item = (usize, usize)> {
        let c0 = (t % self.tiles_x) * TILE_SIZE;
        let r0 = (t / self.tiles_x) * TILE_SIZE;
        let c1 = (c0 + TILE_SIZE).min(self.width);
        let r1 = (r0 + TILE_SIZE).min(self.height);
        (r0..r1).flat_map(move |r| (c0..c1).map(move |c| (c, r)))
    }

    /// Linear pixel indices of a tile, matching [`Self::tile_coords`].
    pub fn tile_pixels(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.tile_coords(t).map(|(c, r)| r * self.width + c)
    }
}
