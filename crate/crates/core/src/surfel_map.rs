//! The surfel scene representation and its management (seeding, densification,
//! pruning).
//!
//! Surfels are stored in the unconstrained parameterization used by the
//! optimizers: a quaternion for the tangent frame, log-scales, and a logit
//! for opacity.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, Rgb};
use crate::geometry::{backproject, Intrinsics, Pose};
use crate::raster::RenderOutput;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// An oriented 2D Gaussian disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surfel {
    /// Center in world coordinates (meters).
    pub position: Vector3<f64>,
    /// Rotation whose columns are `[t_u, t_v, t_w]`. Kept unit length.
    pub rotation: Quaternion<f64>,
    pub log_scale: [f64; 2],
    pub logit_opacity: f64,
    pub color: Rgb,
}

impl Surfel {
    /// Builds a surfel from a normal; the tangents are a deterministic
    /// orthonormal completion.
    pub fn from_normal(position: Vector3<f64>, normal: &Vector3<f64>, scale: f64, opacity: f64, color: Rgb) -> Self {
        let frame = tangent_frame_for_normal(normal);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(frame));
        Self {
            position,
            rotation: q.into_inner(),
            log_scale: [scale.ln(), scale.ln()],
            logit_opacity: logit(opacity),
            color,
        }
    }

    /// Columns `[t_u, t_v, t_w]` in world coordinates.
    pub fn frame(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation)
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.frame().column(2).into_owned()
    }

    #[inline]
    pub fn scales(&self) -> [f64; 2] {
        [self.log_scale[0].exp(), self.log_scale[1].exp()]
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 {
            self.rotation /= n;
        } else {
            self.rotation = Quaternion::identity();
        }
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if ((self.rotation.norm()) - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {}", self.rotation.norm()));
        }
        let [su, sv] = self.scales();
        if !(su > 0.0 && sv > 0.0 && su.is_finite() && sv.is_finite()) {
            return Err(format!("scales {su} {sv}"));
        }
        let a = self.opacity();
        if !(a > 0.0 && a < 1.0) {
            return Err(format!("opacity {a}"));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(format!("color {:?}", self.color));
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err("non-finite position".into());
        }
        let f = self.frame();
        let (tu, tv, tw) = (f.column(0), f.column(1), f.column(2));
        if (tu.cross(&tv) - tw).amax() > 1e-6 || (f.transpose() * f - Matrix3::identity()).amax() > 1e-6 {
            return Err("tangent frame not orthonormal".into());
        }
        Ok(())
    }
}

/// Rotation matrix of the normalized quaternion `q = (w, x, y, z)`.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw quaternion.
///
/// Returns `[∂w, ∂x, ∂y, ∂z]`, projected onto the tangent of the unit sphere
/// (the normalization inside [`rotation_matrix`] is differentiated through).
pub fn rotation_matrix_vjp(q: &Quaternion<f64>, g: &Matrix3<f64>) -> [f64; 4] {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let dot = gw * w + gx * x + gy * y + gz * z;
    [
        (gw - dot * w) / n,
        (gx - dot * x) / n,
        (gy - dot * y) / n,
        (gz - dot * z) / n,
    ]
}

/// `[t_u, t_v, t_w]` with `t_w` the given normal. `t_u` is `t_w × x̂`, or
/// `t_w × ŷ` when the normal is within ~25° of the x axis.
pub fn tangent_frame_for_normal(normal: &Vector3<f64>) -> Matrix3<f64> {
    let tw = normal.normalize();
    let a = if tw.x.abs() > 0.9 { Vector3::y() } else { Vector3::x() };
    let tu = tw.cross(&a).normalize();
    let tv = tw.cross(&tu);
    Matrix3::from_columns(&[tu, tv, tw])
}

/// Per-surfel error accumulators used by pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurfelStats {
    pub depth_error: f64,
    pub color_error: f64,
    pub count: u64,
}

impl SurfelStats {
    pub fn mean_depth_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.depth_error / self.count as f64
        }
    }

    pub fn mean_color_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.color_error / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagementConfig {
    /// Add surfels where rendered transmittance exceeds this.
    pub transmission_threshold: f64,
    /// Add where `|D − D̄|` exceeds this (meters); prune above twice the mean.
    pub depth_error_threshold: f64,
    /// Add where the mean absolute color error exceeds this; prune above twice the mean.
    pub color_error_threshold: f64,
    /// Pixel subsampling stride for additions.
    pub sample_stride: usize,
    pub opacity_floor: f64,
}

impl Default for ManagementConfig {
    fn default() -> Self {
        Self {
            transmission_threshold: 0.5,
            depth_error_threshold: 0.1,
            color_error_threshold: 0.1,
            sample_stride: 4,
            opacity_floor: 0.005,
        }
    }
}

impl ManagementConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.transmission_threshold > 0.0
            && self.depth_error_threshold > 0.0
            && self.color_error_threshold > 0.0
            && self.sample_stride > 0
            && self.opacity_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid management config {self:?}")))
        }
    }
}

/// Surfels plus their error statistics, kept in lockstep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfelMap {
    surfels: Vec<Surfel>,
    stats: Vec<SurfelStats>,
}

impl SurfelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_surfels(surfels: Vec<Surfel>) -> Self {
        let stats = vec![SurfelStats::default(); surfels.len()];
        Self { surfels, stats }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn surfels(&self) -> &[Surfel] {
        &self.surfels
    }

    /// Mutable access to the parameters; the length cannot change through this.
    pub fn surfels_mut(&mut self) -> &mut [Surfel] {
        &mut self.surfels
    }

    pub fn stats(&self) -> &[SurfelStats] {
        &self.stats
    }

    pub fn push(&mut self, surfel: Surfel) {
        self.surfels.push(surfel);
        self.stats.push(SurfelStats::default());
    }

    pub fn record_error(&mut self, id: usize, depth_error: f64, color_error: f64) {
        let s = &mut self.stats[id];
        s.depth_error += depth_error;
        s.color_error += color_error;
        s.count += 1;
    }

    /// Keeps surfels for which `keep` returns true; returns how many were removed.
    pub fn retain(&mut self, mut keep: impl FnMut(&Surfel, &SurfelStats) -> bool) -> usize {
        let before = self.surfels.len();
        let mut kept_s = Vec::with_capacity(before);
        let mut kept_t = Vec::with_capacity(before);
        for (s, t) in self.surfels.drain(..).zip(self.stats.drain(..)) {
            if keep(&s, &t) {
                kept_s.push(s);
                kept_t.push(t);
            }
        }
        self.surfels = kept_s;
        self.stats = kept_t;
        before - self.surfels.len()
    }

    /// Centroid and largest distance from it over all centers.
    pub fn extent(&self) -> (Vector3<f64>, f64) {
        if self.surfels.is_empty() {
            return (Vector3::zeros(), 0.0);
        }
        let c = self.surfels.iter().fold(Vector3::zeros(), |acc, s| acc + s.position) / self.surfels.len() as f64;
        let r = self.surfels.iter().map(|s| (s.position - c).norm()).fold(0.0, f64::max);
        (c, r)
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.surfels.len() != self.stats.len() {
            return Err("surfel/stat length mismatch".into());
        }
        for (i, s) in self.surfels.iter().enumerate() {
            s.check_invariants().map_err(|e| format!("surfel {i}: {e}"))?;
        }
        Ok(())
    }
}

/// Creates a surfel on the observed surface at a pixel.
///
/// `pose` is the frame's world-to-camera pose. The scale roughly covers the
/// `stride`-pixel footprint at that depth.
pub fn seed_surfel(
    col: usize,
    row: usize,
    frame: &Frame,
    pose: &Pose,
    k: &Intrinsics,
    stride: usize,
) -> Result<Surfel> {
    let depth = *frame.depth.get(col, row);
    if !(depth > 0.0) {
        return Err(Error::InvalidInput(format!("no valid depth at pixel ({col}, {row})")));
    }
    let normal_c = frame
        .normal
        .get(col, row)
        .ok_or_else(|| Error::InvalidInput(format!("no valid normal at pixel ({col}, {row})")))?;
    let p_c = backproject(col as f64, row as f64, depth, k)?;
    let cam_to_world = pose.inverse();
    let center = cam_to_world.transform_point(&p_c);
    let normal_w = cam_to_world.transform_vector(&normal_c);
    let scale = depth * stride as f64 / k.mean_focal();
    let mut color = *frame.color.get(col, row);
    for c in &mut color {
        *c = c.clamp(0.0, 1.0);
    }
    Ok(Surfel::from_normal(center, &normal_w, scale, 0.5, color))
}

/// Which densification criterion a pixel trips, if any.
pub fn needs_surfel(idx: usize, frame: &Frame, render: &RenderOutput, cfg: &ManagementConfig) -> bool {
    if render.transmittance[idx] > cfg.transmission_threshold {
        return true;
    }
    if render.alpha_sum[idx] > 0.0 && (render.depth[idx] - frame.depth[idx]).abs() > cfg.depth_error_threshold {
        return true;
    }
    color_l1(&render.color[idx], &frame.color[idx]) > cfg.color_error_threshold
}

/// Mean absolute per-channel difference.
#[inline]
pub fn color_l1(a: &Rgb, b: &Rgb) -> f64 {
    ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
}

/// Seeds surfels at subsampled pixels that are poorly explained by `render`.
/// Returns how many were added.
pub fn densify(
    map: &mut SurfelMap,
    frame: &Frame,
    render: &RenderOutput,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &ManagementConfig,
) -> usize {
    let (w, h) = frame.dims();
    let stride = cfg.sample_stride.max(1);
    let offset = stride / 2;
    let mut added = 0;
    for row in (offset..h).step_by(stride) {
        for col in (offset..w).step_by(stride) {
            let idx = row * w + col;
            if frame.depth[idx] <= 0.0 || frame.normal[idx].is_none() {
                continue;
            }
            if !needs_surfel(idx, frame, render, cfg) {
                continue;
            }
            if let Ok(s) = seed_surfel(col, row, frame, pose, k, stride) {
                map.push(s);
                added += 1;
            }
        }
    }
    added
}

/// Removes surfels whose mean attributed error exceeds twice the thresholds,
/// and surfels below the opacity floor. Returns how many were removed.
pub fn prune(map: &mut SurfelMap, cfg: &ManagementConfig) -> usize {
    map.retain(|s, st| {
        if s.opacity() < cfg.opacity_floor {
            return false;
        }
        if st.count > 0
            && (st.mean_depth_error() > 2.0 * cfg.depth_error_threshold
                || st.mean_color_error() > 2.0 * cfg.color_error_threshold)
        {
            return false;
        }
        true
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics::new(50.0, 50.0, 16.0, 12.0, 32, 24).unwrap()
    }

    fn flat_frame(depth: f64, color: Rgb) -> Frame {
        let k = k();
        Frame::new(
            0.0,
            Grid::filled(k.width, k.height, color),
            Grid::filled(k.width, k.height, depth),
            &k,
        )
        .unwrap()
    }

    #[test]
    fn seed_on_principal_ray() {
        let k = k();
        let frame = flat_frame(1.0, [0.2, 0.4, 0.6]);
        let s = seed_surfel(16, 12, &frame, &Pose::identity(), &k, 4).unwrap();
        assert_relative_eq!(s.position, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_relative_eq!(s.normal(), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_relative_eq!(s.opacity(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.scales()[0], 4.0 / 50.0, epsilon = 1e-12);
        assert_eq!(s.color, [0.2, 0.4, 0.6]);
        s.check_invariants().unwrap();
    }

    #[test]
    fn seed_rejects_invalid_pixels() {
        let k = k();
        let mut frame = flat_frame(1.0, [0.5; 3]);
        frame.depth[12 * 32 + 16] = 0.0;
        frame = Frame::new(0.0, frame.color, frame.depth, &k).unwrap();
        assert!(seed_surfel(16, 12, &frame, &Pose::identity(), &k, 4).is_err());
        // border pixel: depth valid, normal undefined
        assert!(seed_surfel(0, 0, &frame, &Pose::identity(), &k, 4).is_err());
    }

    #[test]
    fn tangent_completion_is_right_handed() {
        for n in [
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.3, -0.8, 0.2),
        ] {
            let f = tangent_frame_for_normal(&n);
            assert_relative_eq!(f.column(2).into_owned(), n.normalize(), epsilon = 1e-12);
            assert_relative_eq!(f.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn prune_with_zero_stats_removes_nothing() {
        let s = Surfel::from_normal(Vector3::z(), &-Vector3::z(), 0.1, 0.5, [0.5; 3]);
        let mut map = SurfelMap::from_surfels(vec![s; 4]);
        assert_eq!(prune(&mut map, &ManagementConfig::default()), 0);
        assert_eq!(map.len(), 4);
    }

    #[test]
    fn prune_removes_high_depth_error() {
        let s = Surfel::from_normal(Vector3::z(), &-Vector3::z(), 0.1, 0.5, [0.5; 3]);
        let mut map = SurfelMap::from_surfels(vec![s; 3]);
        map.record_error(1, 0.3, 0.0);
        map.record_error(2, 0.15, 0.0); // below 2·δ_d
        assert_eq!(prune(&mut map, &ManagementConfig::default()), 1);
        assert_eq!(map.len(), 2);
        assert_eq!(map.stats()[1].depth_error, 0.15);
    }

    #[test]
    fn prune_removes_transparent() {
        let mut s = Surfel::from_normal(Vector3::z(), &-Vector3::z(), 0.1, 0.5, [0.5; 3]);
        let mut map = SurfelMap::from_surfels(vec![s]);
        s.logit_opacity = logit(0.001);
        map.push(s);
        assert_eq!(prune(&mut map, &ManagementConfig::default()), 1);
        assert_eq!(map.len(), 1);
        assert!(map.surfels()[0].opacity() > 0.4);
    }

    #[test]
    fn quaternion_vjp_matches_finite_differences() {
        let q = Quaternion::new(0.8, -0.3, 0.4, 0.2);
        let q = q / q.norm();
        let g = Matrix3::new(0.3, -1.0, 0.2, 0.7, 0.1, -0.4, 0.5, 0.9, -0.6);
        let f = |q: &Quaternion<f64>| rotation_matrix(q).component_mul(&g).sum();
        let an = rotation_matrix_vjp(&q, &g);
        let h = 1e-6;
        for (i, a) in an.iter().enumerate() {
            let mut qp = q;
            let mut qm = q;
            qp.coords[(i + 3) % 4] += h;
            qm.coords[(i + 3) % 4] -= h;
            // coords are stored (x, y, z, w); an is (w, x, y, z)
            let num = (f(&qp) - f(&qm)) / (2.0 * h);
            assert_relative_eq!(*a, num, epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn from_normal_satisfies_invariants(
            nx in -1.0f64..1.0, ny in -1.0f64..1.0, nz in -1.0f64..1.0,
            scale in 1e-3f64..1.0, opacity in 0.01f64..0.99
        ) {
            let n = Vector3::new(nx, ny, nz);
            prop_assume!(n.norm() > 1e-3);
            let s = Surfel::from_normal(Vector3::zeros(), &n, scale, opacity, [0.1, 0.5, 0.9]);
            prop_assert!(s.check_invariants().is_ok());
            prop_assert!((s.normal() - n.normalize()).norm() < 1e-9);
        }
    }
}
