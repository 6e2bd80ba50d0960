//! Forward surfel splatting.
//!
//! Every pixel casts its ray against the surfels whose screen-space bounding
//! box covers it, in a global front-to-back order (camera-frame center
//! depth), and alpha-blends color, depth and normal. Alongside the blend the
//! rasterizer keeps the depth distortion of the ray and the dominant
//! (largest-weight) intersection, which drive the adaptive depth rule.
//!
//! Work is split into 16×16 tiles; tiles are independent and results are
//! gathered in tile order.

mod prepare;
mod shade;

pub(crate) use prepare::{Prepared, Projected};
pub(crate) use shade::{shade_pixel, traverse_pixel, Hit, PixelEval};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Rgb;
use crate::geometry::{Intrinsics, Pose};
use crate::grid::Grid;
use crate::par;
use crate::surfel_map::{Surfel, SurfelMap};

/// Rays closer than this to the camera do not hit anything (meters).
pub const NEAR_PLANE: f64 = 0.01;
/// `|n·d|` below this counts as a ray parallel to the surfel plane.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    /// Weight-normalized blend of intersection depths.
    Mean,
    /// Depth of the intersection where accumulated weight crosses one half.
    Median,
    /// Mean, replaced by the dominant surfel where the ray is uncertain.
    #[default]
    Adaptive,
}

impl std::str::FromStr for DepthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(DepthMode::Mean),
            "median" => Ok(DepthMode::Median),
            "adaptive" => Ok(DepthMode::Adaptive),
            other => Err(Error::Config(format!("unknown depth mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Distortion above which a pixel is treated as uncertain.
    pub distortion_threshold: f64,
    pub depth_mode: DepthMode,
    /// Largest `u² + v²` that still counts as a hit.
    pub gauss_cutoff: f64,
    /// Traversal stops once transmittance falls below this.
    pub min_transmittance: f64,
    /// Intersections with `α·G` below this are skipped.
    pub min_alpha: f64,
    /// A pixel is valid when its accumulated weight exceeds this.
    pub valid_threshold: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            distortion_threshold: 5e-6,
            depth_mode: DepthMode::Adaptive,
            gauss_cutoff: 9.0,
            min_transmittance: 1e-4,
            min_alpha: 1.0 / 255.0,
            valid_threshold: 0.05,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.distortion_threshold > 0.0
            && self.gauss_cutoff > 0.0
            && self.min_transmittance >= 0.0
            && self.min_transmittance < 1.0
            && self.min_alpha >= 0.0
            && self.valid_threshold >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid render config {self:?}")))
        }
    }

    pub fn with_depth_mode(mut self, mode: DepthMode) -> Self {
        self.depth_mode = mode;
        self
    }
}

/// Where a pixel's output depth (and normal) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthSource {
    /// No intersections.
    #[default]
    Empty,
    /// Weight-normalized blend.
    Blend,
    /// The median intersection (normal still blended).
    Median,
    /// The dominant surfel replaced both depth and normal.
    Dominant,
}

/// Per-pixel rendering buffers.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Grid<Rgb>,
    /// Depth in the configured mode (0 where nothing was hit).
    pub depth: Grid<f64>,
    /// Unnormalized blended normal, or the dominant normal where substituted.
    pub normal: Grid<Vector3<f64>>,
    pub distortion: Grid<f64>,
    pub transmittance: Grid<f64>,
    pub alpha_sum: Grid<f64>,
    /// Map index of the largest-weight surfel.
    pub dominant_id: Grid<Option<usize>>,
    pub dominant_depth: Grid<f64>,
    pub dominant_normal: Grid<Vector3<f64>>,
    pub valid: Grid<bool>,
    pub depth_source: Grid<DepthSource>,
}

impl RenderOutput {
    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Geometry of a ray-surfel hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfelHit {
    /// Local coordinates in units of the surfel scales.
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth of the hit point.
    pub z: f64,
    /// `exp(−(u² + v²)/2)`.
    pub gaussian: f64,
}

/// One blended contribution along a pixel ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub surfel: usize,
    pub hit: SurfelHit,
    pub weight: f64,
}

/// Intersects a camera ray (`ray.z == 1`) with a surfel seen from `pose`.
///
/// Misses when the plane is parallel to the ray, the hit lies before the near
/// plane, or the hit is beyond `gauss_cutoff`.
pub fn intersect(surfel: &Surfel, ray: &Vector3<f64>, pose: &Pose, cfg: &RenderConfig) -> Option<SurfelHit> {
    let prim = Projected::from_surfel(0, surfel, pose);
    prim.intersect(ray, cfg.gauss_cutoff)
}

/// `Σ_{i,j} ω_i ω_j |z_i − z_j|` over ordered pairs, in one pass over the
/// depth-sorted intersections.
pub fn distortion_term(weights: &[f64], depths: &[f64]) -> f64 {
    assert_eq!(weights.len(), depths.len());
    let mut pairs: Vec<(f64, f64)> = depths.iter().copied().zip(weights.iter().copied()).collect();
    shade::distortion_of(&mut pairs)
}

/// Applies the adaptive rule to one pixel: the dominant surfel's depth and
/// normal replace the blend when the ray is uncertain and the blend lies
/// behind the dominant hit. Returns the output and whether it substituted.
pub fn adaptive_substitute(
    mean_depth: f64,
    mean_normal: &Vector3<f64>,
    dominant_depth: f64,
    dominant_normal: &Vector3<f64>,
    distortion: f64,
    threshold: f64,
) -> (f64, Vector3<f64>, bool) {
    if distortion > threshold && mean_depth > dominant_depth {
        (dominant_depth, *dominant_normal, true)
    } else {
        (mean_depth, *mean_normal, false)
    }
}

/// Renders the map from `pose`.
pub fn render(map: &SurfelMap, pose: &Pose, k: &Intrinsics, cfg: &RenderConfig) -> RenderOutput {
    let prep = Prepared::new(map.surfels(), pose, k, cfg);
    render_prepared(&prep, k, cfg)
}

pub(crate) fn render_prepared(prep: &Prepared, k: &Intrinsics, cfg: &RenderConfig) -> RenderOutput {
    let (w, h) = (k.width, k.height);
    let tiles = par::map_range(prep.tile_count(), |t| render_tile(prep, t, k, cfg));

    let mut out = RenderOutput {
        color: Grid::filled(w, h, [0.0; 3]),
        depth: Grid::filled(w, h, 0.0),
        normal: Grid::filled(w, h, Vector3::zeros()),
        distortion: Grid::filled(w, h, 0.0),
        transmittance: Grid::filled(w, h, 1.0),
        alpha_sum: Grid::filled(w, h, 0.0),
        dominant_id: Grid::filled(w, h, None),
        dominant_depth: Grid::filled(w, h, 0.0),
        dominant_normal: Grid::filled(w, h, Vector3::zeros()),
        valid: Grid::filled(w, h, false),
        depth_source: Grid::filled(w, h, DepthSource::Empty),
    };
    for (t, pixels) in tiles.into_iter().enumerate() {
        for (idx, px) in prep.tile_pixels(t).zip(pixels) {
            out.color[idx] = px.color;
            out.depth[idx] = px.depth;
            out.normal[idx] = px.normal;
            out.distortion[idx] = px.distortion;
            out.transmittance[idx] = px.transmittance;
            out.alpha_sum[idx] = px.alpha_sum;
            out.dominant_id[idx] = px.dominant_id;
            out.dominant_depth[idx] = px.dominant_depth;
            out.dominant_normal[idx] = px.dominant_normal;
            out.valid[idx] = px.alpha_sum > cfg.valid_threshold;
            out.depth_source[idx] = px.source;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct PixelRecord {
    color: Rgb,
    depth: f64,
    normal: Vector3<f64>,
    distortion: f64,
    transmittance: f64,
    alpha_sum: f64,
    dominant_id: Option<usize>,
    dominant_depth: f64,
    dominant_normal: Vector3<f64>,
    source: DepthSource,
}

fn render_tile(prep: &Prepared, t: usize, k: &Intrinsics, cfg: &RenderConfig) -> Vec<PixelRecord> {
    let list = prep.tile_list(t);
    let mut hits = Vec::new();
    let mut scratch = Vec::new();
    prep.tile_coords(t)
        .map(|(col, row)| {
            let transmittance = traverse_pixel(col, row, list, &prep.prims, k, cfg, &mut hits);
            let ev = shade_pixel(&hits, &prep.prims, cfg, true, &mut scratch);
            let dom = ev.dominant.map(|i| &hits[i]);
            PixelRecord {
                color: ev.color,
                depth: ev.depth,
                normal: ev.normal,
                distortion: ev.distortion,
                transmittance,
                alpha_sum: ev.alpha_sum,
                dominant_id: dom.map(|h| prep.prims[h.prim as usize].id),
                dominant_depth: dom.map_or(0.0, |h| h.z),
                dominant_normal: dom.map_or(Vector3::zeros(), |h| prep.prims[h.prim as usize].normal),
                source: ev.source,
            }
        })
        .collect()
}

/// The ordered intersections blended at one pixel.
pub fn trace_pixel(
    map: &SurfelMap,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    col: usize,
    row: usize,
) -> Vec<Intersection> {
    let prep = Prepared::new(map.surfels(), pose, k, cfg);
    let t = prep.tile_of(col, row);
    let mut hits = Vec::new();
    traverse_pixel(col, row, prep.tile_list(t), &prep.prims, k, cfg, &mut hits);
    hits.iter()
        .map(|h| Intersection {
            surfel: prep.prims[h.prim as usize].id,
            hit: SurfelHit {
                u: h.u,
                v: h.v,
                z: h.z,
                gaussian: h.g,
            },
            weight: h.weight,
        })
        .collect()
}
