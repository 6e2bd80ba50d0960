//! Map optimization against keyframe observations.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_surfels, LossGrads};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{Intrinsics, Pose};
use crate::optim::Adam;
use crate::raster::{render, RenderConfig, RenderOutput};
use crate::surfel_map::{color_l1, SurfelMap};

/// Per-group base learning rates. `position` is multiplied by the map extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub logit_opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            logit_opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub depth_weight: f64,
    pub normal_weight: f64,
    pub iterations_per_window: usize,
    /// Frames between regular mapping windows.
    pub map_every: usize,
    pub learning_rates: LearningRates,
    pub final_refine_multiplier: usize,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            depth_weight: 1.0,
            normal_weight: 0.1,
            iterations_per_window: 50,
            map_every: 6,
            learning_rates: LearningRates::default(),
            final_refine_multiplier: 10,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mapping: {m}")));
        if !(self.depth_weight >= 0.0 && self.normal_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.iterations_per_window == 0 {
            return bad("iterations_per_window must be positive");
        }
        if self.map_every == 0 {
            return bad("map_every must be positive");
        }
        let lr = &self.learning_rates;
        let rates = [lr.position, lr.rotation, lr.log_scale, lr.logit_opacity, lr.color];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("learning rates must be finite and non-negative");
        }
        Ok(())
    }
}

/// Loss value split into its weighted terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
}

/// Whether a pixel takes part in the depth and normal terms.
#[inline]
pub fn geometry_valid(frame: &Frame, render: &RenderOutput, idx: usize) -> bool {
    frame.depth[idx] > 0.0 && render.valid[idx]
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn check_dims(frame: &Frame, render: &RenderOutput) -> Result<()> {
    if frame.dims() != render.dims() {
        return Err(Error::ResolutionMismatch {
            expected: frame.dims(),
            got: render.dims(),
        });
    }
    Ok(())
}

/// Weighted L1 color and depth terms shared by mapping and tracking. Color is
/// averaged over all pixels and channels; depth over geometry-valid pixels.
pub(crate) fn photometric_depth_loss(
    render: &RenderOutput,
    frame: &Frame,
    color_weight: f64,
    depth_weight: f64,
    grads: &mut LossGrads,
) -> (f64, f64) {
    let n = frame.color.len();
    let color_scale = 1.0 / (3 * n) as f64;
    let mut color = 0.0;
    if color_weight > 0.0 {
        for idx in 0..n {
            let (r, t) = (&render.color[idx], &frame.color[idx]);
            for ch in 0..3 {
                let d = r[ch] - t[ch];
                color += d.abs();
                grads.color[idx][ch] = color_weight * color_scale * sign(d);
            }
        }
        color *= color_weight * color_scale;
    }

    let mut depth = 0.0;
    if depth_weight > 0.0 {
        let valid: Vec<usize> = (0..n).filter(|&i| geometry_valid(frame, render, i)).collect();
        if !valid.is_empty() {
            let scale = depth_weight / valid.len() as f64;
            for &idx in &valid {
                let d = render.depth[idx] - frame.depth[idx];
                depth += d.abs();
                grads.depth[idx] = scale * sign(d);
            }
            depth *= scale;
        }
    }
    (color, depth)
}

/// Mapping loss: L1 color, weighted L1 depth and weighted cosine normal term.
/// Returns the terms and the gradient with respect to each rendered buffer.
pub fn mapping_loss(render: &RenderOutput, frame: &Frame, cfg: &MappingConfig) -> Result<(LossTerms, LossGrads)> {
    check_dims(frame, render)?;
    let (w, h) = frame.dims();
    let mut grads = LossGrads::zeros(w, h);
    let (color, depth) = photometric_depth_loss(render, frame, 1.0, cfg.depth_weight, &mut grads);

    let mut normal = 0.0;
    if cfg.normal_weight > 0.0 {
        let mut pixels: Vec<(usize, Vector3<f64>)> = Vec::new();
        for idx in 0..w * h {
            if !geometry_valid(frame, render, idx) {
                continue;
            }
            let Some(target) = frame.normal[idx] else {
                continue;
            };
            if render.normal[idx].norm() > 1e-12 {
                pixels.push((idx, target));
            }
        }
        if !pixels.is_empty() {
            let scale = cfg.normal_weight / pixels.len() as f64;
            for (idx, target) in pixels {
                let n = render.normal[idx];
                let len = n.norm();
                let unit = n / len;
                let cos = unit.dot(&target);
                normal += 1.0 - cos;
                // d(1 - n̂·t)/dn = -(t - n̂ (n̂·t)) / |n|
                grads.normal[idx] = -(target - unit * cos) * (scale / len);
            }
            normal *= scale;
        }
    }
    let terms = LossTerms {
        total: color + depth + normal,
        color,
        depth,
        normal,
    };
    Ok((terms, grads))
}

/// One row of a mapping loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingStep {
    pub iteration: usize,
    /// Index of the frame within the window.
    pub frame: usize,
    pub loss: LossTerms,
}

/// Attributes per-pixel residuals to the dominant surfel of each pixel.
fn record_stats(map: &mut SurfelMap, frame: &Frame, render: &RenderOutput) {
    for idx in 0..frame.color.len() {
        let Some(id) = render.dominant_id[idx] else {
            continue;
        };
        let depth_err = if geometry_valid(frame, render, idx) {
            (render.depth[idx] - frame.depth[idx]).abs()
        } else {
            0.0
        };
        map.record_error(id, depth_err, color_l1(&render.color[idx], &frame.color[idx]));
    }
}

/// Runs `iterations` optimizer steps over the window, visiting frames
/// round-robin. Optimizer state starts fresh on every call.
pub fn optimize_window(
    map: &mut SurfelMap,
    window: &[(&Frame, &Pose)],
    k: &Intrinsics,
    render_cfg: &RenderConfig,
    cfg: &MappingConfig,
    iterations: usize,
) -> Result<Vec<MappingStep>> {
    if iterations == 0 || map.is_empty() {
        return Ok(Vec::new());
    }
    if window.is_empty() {
        return Err(Error::InvalidInput("mapping window has no frames".into()));
    }
    let n = map.len();
    let lr = &cfg.learning_rates;
    let (_, radius) = map.extent();
    let extent = radius.max(1e-2);
    let mut opt_p = Adam::new(3 * n, lr.position * extent);
    let mut opt_q = Adam::new(4 * n, lr.rotation);
    let mut opt_s = Adam::new(2 * n, lr.log_scale);
    let mut opt_a = Adam::new(n, lr.logit_opacity);
    let mut opt_c = Adam::new(3 * n, lr.color);
    let mut delta = Vec::new();
    let mut flat = Vec::new();
    let mut trace = Vec::with_capacity(iterations);

    for it in 0..iterations {
        let fi = it % window.len();
        let (frame, pose) = window[fi];
        let out = render(map, pose, k, render_cfg);
        let (loss, grads) = mapping_loss(&out, frame, cfg)?;
        trace.push(MappingStep {
            iteration: it,
            frame: fi,
            loss,
        });
        record_stats(map, frame, &out);
        let g = backward_surfels(map, pose, k, render_cfg, &out, &grads);

        let surfels = map.surfels_mut();
        let mut apply = |opt: &mut Adam, width: usize, grad: &dyn Fn(usize, usize) -> f64| {
            flat.clear();
            flat.extend((0..n * width).map(|i| grad(i / width, i % width)));
            delta.resize(n * width, 0.0);
            opt.delta(&flat, &mut delta);
            delta.clone()
        };
        let dp = apply(&mut opt_p, 3, &|s, j| g.position[s][j]);
        let dq = apply(&mut opt_q, 4, &|s, j| g.rotation[s][j]);
        let ds = apply(&mut opt_s, 2, &|s, j| g.log_scale[s][j]);
        let da = apply(&mut opt_a, 1, &|s, _| g.logit_opacity[s]);
        let dc = apply(&mut opt_c, 3, &|s, j| g.color[s][j]);
        for (i, s) in surfels.iter_mut().enumerate() {
            for j in 0..3 {
                s.position[j] += dp[3 * i + j];
                s.color[j] = (s.color[j] + dc[3 * i + j]).clamp(0.0, 1.0);
            }
            // gradient order is (w, x, y, z)
            s.rotation.w += dq[4 * i];
            s.rotation.i += dq[4 * i + 1];
            s.rotation.j += dq[4 * i + 2];
            s.rotation.k += dq[4 * i + 3];
            s.normalize_rotation();
            s.log_scale[0] += ds[2 * i];
            s.log_scale[1] += ds[2 * i + 1];
            s.logit_opacity += da[i];
        }
        #[cfg(debug_assertions)]
        if let Err(e) = map.check_invariants() {
            panic!("surfel invariant violated after mapping iteration {it}: {e}");
        }
    }
    Ok(trace)
}
