//! Analytic gradients of the rendered buffers.
//!
//! The backward pass replays each pixel's front-to-back traversal (the
//! forward pass is deterministic, so the replay visits exactly the same
//! intersections) and then walks the hit list back to front to propagate
//! through the transmittance chain. Nothing per-intersection is stored
//! between passes.
//!
//! Depth and normal gradients follow the selection the forward pass recorded
//! in [`RenderOutput::depth_source`]; the distortion value itself carries no
//! gradient.
//!
//! Pose gradients are taken with respect to a left-multiplied twist,
//! `T ← exp(ξ)·T`, so a camera-frame point moves by `ρ + φ × x` and a
//! camera-frame direction by `φ × d`. The depth of a hit point is
//! `ẑ = (p̂ + t̂_r)_z` where `t̂_r` runs from the surfel center to the hit;
//! with `radial = false` the pose derivative of `ẑ` keeps only the center
//! term (the weights still see the full intersection geometry).

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::frame::{Frame, Rgb};
use crate::geometry::{Intrinsics, Pose};
use crate::grid::Grid;
use crate::par;
use crate::raster::{
    shade_pixel, traverse_pixel, DepthSource, Hit, PixelEval, Prepared, Projected, RenderConfig, RenderOutput,
};
use crate::surfel_map::{rotation_matrix_vjp, SurfelMap};

/// Per-pixel gradients of a loss with respect to the rendered buffers.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub color: Grid<Rgb>,
    pub depth: Grid<f64>,
    pub normal: Grid<Vector3<f64>>,
}

impl LossGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: Grid::filled(width, height, [0.0; 3]),
            depth: Grid::filled(width, height, 0.0),
            normal: Grid::filled(width, height, Vector3::zeros()),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    #[inline]
    fn is_zero_at(&self, idx: usize) -> bool {
        self.color[idx] == [0.0; 3] && self.depth[idx] == 0.0 && self.normal[idx] == Vector3::zeros()
    }
}

/// Gradients with respect to every surfel's optimization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfelGrads {
    pub position: Vec<Vector3<f64>>,
    /// `(w, x, y, z)` order, tangent to the unit sphere.
    pub rotation: Vec<[f64; 4]>,
    pub log_scale: Vec<[f64; 2]>,
    pub logit_opacity: Vec<f64>,
    pub color: Vec<Rgb>,
}

impl SurfelGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            log_scale: vec![[0.0; 2]; n],
            logit_opacity: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().flatten().all(|x| x.is_finite())
            && self.log_scale.iter().flatten().all(|x| x.is_finite())
            && self.logit_opacity.iter().all(|x| x.is_finite())
            && self.color.iter().flatten().all(|x| x.is_finite())
    }
}

/// Gradient with respect to a left-multiplied twist `(ρ, φ)` at the current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGrad(pub Vector6<f64>);

impl PoseGrad {
    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

/// Adjoints of the per-hit forward quantities.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct HitAdjoint {
    /// Through the rendered depth.
    pub z: f64,
    pub gauss: f64,
    /// Through the rendered normal.
    pub normal: Vector3<f64>,
    pub opacity: f64,
    pub color: Rgb,
}

/// Camera-frame gradients of one surfel's geometry.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CamGrad {
    pub center: Vector3<f64>,
    pub tu: Vector3<f64>,
    pub tv: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub su: f64,
    pub sv: f64,
}

impl CamGrad {
    /// Contribution to the left-perturbation twist gradient.
    #[inline]
    pub fn twist(&self, p: &Projected) -> Vector6<f64> {
        let rot =
            p.center.cross(&self.center) + p.tu.cross(&self.tu) + p.tv.cross(&self.tv) + p.normal.cross(&self.normal);
        Vector6::new(self.center.x, self.center.y, self.center.z, rot.x, rot.y, rot.z)
    }
}

/// Per-hit adjoints for one pixel, given the loss gradients on its outputs.
pub(crate) fn hit_adjoints(
    hits: &[Hit],
    prims: &[Projected],
    ev: &PixelEval,
    source: DepthSource,
    g_color: &Rgb,
    g_depth: f64,
    g_normal: &Vector3<f64>,
    out: &mut Vec<HitAdjoint>,
) {
    out.clear();
    if hits.is_empty() {
        return;
    }
    let w_sum = ev.alpha_sum;
    let blend_normal = source != DepthSource::Dominant;
    for (i, h) in hits.iter().enumerate() {
        let p = &prims[h.prim as usize];
        let mut gw = g_color[0] * p.color[0] + g_color[1] * p.color[1] + g_color[2] * p.color[2];
        let mut adj = HitAdjoint {
            color: [g_color[0] * h.weight, g_color[1] * h.weight, g_color[2] * h.weight],
            ..HitAdjoint::default()
        };
        if blend_normal {
            gw += g_normal.dot(&p.normal);
            adj.normal = g_normal * h.weight;
        }
        match source {
            DepthSource::Blend if w_sum > 0.0 => {
                gw += g_depth * (h.z - ev.mean_depth) / w_sum;
                adj.z = g_depth * h.weight / w_sum;
            }
            DepthSource::Median if ev.median == Some(i) => adj.z = g_depth,
            DepthSource::Dominant if ev.dominant == Some(i) => {
                adj.z = g_depth;
                adj.normal = *g_normal;
            }
            _ => {}
        }
        // stash ∂L/∂ω in the opacity slot until the back-to-front sweep
        adj.opacity = gw;
        out.push(adj);
    }
    // ∂L/∂a_i = T_i (∂L/∂ω_i − B_i), B_i = Σ_{j>i} ∂L/∂ω_j · a_j Π_{i<k<j} (1 − a_k)
    let mut b = 0.0;
    for (h, adj) in hits.iter().zip(out.iter_mut()).rev() {
        let gw = adj.opacity;
        let ga = h.t_before * (gw - b);
        b = gw * h.a + (1.0 - h.a) * b;
        adj.opacity = ga * h.g;
        adj.gauss = ga * prims[h.prim as usize].opacity;
    }
}

/// Backpropagates one hit's adjoints to the camera-frame surfel geometry.
///
/// With `radial = false` the depth adjoint bypasses the plane intersection
/// and lands on the center's z coordinate only.
#[inline]
pub(crate) fn intersection_vjp(p: &Projected, ray: &Vector3<f64>, h: &Hit, adj: &HitAdjoint, radial: bool) -> CamGrad {
    let gu = -adj.gauss * h.u * h.g;
    let gv = -adj.gauss * h.v * h.g;
    let gru = gu / p.su;
    let grv = gv / p.sv;
    let r = ray * h.z - p.center;
    let mut out = CamGrad {
        su: -gu * h.u / p.su,
        sv: -gv * h.v / p.sv,
        tu: r * gru,
        tv: r * grv,
        ..CamGrad::default()
    };
    let g_hit = p.tu * gru + p.tv * grv;
    let mut g_center = -g_hit;
    let mut gz = g_hit.dot(ray);
    if radial {
        gz += adj.z;
    } else {
        g_center.z += adj.z;
    }
    // z = (n·c) / (n·d)
    let denom = p.normal.dot(ray);
    let ga = gz / denom;
    let gb = -gz * h.z / denom;
    g_center += p.normal * ga;
    out.center = g_center;
    out.normal = p.center * ga + ray * gb + adj.normal;
    out
}

/// [`hit_adjoints`] specialized to tracking: no normal gradient, and only the
/// adjoints the pose needs. Per hit: Gaussian adjoint from the color loss,
/// Gaussian adjoint from the depth loss, and depth adjoint.
fn tracking_adjoints(
    hits: &[Hit],
    prims: &[Projected],
    ev: &PixelEval,
    g_color: &Rgb,
    g_depth: f64,
    out: &mut Vec<[f64; 3]>,
) {
    out.clear();
    let w_sum = ev.alpha_sum;
    for (i, h) in hits.iter().enumerate() {
        let c = &prims[h.prim as usize].color;
        let gw_c = g_color[0] * c[0] + g_color[1] * c[1] + g_color[2] * c[2];
        let (gw_d, z) = match ev.source {
            DepthSource::Blend if w_sum > 0.0 => (g_depth * (h.z - ev.mean_depth) / w_sum, g_depth * h.weight / w_sum),
            DepthSource::Median if ev.median == Some(i) => (0.0, g_depth),
            DepthSource::Dominant if ev.dominant == Some(i) => (0.0, g_depth),
            _ => (0.0, 0.0),
        };
        // ∂L/∂ω parked in the first two slots until the back-to-front sweep
        out.push([gw_c, gw_d, z]);
    }
    let (mut b_c, mut b_d) = (0.0, 0.0);
    for (h, adj) in hits.iter().zip(out.iter_mut()).rev() {
        let [gw_c, gw_d, _] = *adj;
        let opacity = prims[h.prim as usize].opacity;
        adj[0] = h.t_before * (gw_c - b_c) * opacity;
        adj[1] = h.t_before * (gw_d - b_d) * opacity;
        b_c = gw_c * h.a + (1.0 - h.a) * b_c;
        b_d = gw_d * h.a + (1.0 - h.a) * b_d;
    }
}

/// Camera-frame center gradient of one hit for a unit adjoint on its
/// Gaussian value; the `center` part of [`intersection_vjp`].
#[inline]
fn gauss_center_grad(p: &Projected, ray: &Vector3<f64>, h: &Hit) -> Vector3<f64> {
    let g_hit = p.tu * (-h.u * h.g / p.su) + p.tv * (-h.v * h.g / p.sv);
    p.normal * (g_hit.dot(ray) / p.normal.dot(ray)) - g_hit
}

#[derive(Debug, Clone, Copy, Default)]
struct SlotGrad {
    cam: CamGrad,
    opacity: f64,
    color: Rgb,
}

impl SlotGrad {
    fn add(&mut self, g: &CamGrad, adj: &HitAdjoint) {
        self.cam.center += g.center;
        self.cam.tu += g.tu;
        self.cam.tv += g.tv;
        self.cam.normal += g.normal;
        self.cam.su += g.su;
        self.cam.sv += g.sv;
        self.opacity += adj.opacity;
        for (c, a) in self.color.iter_mut().zip(adj.color) {
            *c += a;
        }
    }
}

/// Replays a tile and feeds every hit's adjoints to `sink`.
fn replay_tile(
    prep: &Prepared,
    t: usize,
    k: &Intrinsics,
    cfg: &RenderConfig,
    render: &RenderOutput,
    grads: &LossGrads,
    mut sink: impl FnMut(&Projected, &Vector3<f64>, &Hit, &HitAdjoint),
) {
    let list = prep.tile_list(t);
    let mut hits = Vec::new();
    let mut scratch = Vec::new();
    let mut adjs = Vec::new();
    let w = k.width;
    for (col, row) in prep.tile_coords(t) {
        let idx = row * w + col;
        if grads.is_zero_at(idx) {
            continue;
        }
        traverse_pixel(col, row, list, &prep.prims, k, cfg, &mut hits);
        if hits.is_empty() {
            continue;
        }
        let ev = shade_pixel(&hits, &prep.prims, cfg, false, &mut scratch);
        hit_adjoints(
            &hits,
            &prep.prims,
            &ev,
            render.depth_source[idx],
            &grads.color[idx],
            grads.depth[idx],
            &grads.normal[idx],
            &mut adjs,
        );
        let ray = k.ray(col as f64, row as f64);
        for (h, adj) in hits.iter().zip(&adjs) {
            sink(&prep.prims[h.prim as usize], &ray, h, adj);
        }
    }
}

/// Gradients of `Σ_pixels ⟨grads, rendered buffers⟩` with respect to every
/// surfel parameter.
pub fn backward_surfels(
    map: &SurfelMap,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    render: &RenderOutput,
    grads: &LossGrads,
) -> SurfelGrads {
    let prep = Prepared::new(map.surfels(), pose, k, cfg);
    let per_tile = par::map_range(prep.tile_count(), |t| {
        let mut slots = vec![SlotGrad::default(); prep.tile_list(t).len()];
        replay_tile(&prep, t, k, cfg, render, grads, |p, ray, h, adj| {
            let g = intersection_vjp(p, ray, h, adj, true);
            slots[h.slot as usize].add(&g, adj);
        });
        slots
    });

    // merge in tile order so the sum is reproducible
    let mut cam = vec![SlotGrad::default(); prep.prims.len()];
    for (t, slots) in per_tile.iter().enumerate() {
        for (slot, g) in prep.tile_list(t).iter().zip(slots) {
            let acc = &mut cam[*slot as usize];
            acc.cam.center += g.cam.center;
            acc.cam.tu += g.cam.tu;
            acc.cam.tv += g.cam.tv;
            acc.cam.normal += g.cam.normal;
            acc.cam.su += g.cam.su;
            acc.cam.sv += g.cam.sv;
            acc.opacity += g.opacity;
            for (c, a) in acc.color.iter_mut().zip(g.color) {
                *c += a;
            }
        }
    }

    let mut out = SurfelGrads::zeros(map.len());
    let rt = pose.rotation.transpose();
    for (p, g) in prep.prims.iter().zip(&cam) {
        let s = &map.surfels()[p.id];
        out.position[p.id] = rt * g.cam.center;
        let g_frame = Matrix3::from_columns(&[rt * g.cam.tu, rt * g.cam.tv, rt * g.cam.normal]);
        out.rotation[p.id] = rotation_matrix_vjp(&s.rotation, &g_frame);
        out.log_scale[p.id] = [g.cam.su * p.su, g.cam.sv * p.sv];
        out.logit_opacity[p.id] = g.opacity * p.opacity * (1.0 - p.opacity);
        out.color[p.id] = g.color;
    }
    out
}

/// Gradient of `Σ_pixels ⟨grads, rendered buffers⟩` with respect to a
/// left-multiplied twist on `pose`.
pub fn backward_pose(
    map: &SurfelMap,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    render: &RenderOutput,
    grads: &LossGrads,
    radial: bool,
) -> PoseGrad {
    let prep = Prepared::new(map.surfels(), pose, k, cfg);
    let per_tile = par::map_range(prep.tile_count(), |t| {
        let mut acc = Vector6::zeros();
        replay_tile(&prep, t, k, cfg, render, grads, |p, ray, h, adj| {
            acc += intersection_vjp(p, ray, h, adj, radial).twist(p);
        });
        acc
    });
    PoseGrad(per_tile.into_iter().fold(Vector6::zeros(), |a, b| a + b))
}

/// Result of [`tracking_pass`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingPass {
    /// Weighted mean L1 color term.
    pub color: f64,
    /// Weighted mean L1 depth term over geometry-valid pixels.
    pub depth: f64,
    /// Pixels with input depth and a valid render.
    pub valid_pixels: usize,
    pub grad: PoseGrad,
}

/// The tracking loss and its pose gradient from a single traversal per pixel.
///
/// Equivalent to rendering, evaluating the tracking loss and calling
/// [`backward_pose`], but without replaying the traversal. The depth term is
/// normalized by the number of valid pixels, which is only known after the
/// sweep, so its gradient is accumulated unnormalized and rescaled at the end.
#[allow(clippy::too_many_arguments)]
pub fn tracking_pass(
    map: &SurfelMap,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    frame: &Frame,
    color_weight: f64,
    depth_weight: f64,
    radial: bool,
) -> TrackingPass {
    let prep = Prepared::new(map.surfels(), pose, k, cfg);
    let n = k.pixel_count();
    let color_scale = color_weight / (3 * n) as f64;
    let per_tile = par::map_range(prep.tile_count(), |t| {
        let list = prep.tile_list(t);
        let (mut hits, mut scratch, mut adjs) = (Vec::new(), Vec::new(), Vec::new());
        let (mut g_color, mut g_depth) = (Vector6::zeros(), Vector6::zeros());
        let (mut color_sum, mut depth_sum, mut valid) = (0.0, 0.0, 0usize);
        for (col, row) in prep.tile_coords(t) {
            let idx = row * k.width + col;
            traverse_pixel(col, row, list, &prep.prims, k, cfg, &mut hits);
            let ev = shade_pixel(&hits, &prep.prims, cfg, false, &mut scratch);
            let target = &frame.color[idx];
            let mut gc = [0.0; 3];
            for ch in 0..3 {
                let d = ev.color[ch] - target[ch];
                color_sum += d.abs();
                gc[ch] = color_scale * sign(d);
            }
            let mut gd = 0.0;
            if frame.depth[idx] > 0.0 && ev.alpha_sum > cfg.valid_threshold {
                let d = ev.depth - frame.depth[idx];
                depth_sum += d.abs();
                gd = if depth_weight > 0.0 { sign(d) } else { 0.0 };
                valid += 1;
            }
            if hits.is_empty() {
                continue;
            }
            let ray = k.ray(col as f64, row as f64);
            tracking_adjoints(&hits, &prep.prims, &ev, &gc, gd, &mut adjs);
            // with a zero normal adjoint a hit's twist gradient is
            // `(g, z·ray × g)` for its center gradient `g`, so per pixel it
            // suffices to sum `g` and `z·g` and take one cross product
            let (mut c_sum, mut c_zsum) = (Vector3::zeros(), Vector3::zeros());
            let (mut d_sum, mut d_zsum) = (Vector3::zeros(), Vector3::zeros());
            let mut frozen = Vector3::zeros();
            for (h, &[ac, ad, az]) in hits.iter().zip(&adjs) {
                let p = &prep.prims[h.prim as usize];
                if ac != 0.0 || ad != 0.0 {
                    let g = gauss_center_grad(p, &ray, h);
                    c_sum += g * ac;
                    c_zsum += g * (ac * h.z);
                    d_sum += g * ad;
                    d_zsum += g * (ad * h.z);
                }
                if az != 0.0 {
                    if radial {
                        let g = p.normal * (az / p.normal.dot(&ray));
                        d_sum += g;
                        d_zsum += g * h.z;
                    } else {
                        // depth tied to the center's z with the ray offset frozen
                        d_sum.z += az;
                        frozen += p.center * az;
                    }
                }
            }
            let c_rot = ray.cross(&c_zsum);
            let d_rot = ray.cross(&d_zsum) + frozen.cross(&Vector3::z());
            g_color += Vector6::new(c_sum.x, c_sum.y, c_sum.z, c_rot.x, c_rot.y, c_rot.z);
            g_depth += Vector6::new(d_sum.x, d_sum.y, d_sum.z, d_rot.x, d_rot.y, d_rot.z);
        }
        (g_color, g_depth, color_sum, depth_sum, valid)
    });
    let (mut g_color, mut g_depth) = (Vector6::zeros(), Vector6::zeros());
    let (mut color_sum, mut depth_sum, mut valid) = (0.0, 0.0, 0);
    for (gc, gd, cs, ds, v) in per_tile {
        g_color += gc;
        g_depth += gd;
        color_sum += cs;
        depth_sum += ds;
        valid += v;
    }
    let depth_scale = if valid > 0 { depth_weight / valid as f64 } else { 0.0 };
    TrackingPass {
        color: if color_weight > 0.0 {
            color_sum * color_scale
        } else {
            0.0
        },
        depth: depth_sum * depth_scale,
        valid_pixels: valid,
        grad: PoseGrad(g_color + g_depth * depth_scale),
    }
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
