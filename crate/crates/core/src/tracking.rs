//! Camera pose estimation: gradient-based tracking against the surfel map and
//! an optional point-to-plane ICP tracker.

use std::str::FromStr;

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::backward::{tracking_pass, LossGrads};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{backproject, exp_se3, Intrinsics, Pose, Twist};
use crate::grid::Grid;
use crate::mapping::{check_dims, photometric_depth_loss, LossTerms};
use crate::optim::Adam;
use crate::raster::{RenderConfig, RenderOutput};
use crate::surfel_map::SurfelMap;

/// Fraction of the image that must be geometry-valid to attempt tracking.
pub const MIN_VALID_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerKind {
    #[default]
    Coupled,
    Icp,
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coupled" => Ok(Self::Coupled),
            "icp" => Ok(Self::Icp),
            _ => Err(Error::InvalidInput(format!(
                "unknown tracker '{s}' (expected coupled or icp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub color_weight: f64,
    pub depth_weight: f64,
    pub iterations: usize,
    /// Adam step size for the translational twist components (meters).
    pub translation_step: f64,
    /// Adam step size for the rotational twist components (radians).
    pub rotation_step: f64,
    /// Step sizes decay exponentially to this fraction by the last iteration.
    pub final_step_scale: f64,
    pub radial: bool,
    pub tracker: TrackerKind,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            color_weight: 0.5,
            depth_weight: 1.0,
            iterations: 50,
            translation_step: 1e-3,
            rotation_step: 2e-3,
            final_step_scale: 1.0,
            radial: true,
            tracker: TrackerKind::Coupled,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tracking: {m}")));
        if !(self.color_weight >= 0.0 && self.depth_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.color_weight == 0.0 && self.depth_weight == 0.0 {
            return bad("color and depth weights cannot both be zero");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.translation_step > 0.0 && self.rotation_step > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.final_step_scale > 0.0 && self.final_step_scale <= 1.0) {
            return bad("final_step_scale must be in (0, 1]");
        }
        Ok(())
    }
}

/// One row of a tracking residual trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingStep {
    pub iteration: usize,
    pub loss: LossTerms,
    pub valid_pixels: usize,
}

/// Tracking loss: weighted L1 color over all pixels plus weighted L1 depth
/// over pixels valid in both frame and render.
pub fn tracking_loss(render: &RenderOutput, frame: &Frame, cfg: &TrackingConfig) -> Result<(LossTerms, LossGrads)> {
    check_dims(frame, render)?;
    let (w, h) = frame.dims();
    let mut grads = LossGrads::zeros(w, h);
    let (color, depth) = photometric_depth_loss(render, frame, cfg.color_weight, cfg.depth_weight, &mut grads);
    let terms = LossTerms {
        total: color + depth,
        color,
        depth,
        normal: 0.0,
    };
    Ok((terms, grads))
}

/// Estimates the world-to-camera pose of `frame` starting from `init`.
/// Returns the lowest-loss pose observed, including `init` itself.
pub fn track_frame(
    map: &SurfelMap,
    frame: &Frame,
    init: &Pose,
    k: &Intrinsics,
    render_cfg: &RenderConfig,
    cfg: &TrackingConfig,
) -> Result<(Pose, Vec<TrackingStep>)> {
    track_frame_steps(map, frame, init, k, render_cfg, cfg, cfg.iterations)
}

/// [`track_frame`] with an explicit iteration count.
pub fn track_frame_steps(
    map: &SurfelMap,
    frame: &Frame,
    init: &Pose,
    k: &Intrinsics,
    render_cfg: &RenderConfig,
    cfg: &TrackingConfig,
    iterations: usize,
) -> Result<(Pose, Vec<TrackingStep>)> {
    if map.is_empty() {
        return Err(Error::Tracking {
            frame: None,
            reason: "map is empty".into(),
        });
    }
    let min_valid = (MIN_VALID_FRACTION * k.pixel_count() as f64).ceil() as usize;
    let mut opt_t = Adam::new(3, cfg.translation_step);
    let mut opt_r = Adam::new(3, cfg.rotation_step);
    let mut pose = *init;
    let mut best = (f64::INFINITY, *init);
    let mut trace = Vec::with_capacity(iterations + 1);
    let (mut dt, mut dr) = ([0.0; 3], [0.0; 3]);

    for it in 0..=iterations {
        let pass = tracking_pass(
            map,
            &pose,
            k,
            render_cfg,
            frame,
            cfg.color_weight,
            cfg.depth_weight,
            cfg.radial,
        );
        let valid = pass.valid_pixels;
        if it == 0 && valid < min_valid {
            return Err(Error::Tracking {
                frame: None,
                reason: format!(
                    "only {valid} of {} pixels overlap the map (need {min_valid})",
                    k.pixel_count()
                ),
            });
        }
        let loss = LossTerms {
            total: pass.color + pass.depth,
            color: pass.color,
            depth: pass.depth,
            normal: 0.0,
        };
        trace.push(TrackingStep {
            iteration: it,
            loss,
            valid_pixels: valid,
        });
        if valid >= min_valid && loss.total < best.0 {
            best = (loss.total, pose);
        }
        if it == iterations {
            break;
        }
        let decay = cfg.final_step_scale.powf(it as f64 / (iterations - 1).max(1) as f64);
        opt_t.set_lr(cfg.translation_step * decay);
        opt_r.set_lr(cfg.rotation_step * decay);
        let (gt, gr) = (pass.grad.translation(), pass.grad.rotation());
        opt_t.delta(gt.as_slice(), &mut dt);
        opt_r.delta(gr.as_slice(), &mut dr);
        let xi = Twist::new(Vector3::from(dt), Vector3::from(dr));
        pose = exp_se3(&xi).compose(&pose).orthonormalized();
    }
    Ok((best.1, trace))
}

/// Depth and normals of the model the ICP tracker aligns to, observed from
/// `pose` (world to camera). Normals are in that camera frame.
#[derive(Debug, Clone)]
pub struct IcpReference {
    pub pose: Pose,
    pub depth: Grid<f64>,
    pub normal: Grid<Option<Vector3<f64>>>,
}

impl IcpReference {
    pub fn from_frame(frame: &Frame, pose: &Pose) -> Self {
        Self {
            pose: *pose,
            depth: frame.depth.clone(),
            normal: frame.normal.clone(),
        }
    }

    /// Uses the rendered depth and normalized normals of valid pixels.
    pub fn from_render(render: &RenderOutput, pose: &Pose) -> Self {
        let (w, h) = render.dims();
        let mut depth = Grid::filled(w, h, 0.0);
        let mut normal = Grid::filled(w, h, None);
        for idx in 0..w * h {
            let n = render.normal[idx];
            if render.valid[idx] && render.depth[idx] > 0.0 && n.norm() > 1e-9 {
                depth[idx] = render.depth[idx];
                normal[idx] = Some(n.normalize());
            }
        }
        Self {
            pose: *pose,
            depth,
            normal,
        }
    }

    fn downsampled(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let (w, h) = self.depth.dims();
        let (dw, dh) = (w.div_ceil(factor), h.div_ceil(factor));
        Self {
            pose: self.pose,
            depth: Grid::from_fn(dw, dh, |c, r| *self.depth.get(c * factor, r * factor)),
            normal: Grid::from_fn(dw, dh, |c, r| *self.normal.get(c * factor, r * factor)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    /// Subsampling factors, coarse to fine.
    pub levels: Vec<usize>,
    pub iterations_per_level: usize,
    pub max_distance: f64,
    pub max_normal_angle_deg: f64,
    pub min_pairs: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            levels: vec![4, 2, 1],
            iterations_per_level: 10,
            max_distance: 0.1,
            max_normal_angle_deg: 30.0,
            min_pairs: 100,
        }
    }
}

/// Builds the point-to-plane normal equations for the left increment of the
/// camera-to-world pose. Returns `(H, b, pairs)` with `H ξ = b`.
fn icp_system(
    frame: &Frame,
    reference: &IcpReference,
    cam_to_world: &Pose,
    k: &Intrinsics,
    cfg: &IcpConfig,
) -> (Matrix6<f64>, Vector6<f64>, usize) {
    let cos_min = cfg.max_normal_angle_deg.to_radians().cos();
    let ref_to_world = reference.pose.inverse();
    let (w, h) = frame.dims();
    let mut hm = Matrix6::zeros();
    let mut b = Vector6::zeros();
    let mut pairs = 0;
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            let d = frame.depth[idx];
            let Some(n_src) = frame.normal[idx] else {
                continue;
            };
            if !(d > 0.0) {
                continue;
            }
            let Ok(p_cam) = backproject(col as f64, row as f64, d, k) else {
                continue;
            };
            let p = cam_to_world.transform_point(&p_cam);
            let q = reference.pose.transform_point(&p);
            if q.z <= 0.0 {
                continue;
            }
            let (u, v) = k.project(&q);
            let (uc, vr) = (u.round(), v.round());
            if uc < 0.0 || vr < 0.0 || uc >= w as f64 || vr >= h as f64 {
                continue;
            }
            let (uc, vr) = (uc as usize, vr as usize);
            let dr = *reference.depth.get(uc, vr);
            let Some(n_ref) = *reference.normal.get(uc, vr) else {
                continue;
            };
            let Ok(q_ref) = backproject(uc as f64, vr as f64, dr, k) else {
                continue;
            };
            let p_ref = ref_to_world.transform_point(&q_ref);
            let n = ref_to_world.transform_vector(&n_ref);
            if (p - p_ref).norm() > cfg.max_distance {
                continue;
            }
            if cam_to_world.transform_vector(&n_src).dot(&n) < cos_min {
                continue;
            }
            let r = n.dot(&(p - p_ref));
            let pxn = p.cross(&n);
            let j = Vector6::new(n.x, n.y, n.z, pxn.x, pxn.y, pxn.z);
            hm += j * j.transpose();
            b -= j * r;
            pairs += 1;
        }
    }
    (hm, b, pairs)
}

/// Least-norm solution of `H ξ = b`, zeroing directions with negligible
/// curvature.
fn solve_least_norm(h: &Matrix6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let svd = h.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Vector6::zeros();
    }
    svd.solve(b, smax * 1e-9).unwrap_or_else(|_| Vector6::zeros())
}

/// Coarse-to-fine projective point-to-plane ICP. Returns the refined
/// world-to-camera pose of `frame`.
pub fn icp_track(
    frame: &Frame,
    reference: &IcpReference,
    init: &Pose,
    k: &Intrinsics,
    cfg: &IcpConfig,
) -> Result<Pose> {
    if frame.dims() != reference.depth.dims() {
        return Err(Error::ResolutionMismatch {
            expected: frame.dims(),
            got: reference.depth.dims(),
        });
    }
    let mut cam_to_world = init.inverse();
    for (level, &factor) in cfg.levels.iter().enumerate() {
        let f = frame.downsampled(factor);
        let r = reference.downsampled(factor);
        let kl = k.downsampled(factor);
        for it in 0..cfg.iterations_per_level {
            let (hm, b, pairs) = icp_system(&f, &r, &cam_to_world, &kl, cfg);
            if level == 0 && it == 0 && pairs < cfg.min_pairs {
                return Err(Error::Tracking {
                    frame: None,
                    reason: format!(
                        "ICP found {pairs} correspondences at the coarsest level (need {})",
                        cfg.min_pairs
                    ),
                });
            }
            if pairs < 6 {
                break;
            }
            let xi = solve_least_norm(&hm, &b);
            cam_to_world = exp_se3(&Twist(xi)).compose(&cam_to_world).orthonormalized();
            if xi.norm() < 1e-12 {
                break;
            }
        }
    }
    Ok(cam_to_world.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_kind_parses() {
        assert_eq!("ICP".parse::<TrackerKind>().unwrap(), TrackerKind::Icp);
        assert_eq!("coupled".parse::<TrackerKind>().unwrap(), TrackerKind::Coupled);
        assert!("sgd".parse::<TrackerKind>().is_err());
    }

    #[test]
    fn config_rejects_zero_weights() {
        let cfg = TrackingConfig {
            color_weight: 0.0,
            depth_weight: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrackingConfig::default().validate().is_ok());
    }

    #[test]
    fn least_norm_solution_ignores_null_space() {
        let mut h = Matrix6::zeros();
        h[(2, 2)] = 4.0;
        h[(3, 3)] = 1.0;
        let b = Vector6::new(0.0, 0.0, 2.0, 1.0, 0.0, 0.0);
        let x = solve_least_norm(&h, &b);
        assert!((x - Vector6::new(0.0, 0.0, 0.5, 1.0, 0.0, 0.0)).norm() < 1e-12);
    }
}
