//! Per-pixel traversal and compositing shared by the forward and backward
//! passes.

use nalgebra::Vector3;

use super::{DepthMode, DepthSource, Projected, RenderConfig};
use crate::frame::Rgb;
use crate::geometry::Intrinsics;

/// One accepted intersection in traversal order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    /// Index into the prepared primitive list.
    pub prim: u32,
    /// Position of the primitive in the tile list.
    pub slot: u32,
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub g: f64,
    /// `α·G`.
    pub a: f64,
    /// Transmittance in front of this hit.
    pub t_before: f64,
    pub weight: f64,
}

/// Front-to-back traversal of a pixel ray. Fills `hits` and returns the final
/// transmittance.
#[inline]
pub(crate) fn traverse_pixel(
    col: usize,
    row: usize,
    list: &[u32],
    prims: &[Projected],
    k: &Intrinsics,
    cfg: &RenderConfig,
    hits: &mut Vec<Hit>,
) -> f64 {
    hits.clear();
    let ray = k.ray(col as f64, row as f64);
    let (c, r) = (col as i64, row as i64);
    let mut t = 1.0;
    for (slot, &pi) in list.iter().enumerate() {
        let p = &prims[pi as usize];
        if !p.covers(c, r) {
            continue;
        }
        let Some(hit) = p.intersect(&ray, cfg.gauss_cutoff) else {
            continue;
        };
        let a = p.opacity * hit.gaussian;
        if a < cfg.min_alpha {
            continue;
        }
        let weight = a * t;
        hits.push(Hit {
            prim: pi,
            slot: slot as u32,
            u: hit.u,
            v: hit.v,
            z: hit.z,
            g: hit.gaussian,
            a,
            t_before: t,
            weight,
        });
        t *= 1.0 - a;
        if t < cfg.min_transmittance {
            break;
        }
    }
    t
}

/// Composited values of one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelEval {
    pub color: Rgb,
    pub alpha_sum: f64,
    pub mean_depth: f64,
    pub distortion: f64,
    /// Index into the hit list of the largest weight.
    pub dominant: Option<usize>,
    /// Index into the hit list where accumulated weight first exceeds 0.5.
    pub median: Option<usize>,
    /// Output depth and normal after applying the depth mode.
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub source: DepthSource,
}

/// Composites one pixel. Without `keep_distortion` the distortion is only
/// evaluated where the adaptive rule needs it and is reported as 0 elsewhere.
pub(crate) fn shade_pixel(
    hits: &[Hit],
    prims: &[Projected],
    cfg: &RenderConfig,
    keep_distortion: bool,
    scratch: &mut Vec<(f64, f64)>,
) -> PixelEval {
    let mut color = [0.0; 3];
    let mut alpha_sum = 0.0;
    let mut normal = Vector3::zeros();
    let mut dominant: Option<usize> = None;
    let mut best = f64::NEG_INFINITY;
    let mut median = None;
    for (i, h) in hits.iter().enumerate() {
        let p = &prims[h.prim as usize];
        for (c, pc) in color.iter_mut().zip(p.color) {
            *c += h.weight * pc;
        }
        normal += p.normal * h.weight;
        alpha_sum += h.weight;
        if median.is_none() && alpha_sum > 0.5 {
            median = Some(i);
        }
        if h.weight > best {
            best = h.weight;
            dominant = Some(i);
        }
    }
    if hits.is_empty() {
        return PixelEval {
            color,
            alpha_sum,
            mean_depth: 0.0,
            distortion: 0.0,
            dominant: None,
            median: None,
            depth: 0.0,
            normal,
            source: DepthSource::Empty,
        };
    }
    // normalized weights make a lone hit reproduce its depth exactly
    let mean_depth = hits.iter().map(|h| (h.weight / alpha_sum) * h.z).sum::<f64>();

    let median = median.or(Some(hits.len() - 1));
    let dom = dominant.expect("non-empty hit list has a dominant hit");
    // substitution requires the mean to lie behind the dominant hit
    let decides = cfg.depth_mode == DepthMode::Adaptive && mean_depth > hits[dom].z;
    let distortion = if keep_distortion || decides {
        scratch.clear();
        scratch.extend(hits.iter().map(|h| (h.z, h.weight)));
        distortion_of(scratch)
    } else {
        0.0
    };
    let (depth, out_normal, source) = match cfg.depth_mode {
        DepthMode::Mean => (mean_depth, normal, DepthSource::Blend),
        DepthMode::Median => (hits[median.unwrap()].z, normal, DepthSource::Median),
        DepthMode::Adaptive => {
            let dz = hits[dom].z;
            let dn = prims[hits[dom].prim as usize].normal;
            let (d, n, swapped) =
                super::adaptive_substitute(mean_depth, &normal, dz, &dn, distortion, cfg.distortion_threshold);
            (
                d,
                n,
                if swapped {
                    DepthSource::Dominant
                } else {
                    DepthSource::Blend
                },
            )
        }
    };
    PixelEval {
        color,
        alpha_sum,
        mean_depth,
        distortion,
        dominant,
        median,
        depth,
        normal: out_normal,
        source,
    }
}

/// Distortion of `(z, ω)` pairs. Sorts in place, then accumulates
/// `2 Σ_j ω_j (z_j·W_{<j} − Σ_{i<j} ω_i z_i)` in one sweep.
pub(crate) fn distortion_of(pairs: &mut [(f64, f64)]) -> f64 {
    if pairs.len() < 2 {
        return 0.0;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w_acc = 0.0;
    let mut wz_acc = 0.0;
    let mut total = 0.0;
    for &(z, w) in pairs.iter() {
        total += w * (z * w_acc - wz_acc);
        w_acc += w;
        wz_acc += w * z;
    }
    2.0 * total
}
