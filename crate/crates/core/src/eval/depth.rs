//! Rendered-depth accuracy against reference depth maps.

use crate::frame::Frame;
use crate::geometry::{Intrinsics, Pose};
use crate::raster::{render, RenderConfig};
use crate::surfel_map::SurfelMap;

/// Mean `|rendered − reference|` over pixels that are valid in the render
/// and have positive reference depth, pooled over all views. `None` when no
/// pixel qualifies.
pub fn depth_l1(map: &SurfelMap, views: &[(&Frame, &Pose)], k: &Intrinsics, cfg: &RenderConfig) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (frame, pose) in views {
        let out = render(map, pose, k, cfg);
        for idx in 0..out.depth.len() {
            let reference = frame.depth[idx];
            if out.valid[idx] && reference > 0.0 {
                sum += (out.depth[idx] - reference).abs();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}
