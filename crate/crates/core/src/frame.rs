use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{compute_normal_map, Intrinsics};
use crate::grid::Grid;

pub type Rgb = [f64; 3];

/// One RGB-D observation with its derived normal map.
#[derive(Debug, Clone)]
pub struct Frame {
    pub timestamp: f64,
    /// RGB in `[0, 1]`.
    pub color: Grid<Rgb>,
    /// Metric depth; 0 marks an invalid pixel.
    pub depth: Grid<f64>,
    /// Camera-frame unit normals facing the camera, `None` where undefined.
    pub normal: Grid<Option<Vector3<f64>>>,
}

impl Frame {
    pub fn new(timestamp: f64, color: Grid<Rgb>, depth: Grid<f64>, k: &Intrinsics) -> Result<Self> {
        if color.dims() != depth.dims() {
            return Err(Error::ResolutionMismatch {
                expected: color.dims(),
                got: depth.dims(),
            });
        }
        if depth.dims() != (k.width, k.height) {
            return Err(Error::ResolutionMismatch {
                expected: (k.width, k.height),
                got: depth.dims(),
            });
        }
        if depth.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidInput("depth must be finite and ≥ 0".into()));
        }
        let normal = compute_normal_map(&depth, k);
        Ok(Self {
            timestamp,
            color,
            depth,
            normal,
        })
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    /// Keeps every `factor`-th pixel starting at 0; normals are subsampled from
    /// the full-resolution map rather than recomputed.
    pub fn downsampled(&self, factor: usize) -> Frame {
        if factor == 1 {
            return self.clone();
        }
        let w = self.width().div_ceil(factor);
        let h = self.height().div_ceil(factor);
        let pick = |c: usize, r: usize| (c * factor, r * factor);
        Frame {
            timestamp: self.timestamp,
            color: Grid::from_fn(w, h, |c, r| {
                let (c, r) = pick(c, r);
                *self.color.get(c, r)
            }),
            depth: Grid::from_fn(w, h, |c, r| {
                let (c, r) = pick(c, r);
                *self.depth.get(c, r)
            }),
            normal: Grid::from_fn(w, h, |c, r| {
                let (c, r) = pick(c, r);
                *self.normal.get(c, r)
            }),
        }
    }
}
