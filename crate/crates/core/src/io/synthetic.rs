//! Analytic scenes of textured planes and oriented boxes, ray-cast to exact
//! depth.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::{Frame, Rgb};
use crate::geometry::{Intrinsics, Pose};
use crate::grid::Grid;

/// Smooth procedural color: `base + amplitude · sin(frequency · (p·axis) + phase)`
/// per channel, summed over two axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub base: Rgb,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: [f64; 3],
}

impl Texture {
    pub fn new(base: Rgb, amplitude: f64, frequency: f64) -> Self {
        Self {
            base,
            amplitude,
            frequency,
            phase: [0.0, 2.1, 4.2],
        }
    }

    pub fn flat(base: Rgb) -> Self {
        Self::new(base, 0.0, 1.0)
    }

    pub fn color(&self, p: &Vector3<f64>) -> Rgb {
        let a = Vector3::new(1.0, 0.37, 0.61);
        let b = Vector3::new(-0.29, 1.0, 0.83);
        let mut c = [0.0; 3];
        for ch in 0..3 {
            let s = (self.frequency * a.dot(p) + self.phase[ch]).sin()
                + (1.3 * self.frequency * b.dot(p) - self.phase[ch]).sin();
            c[ch] = (self.base[ch] + 0.5 * self.amplitude * s).clamp(0.0, 1.0);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Infinite plane through `point` with unit `normal`.
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
        texture: Texture,
    },
    /// Box with `rotation` mapping box axes to world axes.
    Cuboid {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        rotation: Matrix3<f64>,
        texture: Texture,
    },
}

impl Primitive {
    pub fn plane(point: Vector3<f64>, normal: Vector3<f64>, texture: Texture) -> Self {
        Self::Plane {
            point,
            normal: normal.normalize(),
            texture,
        }
    }

    pub fn cuboid(center: Vector3<f64>, half_extents: Vector3<f64>, texture: Texture) -> Self {
        Self::Cuboid {
            center,
            half_extents,
            rotation: Matrix3::identity(),
            texture,
        }
    }

    /// Smallest ray parameter `t > eps` at which `origin + t·dir` hits the
    /// surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Self::Plane { point, normal, .. } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > EPS).then_some(t)
            }
            Self::Cuboid {
                center,
                half_extents,
                rotation,
                ..
            } => {
                let o = rotation.transpose() * (origin - center);
                let d = rotation.transpose() * dir;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i].abs() > half_extents[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[i] - o[i]) / d[i];
                    let b = (half_extents[i] - o[i]) / d[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    pub fn texture(&self) -> &Texture {
        match self {
            Self::Plane { texture, .. } | Self::Cuboid { texture, .. } => texture,
        }
    }
}

/// A parametric scene with its ground-truth camera trajectory
/// (world-to-camera poses).
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub name: String,
    pub intrinsics: Intrinsics,
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<Pose>,
    /// Seconds between frames.
    pub frame_interval: f64,
}

impl SyntheticScene {
    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 * self.frame_interval
    }

    /// Renders frame `index` of the trajectory.
    pub fn frame(&self, index: usize, noise: Option<&DepthNoise>) -> Result<Frame> {
        let pose = self.trajectory.get(index).ok_or_else(|| {
            Error::InvalidInput(format!("frame {index} out of range ({} frames)", self.trajectory.len()))
        })?;
        let noise = noise.map(|n| DepthNoise {
            seed: n.seed.wrapping_add(index as u64),
            ..*n
        });
        render_synthetic(self, pose, &self.intrinsics, noise.as_ref(), self.timestamp(index))
    }

    /// Nearest surface hit along a world ray: `(t, primitive index)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.intersect(origin, dir) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }
}

/// Sensor corruption applied by [`render_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthNoise {
    /// Standard deviation of additive Gaussian depth noise (meters).
    pub sigma: f64,
    /// Probability that a pixel's depth is dropped to 0.
    pub dropout: f64,
    pub seed: u64,
}

impl DepthNoise {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            dropout: 0.01,
            seed,
        }
    }
}

/// Ray-casts the scene from `pose`. Depth is the z coordinate of the hit in
/// the camera frame; pixels that hit nothing get depth 0 and black color.
pub fn render_synthetic(
    scene: &SyntheticScene,
    pose: &Pose,
    k: &Intrinsics,
    noise: Option<&DepthNoise>,
    timestamp: f64,
) -> Result<Frame> {
    let origin = pose.camera_center();
    let rt = pose.rotation.transpose();
    let mut color = Grid::filled(k.width, k.height, [0.0; 3]);
    let mut depth = Grid::filled(k.width, k.height, 0.0);
    for row in 0..k.height {
        for col in 0..k.width {
            // camera ray with unit z, so the ray parameter equals depth
            let dir = rt * k.ray(col as f64, row as f64);
            if let Some((t, i)) = scene.cast(&origin, &dir) {
                let idx = row * k.width + col;
                depth[idx] = t;
                color[idx] = scene.primitives[i].texture().color(&(origin + dir * t));
            }
        }
    }
    if let Some(n) = noise {
        if !(n.sigma >= 0.0 && (0.0..=1.0).contains(&n.dropout)) {
            return Err(Error::InvalidInput(format!("invalid depth noise {n:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
        let gauss = Normal::new(0.0, n.sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for d in depth.as_mut_slice() {
            let e = gauss.sample(&mut rng);
            let drop = rand::Rng::gen_bool(&mut rng, n.dropout);
            if *d > 0.0 {
                *d = if drop { 0.0 } else { (*d + e).max(0.0) };
            }
        }
    }
    Frame::new(timestamp, color, depth, k)
}
