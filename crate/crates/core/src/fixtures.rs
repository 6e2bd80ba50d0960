//! Named synthetic scenes with pinned generation parameters. All scenes are
//! world Y-up.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::io::synthetic::{Primitive, SyntheticScene, Texture};

pub const FIXTURE_NAMES: [&str; 3] = ["box50", "edge", "basin"];

pub fn by_name(name: &str) -> Result<SyntheticScene> {
    match name {
        "box50" => Ok(box50()),
        "edge" => Ok(edge()),
        "basin" => Ok(basin()),
        other => Err(Error::Dataset(format!(
            "unknown synthetic fixture '{other}' (known: {})",
            FIXTURE_NAMES.join(", ")
        ))),
    }
}

fn up() -> Vector3<f64> {
    Vector3::y()
}

/// Floor, back wall and two boxes.
fn room() -> Vec<Primitive> {
    vec![
        Primitive::plane(
            Vector3::zeros(),
            Vector3::y(),
            Texture::new([0.55, 0.45, 0.35], 0.35, 9.0),
        ),
        Primitive::plane(
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::z(),
            Texture::new([0.35, 0.5, 0.6], 0.35, 7.0),
        ),
        Primitive::cuboid(
            Vector3::new(-0.15, 0.2, -0.2),
            Vector3::new(0.2, 0.2, 0.2),
            Texture::new([0.7, 0.3, 0.3], 0.3, 14.0),
        ),
        Primitive::cuboid(
            Vector3::new(0.4, 0.12, -0.55),
            Vector3::new(0.15, 0.12, 0.25),
            Texture::new([0.3, 0.65, 0.35], 0.3, 16.0),
        ),
    ]
}

/// 50 frames at 320×240 on a smooth arc around two boxes.
pub fn box50() -> SyntheticScene {
    let k = Intrinsics::new(256.0, 256.0, 159.5, 119.5, 320, 240).expect("valid intrinsics");
    let target = Vector3::new(0.05, 0.15, -0.35);
    let n = 50;
    let trajectory = (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let theta = -0.4 + 0.8 * s;
            let height = 0.65 + 0.05 * (std::f64::consts::TAU * s).sin();
            let eye = target + Vector3::new(1.3 * theta.sin(), height, 1.3 * theta.cos());
            Pose::look_at(&eye, &target, &up())
        })
        .collect();
    SyntheticScene {
        name: "box50".into(),
        intrinsics: k,
        primitives: room(),
        trajectory,
        frame_interval: 1.0 / 30.0,
    }
}

/// A box edge in front of a rear plane, seen from a few nearby views.
pub fn edge() -> SyntheticScene {
    let k = Intrinsics::new(128.0, 128.0, 79.5, 59.5, 160, 120).expect("valid intrinsics");
    let primitives = vec![
        Primitive::plane(
            Vector3::new(0.0, 0.0, -2.5),
            Vector3::z(),
            Texture::new([0.4, 0.5, 0.6], 0.3, 8.0),
        ),
        Primitive::Cuboid {
            center: Vector3::new(0.0, 0.0, -1.4),
            half_extents: Vector3::new(0.3, 0.6, 0.3),
            // 45° about Y so a vertical edge faces the camera
            rotation: *nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_4).matrix(),
            texture: Texture::new([0.7, 0.4, 0.3], 0.3, 12.0),
        },
    ];
    let target = Vector3::new(0.0, 0.0, -1.8);
    let trajectory = [-0.1, 0.0, 0.1]
        .iter()
        .flat_map(|&x| [-0.05, 0.05].map(move |y| Vector3::new(x, y, 0.0)))
        .map(|eye| Pose::look_at(&eye, &target, &up()))
        .collect();
    SyntheticScene {
        name: "edge".into(),
        intrinsics: k,
        primitives,
        trajectory,
        frame_interval: 1.0 / 30.0,
    }
}

/// Low-resolution scene for the convergence-basin harness. The trajectory is
/// the 3×3 training grid (0.1 m spacing) in row-major order; index 4 is the
/// center target view.
pub fn basin() -> SyntheticScene {
    let k = Intrinsics::new(56.0, 56.0, 31.5, 23.5, 64, 48).expect("valid intrinsics");
    let mut primitives = room();
    primitives.push(Primitive::cuboid(
        Vector3::new(-0.55, 0.3, -0.7),
        Vector3::new(0.12, 0.3, 0.12),
        Texture::new([0.4, 0.35, 0.7], 0.3, 12.0),
    ));
    let center = basin_target_eye();
    let look = basin_look_target();
    let trajectory = (0..9)
        .map(|i| {
            let dx = (i % 3) as f64 - 1.0;
            let dy = 1.0 - (i / 3) as f64;
            let eye = center + Vector3::new(0.1 * dx, 0.1 * dy, 0.0);
            Pose::look_at(&eye, &(look + eye - center), &up())
        })
        .collect();
    SyntheticScene {
        name: "basin".into(),
        intrinsics: k,
        primitives,
        trajectory,
        frame_interval: 1.0 / 30.0,
    }
}

pub fn basin_target_eye() -> Vector3<f64> {
    Vector3::new(0.0, 0.75, 1.3)
}

pub fn basin_look_target() -> Vector3<f64> {
    Vector3::new(0.0, 0.15, -0.35)
}
