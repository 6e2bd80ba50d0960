//! Convergence-basin harness: how often pose optimization started at a given
//! distance from a target view recovers it.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{Intrinsics, Pose};
use crate::io::synthetic::SyntheticScene;
use crate::mapping::{optimize_window, MappingConfig};
use crate::par;
use crate::raster::{render, RenderConfig};
use crate::surfel_map::{densify, prune, ManagementConfig, SurfelMap};
use crate::tracking::{track_frame_steps, TrackingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinConfig {
    /// Spacing of the 3×3 training grid (meters).
    pub grid_spacing: f64,
    /// Initial distances from the target camera center (meters, ascending).
    pub radii: Vec<f64>,
    pub trials: usize,
    pub steps: usize,
    pub success_radius: f64,
    /// Mapping iterations used to train the map from the grid views.
    pub training_iterations: usize,
    /// Tracker step sizes for the trials; larger than per-frame tracking
    /// because starts can be more than a meter away.
    pub translation_step: f64,
    pub rotation_step: f64,
    pub final_step_scale: f64,
    /// Lowest camera height a trial may start at (meters above the floor).
    pub min_height: f64,
    pub seed: u64,
}

impl Default for BasinConfig {
    fn default() -> Self {
        Self {
            grid_spacing: 0.1,
            radii: vec![0.2, 0.4, 0.8, 1.2, 1.6],
            trials: 20,
            steps: 1000,
            success_radius: 0.01,
            training_iterations: 300,
            translation_step: 1e-2,
            rotation_step: 1e-2,
            final_step_scale: 0.05,
            min_height: 0.15,
            seed: 7,
        }
    }
}

impl BasinConfig {
    pub fn validate(&self) -> Result<()> {
        let ascending = self.radii.windows(2).all(|w| w[0] < w[1]);
        let ok = !self.radii.is_empty()
            && ascending
            && self.radii.iter().all(|r| r.is_finite() && *r >= 0.0)
            && self.trials > 0
            && self.success_radius > 0.0
            && self.translation_step > 0.0
            && self.rotation_step > 0.0
            && self.final_step_scale > 0.0
            && self.grid_spacing > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid basin config {self:?}")))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A named tracker setting compared by the sweep.
#[derive(Debug, Clone)]
pub struct BasinVariant {
    pub name: String,
    pub tracking: TrackingConfig,
}

impl BasinVariant {
    /// Radial term on and off, both using the harness step sizes.
    pub fn radial_pair(cfg: &BasinConfig, base: &TrackingConfig) -> Vec<Self> {
        [("radial", true), ("no_radial", false)]
            .into_iter()
            .map(|(name, radial)| Self {
                name: name.into(),
                tracking: TrackingConfig {
                    translation_step: cfg.translation_step,
                    rotation_step: cfg.rotation_step,
                    final_step_scale: cfg.final_step_scale,
                    radial,
                    ..base.clone()
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinTable {
    pub radii: Vec<f64>,
    pub variants: Vec<String>,
    /// `success[variant][radius]` in `[0, 1]`.
    pub success: Vec<Vec<f64>>,
    /// Final camera-center error of every trial, `[variant][radius][trial]`.
    pub errors: Vec<Vec<Vec<f64>>>,
    pub trials: usize,
}

impl BasinTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius");
        for v in &self.variants {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
        for (ri, r) in self.radii.iter().enumerate() {
            let _ = write!(s, "{r}");
            for v in 0..self.variants.len() {
                let _ = write!(s, ",{:.4}", self.success[v][ri]);
            }
            s.push('\n');
        }
        s
    }

    pub fn rate(&self, variant: &str, radius_index: usize) -> Option<f64> {
        let v = self.variants.iter().position(|n| n == variant)?;
        self.success[v].get(radius_index).copied()
    }
}

/// Builds a map from the scene's training views at their true poses.
pub fn train_map(
    scene: &SyntheticScene,
    render_cfg: &RenderConfig,
    mgmt: &ManagementConfig,
    mapping: &MappingConfig,
    iterations: usize,
) -> Result<SurfelMap> {
    let k = &scene.intrinsics;
    let frames: Vec<Frame> = (0..scene.trajectory.len())
        .map(|i| scene.frame(i, None))
        .collect::<Result<_>>()?;
    let mut map = SurfelMap::new();
    for (f, p) in frames.iter().zip(&scene.trajectory) {
        let out = render(&map, p, k, render_cfg);
        densify(&mut map, f, &out, p, k, mgmt);
    }
    let window: Vec<(&Frame, &Pose)> = frames.iter().zip(&scene.trajectory).collect();
    optimize_window(&mut map, &window, k, render_cfg, mapping, iterations)?;
    prune(&mut map, mgmt);
    Ok(map)
}

/// Deterministic, evenly spread unit directions (spherical Fibonacci lattice),
/// rotated by `twist` radians about the vertical.
pub fn fibonacci_directions(n: usize, twist: f64) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|j| {
            let y = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = j as f64 * golden + twist;
            Vector3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Starting poses for each radius. Directions pointing toward the scene (along
/// the target's viewing direction) are mirrored backwards, and starts below
/// `min_height` are mirrored upwards, so no start lies inside the geometry.
/// Every start looks at `look_target`.
pub fn trial_poses(cfg: &BasinConfig, target: &Pose, look_target: &Vector3<f64>) -> Vec<Vec<Pose>> {
    let eye = target.camera_center();
    let forward = target.rotation.row(2).transpose();
    let up = Vector3::y();
    cfg.radii
        .iter()
        .enumerate()
        .map(|(ri, &r)| {
            if r == 0.0 {
                return vec![*target; cfg.trials];
            }
            let twist = (cfg.seed as f64 + ri as f64) * 0.618_033_988_75 * std::f64::consts::TAU;
            fibonacci_directions(cfg.trials, twist)
                .into_iter()
                .map(|mut d| {
                    let along = d.dot(&forward);
                    if along > 0.0 {
                        d -= forward * (2.0 * along);
                    }
                    if eye.y + r * d.y < cfg.min_height {
                        d.y = -d.y;
                    }
                    Pose::look_at(&(eye + d * r), look_target, &up)
                })
                .collect()
        })
        .collect()
}

/// Runs every variant from every start and records the success fraction per
/// radius.
#[allow(clippy::too_many_arguments)]
pub fn basin_sweep(
    map: &SurfelMap,
    target_frame: &Frame,
    target_pose: &Pose,
    look_target: &Vector3<f64>,
    k: &Intrinsics,
    render_cfg: &RenderConfig,
    cfg: &BasinConfig,
    variants: &[BasinVariant],
) -> BasinTable {
    let starts = trial_poses(cfg, target_pose, look_target);
    let nr = cfg.radii.len();
    let jobs: Vec<(usize, usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..nr).flat_map(move |r| (0..cfg.trials).map(move |t| (v, r, t))))
        .collect();
    let target_center = target_pose.camera_center();
    let errors = par::map_slice(&jobs, |&(v, r, t)| {
        let init = &starts[r][t];
        match track_frame_steps(map, target_frame, init, k, render_cfg, &variants[v].tracking, cfg.steps) {
            Ok((pose, _)) => (pose.camera_center() - target_center).norm(),
            Err(_) => f64::INFINITY,
        }
    });
    let mut table = BasinTable {
        radii: cfg.radii.clone(),
        variants: variants.iter().map(|v| v.name.clone()).collect(),
        success: vec![vec![0.0; nr]; variants.len()],
        errors: vec![vec![Vec::with_capacity(cfg.trials); nr]; variants.len()],
        trials: cfg.trials,
    };
    for (&(v, r, _), e) in jobs.iter().zip(errors) {
        table.errors[v][r].push(e);
        if e <= cfg.success_radius {
            table.success[v][r] += 1.0 / cfg.trials as f64;
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_overrides_and_validates() {
        let cfg = BasinConfig::from_toml_str("trials = 3\nradii = [0.1, 0.5]\n").unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.steps, BasinConfig::default().steps);
        assert!(BasinConfig::from_toml_str("radii = [0.5, 0.1]\n").is_err());
        assert!(BasinConfig::from_toml_str("trails = 3\n").is_err());
    }

    #[test]
    fn directions_are_unit_and_spread() {
        let d = fibonacci_directions(50, 0.3);
        assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let mean: Vector3<f64> = d.iter().sum::<Vector3<f64>>() / 50.0;
        assert!(mean.norm() < 0.05);
    }

    #[test]
    fn starts_sit_at_the_requested_radius_behind_the_target() {
        let target = Pose::look_at(
            &Vector3::new(0.0, 0.7, 1.3),
            &Vector3::new(0.0, 0.15, -0.35),
            &Vector3::y(),
        );
        let cfg = BasinConfig::default();
        let look = Vector3::new(0.0, 0.15, -0.35);
        let starts = trial_poses(&cfg, &target, &look);
        let forward = target.rotation.row(2).transpose();
        for (ri, poses) in starts.iter().enumerate() {
            for p in poses {
                let d = p.camera_center() - target.camera_center();
                assert!((d.norm() - cfg.radii[ri]).abs() < 1e-9);
                assert!(d.dot(&forward) <= 1e-12);
                assert!(p.camera_center().y >= cfg.min_height - 1e-9);
            }
        }
    }

    #[test]
    fn csv_has_one_row_per_radius() {
        let t = BasinTable {
            radii: vec![0.0, 0.5],
            variants: vec!["a".into(), "b".into()],
            success: vec![vec![1.0, 0.5], vec![1.0, 0.25]],
            errors: vec![vec![vec![]; 2]; 2],
            trials: 4,
        };
        assert_eq!(t.to_csv(), "radius,a,b\n0,1.0000,1.0000\n0.5,0.5000,0.2500\n");
    }
}
