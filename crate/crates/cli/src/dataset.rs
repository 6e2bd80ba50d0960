use std::path::Path;

use surfel_slam::fixtures;
use surfel_slam::frame::Frame;
use surfel_slam::geometry::Intrinsics;
use surfel_slam::io::synthetic::{DepthNoise, SyntheticScene};
use surfel_slam::io::trajectory::Stamped;
use surfel_slam::io::tum::{load_tum, TumDataset};
use surfel_slam::{Error, Result};

use crate::args::NoiseArgs;

/// A frame source named on the command line.
pub enum Dataset {
    Synthetic {
        scene: SyntheticScene,
        noise: Option<DepthNoise>,
    },
    Tum(TumDataset),
}

impl Dataset {
    /// Resolves `synthetic:<name>` or a TUM-layout directory.
    pub fn open(spec: &str, noise: &NoiseArgs) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("synthetic:") {
            let noise = match noise.depth_noise {
                Some(sigma) if !(sigma >= 0.0) => {
                    return Err(Error::InvalidInput(format!(
                        "depth noise must be non-negative, got {sigma}"
                    )))
                }
                Some(sigma) => Some(DepthNoise::gaussian(sigma, noise.noise_seed)),
                None => None,
            };
            return Ok(Self::Synthetic {
                scene: fixtures::by_name(name)?,
                noise,
            });
        }
        if noise.depth_noise.is_some() {
            return Err(Error::InvalidInput(
                "--depth-noise applies to synthetic datasets only".into(),
            ));
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(Error::Dataset(format!("dataset {} does not exist", path.display())));
        }
        Ok(Self::Tum(load_tum(path)?))
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Synthetic { scene, .. } => scene.trajectory.len(),
            Self::Tum(ds) => ds.len(),
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        match self {
            Self::Synthetic { scene, .. } => scene.intrinsics,
            Self::Tum(ds) => ds.intrinsics,
        }
    }

    pub fn frame(&self, index: usize) -> Result<Frame> {
        match self {
            Self::Synthetic { scene, noise } => scene.frame(index, noise.as_ref()),
            Self::Tum(ds) => ds.frame(index),
        }
    }

    /// World-to-camera ground truth, when the dataset has it.
    pub fn groundtruth(&self) -> Option<Vec<Stamped>> {
        match self {
            Self::Synthetic { scene, .. } => Some(
                scene
                    .trajectory
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (scene.timestamp(i), *p))
                    .collect(),
            ),
            Self::Tum(ds) => ds.groundtruth.clone(),
        }
    }
}
