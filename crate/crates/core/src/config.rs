//! The run configuration file: one TOML table per component, every key
//! optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::MappingConfig;
use crate::pipeline::KeyframeConfig;
use crate::raster::RenderConfig;
use crate::surfel_map::ManagementConfig;
use crate::tracking::{IcpConfig, TrackingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Pixel stride for point-cloud export.
    pub stride: usize,
    /// Deduplication cell size (meters).
    pub voxel: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { stride: 2, voxel: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    pub render: RenderConfig,
    pub management: ManagementConfig,
    pub mapping: MappingConfig,
    pub tracking: TrackingConfig,
    pub icp: IcpConfig,
    pub keyframe: KeyframeConfig,
    pub export: ExportConfig,
}

impl SlamConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.management.validate()?;
        self.mapping.validate()?;
        self.tracking.validate()?;
        self.keyframe.validate()?;
        if self.icp.levels.is_empty() || self.icp.levels.contains(&0) {
            return Err(Error::Config("icp: levels must be non-empty and positive".into()));
        }
        if !(self.export.stride > 0 && self.export.voxel > 0.0) {
            return Err(Error::Config("export: stride and voxel must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
