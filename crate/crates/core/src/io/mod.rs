//! Dataset ingestion, synthetic scenes and result serialization.

pub mod logs;
pub mod ply;
pub mod pnm;
pub mod synthetic;
pub mod trajectory;
pub mod tum;

pub use ply::{read_map_ply, read_pointcloud_ply, write_map_ply, write_pointcloud_ply, PointCloud};
pub use synthetic::{render_synthetic, DepthNoise, Primitive, SyntheticScene, Texture};
pub use trajectory::{read_trajectory_tum, write_trajectory_tum, Stamped};
pub use tum::{load_tum, TumDataset};
