//! Trajectory, geometry and convergence-basin evaluation.

pub mod ate;
pub mod basin;
pub mod depth;
pub mod geom;

pub use ate::{ate, umeyama, Alignment, AteResult, SimilarityTransform};
pub use basin::{basin_sweep, train_map, trial_poses, BasinConfig, BasinTable, BasinVariant};
pub use depth::depth_l1;
pub use geom::{geom_metrics, nearest_distances, GeomResult, GridIndex};
