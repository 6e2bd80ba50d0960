//! Dense RGB-D SLAM on oriented 2D Gaussian surfels.
//!
//! The scene is a set of surfels ([`surfel_map`]) rendered by differentiable
//! splatting ([`raster`], [`backward`]). Mapping ([`mapping`]) fits surfels to
//! keyframes; tracking ([`tracking`]) fits the camera pose to the map using
//! analytic SE(3) gradients. [`pipeline`] runs the two in alternation.

pub mod backward;
pub mod config;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod frame;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod mapping;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod surfel_map;
pub mod tracking;

pub use error::{Error, Result};
