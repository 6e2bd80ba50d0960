use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use surfel_slam::eval::Alignment;
use surfel_slam::raster::DepthMode;
use surfel_slam::tracking::TrackerKind;

/// Dense RGB-D SLAM on oriented 2D Gaussian surfels.
#[derive(Debug, Parser)]
#[command(name = "surfslam", version)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SURFSLAM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline on a dataset.
    Run(RunArgs),
    /// Absolute trajectory error of an estimate against ground truth.
    EvalAte(EvalAteArgs),
    /// Accuracy, completion and F1 of a point cloud against a reference.
    EvalGeom(EvalGeomArgs),
    /// Convergence-basin sweep with the radial term on and off.
    Basin(BasinArgs),
    /// Render a saved map from one pose into image files.
    RenderDebug(RenderDebugArgs),
    /// Write a synthetic fixture as a TUM-layout dataset directory.
    MakeSynthetic(MakeSyntheticArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// A TUM-layout directory, or `synthetic:<name>`.
    #[arg(long, env = "SURFSLAM_DATASET")]
    pub dataset: String,

    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, env = "SURFSLAM_CONFIG")]
    pub config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, env = "SURFSLAM_OUT")]
    pub out: PathBuf,

    /// Overrides `tracking.tracker`.
    #[arg(long, env = "SURFSLAM_TRACKER")]
    pub tracker: Option<TrackerKind>,

    /// Overrides `render.depth_mode`.
    #[arg(long, env = "SURFSLAM_DEPTH_MODE")]
    pub depth_mode: Option<DepthMode>,

    /// Sets `tracking.radial = false`.
    #[arg(long, env = "SURFSLAM_NO_RADIAL")]
    pub no_radial: bool,

    /// Process at most this many frames.
    #[arg(long)]
    pub frames: Option<usize>,

    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Gaussian depth noise for synthetic datasets (meters).
    #[arg(long, env = "SURFSLAM_DEPTH_NOISE")]
    pub depth_noise: Option<f64>,

    /// Seed of the synthetic depth noise.
    #[arg(long, default_value_t = 11)]
    pub noise_seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalAteArgs {
    /// Estimated trajectory (TUM format).
    #[arg(long)]
    pub est: PathBuf,

    /// Ground-truth trajectory (TUM format).
    #[arg(long)]
    pub gt: PathBuf,

    /// `rigid` or `sim3`.
    #[arg(long, default_value = "rigid")]
    pub alignment: Alignment,

    /// Also write the result as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalGeomArgs {
    /// Predicted point cloud (PLY).
    #[arg(long)]
    pub pred: PathBuf,

    /// Reference point cloud (PLY).
    #[arg(long)]
    pub gt: PathBuf,

    /// Inlier distance (meters).
    #[arg(long, default_value_t = surfel_slam::eval::geom::DEFAULT_THRESHOLD)]
    pub threshold: f64,

    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BasinArgs {
    /// Synthetic fixture; its middle view is the target.
    #[arg(long, default_value = "basin")]
    pub scene: String,

    /// TOML basin configuration.
    #[arg(long, env = "SURFSLAM_BASIN_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides `trials`.
    #[arg(long)]
    pub trials: Option<usize>,

    /// Overrides `steps`.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Overrides `training_iterations`.
    #[arg(long)]
    pub training_iterations: Option<usize>,

    /// Success-rate table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderDebugArgs {
    /// Surfel map (PLY written by `run`).
    #[arg(long)]
    pub map: PathBuf,

    /// Camera-to-world pose `tx ty tz qx qy qz qw` (spaces or commas).
    #[arg(long, allow_hyphen_values = true)]
    pub pose: String,

    /// `fx fy cx cy width height` (spaces or commas).
    #[arg(long, default_value = "256 256 159.5 119.5 320 240")]
    pub intrinsics: String,

    #[arg(long, default_value = "adaptive")]
    pub depth_mode: DepthMode,

    /// Output directory for color.ppm, depth.pgm and normal.ppm.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeSyntheticArgs {
    /// Fixture name.
    #[arg(long)]
    pub scene: String,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub noise: NoiseArgs,
}
