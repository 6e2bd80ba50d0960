use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use surfel_slam::config::SlamConfig;
use surfel_slam::eval::{ate, basin_sweep, geom_metrics, train_map, Alignment, BasinConfig, BasinVariant};
use surfel_slam::fixtures;
use surfel_slam::frame::Frame;
use surfel_slam::geometry::{Intrinsics, Pose};
use surfel_slam::io::ply::{read_map_ply, read_pointcloud_ply, write_map_ply, write_pointcloud_ply};
use surfel_slam::io::pnm::{write_pgm, write_ppm};
use surfel_slam::io::trajectory::{parse_tum, read_trajectory_tum, write_trajectory_tum};
use surfel_slam::io::tum::write_tum_directory;
use surfel_slam::pipeline::SlamState;
use surfel_slam::raster::{render, RenderConfig};
use surfel_slam::Error;

use crate::args::{BasinArgs, EvalAteArgs, EvalGeomArgs, MakeSyntheticArgs, RenderDebugArgs, RunArgs};
use crate::dataset::Dataset;

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The run configuration after the file and the command-line overrides.
pub fn effective_config(args: &RunArgs) -> Result<SlamConfig> {
    let mut cfg = match &args.config {
        Some(path) => SlamConfig::load(path)?,
        None => SlamConfig::default(),
    };
    if let Some(tracker) = args.tracker {
        cfg.tracking.tracker = tracker;
    }
    if let Some(mode) = args.depth_mode {
        cfg.render.depth_mode = mode;
    }
    if args.no_radial {
        cfg.tracking.radial = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = effective_config(args)?;
    let dataset = Dataset::open(&args.dataset, &args.noise)?;
    let n = args.frames.map_or(dataset.len(), |f| f.min(dataset.len()));
    if n == 0 {
        return Err(Error::Dataset(format!("{} has no frames", args.dataset)).into());
    }
    create_dir(&args.out)?;
    let logs = args.out.join("logs");
    create_dir(&logs)?;
    write_text(&args.out.join("config.toml"), &cfg.to_toml_string())?;

    let export = cfg.export.clone();
    let mut state = SlamState::new(dataset.intrinsics(), cfg)?.with_log_dir(&logs);
    let trajectory_path = args.out.join("trajectory.txt");
    let start = Instant::now();
    for i in 0..n {
        let frame = dataset.frame(i)?;
        if let Err(e) = state.process_frame(frame) {
            // keep what was tracked so far for inspection
            write_trajectory_tum(&state.trajectory, &trajectory_path)?;
            return Err(e.into());
        }
        log::info!(
            "frame {}/{n}: {} surfels, {} keyframes",
            i + 1,
            state.map.len(),
            state.keyframes.len()
        );
    }
    state.finalize()?;
    let seconds = start.elapsed().as_secs_f64();

    write_trajectory_tum(&state.trajectory, &trajectory_path)?;
    write_map_ply(&state.map, &args.out.join("map.ply"))?;
    let cloud = state.export_pointcloud(export.stride, export.voxel);
    write_pointcloud_ply(&cloud, &args.out.join("pointcloud.ply"))?;

    let mut metrics = vec![
        ("frames", n.to_string()),
        ("keyframes", state.keyframes.len().to_string()),
        ("surfels", state.map.len().to_string()),
        ("points", cloud.len().to_string()),
        ("seconds", format!("{seconds:.3}")),
        ("fps", format!("{:.4}", n as f64 / seconds)),
    ];
    if let Some(gt) = dataset.groundtruth() {
        write_trajectory_tum(&gt, &args.out.join("groundtruth.txt"))?;
        match ate(&state.trajectory, &gt, Alignment::Rigid) {
            Ok(r) => {
                metrics.push(("ate_rmse_m", format!("{:.6}", r.rmse)));
                metrics.push(("ate_mean_m", format!("{:.6}", r.mean)));
                metrics.push(("ate_median_m", format!("{:.6}", r.median)));
                metrics.push(("ate_max_m", format!("{:.6}", r.max)));
                metrics.push(("ate_pairs", r.pairs.to_string()));
            }
            Err(e) => log::warn!("no ATE: {e}"),
        }
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in &metrics {
        let _ = writeln!(csv, "{k},{v}");
    }
    write_text(&args.out.join("metrics.csv"), &csv)?;
    for (k, v) in &metrics {
        println!("{k:<12} {v}");
    }
    Ok(())
}

pub fn eval_ate(args: &EvalAteArgs) -> Result<()> {
    let est = read_trajectory_tum(&args.est)?;
    let gt = read_trajectory_tum(&args.gt)?;
    let r = ate(&est, &gt, args.alignment)?;
    println!("rmse   {:.6} m", r.rmse);
    println!("mean   {:.6} m", r.mean);
    println!("median {:.6} m", r.median);
    println!("max    {:.6} m", r.max);
    println!("pairs  {}", r.pairs);
    if let Some(path) = &args.csv {
        write_text(
            path,
            &format!(
                "rmse_m,mean_m,median_m,max_m,pairs,scale\n{:.9},{:.9},{:.9},{:.9},{},{:.9}\n",
                r.rmse, r.mean, r.median, r.max, r.pairs, r.alignment.scale
            ),
        )?;
    }
    Ok(())
}

pub fn eval_geom(args: &EvalGeomArgs) -> Result<()> {
    let pred = read_pointcloud_ply(&args.pred)?;
    let gt = read_pointcloud_ply(&args.gt)?;
    let r = geom_metrics(&pred.points, &gt.points, args.threshold)?;
    println!("accuracy   {:.3} cm", r.accuracy_cm);
    println!("completion {:.3} cm", r.completion_cm);
    println!("precision  {:.1}", r.precision);
    println!("recall     {:.1}", r.recall);
    println!("f1         {:.1}", r.f1);
    if let Some(path) = &args.csv {
        write_text(
            path,
            &format!(
                "accuracy_cm,completion_cm,precision,recall,f1\n{:.6},{:.6},{:.4},{:.4},{:.4}\n",
                r.accuracy_cm, r.completion_cm, r.precision, r.recall, r.f1
            ),
        )?;
    }
    Ok(())
}

pub fn basin(args: &BasinArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            BasinConfig::from_toml_str(&text).with_context(|| path.display().to_string())?
        }
        None => BasinConfig::default(),
    };
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(i) = args.training_iterations {
        cfg.training_iterations = i;
    }
    cfg.validate()?;

    let scene = fixtures::by_name(&args.scene)?;
    let target_index = scene.trajectory.len() / 2;
    let target = scene.trajectory[target_index];
    let look = if args.scene == "basin" {
        fixtures::basin_look_target()
    } else {
        let c2w = target.inverse();
        let origin = target.camera_center();
        let dir = c2w.transform_vector(&Vector3::z());
        let (t, _) = scene
            .cast(&origin, &dir)
            .ok_or_else(|| Error::Dataset(format!("{}: the target view sees no surface", args.scene)))?;
        origin + dir * t
    };
    let slam = SlamConfig::default();
    let start = Instant::now();
    let map = train_map(
        &scene,
        &slam.render,
        &slam.management,
        &slam.mapping,
        cfg.training_iterations,
    )?;
    log::info!("trained {} surfels in {:.1}s", map.len(), start.elapsed().as_secs_f64());
    let frame = scene.frame(target_index, None)?;
    let variants = BasinVariant::radial_pair(&cfg, &slam.tracking);
    let table = basin_sweep(
        &map,
        &frame,
        &target,
        &look,
        &scene.intrinsics,
        &slam.render,
        &cfg,
        &variants,
    );
    print!("{}", table.to_csv());
    if let Some(path) = &args.csv {
        write_text(path, &table.to_csv())?;
    }
    Ok(())
}

fn parse_numbers<const N: usize>(text: &str, what: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("{what}: bad number '{t}'")))
        .collect::<Result<_>>()?;
    match <[f64; N]>::try_from(vals) {
        Ok(v) => Ok(v),
        Err(v) => bail!(Error::InvalidInput(format!(
            "{what}: expected {N} numbers, got {}",
            v.len()
        ))),
    }
}

/// Parses a camera-to-world `tx ty tz qx qy qz qw` into a world-to-camera pose.
pub fn parse_pose(text: &str) -> Result<Pose> {
    let v = parse_numbers::<7>(text, "pose")?;
    let line = std::iter::once(0.0)
        .chain(v)
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let mut parsed = parse_tum(&line, Path::new("--pose"))?;
    Ok(parsed.remove(0).1)
}

pub fn parse_intrinsics(text: &str) -> Result<Intrinsics> {
    let [fx, fy, cx, cy, w, h] = parse_numbers::<6>(text, "intrinsics")?;
    if !(w >= 1.0 && h >= 1.0 && w.fract() == 0.0 && h.fract() == 0.0) {
        bail!(Error::InvalidInput(format!(
            "intrinsics: image size {w}x{h} is not a positive integer"
        )));
    }
    Ok(Intrinsics::new(fx, fy, cx, cy, w as usize, h as usize)?)
}

pub fn render_debug(args: &RenderDebugArgs) -> Result<()> {
    let map = read_map_ply(&args.map)?;
    let pose = parse_pose(&args.pose)?;
    let k = parse_intrinsics(&args.intrinsics)?;
    let cfg = RenderConfig::default().with_depth_mode(args.depth_mode);
    let out = render(&map, &pose, &k, &cfg);
    create_dir(&args.out)?;
    let max_depth = out.depth.iter().copied().fold(0.0, f64::max);
    let normals = out.normal.map(|n| {
        let len = n.norm();
        if len > 1e-12 {
            let n = n / len;
            [(n.x + 1.0) / 2.0, (n.y + 1.0) / 2.0, (n.z + 1.0) / 2.0]
        } else {
            [0.0; 3]
        }
    });
    let paths = [
        args.out.join("color.ppm"),
        args.out.join("depth.pgm"),
        args.out.join("normal.ppm"),
    ];
    write_ppm(&out.color, &paths[0])?;
    write_pgm(&out.depth, if max_depth > 0.0 { max_depth } else { 1.0 }, &paths[1])?;
    write_ppm(&normals, &paths[2])?;
    println!("{} valid pixels, max depth {max_depth:.3} m", out.valid_count());
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn make_synthetic(args: &MakeSyntheticArgs) -> Result<()> {
    let spec = format!("synthetic:{}", args.scene);
    let dataset = Dataset::open(&spec, &args.noise)?;
    let frames: Vec<Frame> = (0..dataset.len())
        .map(|i| dataset.frame(i))
        .collect::<surfel_slam::Result<_>>()?;
    create_dir(&args.out)?;
    let gt = dataset.groundtruth().unwrap_or_default();
    let n = write_tum_directory(&args.out, &frames, &gt, &dataset.intrinsics())?;
    println!("wrote {n} frames to {}", args.out.display());
    Ok(())
}
