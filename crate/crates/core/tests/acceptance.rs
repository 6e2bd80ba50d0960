//! Acceptance suite: one pass/fail line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,3,5` runs a subset. Failing criteria are reported but
//! only turn the exit status nonzero with `ACCEPTANCE_STRICT=1`.
//! `SURFSLAM_TUM_DIR` points criterion 12 at a TUM sequence.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfel_slam::config::SlamConfig;
use surfel_slam::eval::{
    ate, basin_sweep, depth_l1, geom_metrics, nearest_distances, train_map, Alignment, BasinConfig, BasinVariant,
};
use surfel_slam::fixtures;
use surfel_slam::frame::Frame;
use surfel_slam::geometry::{exp_se3, Pose, Twist};
use surfel_slam::io::synthetic::{render_synthetic, DepthNoise};
use surfel_slam::io::trajectory::{format_tum, Stamped};
use surfel_slam::io::tum::load_tum;
use surfel_slam::par;
use surfel_slam::pipeline::SlamState;
use surfel_slam::raster::{DepthMode, RenderConfig};
use surfel_slam::tracking::{icp_track, IcpConfig, IcpReference, TrackingConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    id: u32,
    title: &'static str,
    status: Status,
    detail: String,
    elapsed: Duration,
}

impl Outcome {
    fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        format!(
            "[{tag}] {:>2}. {} ({:.1}s): {}",
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn within(elapsed: Duration, minutes: f64) -> bool {
    elapsed.as_secs_f64() < minutes * 60.0
}

fn gradients_surfels() -> (Status, String) {
    let start = Instant::now();
    let r = common::check_surfel_gradients(120, 1000);
    let elapsed = start.elapsed();
    let ok = r.passed() && within(elapsed, 1.0);
    let detail = format!(
        "{} configs, {} partials checked, {} failures, worst rel {:.2e}, skipped {:.3}%",
        r.configs,
        r.checked,
        r.failures.len(),
        r.worst_rel,
        100.0 * r.skip_fraction()
    );
    (verdict(ok), detail)
}

fn gradients_pose() -> (Status, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for radial in [true, false] {
        let start = Instant::now();
        let r = common::check_pose_gradients(120, 2000, radial);
        let elapsed = start.elapsed();
        ok &= r.passed() && within(elapsed, 1.0);
        parts.push(format!(
            "radial={radial}: {} configs, {} partials, {} failures, worst rel {:.2e}, {:.1}s",
            r.configs,
            r.checked,
            r.failures.len(),
            r.worst_rel,
            elapsed.as_secs_f64()
        ));
    }
    (verdict(ok), parts.join("; "))
}

fn distortion_oracle() -> (Status, String) {
    let worst = common::worst_distortion_error(10_000, 17);
    (
        verdict(worst <= 1e-10),
        format!("10000 lists, worst |streaming - pairwise| {worst:.2e} (tol 1e-10)"),
    )
}

fn blending_invariant() -> (Status, String) {
    let r = common::check_blending(30, 23);
    let ok = r.worst_partition <= 1e-5 && r.worst_weight <= 1e-12 && r.non_monotone == 0 && r.pixels > 0;
    (
        verdict(ok),
        format!(
            "{} pixels, worst |sum(w) + T - 1| {:.2e} (tol 1e-5), worst weight {:.2e}, non-monotone {}",
            r.pixels, r.worst_partition, r.worst_weight, r.non_monotone
        ),
    )
}

fn adaptive_mapping() -> (Status, String) {
    let start = Instant::now();
    let scene = fixtures::edge();
    let frames: Vec<Frame> = (0..scene.trajectory.len())
        .map(|i| scene.frame(i, None).unwrap())
        .collect();
    let views: Vec<(&Frame, &Pose)> = frames.iter().zip(&scene.trajectory).collect();
    let defaults = SlamConfig::default();
    let modes = [DepthMode::Mean, DepthMode::Median, DepthMode::Adaptive];
    let l1 = par::map_slice(&modes, |&mode| {
        let cfg = RenderConfig::default().with_depth_mode(mode);
        let map = train_map(&scene, &cfg, &defaults.management, &defaults.mapping, 200).unwrap();
        depth_l1(&map, &views, &scene.intrinsics, &cfg).unwrap_or(f64::INFINITY)
    });
    let (mean, median, adaptive) = (l1[0], l1[1], l1[2]);
    let ok = adaptive <= mean && adaptive <= 1.1 * median && within(start.elapsed(), 5.0);
    (
        verdict(ok),
        format!(
            "depth L1 after 200 iterations: mean {:.3} mm, median {:.3} mm, adaptive {:.3} mm (needs <= mean and <= 1.1 x median)",
            1e3 * mean,
            1e3 * median,
            1e3 * adaptive
        ),
    )
}

/// One pipeline run over box50.
struct Box50Run {
    trajectory: Vec<Stamped>,
    ate: f64,
    seconds: f64,
}

#[derive(Clone, Copy)]
struct Box50Spec {
    noise: Option<f64>,
    depth_weight: Option<f64>,
}

fn run_box50(spec: &Box50Spec) -> Box50Run {
    let start = Instant::now();
    let scene = fixtures::box50();
    let mut cfg = SlamConfig::default();
    if let Some(w) = spec.depth_weight {
        cfg.tracking.depth_weight = w;
    }
    let noise = spec.noise.map(|s| DepthNoise::gaussian(s, 11));
    let mut state = SlamState::new(scene.intrinsics, cfg).unwrap();
    let mut gt = Vec::new();
    for i in 0..scene.trajectory.len() {
        state.process_frame(scene.frame(i, noise.as_ref()).unwrap()).unwrap();
        gt.push((scene.timestamp(i), scene.trajectory[i]));
    }
    let r = ate(&state.trajectory, &gt, Alignment::Rigid).unwrap();
    Box50Run {
        trajectory: state.trajectory,
        ate: r.rmse,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// The box50 runs shared by criteria 6, 8 and 11.
struct Box50Runs {
    clean: Box50Run,
    repeat: Box50Run,
    noisy: Box50Run,
    no_depth: Box50Run,
}

fn box50_runs() -> Box50Runs {
    let specs = [
        Box50Spec {
            noise: None,
            depth_weight: None,
        },
        Box50Spec {
            noise: None,
            depth_weight: None,
        },
        Box50Spec {
            noise: Some(0.01),
            depth_weight: None,
        },
        Box50Spec {
            noise: None,
            depth_weight: Some(0.0),
        },
    ];
    let mut runs = par::map_slice(&specs, run_box50).into_iter();
    let mut next = || runs.next().unwrap();
    Box50Runs {
        clean: next(),
        repeat: next(),
        noisy: next(),
        no_depth: next(),
    }
}

fn end_to_end(runs: &Box50Runs) -> (Status, String) {
    let ok = runs.clean.ate < 0.01 && runs.noisy.ate < 0.025;
    (
        verdict(ok),
        format!(
            "ATE clean {:.2} cm (< 1.0), noisy sigma=0.01 {:.2} cm (< 2.5); {:.0}s and {:.0}s per run on {} thread(s)",
            100.0 * runs.clean.ate,
            100.0 * runs.noisy.ate,
            runs.clean.seconds,
            runs.noisy.seconds,
            par::num_threads()
        ),
    )
}

fn basin_ordering() -> (Status, String) {
    let start = Instant::now();
    let scene = fixtures::basin();
    let cfg = BasinConfig::default();
    let defaults = SlamConfig::default();
    let map = train_map(
        &scene,
        &defaults.render,
        &defaults.management,
        &defaults.mapping,
        cfg.training_iterations,
    )
    .unwrap();
    let target = 4;
    let frame = scene.frame(target, None).unwrap();
    let variants = BasinVariant::radial_pair(&cfg, &TrackingConfig::default());
    let table = basin_sweep(
        &map,
        &frame,
        &scene.trajectory[target],
        &fixtures::basin_look_target(),
        &scene.intrinsics,
        &defaults.render,
        &cfg,
        &variants,
    );
    let mut dominated = true;
    let mut strictly_far = false;
    let mut cells = Vec::new();
    for (ri, r) in table.radii.iter().enumerate() {
        let on = table.rate("radial", ri).unwrap();
        let off = table.rate("no_radial", ri).unwrap();
        dominated &= on >= off;
        strictly_far |= *r >= 0.8 && on > off;
        cells.push(format!("{r}m {on:.2}/{off:.2}"));
    }
    let ordered = dominated && strictly_far && cfg.trials >= 20;
    let seconds = start.elapsed().as_secs_f64();
    let ok = ordered && within(start.elapsed(), 30.0);
    (
        verdict(ok),
        format!(
            "ordering {}, {:.0}s (< 1800) on {} thread(s); {} trials per radius, success radial/no_radial: {}",
            if ordered { "holds" } else { "violated" },
            seconds,
            par::num_threads(),
            cfg.trials,
            cells.join(", ")
        ),
    )
}

fn depth_ablation(runs: &Box50Runs) -> (Status, String) {
    let ratio = runs.no_depth.ate / runs.clean.ate;
    (
        verdict(ratio >= 2.0),
        format!(
            "ATE with depth term {:.2} cm, without {:.2} cm, ratio {:.2} (>= 2)",
            100.0 * runs.clean.ate,
            100.0 * runs.no_depth.ate,
            ratio
        ),
    )
}

fn icp_sanity() -> (Status, String) {
    let scene = fixtures::box50();
    let reference_pose = scene.trajectory[20];
    let reference_frame = render_synthetic(&scene, &reference_pose, &scene.intrinsics, None, 0.0).unwrap();
    let reference = IcpReference::from_frame(&reference_frame, &reference_pose);
    let xi = Twist::new(Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.0, 1f64.to_radians(), 0.0));
    let truth = exp_se3(&xi).compose(&reference_pose);
    let frame = render_synthetic(&scene, &truth, &scene.intrinsics, None, 0.0).unwrap();
    let out = icp_track(
        &frame,
        &reference,
        &reference_pose,
        &scene.intrinsics,
        &IcpConfig::default(),
    )
    .unwrap();
    let dt = (out.camera_center() - truth.camera_center()).norm();
    let dr = out.rotation_angle_to(&truth).to_degrees();
    (
        verdict(dt < 1e-3 && dr < 0.1),
        format!(
            "1 cm + 1 deg start: residual {:.4} mm, {:.4} deg (< 1 mm, < 0.1 deg)",
            1e3 * dt,
            dr
        ),
    )
}

fn metric_self_tests() -> (Status, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let traj: Vec<Stamped> = (0..100)
        .map(|i| {
            let v: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            (i as f64 / 30.0, exp_se3(&Twist::from_slice(&v)))
        })
        .collect();
    let rmse = ate(&traj, &traj, Alignment::Rigid).unwrap().rmse;
    let cloud: Vec<Vector3<f64>> = (0..10_000)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let f1 = geom_metrics(&cloud, &cloud, 0.03).unwrap().f1;
    let queries: Vec<Vector3<f64>> = (0..2_000)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            )
        })
        .collect();
    let grid = nearest_distances(&queries, &cloud, 0.03);
    let mismatches = queries
        .iter()
        .zip(&grid)
        .filter(|(q, d)| {
            let brute = cloud.iter().map(|p| (*q - p).norm()).fold(f64::INFINITY, f64::min);
            brute != **d
        })
        .count();
    // the SVD alignment leaves rounding noise on an exact match
    let ok = rmse <= 1e-12 && f1 == 100.0 && mismatches == 0;
    (
        verdict(ok),
        format!(
            "ate(x,x) = {rmse:.1e} (tol 1e-12), F1(x,x) = {f1}, grid vs brute-force NN mismatches {mismatches}/2000 on 10000 points"
        ),
    )
}

fn determinism(runs: &Box50Runs) -> (Status, String) {
    let a = format_tum(&runs.clean.trajectory);
    let b = format_tum(&runs.repeat.trajectory);
    let first_diff = a.lines().zip(b.lines()).position(|(x, y)| x != y);
    (
        verdict(a == b),
        match first_diff {
            None if a == b => format!("two runs, {} identical trajectory bytes", a.len()),
            None => "trajectories differ in length".into(),
            Some(line) => format!("trajectories first differ at line {}", line + 1),
        },
    )
}

fn tum_sequence() -> (Status, String) {
    let dir = std::env::var_os("SURFSLAM_TUM_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/rgbd_dataset_freiburg2_xyz"));
    if !dir.is_dir() {
        return (
            Status::Skip,
            format!("no sequence at {} (set SURFSLAM_TUM_DIR)", dir.display()),
        );
    }
    let run = || -> surfel_slam::Result<f64> {
        let ds = load_tum(&dir)?;
        let gt = ds
            .groundtruth
            .clone()
            .ok_or_else(|| surfel_slam::Error::Dataset("sequence has no groundtruth.txt".into()))?;
        let mut state = SlamState::new(ds.intrinsics, SlamConfig::default())?;
        for f in ds.frames() {
            state.process_frame(f?)?;
        }
        Ok(ate(&state.trajectory, &gt, Alignment::Rigid)?.rmse)
    };
    match run() {
        Ok(rmse) => (
            verdict(rmse < 0.1),
            format!("{}: ATE {:.2} cm (< 10)", dir.display(), 100.0 * rmse),
        ),
        Err(e) => (Status::Fail, format!("{}: {e}", dir.display())),
    }
}

fn main() {
    // `cargo test` passes harness flags; only a name filter would matter and
    // the suite has none
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |id: u32| only.as_ref().map_or(true, |o| o.contains(&id));

    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut record = |id: u32, title: &'static str, f: &dyn Fn() -> (Status, String)| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let (status, detail) = f();
        let o = Outcome {
            id,
            title,
            status,
            detail,
            elapsed: start.elapsed(),
        };
        println!("{}", o.line());
        outcomes.push(o);
    };

    record(1, "surfel gradients vs finite differences", &gradients_surfels);
    record(2, "pose gradients vs finite differences", &gradients_pose);
    record(3, "streaming distortion vs pairwise oracle", &distortion_oracle);
    record(4, "blending partition of unity", &blending_invariant);
    record(5, "adaptive depth on the edge fixture", &adaptive_mapping);
    record(9, "ICP sanity", &icp_sanity);
    record(10, "metric self-tests", &metric_self_tests);
    record(7, "convergence basin ordering", &basin_ordering);
    if [6, 8, 11].iter().any(|&id| wanted(id)) {
        let start = Instant::now();
        let runs = box50_runs();
        println!("       box50 runs finished in {:.0}s", start.elapsed().as_secs_f64());
        record(6, "synthetic SLAM end to end", &|| end_to_end(&runs));
        record(8, "depth-term ablation", &|| depth_ablation(&runs));
        record(11, "determinism", &|| determinism(&runs));
    }
    record(12, "TUM sequence", &tum_sequence);

    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<u32> = outcomes
        .iter()
        .filter(|o| o.status == Status::Fail)
        .map(|o| o.id)
        .collect();
    if failed.is_empty() {
        println!("all run criteria pass");
    } else {
        println!("failing criteria: {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}
