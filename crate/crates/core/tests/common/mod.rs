//! Test-side oracles: a brute-force reference renderer written directly from
//! the compositing rules, random scene generators and finite-difference
//! helpers.

#![allow(dead_code)]

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfel_slam::frame::Frame;
use surfel_slam::geometry::{Intrinsics, Pose};
use surfel_slam::grid::Grid;
use surfel_slam::raster::{DepthMode, DepthSource, RenderConfig, RenderOutput};
use surfel_slam::surfel_map::{rotation_matrix, sigmoid, Surfel, SurfelMap};

/// Camera-frame hit of one surfel on one pixel ray.
struct RefHit {
    id: usize,
    z: f64,
    g: f64,
    normal: Vector3<f64>,
}

fn ref_intersect(s: &Surfel, pose: &Pose, ray: &Vector3<f64>, cutoff: f64) -> Option<(f64, f64, f64, Vector3<f64>)> {
    let c = pose.rotation * s.position + pose.translation;
    let f = pose.rotation * rotation_matrix(&s.rotation);
    let (tu, tv, n) = (f.column(0), f.column(1), f.column(2));
    let denom = n.dot(ray);
    if denom.abs() < 1e-9 {
        return None;
    }
    let z = n.dot(&c) / denom;
    if z <= 0.01 {
        return None;
    }
    let x = ray * z - c;
    let su = s.log_scale[0].exp();
    let sv = s.log_scale[1].exp();
    let u = tu.dot(&x) / su;
    let v = tv.dot(&x) / sv;
    if u * u + v * v > cutoff {
        return None;
    }
    Some((c.z, z, (-0.5 * (u * u + v * v)).exp(), n.into_owned()))
}

/// Brute-force render. With `frozen = Some(T0)` each hit depth is
/// `center_z(T) + (z(T0) − center_z(T0))`, i.e. the radial offset is held at
/// its value under `T0` while weights still follow `T`.
pub fn reference_render(
    map: &SurfelMap,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    frozen: Option<&Pose>,
) -> RenderOutput {
    reference_render_full(map, pose, k, cfg, frozen).0
}

/// Discrete traversal state not carried by [`RenderOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefExtras {
    /// Map index of each pixel's median hit.
    pub medians: Vec<Option<usize>>,
    /// Surfel compositing order.
    pub order: Vec<usize>,
}

/// [`reference_render`] plus the discrete traversal state.
pub fn reference_render_full(
    map: &SurfelMap,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    frozen: Option<&Pose>,
) -> (RenderOutput, RefExtras) {
    let (w, h) = (k.width, k.height);
    let mut medians = vec![None; w * h];
    let mut out = RenderOutput {
        color: Grid::filled(w, h, [0.0; 3]),
        depth: Grid::filled(w, h, 0.0),
        normal: Grid::filled(w, h, Vector3::zeros()),
        distortion: Grid::filled(w, h, 0.0),
        transmittance: Grid::filled(w, h, 1.0),
        alpha_sum: Grid::filled(w, h, 0.0),
        dominant_id: Grid::filled(w, h, None),
        dominant_depth: Grid::filled(w, h, 0.0),
        dominant_normal: Grid::filled(w, h, Vector3::zeros()),
        valid: Grid::filled(w, h, false),
        depth_source: Grid::filled(w, h, DepthSource::Empty),
    };
    let surfels = map.surfels();
    let mut order: Vec<usize> = (0..surfels.len()).collect();
    let center_z = |i: usize| (pose.rotation * surfels[i].position + pose.translation).z;
    order.sort_by(|&a, &b| center_z(a).total_cmp(&center_z(b)).then(a.cmp(&b)));

    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            let ray = k.ray(col as f64, row as f64);
            let mut hits = Vec::new();
            for &i in &order {
                let s = &surfels[i];
                if s.opacity() < cfg.min_alpha {
                    continue;
                }
                let Some((cz, mut z, g, n)) = ref_intersect(s, pose, &ray, cfg.gauss_cutoff) else {
                    continue;
                };
                if let Some(p0) = frozen {
                    let (cz0, z0, _, _) =
                        ref_intersect(s, p0, &ray, f64::INFINITY).expect("frozen reference must hit the same surfels");
                    z = cz + (z0 - cz0);
                }
                hits.push(RefHit { id: i, z, g, normal: n });
            }

            let mut t = 1.0;
            let mut contrib: Vec<(usize, f64, f64, Vector3<f64>)> = Vec::new();
            for hh in &hits {
                let a = sigmoid(surfels[hh.id].logit_opacity) * hh.g;
                if a < cfg.min_alpha {
                    continue;
                }
                contrib.push((hh.id, a * t, hh.z, hh.normal));
                t *= 1.0 - a;
                if t < cfg.min_transmittance {
                    break;
                }
            }
            out.transmittance[idx] = t;
            if contrib.is_empty() {
                continue;
            }
            let wsum: f64 = contrib.iter().map(|c| c.1).sum();
            let mut color = [0.0; 3];
            let mut normal = Vector3::zeros();
            let mut mean = 0.0;
            for &(id, wt, z, n) in &contrib {
                for ch in 0..3 {
                    color[ch] += wt * surfels[id].color[ch];
                }
                normal += n * wt;
                mean += wt / wsum * z;
            }
            let mut distortion = 0.0;
            for a in &contrib {
                for b in &contrib {
                    distortion += a.1 * b.1 * (a.2 - b.2).abs();
                }
            }
            let mut dom = 0;
            for (i, c) in contrib.iter().enumerate() {
                if c.1 > contrib[dom].1 {
                    dom = i;
                }
            }
            let mut acc = 0.0;
            let mut median = contrib.len() - 1;
            for (i, c) in contrib.iter().enumerate() {
                acc += c.1;
                if acc > 0.5 {
                    median = i;
                    break;
                }
            }
            let (depth, n_out, source) = match cfg.depth_mode {
                DepthMode::Mean => (mean, normal, DepthSource::Blend),
                DepthMode::Median => (contrib[median].2, normal, DepthSource::Median),
                DepthMode::Adaptive => {
                    if distortion > cfg.distortion_threshold && mean > contrib[dom].2 {
                        (contrib[dom].2, contrib[dom].3, DepthSource::Dominant)
                    } else {
                        (mean, normal, DepthSource::Blend)
                    }
                }
            };
            out.color[idx] = color;
            out.depth[idx] = depth;
            out.normal[idx] = n_out;
            out.distortion[idx] = distortion;
            out.alpha_sum[idx] = wsum;
            out.dominant_id[idx] = Some(contrib[dom].0);
            out.dominant_depth[idx] = contrib[dom].2;
            out.dominant_normal[idx] = contrib[dom].3;
            out.valid[idx] = wsum > cfg.valid_threshold;
            out.depth_source[idx] = source;
            medians[idx] = Some(contrib[median].0);
        }
    }
    (out, RefExtras { medians, order })
}

/// Rendering settings for gradient checks: no cutoff boundary, no alpha
/// skipping, no early stop.
pub fn smooth_config(mode: DepthMode) -> RenderConfig {
    RenderConfig {
        gauss_cutoff: 1e4,
        min_alpha: 0.0,
        min_transmittance: 0.0,
        ..RenderConfig::default()
    }
    .with_depth_mode(mode)
}

pub fn small_intrinsics() -> Intrinsics {
    Intrinsics::new(8.0, 8.0, 3.5, 3.5, 8, 8).unwrap()
}

/// A random surfel in front of the identity camera, roughly facing it.
pub fn random_surfel(rng: &mut ChaCha8Rng) -> Surfel {
    let z = rng.gen_range(1.0..3.0);
    let pos = Vector3::new(rng.gen_range(-0.4..0.4) * z, rng.gen_range(-0.4..0.4) * z, z);
    let n = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), -1.0).normalize();
    let mut s = Surfel::from_normal(
        pos,
        &n,
        rng.gen_range(0.1..0.4) * z,
        rng.gen_range(0.2..0.9),
        [rng.gen(), rng.gen(), rng.gen()],
    );
    // break the isotropy and the canonical tangent choice
    s.log_scale[1] += rng.gen_range(-0.4..0.4);
    let spin = nalgebra::UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(n), rng.gen_range(-1.0..1.0));
    let q = spin.into_inner() * s.rotation;
    s.rotation = Quaternion::new(q.w, q.i, q.j, q.k);
    s
}

pub fn random_map(rng: &mut ChaCha8Rng, max: usize) -> SurfelMap {
    let n = rng.gen_range(1..=max);
    SurfelMap::from_surfels((0..n).map(|_| random_surfel(rng)).collect())
}

/// A target frame with random colors and a slightly tilted noisy depth.
pub fn random_frame(rng: &mut ChaCha8Rng, k: &Intrinsics) -> Frame {
    let color = Grid::from_fn(k.width, k.height, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let a = rng.gen_range(-0.1..0.1);
    let b = rng.gen_range(-0.1..0.1);
    let base = rng.gen_range(1.5..2.5);
    let depth = Grid::from_fn(k.width, k.height, |c, r| {
        base + a * c as f64 + b * r as f64 + rng.gen_range(-0.05..0.05)
    });
    Frame::new(0.0, color, depth, k).unwrap()
}

/// Central difference of `f` at step `h`.
pub fn central_diff(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// `|a − b| ≤ max(rel · max(|a|, |b|), abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}

/// Discrete state of a render against a target: anything that, when it
/// changes between two nearby parameter values, makes the loss non-smooth
/// between them.
pub fn signature((out, extras): &(RenderOutput, RefExtras), frame: &Frame) -> Vec<i64> {
    let mut sig: Vec<i64> = extras.order.iter().map(|&i| i as i64).collect();
    let medians = &extras.medians;
    let sgn = |x: f64| {
        if x > 0.0 {
            1
        } else if x < 0.0 {
            -1
        } else {
            0
        }
    };
    for idx in 0..out.color.len() {
        sig.push(out.valid[idx] as i64);
        sig.push(out.depth_source[idx] as i64);
        sig.push(out.dominant_id[idx].map_or(-1, |d| d as i64));
        sig.push(medians[idx].map_or(-1, |d| d as i64));
        for ch in 0..3 {
            sig.push(sgn(out.color[idx][ch] - frame.color[idx][ch]));
        }
        sig.push(sgn(out.depth[idx] - frame.depth[idx]));
        sig.push((out.normal[idx].norm() > 1e-12) as i64);
    }
    sig
}

/// Writes `delta` into parameter `p` (0..13) of a surfel.
pub fn nudge(s: &mut Surfel, p: usize, delta: f64) {
    match p {
        0..=2 => s.position[p] += delta,
        3 => s.rotation.w += delta,
        4 => s.rotation.i += delta,
        5 => s.rotation.j += delta,
        6 => s.rotation.k += delta,
        7 | 8 => s.log_scale[p - 7] += delta,
        9 => s.logit_opacity += delta,
        10..=12 => s.color[p - 10] += delta,
        _ => unreachable!(),
    }
}

pub fn param(s: &Surfel, p: usize) -> f64 {
    match p {
        0..=2 => s.position[p],
        3 => s.rotation.w,
        4 => s.rotation.i,
        5 => s.rotation.j,
        6 => s.rotation.k,
        7 | 8 => s.log_scale[p - 7],
        9 => s.logit_opacity,
        10..=12 => s.color[p - 10],
        _ => unreachable!(),
    }
}

pub const PARAMS_PER_SURFEL: usize = 13;

/// Outcome of a randomized finite-difference sweep.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Partials whose ±h neighborhood crosses a discrete state change.
    pub skipped: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
    pub configs: usize,
}

impl GradReport {
    pub fn skip_fraction(&self) -> f64 {
        self.skipped as f64 / (self.checked + self.skipped).max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0 && self.skip_fraction() < 0.01
    }

    fn record(&mut self, what: String, analytic: f64, numeric: f64, rel: f64, abs: f64) {
        self.checked += 1;
        let denom = analytic.abs().max(numeric.abs());
        if denom > abs {
            self.worst_rel = self.worst_rel.max((analytic - numeric).abs() / denom);
        }
        if !close(analytic, numeric, rel, abs) {
            self.failures
                .push(format!("{what}: analytic {analytic:.9e} numeric {numeric:.9e}"));
        }
    }
}

const MODES: [DepthMode; 3] = [DepthMode::Mean, DepthMode::Median, DepthMode::Adaptive];

/// Mapping-loss gradients of every surfel parameter against central
/// differences of the reference renderer.
pub fn check_surfel_gradients(configs: usize, seed: u64) -> GradReport {
    use rand::SeedableRng;
    use surfel_slam::backward::backward_surfels;
    use surfel_slam::mapping::{mapping_loss, MappingConfig};
    use surfel_slam::raster::render;

    let k = small_intrinsics();
    let pose = Pose::identity();
    let mcfg = MappingConfig::default();
    let mut report = GradReport::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        let map = random_map(&mut rng, 10);
        let frame = random_frame(&mut rng, &k);
        let cfg = smooth_config(MODES[c % 3]);
        let out = render(&map, &pose, &k, &cfg);
        let (_, grads) = mapping_loss(&out, &frame, &mcfg).unwrap();
        let g = backward_surfels(&map, &pose, &k, &cfg, &out, &grads);
        let base_sig = signature(&reference_render_full(&map, &pose, &k, &cfg, None), &frame);
        report.configs += 1;
        for sid in 0..map.len() {
            for p in 0..PARAMS_PER_SURFEL {
                let analytic = match p {
                    0..=2 => g.position[sid][p],
                    3..=6 => g.rotation[sid][p - 3],
                    7 | 8 => g.log_scale[sid][p - 7],
                    9 => g.logit_opacity[sid],
                    _ => g.color[sid][p - 10],
                };
                let h = 1e-4 * param(&map.surfels()[sid], p).abs().max(1.0);
                let mut sigs_ok = true;
                let numeric = central_diff(h, |d| {
                    let mut m = map.clone();
                    nudge(&mut m.surfels_mut()[sid], p, d);
                    let o = reference_render_full(&m, &pose, &k, &cfg, None);
                    sigs_ok &= signature(&o, &frame) == base_sig;
                    mapping_loss(&o.0, &frame, &mcfg).unwrap().0.total
                });
                if !sigs_ok {
                    report.skipped += 1;
                    continue;
                }
                report.record(
                    format!("config {c} surfel {sid} param {p}"),
                    analytic,
                    numeric,
                    1e-4,
                    1e-7,
                );
            }
        }
    }
    report
}

/// Tracking-loss gradients over the six twist directions. With
/// `radial = false` the finite differences use the frozen-radial forward.
pub fn check_pose_gradients(configs: usize, seed: u64, radial: bool) -> GradReport {
    use rand::SeedableRng;
    use surfel_slam::backward::backward_pose;
    use surfel_slam::geometry::{exp_se3, Twist};
    use surfel_slam::raster::render;
    use surfel_slam::tracking::{tracking_loss, TrackingConfig};

    let k = small_intrinsics();
    let tcfg = TrackingConfig::default();
    let mut report = GradReport::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        let map = random_map(&mut rng, 10);
        let frame = random_frame(&mut rng, &k);
        let xi: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-0.05..0.05));
        let pose = exp_se3(&Twist::from_slice(&xi));
        let cfg = smooth_config(MODES[c % 3]);
        let out = render(&map, &pose, &k, &cfg);
        let (_, grads) = tracking_loss(&out, &frame, &tcfg).unwrap();
        let g = backward_pose(&map, &pose, &k, &cfg, &out, &grads, radial);
        let frozen = (!radial).then_some(&pose);
        let base_sig = signature(&reference_render_full(&map, &pose, &k, &cfg, frozen), &frame);
        report.configs += 1;
        for i in 0..6 {
            let mut sigs_ok = true;
            let numeric = central_diff(1e-5, |d| {
                let mut e = [0.0; 6];
                e[i] = d;
                let p = exp_se3(&Twist::from_slice(&e)).compose(&pose);
                let o = reference_render_full(&map, &p, &k, &cfg, frozen);
                sigs_ok &= signature(&o, &frame) == base_sig;
                tracking_loss(&o.0, &frame, &tcfg).unwrap().0.total
            });
            if !sigs_ok {
                report.skipped += 1;
                continue;
            }
            report.record(format!("config {c} twist {i}"), g.0[i], numeric, 1e-3, 1e-7);
        }
    }
    report
}

/// `Σ_{i,j} ω_i ω_j |z_i − z_j|` over all ordered pairs, written out.
pub fn brute_force_distortion(weights: &[f64], depths: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..weights.len() {
        for j in 0..weights.len() {
            sum += weights[i] * weights[j] * (depths[i] - depths[j]).abs();
        }
    }
    sum
}

/// A random weight/depth list with unsorted depths and weights summing to
/// at most one.
pub fn random_weight_depth_list(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(0..40);
    let mut t = 1.0;
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.gen_range(0.0..1.0);
        weights.push(a * t);
        t *= 1.0 - a;
    }
    let depths = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
    (weights, depths)
}

/// Largest `|streaming − brute force|` distortion over `lists` random lists.
pub fn worst_distortion_error(lists: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..lists)
        .map(|_| {
            let (w, z) = random_weight_depth_list(&mut rng);
            (surfel_slam::raster::distortion_term(&w, &z) - brute_force_distortion(&w, &z)).abs()
        })
        .fold(0.0, f64::max)
}

/// Outcome of the blending check over random scenes.
#[derive(Debug, Default)]
pub struct BlendReport {
    pub pixels: usize,
    /// Largest `|Σω + T_final − 1|`.
    pub worst_partition: f64,
    /// Largest deviation of a weight from `α·G·Π(1 − α_j G_j)` recomputed
    /// from the surfel opacities.
    pub worst_weight: f64,
    /// Pixels whose transmittance ever increased along the ray.
    pub non_monotone: usize,
}

/// Renders random scenes with early stopping disabled and checks the
/// compositing identities at every pixel.
pub fn check_blending(scenes: usize, seed: u64) -> BlendReport {
    use surfel_slam::raster::{render, trace_pixel};
    let k = Intrinsics::new(16.0, 16.0, 7.5, 7.5, 16, 16).unwrap();
    let cfg = RenderConfig {
        min_transmittance: 0.0,
        ..RenderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BlendReport::default();
    for _ in 0..scenes {
        let map = random_map(&mut rng, 40);
        let out = render(&map, &Pose::identity(), &k, &cfg);
        for row in 0..k.height {
            for col in 0..k.width {
                let hits = trace_pixel(&map, &Pose::identity(), &k, &cfg, col, row);
                let t_final = out.transmittance[row * k.width + col];
                let sum: f64 = hits.iter().map(|h| h.weight).sum();
                report.worst_partition = report.worst_partition.max((sum + t_final - 1.0).abs());
                let mut t = 1.0;
                let mut monotone = true;
                for h in &hits {
                    let a = map.surfels()[h.surfel].opacity() * h.hit.gaussian;
                    report.worst_weight = report.worst_weight.max((h.weight - a * t).abs());
                    let next = t * (1.0 - a);
                    monotone &= next <= t;
                    t = next;
                }
                report.worst_weight = report.worst_weight.max((t - t_final).abs());
                if !monotone {
                    report.non_monotone += 1;
                }
                report.pixels += 1;
            }
        }
    }
    report
}
