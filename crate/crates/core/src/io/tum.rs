//! TUM RGB-D dataset directories: `rgb.txt`, `depth.txt` and optional
//! `groundtruth.txt`. A `camera.txt` holding `fx fy cx cy width height`
//! overrides the intrinsics otherwise chosen from the directory name.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::Intrinsics;
use crate::grid::Grid;

use super::trajectory::{read_trajectory_tum, write_trajectory_tum, Stamped};

/// Maximum timestamp difference for associating two streams (seconds).
pub const MAX_ASSOCIATION_GAP: f64 = 0.02;
/// Raw 16-bit depth units per meter.
pub const DEPTH_SCALE: f64 = 5000.0;
/// Optional per-directory calibration file.
pub const CAMERA_FILE: &str = "camera.txt";

/// An associated rgb/depth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TumEntry {
    pub timestamp: f64,
    pub rgb: PathBuf,
    pub depth_timestamp: f64,
    pub depth: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TumDataset {
    pub root: PathBuf,
    pub intrinsics: Intrinsics,
    pub entries: Vec<TumEntry>,
    /// rgb images without a depth image within the association gap.
    pub dropped: usize,
    pub groundtruth: Option<Vec<Stamped>>,
}

/// Reads a `timestamp filename` index, skipping comments.
pub fn read_index(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(ts), Some(file)) = (it.next(), it.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected 'timestamp filename'".into(),
            });
        };
        let ts = ts.parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad timestamp '{ts}': {e}"),
        })?;
        out.push((ts, file.to_string()));
    }
    Ok(out)
}

/// Greedy association of two timestamp lists: candidate pairs within
/// `max_gap` are taken in order of increasing gap, each index at most once.
/// Returns index pairs `(i in a, j in b)` sorted by `i`. Exchanging `a` and
/// `b` gives the same pairs swapped, up to exact ties in the gap.
pub fn associate(a: &[f64], b: &[f64], max_gap: f64) -> Vec<(usize, usize)> {
    let mut bi: Vec<usize> = (0..b.len()).collect();
    bi.sort_by(|&x, &y| b[x].total_cmp(&b[y]));
    let b_sorted: Vec<f64> = bi.iter().map(|&j| b[j]).collect();
    let mut candidates = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let lo = b_sorted.partition_point(|&x| x < ta - max_gap);
        for (k, &tb) in b_sorted.iter().enumerate().skip(lo) {
            if tb > ta + max_gap {
                break;
            }
            candidates.push(((ta - tb).abs(), i, bi[k]));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort();
    pairs
}

/// Default intrinsics for the TUM sensors, chosen from the directory name.
pub fn tum_intrinsics(root: &Path) -> Intrinsics {
    let name = root.to_string_lossy();
    let (fx, fy, cx, cy) = if name.contains("freiburg1") {
        (517.3, 516.5, 318.6, 255.3)
    } else if name.contains("freiburg2") {
        (520.9, 521.0, 325.1, 249.7)
    } else if name.contains("freiburg3") {
        (535.4, 539.2, 320.1, 247.6)
    } else {
        (525.0, 525.0, 319.5, 239.5)
    };
    Intrinsics {
        fx,
        fy,
        cx,
        cy,
        width: 640,
        height: 480,
    }
}

/// Reads `camera.txt` from `root` if it exists.
pub fn read_camera_file(root: &Path) -> Result<Option<Intrinsics>> {
    let path = root.join(CAMERA_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    let bad = |msg: String| Error::Parse {
        path: path.clone(),
        line: 1,
        msg,
    };
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| bad(format!("bad value '{t}': {e}"))))
        .collect::<Result<_>>()?;
    let [fx, fy, cx, cy, w, h] = v[..] else {
        return Err(bad("expected 'fx fy cx cy width height'".into()));
    };
    if !(w >= 1.0 && h >= 1.0 && w.fract() == 0.0 && h.fract() == 0.0) {
        return Err(bad(format!("image size {w}x{h} is not a positive integer")));
    }
    let k = Intrinsics::new(fx, fy, cx, cy, w as usize, h as usize).map_err(|e| bad(e.to_string()))?;
    Ok(Some(k))
}

/// Writes `camera.txt` for [`read_camera_file`].
pub fn write_camera_file(root: &Path, k: &Intrinsics) -> Result<()> {
    let path = root.join(CAMERA_FILE);
    let text = format!(
        "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes frames as a TUM-layout directory (8-bit color and 16-bit depth
/// PNGs with their index files), plus `groundtruth.txt` and `camera.txt`.
/// Depth is quantized to the 1/5000 m units of the format.
pub fn write_tum_directory<'a>(
    root: &Path,
    frames: impl IntoIterator<Item = &'a Frame>,
    groundtruth: &[Stamped],
    k: &Intrinsics,
) -> Result<usize> {
    for sub in ["rgb", "depth"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut rgb_index = String::from("# color images\n# timestamp filename\n");
    let mut depth_index = String::from("# depth maps\n# timestamp filename\n");
    let mut count = 0;
    for f in frames {
        let (w, h) = f.dims();
        let rgb_name = format!("rgb/{:.6}.png", f.timestamp);
        let depth_name = format!("depth/{:.6}.png", f.timestamp);
        let rgb: Vec<u8> = f
            .color
            .iter()
            .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        let depth: Vec<u16> = f
            .depth
            .iter()
            .map(|d| (d * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        save_png(
            image::RgbImage::from_raw(w as u32, h as u32, rgb),
            &root.join(&rgb_name),
        )?;
        save_png(
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, depth),
            &root.join(&depth_name),
        )?;
        rgb_index += &format!("{:.6} {rgb_name}\n", f.timestamp);
        depth_index += &format!("{:.6} {depth_name}\n", f.timestamp);
        count += 1;
    }
    for (name, text) in [("rgb.txt", rgb_index), ("depth.txt", depth_index)] {
        let path = root.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if !groundtruth.is_empty() {
        write_trajectory_tum(groundtruth, &root.join("groundtruth.txt"))?;
    }
    write_camera_file(root, k)?;
    Ok(count)
}

fn save_png<P, C>(img: Option<image::ImageBuffer<P, C>>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let img = img.expect("buffer size matches frame dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the dataset index. Images are decoded lazily by [`TumDataset::frame`].
pub fn load_tum(root: &Path) -> Result<TumDataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let rgb = read_index(&root.join("rgb.txt"))?;
    let depth = read_index(&root.join("depth.txt"))?;
    let rgb_ts: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let depth_ts: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let pairs = associate(&rgb_ts, &depth_ts, MAX_ASSOCIATION_GAP);
    let entries: Vec<TumEntry> = pairs
        .iter()
        .map(|&(i, j)| TumEntry {
            timestamp: rgb[i].0,
            rgb: root.join(&rgb[i].1),
            depth_timestamp: depth[j].0,
            depth: root.join(&depth[j].1),
        })
        .collect();
    let dropped = rgb.len() - entries.len();
    if dropped > 0 {
        log::info!("{}: dropped {dropped} unassociated rgb frames", root.display());
    }
    let gt_path = root.join("groundtruth.txt");
    let groundtruth = if gt_path.exists() {
        Some(read_trajectory_tum(&gt_path)?)
    } else {
        None
    };
    Ok(TumDataset {
        root: root.to_path_buf(),
        intrinsics: read_camera_file(root)?.unwrap_or_else(|| tum_intrinsics(root)),
        entries,
        dropped,
        groundtruth,
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes a 16-bit depth PNG into meters.
pub fn read_depth_png(path: &Path) -> Result<Grid<f64>> {
    let img = open_image(path)?;
    let img = match img {
        image::DynamicImage::ImageLuma16(i) => i,
        other => {
            return Err(Error::Dataset(format!(
                "{}: expected 16-bit single-channel depth, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(
        w as usize,
        h as usize,
        img.into_raw().into_iter().map(|d| d as f64 / DEPTH_SCALE).collect(),
    ))
}

/// Decodes an 8-bit color image into `[0, 1]` RGB.
pub fn read_color(path: &Path) -> Result<Grid<[f64; 3]>> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Grid::from_vec(w as usize, h as usize, data))
}

impl TumDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Frame> {
        let e = &self.entries[index];
        let color = read_color(&e.rgb)?;
        let depth = read_depth_png(&e.depth)?;
        Frame::new(e.timestamp, color, depth, &self.intrinsics)
    }

    /// Frames in order, decoded on demand.
    pub fn frames(&self) -> impl Iterator<Item = Result<Frame>> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }
}
