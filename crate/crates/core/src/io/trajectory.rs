//! TUM trajectory text format: `timestamp tx ty tz qx qy qz qw` per line,
//! camera-to-world.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// A timestamped world-to-camera pose.
pub type Stamped = (f64, Pose);

/// Display formatting without a negative zero.
fn num(x: f64) -> String {
    format!("{}", x + 0.0)
}

/// Formats one pose as a TUM line (no trailing newline).
pub fn format_tum_line(timestamp: f64, pose: &Pose) -> String {
    let c2w = pose.inverse();
    let t = c2w.translation;
    let q = c2w.quaternion();
    let q = q.quaternion();
    let mut s = format!("{timestamp:.6}");
    for v in [t.x, t.y, t.z, q.i, q.j, q.k, q.w] {
        let _ = write!(s, " {}", num(v));
    }
    s
}

pub fn format_tum(traj: &[Stamped]) -> String {
    let mut s = String::new();
    for (ts, pose) in traj {
        s.push_str(&format_tum_line(*ts, pose));
        s.push('\n');
    }
    s
}

pub fn write_trajectory_tum(traj: &[Stamped], path: &Path) -> Result<()> {
    std::fs::write(path, format_tum(traj)).map_err(|e| Error::io(path, e))
}

/// Parses TUM trajectory text; `#` comments and blank lines are skipped.
pub fn parse_tum(text: &str, path: &Path) -> Result<Vec<Stamped>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("'{t}': {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, found {}", vals.len())));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if !(q.norm() > 1e-6) {
            return Err(parse_err("degenerate quaternion".into()));
        }
        let c2w = Pose::from_quaternion(
            &UnitQuaternion::from_quaternion(q),
            Vector3::new(vals[1], vals[2], vals[3]),
        );
        out.push((vals[0], c2w.inverse()));
    }
    Ok(out)
}

pub fn read_trajectory_tum(path: &Path) -> Result<Vec<Stamped>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_line_is_canonical() {
        assert_eq!(format_tum_line(0.0, &Pose::identity()), "0.000000 0 0 0 0 0 0 1");
    }

    #[test]
    fn empty_trajectory_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        write_trajectory_tum(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
        assert!(read_trajectory_tum(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_random_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let traj: Vec<Stamped> = (0..50)
            .map(|i| {
                let v: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
                (i as f64 * 0.033, exp_se3(&Twist::from_slice(&v)))
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        write_trajectory_tum(&traj, &p).unwrap();
        let back = read_trajectory_tum(&p).unwrap();
        assert_eq!(back.len(), traj.len());
        for ((ta, a), (tb, b)) in traj.iter().zip(&back) {
            assert!((ta - tb).abs() < 1e-6);
            assert!((a.translation - b.translation).norm() < 1e-6);
            assert!((a.rotation - b.rotation).norm() < 1e-6);
        }
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = parse_tum("# c\n0 1 2 3\n", Path::new("x.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
