//! Binary PGM/PPM debug dumps.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::Rgb;
use crate::grid::Grid;

/// Writes a 16-bit PGM (P5). Values are mapped linearly from `[0, max]` to
/// `[0, 65535]`; non-finite values become 0.
pub fn write_pgm(grid: &Grid<f64>, max: f64, path: &Path) -> Result<()> {
    let (w, h) = grid.dims();
    let mut buf = format!("P5\n{w} {h}\n65535\n").into_bytes();
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    for v in grid.iter() {
        let q = if v.is_finite() {
            (v * scale).clamp(0.0, 65535.0).round() as u16
        } else {
            0
        };
        buf.extend_from_slice(&q.to_be_bytes());
    }
    write_all(path, &buf)
}

/// Writes an 8-bit PPM (P6) from `[0, 1]` colors.
pub fn write_ppm(grid: &Grid<Rgb>, path: &Path) -> Result<()> {
    let (w, h) = grid.dims();
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    for c in grid.iter() {
        for ch in c {
            buf.push((ch.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_all(path, &buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
