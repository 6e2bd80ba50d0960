//! CSV traces of the optimizers.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mapping::MappingStep;
use crate::tracking::TrackingStep;

fn append(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    if !exists {
        buf.push_str(header);
        buf.push('\n');
    }
    for r in rows {
        buf.push_str(&r);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Appends mapping iterations; `frame_ids` maps window slots to frame ids.
pub fn append_mapping_trace(path: &Path, window: usize, frame_ids: &[usize], trace: &[MappingStep]) -> Result<()> {
    append(
        path,
        "window,iteration,frame_id,total,color,depth,normal",
        trace.iter().map(|s| {
            format!(
                "{window},{},{},{:.9},{:.9},{:.9},{:.9}",
                s.iteration, frame_ids[s.frame], s.loss.total, s.loss.color, s.loss.depth, s.loss.normal
            )
        }),
    )
}

pub fn append_tracking_trace(path: &Path, frame_id: usize, trace: &[TrackingStep]) -> Result<()> {
    append(
        path,
        "frame_id,iteration,total,color,depth,valid_pixels",
        trace.iter().map(|s| {
            format!(
                "{frame_id},{},{:.9},{:.9},{:.9},{}",
                s.iteration, s.loss.total, s.loss.color, s.loss.depth, s.valid_pixels
            )
        }),
    )
}
