//! Point-cloud accuracy, completion, precision, recall and F1.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Uniform hash grid for exact nearest-neighbor queries.
pub struct GridIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
        for (i, p) in points.iter().enumerate() {
            let key = Self::key_of(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(key[a]);
                hi[a] = hi[a].max(key[a]);
            }
            cells.entry(key).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn key_of(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Distance to the nearest indexed point, or `None` if the index is empty.
    pub fn nearest_distance(&self, q: &Vector3<f64>) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let c = Self::key_of(q, self.cell);
        let mut best = f64::INFINITY;
        // offsets that stay inside the occupied box, per axis
        let span: [(i64, i64); 3] = std::array::from_fn(|a| (self.lo[a] - c[a], self.hi[a] - c[a]));
        let first = (0..3).map(|a| span[a].0.max(0).max(-span[a].1)).max().unwrap_or(0);
        let last = (0..3).map(|a| span[a].0.abs().max(span[a].1.abs())).max().unwrap_or(0);
        let visit = |d: [i64; 3], best: &mut f64| {
            if let Some(ids) = self.cells.get(&[c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                for &i in ids {
                    *best = best.min((self.points[i as usize] - q).norm());
                }
            }
        };
        for r in first..=last {
            let clamp = |a: usize| (span[a].0.max(-r), span[a].1.min(r));
            let ((x0, x1), (y0, y1), (z0, z1)) = (clamp(0), clamp(1), clamp(2));
            for dx in x0..=x1 {
                for dy in y0..=y1 {
                    if dx.abs() == r || dy.abs() == r {
                        for dz in z0..=z1 {
                            visit([dx, dy, dz], &mut best);
                        }
                    } else {
                        for dz in [-r, r] {
                            if dz >= z0 && dz <= z1 {
                                visit([dx, dy, dz], &mut best);
                            }
                        }
                    }
                }
            }
            // every point outside shell r is farther than r cells away
            if best <= r as f64 * self.cell {
                break;
            }
        }
        Some(best)
    }
}

/// Nearest-neighbor distance from every point of `from` to `to`.
pub fn nearest_distances(from: &[Vector3<f64>], to: &[Vector3<f64>], cell: f64) -> Vec<f64> {
    let index = GridIndex::new(to, cell);
    crate::par::map_slice(from, |p| index.nearest_distance(p).unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomResult {
    /// Mean prediction-to-ground-truth distance (cm).
    pub accuracy_cm: f64,
    /// Mean ground-truth-to-prediction distance (cm).
    pub completion_cm: f64,
    /// Percent of predicted points within the threshold.
    pub precision: f64,
    /// Percent of ground-truth points within the threshold.
    pub recall: f64,
    pub f1: f64,
}

/// Distance under which a point counts as reconstructed (meters).
pub const DEFAULT_THRESHOLD: f64 = 0.03;

pub fn geom_metrics(pred: &[Vector3<f64>], gt: &[Vector3<f64>], threshold: f64) -> Result<GeomResult> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InsufficientData(format!(
            "geometry metrics need non-empty point sets (pred {}, gt {})",
            pred.len(),
            gt.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput("threshold must be positive".into()));
    }
    let acc = nearest_distances(pred, gt, threshold);
    let comp = nearest_distances(gt, pred, threshold);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let frac = |v: &[f64]| 100.0 * v.iter().filter(|d| **d < threshold).count() as f64 / v.len() as f64;
    let precision = frac(&acc);
    let recall = frac(&comp);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(GeomResult {
        accuracy_cm: 100.0 * mean(&acc),
        completion_cm: 100.0 * mean(&comp),
        precision,
        recall,
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_points(n: usize, step: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .flat_map(|i| (0..n).map(move |j| Vector3::new(i as f64 * step, j as f64 * step, 0.0)))
            .collect()
    }

    #[test]
    fn identical_sets_are_perfect() {
        let p = grid_points(20, 0.01);
        let r = geom_metrics(&p, &p, 0.03).unwrap();
        assert_eq!((r.accuracy_cm, r.completion_cm), (0.0, 0.0));
        assert_eq!((r.precision, r.recall, r.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn uniform_shift_of_one_centimeter() {
        let p = grid_points(20, 0.05);
        let q: Vec<_> = p.iter().map(|v| v + Vector3::new(0.0, 0.0, 0.01)).collect();
        let r = geom_metrics(&q, &p, 0.03).unwrap();
        assert!((r.accuracy_cm - 1.0).abs() < 1e-9 && (r.completion_cm - 1.0).abs() < 1e-9);
        assert_eq!((r.precision, r.recall), (100.0, 100.0));
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(geom_metrics(&[], &grid_points(2, 1.0), 0.03).is_err());
    }

    proptest! {
        #[test]
        fn grid_matches_brute_force(
            pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..200),
            qs in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 1..50),
            cell in 0.01..0.5f64,
        ) {
            let pts: Vec<_> = pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
            let index = GridIndex::new(&pts, cell);
            for (x, y, z) in qs {
                let q = Vector3::new(x, y, z);
                let brute = pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(index.nearest_distance(&q).unwrap(), brute);
            }
        }
    }
}
