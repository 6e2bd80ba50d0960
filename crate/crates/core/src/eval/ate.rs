//! Absolute trajectory error after closed-form alignment.

use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::io::trajectory::Stamped;
use crate::io::tum::{associate, MAX_ASSOCIATION_GAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    #[default]
    Rigid,
    Similarity,
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rigid" | "se3" => Ok(Self::Rigid),
            "similarity" | "sim3" => Ok(Self::Similarity),
            _ => Err(Error::InvalidInput(format!("unknown alignment '{s}'"))),
        }
    }
}

/// Maps estimated positions onto ground truth: `gt ≈ s·R·est + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl SimilarityTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub pairs: usize,
    pub alignment: SimilarityTransform,
}

/// Least-squares alignment of point sets (`dst ≈ s·R·src + t`), with the
/// reflection-corrected SVD solution.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<SimilarityTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 3 paired points, got {}",
            src.len().min(dst.len())
        )));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut e = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        e[(2, 2)] = -1.0;
    }
    let rotation = u * e * vt;
    let scale = if with_scale && var_s > 0.0 {
        (svd.singular_values.component_mul(&e.diagonal())).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok(SimilarityTransform {
        rotation,
        translation,
        scale,
    })
}

/// Associates the trajectories by timestamp and reports translational error
/// of camera centers after alignment.
pub fn ate(est: &[Stamped], gt: &[Stamped], mode: Alignment) -> Result<AteResult> {
    let te: Vec<f64> = est.iter().map(|s| s.0).collect();
    let tg: Vec<f64> = gt.iter().map(|s| s.0).collect();
    let pairs = associate(&te, &tg, MAX_ASSOCIATION_GAP);
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "ATE needs at least 3 associated poses, found {}",
            pairs.len()
        )));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est[i].1.camera_center()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| gt[j].1.camera_center()).collect();
    let alignment = umeyama(&src, &dst, mode == Alignment::Similarity)?;
    let mut errors: Vec<f64> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (alignment.apply(s) - d).norm())
        .collect();
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    errors.sort_by(f64::total_cmp);
    let mid = errors.len() / 2;
    let median = if errors.len() % 2 == 0 {
        0.5 * (errors[mid - 1] + errors[mid])
    } else {
        errors[mid]
    };
    Ok(AteResult {
        rmse,
        mean,
        median,
        max: *errors.last().expect("non-empty"),
        pairs: errors.len(),
        alignment,
    })
}
