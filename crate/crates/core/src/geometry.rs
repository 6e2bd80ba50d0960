//! Pinhole camera model, rigid transforms and the SE(3) exponential/logarithm.
//!
//! Conventions used throughout the crate:
//!
//! * A [`Pose`] is world-to-camera: `x_c = R·x_w + t`.
//! * Camera axes are x right, y down, z forward. Pixel centers sit at integer
//!   coordinates and the ray through `(col, row)` has camera direction
//!   `((col − cx)/fx, (row − cy)/fy, 1)`.
//! * A [`Twist`] stores the translational part first, `ξ = (ρ, φ)`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Below this rotation angle the exp/log maps switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    #[inline]
    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame direction of the ray through a pixel, with unit z.
    #[inline]
    pub fn ray(&self, col: f64, row: f64) -> Vector3<f64> {
        Vector3::new((col - self.cx) / self.fx, (row - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point to pixel coordinates `(col, row)`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Intrinsics of the image obtained by keeping every `factor`-th pixel
    /// starting at 0. Exact under the integer pixel-center convention.
    pub fn downsampled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width.div_ceil(factor),
            height: self.height.div_ceil(factor),
        }
    }
}

/// Back-projects a pixel at metric depth into the camera frame.
pub fn backproject(col: f64, row: f64, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "backproject needs positive depth, got {depth}"
        )));
    }
    Ok(k.ray(col, row) * depth)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Tangent-space increment `(ρ, φ)` of SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist(Vector6::from_row_slice(v))
    }

    #[inline]
    pub fn rho(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    #[inline]
    pub fn phi(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(q.to_rotation_matrix().into_inner(), translation)
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    /// Camera y points down in the image.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(up);
        if x.norm() < 1e-9 {
            // looking along `up`: pick any perpendicular
            let alt = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            x = z.cross(&alt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r_wc = Matrix3::from_columns(&[x, y, z]);
        let r_cw = r_wc.transpose();
        Self::new(r_cw, -(r_cw * eye))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Projects the rotation back onto SO(3); removes drift from repeated
    /// left-multiplication.
    pub fn orthonormalized(&self) -> Self {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        Self::new(q.to_rotation_matrix().into_inner(), self.translation)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let should_be_identity = self.rotation.transpose() * self.rotation;
        (should_be_identity - Matrix3::identity()).amax() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Geodesic rotation angle between two poses (radians).
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }

    /// Left perturbation `exp(ξ)·self`.
    pub fn perturbed(&self, xi: &Twist) -> Self {
        exp_se3(xi).compose(self)
    }
}

/// Rotation angle of a rotation matrix in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let w = vee_antisym(r);
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// `(R − Rᵀ)∨ / 2`, which equals `sin θ · axis`.
fn vee_antisym(r: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
}

pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian `V(φ)` of SO(3), mapping ρ to the translation of `exp(ξ)`.
fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * b + k * k * c
}

fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn exp_se3(xi: &Twist) -> Pose {
    let phi = xi.phi();
    Pose::new(exp_so3(&phi), left_jacobian(&phi) * xi.rho())
}

pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let w = vee_antisym(r);
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if std::f64::consts::PI - theta < 1e-9 {
        return Err(Error::Domain {
            op: "log_se3",
            reason: "rotation angle of π has an ambiguous axis".into(),
        });
    }
    if theta < SMALL_ANGLE {
        // θ/sinθ ≈ 1 + θ²/6
        return Ok(w * (1.0 + theta * theta / 6.0));
    }
    Ok(w * (theta / s))
}

pub fn log_se3(pose: &Pose) -> Result<Twist> {
    let phi = log_so3(&pose.rotation)?;
    let rho = left_jacobian_inverse(&phi) * pose.translation;
    Ok(Twist::new(rho, phi))
}

/// Per-pixel normals from central differences of back-projected depth.
///
/// Returns `None` at borders and wherever a neighbor has depth 0. Valid
/// normals are unit length and face the camera.
pub fn compute_normal_map(depth: &Grid<f64>, k: &Intrinsics) -> Grid<Option<Vector3<f64>>> {
    let (w, h) = depth.dims();
    let point = |col: usize, row: usize| -> Option<Vector3<f64>> {
        let d = *depth.get(col, row);
        (d > 0.0).then(|| k.ray(col as f64, row as f64) * d)
    };
    Grid::from_fn(w, h, |col, row| {
        if col == 0 || row == 0 || col + 1 >= w || row + 1 >= h {
            return None;
        }
        let center = point(col, row)?;
        let dx = point(col + 1, row)? - point(col - 1, row)?;
        let dy = point(col, row + 1)? - point(col, row - 1)?;
        let n = dx.cross(&dy);
        let len = n.norm();
        if !(len > 1e-12) {
            return None;
        }
        let n = n / len;
        Some(if n.dot(&center) > 0.0 { -n } else { n })
    })
}
