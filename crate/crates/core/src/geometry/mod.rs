//! Pose and camera mathematics.
//!
//! Convention: right-handed camera frame looking along +z, image +y down,
//! pixel `(i, j)` centred at `(i + 0.5, j + 0.5)`. Depth is the camera-frame
//! z coordinate in millimetres.

mod align;
mod depth;
mod mesh;
mod regions;

pub use align::{rigid_align, RigidFit};
pub use depth::{DepthMap, DEPTH_MAGIC};
pub use mesh::{build_hair_mesh, build_pixel_mesh, triangulate_region, TriMesh2D, TriMesh3D, DEFAULT_DISCONTINUITY_FRACTION};
pub use regions::RegionMasks;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::Mask;

/// Rigid head pose: unit quaternion `(w, x, y, z)` and translation in mm.
/// Maps model coordinates into the camera frame, `x_cam = R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    quaternion: [f64; 4],
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { quaternion: [1.0, 0.0, 0.0, 0.0], translation: Vector3::zeros() }
    }

    /// Builds a pose, normalizing the quaternion.
    pub fn new(quaternion: [f64; 4], translation: Vector3<f64>) -> Self {
        Self { quaternion: normalize_quat(quaternion), translation }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let a = axis.normalize() * (0.5 * angle).sin();
        Self::new([(0.5 * angle).cos(), a.x, a.y, a.z], translation)
    }

    /// Head-style Euler angles in degrees: yaw about the camera y axis,
    /// pitch about x, roll about z, composed intrinsically Z-Y-X as
    /// `R = Rz(roll) · Ry(yaw) · Rx(pitch)`.
    pub fn from_euler_deg(yaw: f64, pitch: f64, roll: f64, translation: Vector3<f64>) -> Self {
        let rz = Self::from_axis_angle(Vector3::z(), roll.to_radians(), Vector3::zeros());
        let ry = Self::from_axis_angle(Vector3::y(), yaw.to_radians(), Vector3::zeros());
        let rx = Self::from_axis_angle(Vector3::x(), pitch.to_radians(), Vector3::zeros());
        let q = quat_mul(quat_mul(rz.quaternion, ry.quaternion), rx.quaternion);
        Self::new(q, translation)
    }

    /// Inverse of [`Pose::from_euler_deg`], returning `(yaw, pitch, roll)`
    /// with yaw in [−90°, 90°].
    pub fn to_euler_deg(&self) -> (f64, f64, f64) {
        let r = self.rotation();
        let yaw = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let (pitch, roll) = if r[(2, 0)].abs() < 1.0 - 1e-12 {
            (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
        } else {
            // Gimbal lock: only pitch ∓ roll is determined; put it all in pitch.
            ((-r[(1, 2)]).atan2(r[(1, 1)]), 0.0)
        };
        (yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.quaternion
    }

    /// Replaces the quaternion, renormalizing it.
    pub fn set_quaternion(&mut self, q: [f64; 4]) {
        self.quaternion = normalize_quat(q);
    }

    pub fn is_identity(&self) -> bool {
        self.quaternion == [1.0, 0.0, 0.0, 0.0] && self.translation == Vector3::zeros()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_matrix(self.quaternion)
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let [w, x, y, z] = self.quaternion;
        let qi = [w, -x, -y, -z];
        Pose { quaternion: qi, translation: -(quat_to_matrix(qi) * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(quat_mul(self.quaternion, other.quaternion), self.rotation() * other.translation + self.translation)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        2.0 * self.quaternion[0].abs().min(1.0).acos()
    }
}

/// Applies `pose` to every point.
pub fn apply_pose(points: &[Vector3<f64>], pose: &Pose) -> Vec<Vector3<f64>> {
    let r = pose.rotation();
    points.iter().map(|p| r * p + pose.translation).collect()
}

/// Transform taking camera-1 coordinates to camera-2 coordinates:
/// `(R₂R₁⁻¹, −R₂R₁⁻¹t₁ + t₂)`.
pub fn relative_pose(pose1: &Pose, pose2: &Pose) -> Pose {
    if pose1 == pose2 {
        return Pose::identity();
    }
    let [w, x, y, z] = pose1.quaternion;
    let q = quat_mul(pose2.quaternion, [w, -x, -y, -z]);
    let r = quat_to_matrix(normalize_quat(q));
    Pose::new(q, -(r * pose1.translation) + pose2.translation)
}

pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [a1, b1, c1, d1] = a;
    let [a2, b2, c2, d2] = b;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(n > 0.0 && n.is_finite(), "quaternion must be non-zero and finite");
    let mut out = q.map(|v| v / n);
    // Canonical hemisphere.
    if out[0] < 0.0 {
        out = out.map(|v| -v);
    }
    out
}

pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`quat_to_matrix`] with respect to `w, x, y, z`
/// (treating the formula as a polynomial, without normalization).
pub fn quat_matrix_jacobian(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

/// Gradient of a scalar with respect to the raw quaternion `q`, given its
/// gradient `grad_r` with respect to `R(q/|q|)`.
pub fn quat_gradient_from_rotation(q: [f64; 4], grad_r: &Matrix3<f64>) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let qh = q.map(|v| v / n);
    let jac = quat_matrix_jacobian(qh);
    let g_hat: [f64; 4] = std::array::from_fn(|i| jac[i].component_mul(grad_r).sum());
    // d(q/|q|)/dq = (I − q̂q̂ᵀ)/|q|
    let dot: f64 = g_hat.iter().zip(&qh).map(|(a, b)| a * b).sum();
    std::array::from_fn(|i| (g_hat[i] - dot * qh[i]) / n)
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Focal length used for 256×256 images; scaled linearly with width.
pub const DEFAULT_FOCAL_256: f64 = 1160.0;

/// A projected point: continuous pixel coordinates and depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Camera {
    pub fn new(focal: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { focal, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Default camera: focal 1160 px at 256 px width, principal point at the image centre.
    pub fn default_for(width: usize, height: usize) -> Self {
        Self {
            focal: DEFAULT_FOCAL_256 * width as f64 / 256.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidParameter(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera image size must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx <= self.width as f64 && self.cy >= 0.0 && self.cy <= self.height as f64) {
            return Err(Error::InvalidParameter("principal point must lie inside the image".into()));
        }
        Ok(())
    }

    /// Camera for an image downsampled by 2.
    pub fn half(&self) -> Camera {
        Camera {
            focal: self.focal / 2.0,
            cx: self.cx / 2.0,
            cy: self.cy / 2.0,
            width: (self.width / 2).max(1),
            height: (self.height / 2).max(1),
        }
    }

    /// `None` for points with `z <= 0`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<Projection> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(Projection { u: self.focal * p.x / p.z + self.cx, v: self.focal * p.y / p.z + self.cy, depth: p.z })
    }

    /// Back-projects continuous pixel coordinates at the given depth.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * depth / self.focal, (v - self.cy) * depth / self.focal, depth)
    }

    /// Back-projects the centre of pixel `(x, y)`.
    #[inline]
    pub fn backproject_pixel(&self, x: usize, y: usize, depth: f64) -> Vector3<f64> {
        self.backproject(x as f64 + 0.5, y as f64 + 0.5, depth)
    }

    /// Derivatives of `(u, v)` with respect to the camera-frame point.
    #[inline]
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> [[f64; 3]; 2] {
        let iz = 1.0 / p.z;
        let f = self.focal;
        [[f * iz, 0.0, -f * p.x * iz * iz], [0.0, f * iz, -f * p.y * iz * iz]]
    }
}

/// Projects every point; behind-camera points are `None`.
pub fn project(points: &[Vector3<f64>], camera: &Camera) -> Vec<Option<Projection>> {
    points.iter().map(|p| camera.project(p)).collect()
}

/// Lifts every masked pixel centre to 3D using `depth`.
pub fn unproject(depth: &DepthMap, mask: &Mask, camera: &Camera) -> Result<Vec<((usize, usize), Vector3<f64>)>> {
    let undefined: Vec<_> = mask.iter_set().filter(|&(x, y)| !depth.is_defined(x, y)).collect();
    if !undefined.is_empty() {
        return Err(Error::UndefinedDepth { pixels: undefined });
    }
    Ok(mask.iter_set().map(|(x, y)| ((x, y), camera.backproject_pixel(x, y, depth.get(x, y)))).collect())
}
