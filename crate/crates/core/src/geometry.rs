//! Pinhole cameras, rigid transforms and small symmetric-matrix numerics.
//!
//! Conventions used throughout the crate:
//!
//! * Pixel centers sit at integer coordinates with the origin at the top-left
//!   pixel; `+x` points right and `+y` points down.
//! * Camera space is right-handed with `+z` forward (so `+y` is image-down).
//! * Extrinsics are stored camera-to-world.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let intrinsics = Self {
            focal_x,
            focal_y,
            principal_x,
            principal_y,
            width,
            height,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view (radians).
    pub fn from_fov(fov_x: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_x > 0.0 && fov_x < std::f64::consts::PI) {
            return Err(Error::InvalidCamera(format!("field of view {fov_x} out of (0, pi)")));
        }
        let focal = (width as f64 / 2.0) / (fov_x / 2.0).tan();
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) || !self.focal_x.is_finite() || !self.focal_y.is_finite() {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.focal_x, self.focal_y
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidCamera(format!(
                "image must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        let in_x = (0.0..=self.width as f64).contains(&self.principal_x);
        let in_y = (0.0..=self.height as f64).contains(&self.principal_y);
        if !in_x || !in_y {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside the image",
                self.principal_x, self.principal_y
            )));
        }
        Ok(())
    }

    /// Camera-space direction through `pixel`, scaled so that its z component is 1.
    #[inline]
    pub fn ray(&self, pixel: Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.principal_x) / self.focal_x,
            (pixel.y - self.principal_y) / self.focal_y,
            1.0,
        )
    }
}

/// Proper rigid motion `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidRotation);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the unit axis `axis * angle` (rotation vector).
    pub fn from_rotation_vector(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation_from_vector(rotation),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::from_fn(|r, c| values[r * 4 + c]);
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }
}

/// Rodrigues' formula for a rotation vector.
pub fn rotation_from_vector(v: Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle < 1e-15 {
        return Matrix3::identity();
    }
    let k = v / angle;
    let skew = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + skew * angle.sin() + skew * skew * (1.0 - angle.cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub intrinsics: CameraIntrinsics,
    pub camera_to_world: RigidTransform,
}

impl CameraParams {
    pub fn new(intrinsics: CameraIntrinsics, camera_to_world: RigidTransform) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            camera_to_world,
        })
    }

    /// Camera at `eye` looking at `target`, with world `+z` as up.
    pub fn look_at(intrinsics: CameraIntrinsics, eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let up = Vector3::z();
        let right = forward
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::InvalidCamera("viewing direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(intrinsics, RigidTransform::new(rotation, eye)?)
    }

    pub fn position(&self) -> Vector3<f64> {
        *self.camera_to_world.translation()
    }
}

/// Projects a world point into `cam`, returning the pixel and camera-space depth.
pub fn project(point: &Vector3<f64>, cam: &CameraParams) -> Result<(Vector2<f64>, f64)> {
    let pc = cam.camera_to_world.inverse().apply(point);
    if pc.z <= 0.0 {
        return Err(Error::PointBehindCamera { z: pc.z });
    }
    let k = &cam.intrinsics;
    let pixel = Vector2::new(
        k.focal_x * pc.x / pc.z + k.principal_x,
        k.focal_y * pc.y / pc.z + k.principal_y,
    );
    Ok((pixel, pc.z))
}

/// Lifts a pixel with camera-space depth `depth` to a world point.
///
/// The pixel is expected to lie inside the image; this is not checked so that
/// sub-pixel and round-trip computations stay total.
pub fn backproject(pixel: Vector2<f64>, depth: f64, cam: &CameraParams) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth { depth });
    }
    let pc = cam.intrinsics.ray(pixel) * depth;
    Ok(cam.camera_to_world.apply(&pc))
}

/// Symmetric 3x3 matrix stored by its six unique entries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self { xx, xy, xz, yy, yz, zz }
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Symmetric part `(m + mᵀ) / 2`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self {
            xx: m[(0, 0)],
            xy: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            xz: 0.5 * (m[(0, 2)] + m[(2, 0)]),
            yy: m[(1, 1)],
            yz: 0.5 * (m[(1, 2)] + m[(2, 1)]),
            zz: m[(2, 2)],
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        )
    }

    pub fn to_array(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn determinant(&self) -> f64 {
        self.xx * (self.yy * self.zz - self.yz * self.yz) - self.xy * (self.xy * self.zz - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - self.yy * self.xz)
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Eigenvalues of a symmetric 3x3 matrix in descending order, by cyclic
/// Jacobi rotations.
pub fn sym_eigenvalues(m: &SymMat3) -> [f64; 3] {
    let mut a = m.to_array();
    let scale = m.frobenius_norm();
    if scale == 0.0 || !scale.is_finite() {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        sort_descending(&mut d);
        return d;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            jacobi_rotate(&mut a, p, q);
        }
    }
    let mut d = [a[0][0], a[1][1], a[2][2]];
    sort_descending(&mut d);
    d
}

fn jacobi_rotate(a: &mut [[f64; 3]; 3], p: usize, q: usize) {
    let apq = a[p][q];
    if apq == 0.0 {
        return;
    }
    let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    a[p][p] -= t * apq;
    a[q][q] += t * apq;
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    let r = 3 - p - q;
    let arp = a[r][p];
    let arq = a[r][q];
    a[r][p] = c * arp - s * arq;
    a[p][r] = a[r][p];
    a[r][q] = s * arp + c * arq;
    a[q][r] = a[r][q];
}

fn sort_descending(v: &mut [f64; 3]) {
    v.sort_by(|a, b| b.total_cmp(a));
}
