use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{cross3, det, mat_mul, mat_vec, normalize3, sub3, transpose, Mat3, Vec3};
use crate::{Error, Real, Result};

/// Pinhole camera; `rotation`/`translation` map world to camera coordinates.
/// Pixel `(i, j)` has its center at `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub width: usize,
    pub height: usize,
}

/// On-disk camera file (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    /// Identity extrinsics, principal point at the image center.
    pub fn simple(focal: T, width: usize, height: usize) -> Self {
        let half = |n: usize| T::lit((n as f64 - 1.0) / 2.0);
        Self {
            fx: focal,
            fy: focal,
            cx: half(width),
            cy: half(height),
            rotation: crate::linalg::identity3(),
            translation: [T::zero(); 3],
            width,
            height,
        }
    }

    /// Camera at `eye` looking at `target`; `up` appears upward in the image.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, focal: T, width: usize, height: usize) -> Result<Self> {
        let eps = T::lit(1e-12);
        let fwd = normalize3(sub3(target, eye), eps).ok_or_else(|| Error::Camera("eye equals target".into()))?;
        let right = normalize3(cross3(fwd, up), eps).ok_or_else(|| Error::Camera("up is parallel to the view direction".into()))?;
        let down = cross3(fwd, right);
        let rotation = [right, down, fwd];
        let t = mat_vec(&rotation, eye);
        let mut cam = Self::simple(focal, width, height);
        cam.rotation = rotation;
        cam.translation = t.map(|v| -v);
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Camera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("zero image size".into()));
        }
        let rrt = mat_mul(&self.rotation, &transpose(&self.rotation));
        let tol = T::lit(1e-6);
        for (i, row) in rrt.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let e = if i == j { T::one() } else { T::zero() };
                if (v - e).abs() > tol {
                    return Err(Error::Camera("rotation is not orthonormal".into()));
                }
            }
        }
        if (det(&self.rotation) - T::one()).abs() > tol {
            return Err(Error::Camera("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        let q = mat_vec(&self.rotation, p);
        [q[0] + self.translation[0], q[1] + self.translation[1], q[2] + self.translation[2]]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        let rt = transpose(&self.rotation);
        mat_vec(&rt, self.translation).map(|v| -v)
    }

    /// Unit direction from the camera center towards the scene along the optical axis, in world coordinates.
    pub fn forward(&self) -> Vec3<T> {
        self.rotation[2]
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        let sx = T::lit(width as f64 / self.width as f64);
        let sy = T::lit(height as f64 / self.height as f64);
        let half = T::lit(0.5);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + half) * sx - half,
            cy: (self.cy + half) * sy - half,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.as_f64());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
            width: self.width,
            height: self.height,
        }
    }

    pub fn to_file(&self) -> CameraFile {
        let c = |v: T| v.as_f64();
        CameraFile {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
            width: self.width,
            height: self.height,
        }
    }

    pub fn from_file(f: &CameraFile) -> Result<Self> {
        let c = |v: f64| T::lit(v);
        let cam = Self {
            fx: c(f.fx),
            fy: c(f.fy),
            cx: c(f.cx),
            cy: c(f.cy),
            rotation: f.rotation.map(|r| r.map(c)),
            translation: f.translation.map(c),
            width: f.width,
            height: f.height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let f: CameraFile = toml::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_file(&f).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(&self.to_file()).map_err(|e| Error::Camera(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
