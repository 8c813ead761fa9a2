use super::camera::Camera;
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::linalg::{vec_mat, Vec3};
use crate::{Error, Real, Result};

/// Points at camera depth `z ≤ NEAR_PLANE` are culled.
pub const NEAR_PLANE: f64 = 1e-4;

/// Screen-space splat: pixel position, camera depth, pixel radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub r: T,
}

impl<T: Real> ScreenPoint<T> {
    pub fn is_visible(&self) -> bool {
        self.z > T::lit(NEAR_PLANE) && self.r > T::zero() && self.x.is_finite() && self.y.is_finite() && self.r.is_finite()
    }

    pub fn from_row(row: &[T]) -> Self {
        Self { x: row[0], y: row[1], z: row[2], r: row[3] }
    }
}

fn project_one<T: Real>(camera: &Camera<T>, p: Vec3<T>, radius: T) -> ScreenPoint<T> {
    let q = camera.to_camera(p);
    if q[2] <= T::lit(NEAR_PLANE) {
        return ScreenPoint { x: T::zero(), y: T::zero(), z: q[2], r: T::zero() };
    }
    let inv = T::one() / q[2];
    ScreenPoint { x: camera.fx * q[0] * inv + camera.cx, y: camera.fy * q[1] * inv + camera.cy, z: q[2], r: radius * camera.fx * inv }
}

/// Pinhole projection of world points with world-space splat radius `radius`.
pub fn project<T: Real>(points: &[Vec3<T>], radius: T, camera: &Camera<T>) -> Vec<ScreenPoint<T>> {
    points.iter().map(|&p| project_one(camera, p, radius)).collect()
}

pub(crate) fn screen_to_tensor<T: Real>(s: &[ScreenPoint<T>]) -> Tensor<T> {
    Tensor::from_rows(s.len(), 4, s.iter().flat_map(|p| [p.x, p.y, p.z, p.r]).collect())
}

pub fn screen_from_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<ScreenPoint<T>>> {
    if t.shape().len() != 2 || t.cols() != 4 {
        return Err(Error::InvalidShape { op: "screen points", shape: t.shape().to_vec(), reason: "expected N×4".into() });
    }
    Ok((0..t.rows()).map(|i| ScreenPoint::from_row(t.row(i))).collect())
}

struct ProjectOp<T> {
    camera: Camera<T>,
    radius: T,
    cam_points: Vec<Vec3<T>>,
}

impl<T: Real> CustomOp<T> for ProjectOp<T> {
    fn name(&self) -> &str {
        "project"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = &self.camera;
        let near = T::lit(NEAR_PLANE);
        let mut out = Vec::with_capacity(self.cam_points.len() * 3);
        for (i, q) in self.cam_points.iter().enumerate() {
            if q[2] <= near {
                out.extend([T::zero(); 3]);
                continue;
            }
            let gr = g.row(i);
            let inv = T::one() / q[2];
            let inv2 = inv * inv;
            let gq = [
                gr[0] * c.fx * inv,
                gr[1] * c.fy * inv,
                -gr[0] * c.fx * q[0] * inv2 - gr[1] * c.fy * q[1] * inv2 + gr[2] - gr[3] * self.radius * c.fx * inv2,
            ];
            out.extend(vec_mat(gq, &c.rotation));
        }
        Ok(vec![Some(Tensor::from_rows(self.cam_points.len(), 3, out))])
    }
}

/// Differentiable [`project`]: `N×3` world points to `N×4` rows `[x, y, z, r]`.
pub fn project_var<T: Real>(tape: &mut Tape<T>, points: Var, radius: T, camera: &Camera<T>) -> Result<Var> {
    let pts = tape.value(points);
    if pts.shape().len() != 2 || pts.cols() != 3 {
        return Err(Error::InvalidShape { op: "project", shape: pts.shape().to_vec(), reason: "expected N×3".into() });
    }
    let world = pts.to_vec3s();
    let cam_points: Vec<Vec3<T>> = world.iter().map(|&p| camera.to_camera(p)).collect();
    let screen = project(&world, radius, camera);
    let op = ProjectOp { camera: camera.clone(), radius, cam_points };
    tape.custom(&[points], screen_to_tensor(&screen), Box::new(op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;

    #[test]
    fn optical_axis_example() {
        let mut cam = Camera::<f64>::simple(100.0, 257, 257);
        cam.cx = 128.0;
        cam.cy = 128.0;
        let s = project(&[[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], 0.01, &cam);
        assert_eq!((s[0].x, s[0].y), (128.0, 128.0));
        assert!((s[0].r - 1.0).abs() < 1e-12);
        assert!((s[1].r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn points_behind_the_camera_are_culled() {
        let cam = Camera::<f64>::simple(100.0, 16, 16);
        let s = project(&[[0.0, 0.0, -1.0], [0.0, 0.0, 5e-5]], 0.01, &cam);
        assert!(s.iter().all(|p| !p.is_visible()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cam = Camera::look_at([0.2, -0.1, -1.0], [0.0; 3], [0.0, 1.0, 0.0], 80.0, 16, 16).unwrap();
        let x = Tensor::from_rows(3, 3, vec![0.1, 0.0, 0.05, -0.1, 0.2, 0.0, 0.0, -0.05, -0.1]);
        let weights = Tensor::from_rows(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let err = finite_difference_check(
            |tape, v| {
                let s = project_var(tape, v, 0.02, &cam)?;
                let w = tape.constant(weights.clone())?;
                let m = tape.mul(s, w)?;
                tape.sum(m)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }
}
