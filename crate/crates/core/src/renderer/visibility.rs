use super::camera::Camera;
use super::project::{project, ScreenPoint};
use crate::linalg::Vec3;
use crate::Real;

/// Silhouette dilation radius in pixels.
pub const DILATION_PX: usize = 2;

/// Binary `H·W` mask of the triangles of `vertices`/`faces` seen by `camera`.
/// A pixel is covered when its center lies inside or on a projected triangle.
pub fn silhouette<T: Real>(vertices: &[Vec3<T>], faces: &[[usize; 3]], camera: &Camera<T>) -> Vec<bool> {
    let (w, h) = (camera.width, camera.height);
    let mut mask = vec![false; w * h];
    let s = project(vertices, T::one(), camera);
    for f in faces {
        let [a, b, c] = f.map(|i| s[i]);
        if ![a, b, c].iter().all(ScreenPoint::is_visible) {
            continue;
        }
        fill_triangle(&mut mask, w, h, [a.x, a.y], [b.x, b.y], [c.x, c.y]);
    }
    mask
}

fn fill_triangle<T: Real>(mask: &mut [bool], w: usize, h: usize, a: [T; 2], b: [T; 2], c: [T; 2]) {
    let edge = |p: [T; 2], q: [T; 2], x: T, y: T| (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
    let area = edge(a, b, c[0], c[1]);
    if area == T::zero() {
        return;
    }
    let lo = |u: T, v: T, z: T| u.min(v).min(z).ceil().max(T::zero());
    let hi = |u: T, v: T, z: T, n: usize| u.max(v).max(z).floor().min(T::lit(n as f64 - 1.0));
    let (x0, x1) = (lo(a[0], b[0], c[0]), hi(a[0], b[0], c[0], w));
    let (y0, y1) = (lo(a[1], b[1], c[1]), hi(a[1], b[1], c[1], h));
    if x0 > x1 || y0 > y1 {
        return;
    }
    let (x0, x1, y0, y1) = (x0.to_usize().unwrap_or(0), x1.to_usize().unwrap_or(0), y0.to_usize().unwrap_or(0), y1.to_usize().unwrap_or(0));
    let sign = area.signum();
    for py in y0..=y1 {
        let y = T::lit(py as f64);
        for px in x0..=x1 {
            let x = T::lit(px as f64);
            let e0 = edge(a, b, x, y) * sign;
            let e1 = edge(b, c, x, y) * sign;
            let e2 = edge(c, a, x, y) * sign;
            if e0 >= T::zero() && e1 >= T::zero() && e2 >= T::zero() {
                mask[py * w + px] = true;
            }
        }
    }
}

/// Marks every pixel within Euclidean distance `radius` of a set pixel.
pub fn dilate(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).filter(|(dx, dy)| dx * dx + dy * dy <= r * r).collect();
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !mask[y as usize * width + x as usize] {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (u, v) = (x + dx, y + dy);
                if u >= 0 && v >= 0 && (u as usize) < width && (v as usize) < height {
                    out[v as usize * width + u as usize] = true;
                }
            }
        }
    }
    out
}

/// A point is visible when its projected center, rounded to the nearest
/// pixel, falls inside the dilated silhouette.
pub fn mark_visibility<T: Real>(screen: &[ScreenPoint<T>], dilated: &[bool], width: usize, height: usize) -> Vec<bool> {
    screen
        .iter()
        .map(|s| {
            if !s.is_visible() {
                return false;
            }
            let (x, y) = (s.x.round(), s.y.round());
            if x < T::zero() || y < T::zero() || x > T::lit(width as f64 - 1.0) || y > T::lit(height as f64 - 1.0) {
                return false;
            }
            dilated[y.to_usize().unwrap_or(0) * width + x.to_usize().unwrap_or(0)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_camera() -> (Vec<Vec3<f64>>, Vec<[usize; 3]>, Camera<f64>) {
        let cam = Camera::<f64>::simple(10.0, 40, 40);
        // Square covering pixels 15..=25 at depth 1 (cx = 19.5).
        let v = vec![[-0.45, -0.45, 1.0], [0.55, -0.45, 1.0], [0.55, 0.55, 1.0], [-0.45, 0.55, 1.0]];
        (v, vec![[0, 1, 2], [0, 2, 3]], cam)
    }

    #[test]
    fn square_silhouette() {
        let (v, f, cam) = quad_camera();
        let m = silhouette(&v, &f, &cam);
        assert_eq!(m.iter().filter(|&&b| b).count(), 11 * 11);
        assert!(m[20 * 40 + 20]);
        assert!(!m[14 * 40 + 20]);
    }

    #[test]
    fn visibility_inside_outside_and_dilation_boundary() {
        let (v, f, cam) = quad_camera();
        let d = dilate(&silhouette(&v, &f, &cam), 40, 40, DILATION_PX);
        let s = |x: f64, y: f64| ScreenPoint { x, y, z: 1.0, r: 1.0 };
        let vis = mark_visibility(&[s(20.0, 20.0), s(20.0, 75.0), s(27.0, 20.0), s(28.0, 20.0), s(27.0, 27.0)], &d, 40, 40);
        assert_eq!(vis, vec![true, false, true, false, false]);
    }

    #[test]
    fn dilation_matches_brute_force_distance() {
        let mut m = vec![false; 15 * 12];
        m[5 * 15 + 7] = true;
        m[2 * 15 + 1] = true;
        let d = dilate(&m, 15, 12, 2);
        for y in 0..12i64 {
            for x in 0..15i64 {
                let near = [(7i64, 5i64), (1, 2)].iter().any(|&(u, v)| (x - u).pow(2) + (y - v).pow(2) <= 4);
                assert_eq!(d[(y * 15 + x) as usize], near);
            }
        }
    }
}
