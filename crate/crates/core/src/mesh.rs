//! Triangle-mesh helpers shared by the rig, appearance and relighting code.

use crate::linalg::{add3, cross3, dist2, normalize3, sub3, Vec3};
use crate::Real;

/// Area-weighted vertex normals: the unnormalized face normal (whose length
/// is twice the face area) is accumulated on each corner, then normalized.
/// Vertices without an incident non-degenerate face get `+z`.
pub fn vertex_normals<T: Real>(vertices: &[Vec3<T>], faces: &[[usize; 3]]) -> Vec<Vec3<T>> {
    let mut acc = vec![[T::zero(); 3]; vertices.len()];
    for f in faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let n = cross3(sub3(b, a), sub3(c, a));
        for &v in f {
            acc[v] = add3(acc[v], n);
        }
    }
    acc.into_iter()
        .map(|n| normalize3(n, T::lit(1e-20)).unwrap_or([T::zero(), T::zero(), T::one()]))
        .collect()
}

/// Index of the nearest point of `set` to `q` (ties resolved to the lowest
/// index).
pub fn nearest_index<T: Real>(set: &[Vec3<T>], q: Vec3<T>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (i, &p) in set.iter().enumerate() {
        let d = dist2(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Median over points of the distance to their nearest other point.
pub fn median_nearest_neighbor_distance<T: Real>(points: &[Vec3<T>]) -> T {
    let mut d: Vec<T> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &q)| dist2(p, q))
                .fold(T::infinity(), |m, v| m.min(v))
                .sqrt()
        })
        .collect();
    if d.is_empty() {
        return T::zero();
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        (d[n / 2 - 1] + d[n / 2]) / T::lit(2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tetrahedron_normals_are_unit_and_outward() {
        let v: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let f = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        let n = vertex_normals(&v, &f);
        for ni in &n {
            let len = (ni[0] * ni[0] + ni[1] * ni[1] + ni[2] * ni[2]).sqrt();
            assert!((len - 1.0f64).abs() < 1e-12);
        }
        // vertex 3 sits on top: normal points up-ish
        assert!(n[3][2] > 0.0);
        assert!(n[0][0] < 0.0 && n[0][1] < 0.0 && n[0][2] < 0.0);
    }

    #[test]
    fn median_nn_distance_on_a_line() {
        let pts: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        // nearest distances 1, 1, 2 → median 1
        assert_eq!(median_nearest_neighbor_distance(&pts), 1.0);
    }
}
