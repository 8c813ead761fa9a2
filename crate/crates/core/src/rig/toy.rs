//! Procedural stand-in for a licensed hand template: an ellipsoidal palm and
//! tapered tube fingers with tip caps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{TemplateRig, NUM_SHAPE};
use crate::linalg::{add3, cross3, dist2, dot3, normalize3, scale3, sub3, Vec3};
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyRigConfig {
    pub seed: u64,
    /// Number of fingers, thumb included (1..=5).
    pub fingers: usize,
    pub segments_per_finger: usize,
    pub rings_per_segment: usize,
    pub vertices_per_ring: usize,
    pub palm_rings: usize,
    pub palm_segments: usize,
    /// Skinning falloff length (meters).
    pub weight_sigma: f64,
    pub shape_scale: f64,
    pub pose_scale: f64,
}

impl Default for ToyRigConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            fingers: 5,
            segments_per_finger: 3,
            rings_per_segment: 4,
            vertices_per_ring: 8,
            palm_rings: 13,
            palm_segments: 24,
            weight_sigma: 0.008,
            shape_scale: 0.05,
            pose_scale: 0.002,
        }
    }
}

const PALM_CENTER: [f64; 3] = [0.0, 0.045, 0.0];
const PALM_AXES: [f64; 3] = [0.042, 0.05, 0.014];

struct Part {
    /// Axis segment used for skinning distance and face orientation.
    a: Vec3<f64>,
    b: Vec3<f64>,
}

fn closest_on_segment(p: Vec3<f64>, a: Vec3<f64>, b: Vec3<f64>) -> Vec3<f64> {
    let ab = sub3(b, a);
    let l2 = dot3(ab, ab);
    if l2 == 0.0 {
        return a;
    }
    let t = (dot3(sub3(p, a), ab) / l2).clamp(0.0, 1.0);
    add3(a, scale3(ab, t))
}

fn finger_layout(f: usize, nf: usize) -> (Vec3<f64>, Vec3<f64>, [f64; 3], f64) {
    let thumb = nf > 1 && f == nf - 1;
    if thumb {
        let d = normalize3([0.8, 0.55, 0.25], 1e-12).unwrap();
        return ([0.032, 0.028, 0.004], d, [0.032, 0.026, 0.022], 0.0095);
    }
    let regular = if nf > 1 { nf - 1 } else { 1 };
    let u = if regular > 1 { f as f64 / (regular - 1) as f64 } else { 0.5 };
    let x = -0.03 + 0.06 * u;
    // Middle fingers are longest.
    let len = 1.0 - 0.25 * (2.0 * u - 1.0).powi(2);
    let base = [x, 0.088 - 0.006 * (2.0 * u - 1.0).abs(), 0.0];
    let d = normalize3([0.12 * (2.0 * u - 1.0), 1.0, 0.0], 1e-12).unwrap();
    (base, d, [0.04 * len, 0.026 * len, 0.02 * len], 0.0085)
}

fn ring_basis(d: Vec3<f64>) -> (Vec3<f64>, Vec3<f64>) {
    let helper = if d[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = normalize3(cross3(helper, d), 1e-12).unwrap();
    let v = cross3(d, u);
    (u, v)
}

/// Deterministic articulated hand; bone 0 is the palm (rooted at the wrist,
/// the origin) and each finger is a chain of segments along its axis.
pub fn build_toy_rig<T: Real>(config: &ToyRigConfig) -> TemplateRig<T> {
    let nf = config.fingers.clamp(1, 5);
    let ns = config.segments_per_finger.max(1);
    let rings = config.rings_per_segment.max(1);
    let nv = config.vertices_per_ring.max(3);
    let nj = 1 + nf * ns;

    let mut vertices: Vec<Vec3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_part: Vec<usize> = Vec::new();
    let mut parts = vec![Part { a: [0.0, 0.0, 0.0], b: [0.0, 0.08, 0.0] }];
    let mut bone_parents = vec![0usize];
    let mut rest_joints = vec![[0.0, 0.0, 0.0]];

    // Palm: UV ellipsoid with poles on the y axis.
    let (pr, ps) = (config.palm_rings.max(2), config.palm_segments.max(3));
    let bottom = vertices.len();
    vertices.push([PALM_CENTER[0], PALM_CENTER[1] - PALM_AXES[1], PALM_CENTER[2]]);
    for i in 0..pr {
        let phi = std::f64::consts::PI * (i + 1) as f64 / (pr + 1) as f64;
        for k in 0..ps {
            let th = 2.0 * std::f64::consts::PI * k as f64 / ps as f64;
            vertices.push([
                PALM_CENTER[0] + PALM_AXES[0] * phi.sin() * th.cos(),
                PALM_CENTER[1] - PALM_AXES[1] * phi.cos(),
                PALM_CENTER[2] + PALM_AXES[2] * phi.sin() * th.sin(),
            ]);
        }
    }
    let top = vertices.len();
    vertices.push([PALM_CENTER[0], PALM_CENTER[1] + PALM_AXES[1], PALM_CENTER[2]]);
    let ring = |i: usize, k: usize| bottom + 1 + i * ps + k % ps;
    for k in 0..ps {
        faces.push([bottom, ring(0, k), ring(0, k + 1)]);
        faces.push([top, ring(pr - 1, k), ring(pr - 1, k + 1)]);
    }
    for i in 0..pr - 1 {
        for k in 0..ps {
            faces.push([ring(i, k), ring(i + 1, k), ring(i + 1, k + 1)]);
            faces.push([ring(i, k), ring(i + 1, k + 1), ring(i, k + 1)]);
        }
    }
    face_part.resize(faces.len(), 0);

    for f in 0..nf {
        let (base, d, lens, radius) = finger_layout(f, nf);
        let (u, v) = ring_basis(d);
        let mut start = base;
        let first_ring = vertices.len();
        let mut ring_count = 0;
        for s in 0..ns {
            let len = lens[s.min(2)];
            let end = add3(start, scale3(d, len));
            let bone = 1 + f * ns + s;
            bone_parents.push(if s == 0 { 0 } else { bone - 1 });
            rest_joints.push(start);
            parts.push(Part { a: start, b: end });
            for r in 0..rings {
                let t = (r as f64 + 0.5) / rings as f64;
                let along = (s as f64 + t) / ns as f64;
                let rad = radius * (1.0 - 0.3 * along);
                let c = add3(start, scale3(d, len * t));
                for k in 0..nv {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / nv as f64;
                    vertices.push(add3(c, add3(scale3(u, rad * th.cos()), scale3(v, rad * th.sin()))));
                }
                ring_count += 1;
            }
            start = end;
        }
        let tip = vertices.len();
        vertices.push(add3(start, scale3(d, 0.5 * radius)));
        let fr = |r: usize, k: usize| first_ring + r * nv + k % nv;
        let tip_part = parts.len() - 1;
        for r in 0..ring_count - 1 {
            let part = parts.len() - ns + r / rings;
            for k in 0..nv {
                faces.push([fr(r, k), fr(r + 1, k), fr(r + 1, k + 1)]);
                faces.push([fr(r, k), fr(r + 1, k + 1), fr(r, k + 1)]);
                face_part.push(part);
                face_part.push(part);
            }
        }
        for k in 0..nv {
            faces.push([fr(ring_count - 1, k), tip, fr(ring_count - 1, k + 1)]);
            face_part.push(tip_part);
        }
    }

    // Orient every face away from the axis of the part it belongs to.
    for (face, &p) in faces.iter_mut().zip(&face_part) {
        let (a, b, c) = (vertices[face[0]], vertices[face[1]], vertices[face[2]]);
        let n = cross3(sub3(b, a), sub3(c, a));
        let centroid = scale3(add3(add3(a, b), c), 1.0 / 3.0);
        let reference = if p == 0 { PALM_CENTER } else { closest_on_segment(centroid, parts[p].a, parts[p].b) };
        if dot3(n, sub3(centroid, reference)) < 0.0 {
            face.swap(1, 2);
        }
    }

    // Gaussian falloff in distance to each bone's axis, normalized in log space.
    let inv = 1.0 / (2.0 * config.weight_sigma * config.weight_sigma);
    let mut weights = Vec::with_capacity(vertices.len() * nj);
    for &p in &vertices {
        let d2: Vec<f64> = parts
            .iter()
            .enumerate()
            .map(|(j, pt)| {
                let q = if j == 0 {
                    // Palm: a flat sheet rather than a line.
                    [p[0].clamp(-0.03, 0.03), p[1].clamp(0.0, 0.08), 0.0]
                } else {
                    closest_on_segment(p, pt.a, pt.b)
                };
                dist2(p, q)
            })
            .collect();
        let m = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = d2.iter().map(|&x| (-(x - m) * inv).exp()).collect();
        let s: f64 = e.iter().sum();
        weights.extend(e.iter().map(|x| x / s));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = vertices.len();
    let centroid = scale3(vertices.iter().fold([0.0; 3], |acc, &v| add3(acc, v)), 1.0 / n as f64);
    let mats: Vec<[[f64; 3]; 3]> = (0..NUM_SHAPE)
        .map(|_| {
            let mut m = [[0.0; 3]; 3];
            for x in m.iter_mut().flatten() {
                *x = config.shape_scale * normal.sample(&mut rng);
            }
            m
        })
        .collect();
    let mut shape_bases = vec![0.0; n * 3 * NUM_SHAPE];
    for (vi, &p) in vertices.iter().enumerate() {
        let rel = sub3(p, centroid);
        for a in 0..3 {
            for (k, m) in mats.iter().enumerate() {
                shape_bases[(vi * 3 + a) * NUM_SHAPE + k] = dot3(m[a], rel);
            }
        }
    }
    let pd = 9 * (nj - 1);
    let mut pose_bases = vec![0.0; n * 3 * pd];
    for vi in 0..n {
        for a in 0..3 {
            for m in 0..pd {
                let joint = 1 + m / 9;
                pose_bases[(vi * 3 + a) * pd + m] =
                    config.pose_scale * weights[vi * nj + joint] * normal.sample(&mut rng);
            }
        }
    }

    let c = |x: f64| T::lit(x);
    TemplateRig {
        vertices: vertices.iter().map(|v| v.map(c)).collect(),
        faces,
        skinning_weights: weights.into_iter().map(c).collect(),
        shape_bases: shape_bases.into_iter().map(c).collect(),
        pose_bases: pose_bases.into_iter().map(c).collect(),
        bone_parents,
        rest_joints: rest_joints.iter().map(|v| v.map(c)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::vertex_normals;

    #[test]
    fn default_counts() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        assert!((700..=900).contains(&rig.num_vertices()), "{}", rig.num_vertices());
        assert_eq!(rig.num_joints(), 16);
        assert_eq!(rig.pose_dim(), 135);
        rig.validate().unwrap();
    }

    #[test]
    fn weight_rows_are_normalized() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        for v in 0..rig.num_vertices() {
            let s: f64 = rig.weights_row(v).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = build_toy_rig::<f64>(&ToyRigConfig::default());
        let b = build_toy_rig::<f64>(&ToyRigConfig::default());
        assert_eq!(a, b);
        let c = build_toy_rig::<f64>(&ToyRigConfig { seed: 8, ..Default::default() });
        assert_ne!(a.shape_bases, c.shape_bases);
        assert_eq!(a.vertices, c.vertices);
    }

    #[test]
    fn palm_normals_point_outward() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let n = vertex_normals(&rig.vertices, &rig.faces);
        let palm = 2 + 13 * 24;
        for i in 0..palm {
            assert!(dot3(n[i], sub3(rig.vertices[i], PALM_CENTER)) > 0.0, "vertex {i}");
        }
    }

    #[test]
    fn finger_tips_follow_their_bone() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let last = rig.num_vertices() - 1;
        let w = rig.weights_row(last);
        let best = (0..16).max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap()).unwrap();
        assert_eq!(best, 15);
    }
}
