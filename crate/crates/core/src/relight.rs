//! Phong relighting of posed points, with normals and binary self-shadows
//! taken from a mesh approximated by the canonical points nearest to the
//! template vertices.

use rayon::prelude::*;

use crate::geometry::CanonicalPointSet;
use crate::linalg::{cross3, dot3, normalize3, scale3, sub3, Vec3};
use crate::mesh::{nearest_index, vertex_normals};
use crate::renderer::{Camera, RenderTarget};
use crate::rig::{deform_normals, deform_points, deformation_jacobian_inverse, forward_kinematics, renormalize_rows, PoseParams, TemplateRig};
use crate::training::HandModel;
use crate::{Error, Real, Result};

/// Template faces over posed points.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproximateMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Vec<Vec3<T>>,
    /// Canonical point chosen for each template vertex.
    pub source_points: Vec<usize>,
}

/// Directional light with Phong coefficients. `direction` points from the
/// surface toward the light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhongLight<T> {
    pub direction: Vec3<T>,
    pub ambient: T,
    pub diffuse: T,
    pub specular: T,
    pub shininess: T,
}

impl<T: Real> Default for PhongLight<T> {
    fn default() -> Self {
        Self { direction: [T::zero(), T::zero(), -T::one()], ambient: T::lit(0.3), diffuse: T::lit(0.7), specular: T::lit(0.1), shininess: T::lit(16.0) }
    }
}

impl<T: Real> PhongLight<T> {
    /// Light from `direction` (normalized here) with default coefficients.
    pub fn from_direction(direction: Vec3<T>) -> Result<Self> {
        let d = normalize3(direction, T::lit(1e-12)).ok_or_else(|| Error::Config("light direction must be nonzero".into()))?;
        Ok(Self { direction: d, ..Self::default() })
    }

    /// Direction rotated by `angle` about the vertical axis `+y`, starting
    /// from `base`.
    pub fn swept(base: Vec3<T>, angle: T) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::from_direction([c * base[0] + s * base[2], base[1], -s * base[0] + c * base[2]])
    }

    pub fn validate(&self) -> Result<()> {
        let len = dot3(self.direction, self.direction).sqrt();
        if (len - T::one()).abs().as_f64() > 1e-9 {
            return Err(Error::Config(format!("light direction has length {len}")));
        }
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(unit(self.ambient) && unit(self.diffuse) && unit(self.specular)) {
            return Err(Error::Config("Phong coefficients must lie in [0, 1]".into()));
        }
        if !(self.shininess >= T::one()) {
            return Err(Error::Config("shininess must be at least 1".into()));
        }
        Ok(())
    }
}

/// Vertex `v` is the posed position of the canonical point nearest (in
/// canonical space) to template vertex `v`.
pub fn approximate_mesh<T: Real>(points: &CanonicalPointSet<T>, rig: &TemplateRig<T>, pose: &PoseParams<T>) -> Result<ApproximateMesh<T>> {
    if points.is_empty() {
        return Err(Error::Empty("canonical points"));
    }
    let source_points: Vec<usize> = rig.vertices.par_iter().map(|&v| nearest_index(&points.coords, v)).collect();
    let bt = forward_kinematics(rig, pose);
    let posed = deform_points(rig, &points.binding, &points.coords, &bt, pose)?;
    let vertices: Vec<Vec3<T>> = source_points.iter().map(|&i| posed[i]).collect();
    let normals = vertex_normals(&vertices, &rig.faces);
    Ok(ApproximateMesh { vertices, faces: rig.faces.clone(), normals, source_points })
}

/// `base · (k_a + s·k_d·max(0, n·l)) + s·k_s·max(0, r·v)^α` with `r` the
/// reflection of `l` about `n` and `s` the optional binary shadow term.
pub fn phong_shade<T: Real>(
    normals: &[Vec3<T>],
    base: &[Vec3<T>],
    light: &PhongLight<T>,
    view_dir: Vec3<T>,
    shadow: Option<&[bool]>,
) -> Result<Vec<Vec3<T>>> {
    if normals.len() != base.len() {
        return Err(Error::ShapeMismatch { op: "phong_shade", lhs: vec![normals.len(), 3], rhs: vec![base.len(), 3] });
    }
    if let Some(s) = shadow {
        if s.len() != base.len() {
            return Err(Error::ShapeMismatch { op: "phong_shade", lhs: vec![s.len()], rhs: vec![base.len()] });
        }
    }
    let l = light.direction;
    let two = T::lit(2.0);
    Ok(normals
        .iter()
        .zip(base)
        .enumerate()
        .map(|(i, (&n, b))| {
            let lit = shadow.map_or(T::one(), |s| if s[i] { T::one() } else { T::zero() });
            let nl = dot3(n, l);
            let r = sub3(scale3(n, two * nl), l);
            let diffuse = light.ambient + lit * light.diffuse * nl.max(T::zero());
            let spec = lit * light.specular * dot3(r, view_dir).max(T::zero()).powf(light.shininess);
            b.map(|c| c * diffuse + spec)
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
struct Aabb<T> {
    lo: Vec3<T>,
    hi: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    fn empty() -> Self {
        Self { lo: [T::infinity(); 3], hi: [T::neg_infinity(); 3] }
    }

    fn grow(&mut self, p: Vec3<T>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Self) {
        self.grow(o.lo);
        self.grow(o.hi);
    }

    /// Slab test for `t ∈ (0, ∞)`.
    fn hit(&self, origin: Vec3<T>, inv_dir: Vec3<T>) -> bool {
        let (mut t0, mut t1) = (T::zero(), T::infinity());
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (a, b) = if a.is_nan() || b.is_nan() {
                // Ray parallel to the slab and on its boundary.
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return false;
                }
                continue;
            } else if a < b {
                (a, b)
            } else {
                (b, a)
            };
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

enum Node<T> {
    Leaf { bounds: Aabb<T>, faces: Vec<usize> },
    Inner { bounds: Aabb<T>, children: Box<[Node<T>; 2]> },
}

/// Median-split bounding-volume hierarchy over triangles.
struct Bvh<T> {
    root: Node<T>,
}

const LEAF_SIZE: usize = 4;

impl<T: Real> Bvh<T> {
    fn build(vertices: &[Vec3<T>], faces: &[[usize; 3]]) -> Self {
        let centroids: Vec<Vec3<T>> = faces
            .iter()
            .map(|f| {
                let s = T::lit(1.0 / 3.0);
                [0, 1, 2].map(|k| (vertices[f[0]][k] + vertices[f[1]][k] + vertices[f[2]][k]) * s)
            })
            .collect();
        let ids: Vec<usize> = (0..faces.len()).collect();
        Self { root: Self::node(vertices, faces, &centroids, ids) }
    }

    fn node(vertices: &[Vec3<T>], faces: &[[usize; 3]], centroids: &[Vec3<T>], mut ids: Vec<usize>) -> Node<T> {
        let mut bounds = Aabb::empty();
        for &f in &ids {
            for &v in &faces[f] {
                bounds.grow(vertices[v]);
            }
        }
        if ids.len() <= LEAF_SIZE {
            return Node::Leaf { bounds, faces: ids };
        }
        let mut cb = Aabb::empty();
        for &f in &ids {
            cb.grow(centroids[f]);
        }
        let extent = [0, 1, 2].map(|k| cb.hi[k] - cb.lo[k]);
        let axis = (0..3).fold(0, |a, k| if extent[k] > extent[a] { k } else { a });
        ids.sort_by(|&a, &b| centroids[a][axis].partial_cmp(&centroids[b][axis]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let right = ids.split_off(ids.len() / 2);
        let l = Self::node(vertices, faces, centroids, ids);
        let r = Self::node(vertices, faces, centroids, right);
        let mut b = Aabb::empty();
        b.merge(l.bounds());
        b.merge(r.bounds());
        Node::Inner { bounds: b, children: Box::new([l, r]) }
    }

    /// Whether the ray hits any face for which `skip` is false.
    fn occluded(&self, vertices: &[Vec3<T>], faces: &[[usize; 3]], origin: Vec3<T>, dir: Vec3<T>, skip: impl Fn(usize) -> bool) -> bool {
        let inv = dir.map(|d| T::one() / d);
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            if !n.bounds().hit(origin, inv) {
                continue;
            }
            match n {
                Node::Leaf { faces: ids, .. } => {
                    for &f in ids {
                        if skip(f) {
                            continue;
                        }
                        let [a, b, c] = faces[f].map(|v| vertices[v]);
                        if ray_triangle(origin, dir, a, b, c).is_some() {
                            return true;
                        }
                    }
                }
                Node::Inner { children, .. } => {
                    stack.push(&children[1]);
                    stack.push(&children[0]);
                }
            }
        }
        false
    }
}

impl<T> Node<T> {
    fn bounds(&self) -> &Aabb<T> {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Möller–Trumbore intersection; returns the ray parameter of a hit with
/// `t > 1e-9`.
pub fn ray_triangle<T: Real>(origin: Vec3<T>, dir: Vec3<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Option<T> {
    let eps = T::lit(1e-12);
    let e1 = sub3(b, a);
    let e2 = sub3(c, a);
    let p = cross3(dir, e2);
    let det = dot3(e1, p);
    if det.abs() < eps {
        return None;
    }
    let inv = T::one() / det;
    let s = sub3(origin, a);
    let u = dot3(s, p) * inv;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let q = cross3(s, e1);
    let v = dot3(dir, q) * inv;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    let t = dot3(e2, q) * inv;
    (t > T::lit(1e-9)).then_some(t)
}

/// Per-vertex binary visibility of a directional light: `false` when the
/// ray from the vertex toward the light hits a face not incident to it.
/// Vertices facing away from the light in any incident face are in their
/// own attached shadow, which the clamped diffuse term already darkens, and
/// are reported lit.
pub fn self_shadow<T: Real>(mesh: &ApproximateMesh<T>, light: &PhongLight<T>) -> Vec<bool> {
    let vs = &mesh.vertices;
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); vs.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &v in f {
            incident[v].push(fi);
        }
    }
    let face_normals: Vec<Vec3<T>> = mesh
        .faces
        .iter()
        .map(|f| cross3(sub3(vs[f[1]], vs[f[0]]), sub3(vs[f[2]], vs[f[0]])))
        .collect();
    let bvh = Bvh::build(vs, &mesh.faces);
    let l = light.direction;
    (0..vs.len())
        .into_par_iter()
        .map(|v| {
            if incident[v].is_empty() || incident[v].iter().any(|&f| dot3(face_normals[f], l) <= T::zero()) {
                return true;
            }
            !bvh.occluded(vs, &mesh.faces, vs[v], l, |f| mesh.faces[f].contains(&v))
        })
        .collect()
}

/// Options of [`relight_render`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelightOptions<T> {
    pub light: PhongLight<T>,
    pub shadows: bool,
}

/// Renders `model` under `pose` with per-point Phong shading of its
/// composed colors. Point normals are the posed SDF normals; degenerate ones
/// fall back to the approximate-mesh normal of the point's template vertex,
/// which also supplies the shadow term.
pub fn relight_render<T: Real>(model: &HandModel<T>, pose: &PoseParams<T>, camera: &Camera<T>, options: &RelightOptions<T>) -> Result<RenderTarget<T>> {
    options.light.validate()?;
    let base = model.colors(pose)?;
    let (canonical, degenerate) = model.canonical_normals()?;
    let bt = forward_kinematics(&model.rig, pose);
    let jinv = deformation_jacobian_inverse(&model.points.binding, &bt);
    let mut normals = renormalize_rows(&deform_normals(&canonical, &jinv)?);
    let nearest = &model.points.binding.nearest_template_index;
    let needs_mesh = options.shadows || degenerate.iter().any(|&d| d);
    let mesh = if needs_mesh { Some(approximate_mesh(&model.points, &model.rig, pose)?) } else { None };
    if let Some(mesh) = &mesh {
        for (i, n) in normals.iter_mut().enumerate() {
            if degenerate[i] {
                *n = mesh.normals[nearest[i]];
            }
        }
    }
    let shadow: Option<Vec<bool>> = match (&mesh, options.shadows) {
        (Some(mesh), true) => {
            let per_vertex = self_shadow(mesh, &options.light);
            Some(nearest.iter().map(|&v| per_vertex[v]).collect())
        }
        _ => None,
    };
    let view = scale3(camera.forward(), -T::one());
    let colors = phong_shade(&normals, &base, &options.light, view, shadow.as_deref())?;
    model.render_with_colors(pose, camera, &colors)
}
