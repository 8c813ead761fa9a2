use std::sync::Arc;

use rayon::prelude::*;

use super::kinematics::{forward_kinematics_with_jacobian, BoneTransforms, KinematicsJacobian};
use super::{PoseParams, TemplateRig, NUM_SHAPE};
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::linalg::{
    add3, det, inverse, mat_add, mat_scale, mat_vec, normalize3, pseudo_inverse, scale3, vec_mat, zeros3, Mat3,
    Vec3,
};
use crate::mesh::{nearest_index, vertex_normals};
use crate::{Error, Real, Result};

/// Determinant magnitude below which a blended rotation counts as singular.
pub const SINGULAR_DET: f64 = 1e-8;

/// Rig attributes of each canonical point, inherited from its nearest
/// template vertex. Shape and pose bases are read through
/// `nearest_template_index` rather than copied.
#[derive(Clone, Debug, PartialEq)]
pub struct PerPointRigData<T> {
    pub nearest_template_index: Vec<usize>,
    /// `N_C × N_j`, row-major.
    pub weights: Vec<T>,
    pub num_joints: usize,
}

impl<T: Real> PerPointRigData<T> {
    pub fn len(&self) -> usize {
        self.nearest_template_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nearest_template_index.is_empty()
    }

    pub fn weights_row(&self, i: usize) -> &[T] {
        &self.weights[i * self.num_joints..(i + 1) * self.num_joints]
    }

    pub fn shape_basis<'a>(&self, rig: &'a TemplateRig<T>, i: usize) -> &'a [T] {
        rig.shape_basis(self.nearest_template_index[i])
    }

    pub fn pose_basis<'a>(&self, rig: &'a TemplateRig<T>, i: usize) -> &'a [T] {
        rig.pose_basis(self.nearest_template_index[i])
    }

    /// Binding that maps every template vertex to itself.
    pub fn identity(rig: &TemplateRig<T>) -> Self {
        Self {
            nearest_template_index: (0..rig.num_vertices()).collect(),
            weights: rig.skinning_weights.clone(),
            num_joints: rig.num_joints(),
        }
    }
}

/// Binds each canonical point to its Euclidean-nearest template vertex.
pub fn bind_canonical_points<T: Real>(rig: &TemplateRig<T>, points: &[Vec3<T>]) -> Result<PerPointRigData<T>> {
    if rig.num_vertices() == 0 || rig.num_joints() == 0 {
        return Err(Error::Rig("cannot bind to an empty template".into()));
    }
    if points.is_empty() {
        return Err(Error::Empty("canonical point set"));
    }
    let nearest_template_index: Vec<usize> = points.par_iter().map(|&p| nearest_index(&rig.vertices, p)).collect();
    let mut weights = Vec::with_capacity(points.len() * rig.num_joints());
    for &v in &nearest_template_index {
        weights.extend_from_slice(rig.weights_row(v));
    }
    Ok(PerPointRigData { nearest_template_index, weights, num_joints: rig.num_joints() })
}

fn check_binding<T: Real>(rig: &TemplateRig<T>, data: &PerPointRigData<T>, n: usize, nb: usize) -> Result<()> {
    if data.len() != n {
        return Err(Error::ShapeMismatch { op: "deform", lhs: vec![n, 3], rhs: vec![data.len()] });
    }
    if data.num_joints != rig.num_joints() || nb != rig.num_joints() {
        return Err(Error::ShapeMismatch {
            op: "deform",
            lhs: vec![rig.num_joints()],
            rhs: vec![data.num_joints, nb],
        });
    }
    if data.nearest_template_index.iter().any(|&v| v >= rig.num_vertices()) {
        return Err(Error::Rig("binding references a missing template vertex".into()));
    }
    Ok(())
}

/// Blendshape offset `S φ + P f(θ)` of every template vertex.
fn template_offsets<T: Real>(rig: &TemplateRig<T>, phi: &[T; NUM_SHAPE], features: &[T]) -> Vec<Vec3<T>> {
    let pd = rig.pose_dim();
    (0..rig.num_vertices())
        .into_par_iter()
        .map(|v| {
            let s = rig.shape_basis(v);
            let p = rig.pose_basis(v);
            let mut o = [T::zero(); 3];
            for (a, oa) in o.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in 0..NUM_SHAPE {
                    acc += s[a * NUM_SHAPE + k] * phi[k];
                }
                for m in 0..pd {
                    acc += p[a * pd + m] * features[m];
                }
                *oa = acc;
            }
            o
        })
        .collect()
}

/// Per-point blended rotation `Σ_j w_ij R_j`.
pub fn blended_rotations<T: Real>(data: &PerPointRigData<T>, transforms: &BoneTransforms<T>) -> Vec<Mat3<T>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| blend(data.weights_row(i), transforms).0)
        .collect()
}

fn blend<T: Real>(w: &[T], transforms: &BoneTransforms<T>) -> (Mat3<T>, Vec3<T>) {
    let mut r = zeros3();
    let mut t = [T::zero(); 3];
    for (&wj, tj) in w.iter().zip(&transforms.transforms) {
        if wj != T::zero() {
            r = mat_add(&r, &mat_scale(&tj.rot, wj));
            t = add3(t, scale3(tj.trans, wj));
        }
    }
    (r, t)
}

/// Posed positions `p_D = Σ_j w_ij T_j (p_C + B_s + B_p)`.
pub fn deform_points<T: Real>(
    rig: &TemplateRig<T>,
    data: &PerPointRigData<T>,
    points: &[Vec3<T>],
    transforms: &BoneTransforms<T>,
    pose: &PoseParams<T>,
) -> Result<Vec<Vec3<T>>> {
    check_binding(rig, data, points.len(), transforms.len())?;
    let offsets = template_offsets(rig, &pose.phi, &transforms.pose_features());
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let (a, b) = blend(data.weights_row(i), transforms);
            let q = add3(p, offsets[data.nearest_template_index[i]]);
            add3(mat_vec(&a, q), b)
        })
        .collect())
}

struct DeformOp<T: Real> {
    rig: Arc<TemplateRig<T>>,
    data: PerPointRigData<T>,
    blended: Vec<Mat3<T>>,
    shifted: Vec<Vec3<T>>,
    jac: KinematicsJacobian<T>,
}

impl<T: Real> CustomOp<T> for DeformOp<T> {
    fn name(&self) -> &str {
        "deform_points"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let rig = &*self.rig;
        let n = self.data.len();
        let nj = rig.num_joints();
        let pd = rig.pose_dim();
        let gs = g.to_vec3s();

        let grad_p: Vec<Vec3<T>> = (0..n).map(|i| vec_mat(gs[i], &self.blended[i])).collect();

        // Offset gradients gathered per template vertex, then contracted with the bases.
        let mut per_vertex = vec![[T::zero(); 3]; rig.num_vertices()];
        for (i, gp) in grad_p.iter().enumerate() {
            let v = self.data.nearest_template_index[i];
            per_vertex[v] = add3(per_vertex[v], *gp);
        }
        let mut grad_phi = vec![T::zero(); NUM_SHAPE];
        let mut grad_feat = vec![T::zero(); pd];
        for (v, h) in per_vertex.iter().enumerate() {
            if h.iter().all(|&x| x == T::zero()) {
                continue;
            }
            let s = rig.shape_basis(v);
            let p = rig.pose_basis(v);
            for a in 0..3 {
                for k in 0..NUM_SHAPE {
                    grad_phi[k] += s[a * NUM_SHAPE + k] * h[a];
                }
                for m in 0..pd {
                    grad_feat[m] += p[a * pd + m] * h[a];
                }
            }
        }

        // Bone-transform gradients: M_j = Σ w g qᵀ, b_j = Σ w g.
        let mut m_acc = vec![zeros3::<T>(); nj];
        let mut b_acc = vec![[T::zero(); 3]; nj];
        for i in 0..n {
            let gi = gs[i];
            let q = self.shifted[i];
            for (j, &w) in self.data.weights_row(i).iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                for r in 0..3 {
                    let wg = w * gi[r];
                    b_acc[j][r] += wg;
                    for c in 0..3 {
                        m_acc[j][r][c] += wg * q[c];
                    }
                }
            }
        }
        let mut grad_theta = vec![T::zero(); 3 * nj];
        for (k, gt) in grad_theta.iter_mut().enumerate() {
            let mut acc = T::zero();
            for j in 0..nj {
                let (dr, dt) = self.jac.d_transform(j, k);
                for r in 0..3 {
                    acc += dt[r] * b_acc[j][r];
                    for c in 0..3 {
                        acc += dr[r][c] * m_acc[j][r][c];
                    }
                }
            }
            let joint = k / 3;
            if joint >= 1 {
                let d = &self.jac.d_local[joint][k % 3];
                for r in 0..3 {
                    for c in 0..3 {
                        acc += d[r][c] * grad_feat[(joint - 1) * 9 + r * 3 + c];
                    }
                }
            }
            *gt = acc;
        }

        Ok(vec![
            Some(Tensor::from_vec3s(&grad_p)),
            Some(Tensor::from_rows(1, NUM_SHAPE, grad_phi)),
            Some(Tensor::from_rows(nj, 3, grad_theta)),
        ])
    }
}

/// Differentiable [`deform_points`]: `points` is `N_C × 3`, `phi` is
/// `1 × 10`, `theta` is `N_j × 3`; the global rigid motion is taken from
/// `pose`. Returns an `N_C × 3` variable.
pub fn deform_points_var<T: Real>(
    tape: &mut Tape<T>,
    rig: &Arc<TemplateRig<T>>,
    data: &PerPointRigData<T>,
    points: Var,
    phi: Var,
    theta: Var,
    pose: &PoseParams<T>,
) -> Result<Var> {
    let nj = rig.num_joints();
    let pv = tape.value(points);
    if pv.shape().len() != 2 || pv.cols() != 3 {
        return Err(Error::InvalidShape { op: "deform_points", shape: pv.shape().to_vec(), reason: "points must be N×3".into() });
    }
    if tape.value(phi).len() != NUM_SHAPE {
        return Err(Error::InvalidShape { op: "deform_points", shape: tape.value(phi).shape().to_vec(), reason: "phi must have 10 entries".into() });
    }
    if tape.value(theta).len() != 3 * nj {
        return Err(Error::InvalidShape { op: "deform_points", shape: tape.value(theta).shape().to_vec(), reason: "theta must be N_j×3".into() });
    }
    let pts = pv.to_vec3s();
    check_binding(rig, data, pts.len(), nj)?;
    let mut full = pose.clone();
    full.theta = tape.value(theta).to_vec3s();
    full.phi.copy_from_slice(tape.value(phi).data());
    let (bt, jac) = forward_kinematics_with_jacobian(rig, &full);
    let offsets = template_offsets(rig, &full.phi, &bt.pose_features());
    let mut blended = Vec::with_capacity(pts.len());
    let mut shifted = Vec::with_capacity(pts.len());
    let mut out = Vec::with_capacity(pts.len());
    for (i, &p) in pts.iter().enumerate() {
        let (a, b) = blend(data.weights_row(i), &bt);
        let q = add3(p, offsets[data.nearest_template_index[i]]);
        out.push(add3(mat_vec(&a, q), b));
        blended.push(a);
        shifted.push(q);
    }
    let op = DeformOp { rig: Arc::clone(rig), data: data.clone(), blended, shifted, jac };
    tape.custom(&[points, phi, theta], Tensor::from_vec3s(&out), Box::new(op))
}

/// Inverses of the per-point deformation Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianInverses<T> {
    pub inverses: Vec<Mat3<T>>,
    /// Rows whose blended rotation was singular and received a pseudo-inverse.
    pub singular: Vec<bool>,
    pub singular_count: usize,
}

/// `(∂p_D/∂p_C)⁻¹` per point. Blendshape offsets do not depend on `p_C`,
/// so the Jacobian is exactly the blended rotation `J_i = Σ_j w_ij R_j`.
/// Rows with `|det J_i| < 1e-8` fall back to the Moore–Penrose
/// pseudo-inverse and are counted.
pub fn deformation_jacobian_inverse<T: Real>(
    data: &PerPointRigData<T>,
    transforms: &BoneTransforms<T>,
) -> JacobianInverses<T> {
    let results: Vec<(Mat3<T>, bool)> = blended_rotations(data, transforms)
        .par_iter()
        .map(|j| invert_or_pinv(j))
        .collect();
    let (inverses, singular): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let singular_count = singular.iter().filter(|&&s| s).count();
    if singular_count > 0 {
        log::warn!("{singular_count} singular deformation Jacobians replaced by pseudo-inverses");
    }
    JacobianInverses { inverses, singular, singular_count }
}

fn invert_or_pinv<T: Real>(j: &Mat3<T>) -> (Mat3<T>, bool) {
    let thr = T::lit(SINGULAR_DET);
    if det(j).abs() < thr {
        return (pseudo_inverse(j, T::lit(1e-10)), true);
    }
    match inverse(j, thr) {
        Some(inv) => (inv, false),
        None => (pseudo_inverse(j, T::lit(1e-10)), true),
    }
}

/// Deformed normal features `n_C · J⁻¹` (row-vector convention, not
/// renormalized).
pub fn deform_normals<T: Real>(normals: &[Vec3<T>], jinv: &JacobianInverses<T>) -> Result<Vec<Vec3<T>>> {
    if normals.len() != jinv.inverses.len() {
        return Err(Error::ShapeMismatch { op: "deform_normals", lhs: vec![normals.len(), 3], rhs: vec![jinv.inverses.len()] });
    }
    Ok(normals.iter().zip(&jinv.inverses).map(|(&n, m)| vec_mat(n, m)).collect())
}

struct NormalDeformOp<T> {
    inverses: Vec<Mat3<T>>,
}

impl<T: Real> CustomOp<T> for NormalDeformOp<T> {
    fn name(&self) -> &str {
        "deform_normals"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let grad: Vec<Vec3<T>> = g.to_vec3s().into_iter().zip(&self.inverses).map(|(gi, m)| mat_vec(m, gi)).collect();
        Ok(vec![Some(Tensor::from_vec3s(&grad))])
    }
}

/// Differentiable [`deform_normals`] with respect to the canonical normals;
/// the Jacobian inverses are treated as constants.
pub fn deform_normals_var<T: Real>(tape: &mut Tape<T>, normals: Var, jinv: &JacobianInverses<T>) -> Result<Var> {
    let out = deform_normals(&tape.value(normals).to_vec3s(), jinv)?;
    let op = NormalDeformOp { inverses: jinv.inverses.clone() };
    tape.custom(&[normals], Tensor::from_vec3s(&out), Box::new(op))
}

/// Unit-length copy of each row; zero rows stay zero.
pub fn renormalize_rows<T: Real>(rows: &[Vec3<T>]) -> Vec<Vec3<T>> {
    rows.iter().map(|&r| normalize3(r, T::lit(1e-20)).unwrap_or([T::zero(); 3])).collect()
}

/// Deformed normal features `D_M` of the template vertices under `transforms`.
pub fn template_normal_deformation<T: Real>(rig: &TemplateRig<T>, transforms: &BoneTransforms<T>) -> Vec<Vec3<T>> {
    let normals = vertex_normals(&rig.vertices, &rig.faces);
    let data = PerPointRigData::identity(rig);
    let jinv = deformation_jacobian_inverse(&data, transforms);
    normals.iter().zip(&jinv.inverses).map(|(&n, m)| vec_mat(n, m)).collect()
}
