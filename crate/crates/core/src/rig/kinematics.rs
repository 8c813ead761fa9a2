use super::{PoseParams, TemplateRig};
use crate::linalg::{
    add3, mat_add, mat_mul, mat_vec, rodrigues, rodrigues_with_jacobian, sub3, zeros3, Mat3, Rigid, Vec3,
};
use crate::Real;

/// Per-bone skinning transforms `T_j` (rest pose → posed world space) and
/// the local joint rotations they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneTransforms<T> {
    pub transforms: Vec<Rigid<T>>,
    pub local_rotations: Vec<Mat3<T>>,
}

impl<T: Real> BoneTransforms<T> {
    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    /// Pose-blendshape feature: `(R_j − I)` flattened row-major for every
    /// non-root joint.
    pub fn pose_features(&self) -> Vec<T> {
        let mut f = Vec::with_capacity(9 * self.local_rotations.len().saturating_sub(1));
        for r in &self.local_rotations[1..] {
            for (a, row) in r.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    f.push(if a == b { v - T::one() } else { v });
                }
            }
        }
        f
    }
}

/// Derivatives of every bone transform and of the local rotations with
/// respect to each pose coordinate `θ[j][axis]` (index `3 j + axis`).
#[derive(Clone, Debug)]
pub struct KinematicsJacobian<T> {
    num_joints: usize,
    /// `[bone * 3 N_j + coord]`: (∂R, ∂t) of `T_bone`.
    d_transforms: Vec<(Mat3<T>, Vec3<T>)>,
    /// `[joint][axis]`: ∂R_local / ∂θ[joint][axis].
    pub d_local: Vec<[Mat3<T>; 3]>,
}

impl<T: Real> KinematicsJacobian<T> {
    pub fn d_transform(&self, bone: usize, coord: usize) -> &(Mat3<T>, Vec3<T>) {
        &self.d_transforms[bone * 3 * self.num_joints + coord]
    }
}

fn global_root<T: Real>(pose: &PoseParams<T>) -> Rigid<T> {
    Rigid::new(pose.global_rotation, pose.global_translation)
}

/// World transform of every bone: `G_j = G_parent ∘ [R(θ_j) | J_j − J_parent]`,
/// the root prefixed by the global rigid motion; the skinning transform is
/// `T_j = G_j ∘ translate(−J_j)` so the rest pose maps to itself.
pub fn forward_kinematics<T: Real>(rig: &TemplateRig<T>, pose: &PoseParams<T>) -> BoneTransforms<T> {
    let nj = rig.num_joints();
    let mut world: Vec<Rigid<T>> = Vec::with_capacity(nj);
    let mut local_rotations = Vec::with_capacity(nj);
    for j in 0..nj {
        let r = rodrigues(pose.theta[j]);
        local_rotations.push(r);
        let g = if j == 0 {
            global_root(pose).compose(&Rigid::new(r, rig.rest_joints[0]))
        } else {
            let p = rig.bone_parents[j];
            world[p].compose(&Rigid::new(r, sub3(rig.rest_joints[j], rig.rest_joints[p])))
        };
        world.push(g);
    }
    let transforms = world
        .iter()
        .zip(&rig.rest_joints)
        .map(|(g, &jnt)| Rigid::new(g.rot, sub3(g.trans, mat_vec(&g.rot, jnt))))
        .collect();
    BoneTransforms { transforms, local_rotations }
}

/// [`forward_kinematics`] plus exact derivatives with respect to `θ`,
/// accumulated down the kinematic chain.
pub fn forward_kinematics_with_jacobian<T: Real>(
    rig: &TemplateRig<T>,
    pose: &PoseParams<T>,
) -> (BoneTransforms<T>, KinematicsJacobian<T>) {
    let nj = rig.num_joints();
    let nc = 3 * nj;
    let zero = (zeros3::<T>(), [T::zero(); 3]);
    let mut world: Vec<Rigid<T>> = Vec::with_capacity(nj);
    let mut d_world = vec![zero; nj * nc];
    let mut local_rotations = Vec::with_capacity(nj);
    let mut d_local = Vec::with_capacity(nj);
    let root = global_root(pose);
    for j in 0..nj {
        let (r, dr) = rodrigues_with_jacobian(pose.theta[j]);
        local_rotations.push(r);
        d_local.push(dr);
        let (parent, offset) = if j == 0 {
            (root, rig.rest_joints[0])
        } else {
            let p = rig.bone_parents[j];
            (world[p], sub3(rig.rest_joints[j], rig.rest_joints[p]))
        };
        let local = Rigid::new(r, offset);
        world.push(parent.compose(&local));
        for k in 0..nc {
            // d(P ∘ L) = dP ∘ L + P ∘ dL, with dL nonzero only for own coordinates.
            let (mut drot, dtr) = if j == 0 {
                (zeros3(), [T::zero(); 3])
            } else {
                let (dpr, dpt) = d_world[rig.bone_parents[j] * nc + k];
                (mat_mul(&dpr, &r), add3(mat_vec(&dpr, offset), dpt))
            };
            if k / 3 == j {
                drot = mat_add(&drot, &mat_mul(&parent.rot, &dr[k % 3]));
            }
            d_world[j * nc + k] = (drot, dtr);
        }
    }
    let transforms: Vec<Rigid<T>> = world
        .iter()
        .zip(&rig.rest_joints)
        .map(|(g, &jnt)| Rigid::new(g.rot, sub3(g.trans, mat_vec(&g.rot, jnt))))
        .collect();
    let d_transforms = (0..nj * nc)
        .map(|idx| {
            let j = idx / nc;
            let (dr, dt) = d_world[idx];
            (dr, sub3(dt, mat_vec(&dr, rig.rest_joints[j])))
        })
        .collect();
    (
        BoneTransforms { transforms, local_rotations },
        KinematicsJacobian { num_joints: nj, d_transforms, d_local },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{det, transpose};
    use crate::rig::{build_toy_rig, ToyRigConfig, NUM_SHAPE};

    fn single_bone_rig() -> TemplateRig<f64> {
        TemplateRig {
            vertices: vec![[1.0, 0.0, 0.0]],
            faces: vec![],
            skinning_weights: vec![1.0],
            shape_bases: vec![0.0; 3 * NUM_SHAPE],
            pose_bases: vec![],
            bone_parents: vec![0],
            rest_joints: vec![[0.0, 0.0, 0.0]],
        }
    }

    #[test]
    fn zero_pose_gives_identity_transforms() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let bt = forward_kinematics(&rig, &PoseParams::rest(rig.num_joints()));
        for t in &bt.transforms {
            for r in 0..3 {
                for c in 0..3 {
                    let e = if r == c { 1.0 } else { 0.0 };
                    assert!((t.rot[r][c] - e).abs() < 1e-15);
                }
                assert!(t.trans[r].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn global_translation_moves_every_bone() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let mut pose = PoseParams::rest(rig.num_joints());
        pose.global_translation = [1.0, 0.0, 0.0];
        for t in forward_kinematics(&rig, &pose).transforms {
            assert!((t.trans[0] - 1.0).abs() < 1e-15 && t.trans[1].abs() < 1e-15 && t.trans[2].abs() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_single_bone() {
        let rig = single_bone_rig();
        let mut pose = PoseParams::rest(1);
        pose.theta[0] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let p = forward_kinematics(&rig, &pose).transforms[0].apply([1.0, 0.0, 0.0]);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn transforms_are_proper_rotations() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let mut pose = PoseParams::rest(rig.num_joints());
        for (j, t) in pose.theta.iter_mut().enumerate() {
            *t = [0.1 * j as f64, -0.3, 0.7];
        }
        for t in forward_kinematics(&rig, &pose).transforms {
            assert!((det(&t.rot) - 1.0).abs() < 1e-6);
            let rtr = mat_mul(&transpose(&t.rot), &t.rot);
            for r in 0..3 {
                for c in 0..3 {
                    let e = if r == c { 1.0 } else { 0.0 };
                    assert!((rtr[r][c] - e).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let mut pose = PoseParams::rest(rig.num_joints());
        for (j, t) in pose.theta.iter_mut().enumerate() {
            *t = [0.05 * j as f64, -0.2 + 0.01 * j as f64, 0.3];
        }
        pose.global_rotation = crate::linalg::rodrigues([0.2, 0.1, -0.4]);
        let (_, jac) = forward_kinematics_with_jacobian(&rig, &pose);
        let h = 1e-6;
        let nj = rig.num_joints();
        for k in 0..3 * nj {
            let mut pp = pose.clone();
            let mut pm = pose.clone();
            pp.theta[k / 3][k % 3] += h;
            pm.theta[k / 3][k % 3] -= h;
            let tp = forward_kinematics(&rig, &pp).transforms;
            let tm = forward_kinematics(&rig, &pm).transforms;
            for b in 0..nj {
                let (dr, dt) = jac.d_transform(b, k);
                for r in 0..3 {
                    for c in 0..3 {
                        let num = (tp[b].rot[r][c] - tm[b].rot[r][c]) / (2.0 * h);
                        assert!((num - dr[r][c]).abs() < 1e-7, "bone {b} coord {k}");
                    }
                    let num = (tp[b].trans[r] - tm[b].trans[r]) / (2.0 * h);
                    assert!((num - dt[r]).abs() < 1e-7, "bone {b} coord {k} trans");
                }
            }
        }
    }
}
