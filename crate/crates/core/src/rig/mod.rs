//! Template rig, forward kinematics and skinning-based deformation of
//! canonical points.

mod deform;
mod kinematics;
mod mano;
mod toy;

pub use deform::{
    bind_canonical_points, blended_rotations, deform_normals, deform_normals_var, deform_points, deform_points_var,
    deformation_jacobian_inverse, renormalize_rows, template_normal_deformation, JacobianInverses, PerPointRigData,
};
pub use kinematics::{forward_kinematics, forward_kinematics_with_jacobian, BoneTransforms, KinematicsJacobian};
pub use mano::{load_template, save_template, template_from_checkpoint, template_into_checkpoint};
pub use toy::{build_toy_rig, ToyRigConfig};

use crate::linalg::{identity3, Mat3, Vec3};
use crate::{Error, Real, Result};

/// Number of shape coefficients.
pub const NUM_SHAPE: usize = 10;

/// Articulated template: vertices, faces, skinning weights, blendshape bases
/// and the bone hierarchy.
///
/// Bases are stored flat: `shape_bases[(v * 3 + axis) * NUM_SHAPE + k]` and
/// `pose_bases[(v * 3 + axis) * pose_dim + m]` with `pose_dim = 9 (N_j − 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateRig<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    /// `N_M × N_j`, row-major.
    pub skinning_weights: Vec<T>,
    pub shape_bases: Vec<T>,
    pub pose_bases: Vec<T>,
    /// Parent of each bone; the root (bone 0) is its own parent.
    pub bone_parents: Vec<usize>,
    pub rest_joints: Vec<Vec3<T>>,
}

impl<T: Real> TemplateRig<T> {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.bone_parents.len()
    }

    /// Flattened per-joint rotation-feature length, `9 (N_j − 1)`.
    pub fn pose_dim(&self) -> usize {
        9 * self.num_joints().saturating_sub(1)
    }

    pub fn weights_row(&self, v: usize) -> &[T] {
        let nj = self.num_joints();
        &self.skinning_weights[v * nj..(v + 1) * nj]
    }

    /// `3 × NUM_SHAPE` slice for vertex `v`.
    pub fn shape_basis(&self, v: usize) -> &[T] {
        &self.shape_bases[v * 3 * NUM_SHAPE..(v + 1) * 3 * NUM_SHAPE]
    }

    /// `3 × pose_dim` slice for vertex `v`.
    pub fn pose_basis(&self, v: usize) -> &[T] {
        let p = self.pose_dim();
        &self.pose_bases[v * 3 * p..(v + 1) * 3 * p]
    }

    /// Checks array sizes, weight normalization and the bone tree.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vertices();
        let nj = self.num_joints();
        if n == 0 {
            return Err(Error::Rig("template has no vertices".into()));
        }
        if nj == 0 || self.rest_joints.len() != nj {
            return Err(Error::Rig(format!(
                "{} bone parents but {} rest joints",
                nj,
                self.rest_joints.len()
            )));
        }
        if self.skinning_weights.len() != n * nj {
            return Err(Error::Rig("skinning weights must be N_M × N_j".into()));
        }
        if self.shape_bases.len() != n * 3 * NUM_SHAPE {
            return Err(Error::Rig("shape bases must be N_M × 3 × 10".into()));
        }
        if self.pose_bases.len() != n * 3 * self.pose_dim() {
            return Err(Error::Rig(format!("pose bases must be N_M × 3 × {}", self.pose_dim())));
        }
        for (v, row) in self.skinning_weights.chunks(nj).enumerate() {
            if row.iter().any(|&w| w < T::zero() || !w.is_finite()) {
                return Err(Error::Rig(format!("vertex {v} has a negative skinning weight")));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::Rig(format!("vertex {v} skinning weights sum to {s}")));
            }
        }
        if self.bone_parents[0] != 0 {
            return Err(Error::Rig("bone 0 must be the root".into()));
        }
        for (j, &p) in self.bone_parents.iter().enumerate().skip(1) {
            // Parents precede children, which rules out cycles.
            if p >= j {
                return Err(Error::Rig(format!("bone {j} has parent {p}; parents must precede children")));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Rig(format!("face {f:?} references a missing vertex")));
            }
        }
        Ok(())
    }
}

/// Articulation and identity of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseParams<T> {
    /// Axis-angle rotation per joint (radians).
    pub theta: Vec<Vec3<T>>,
    pub phi: [T; NUM_SHAPE],
    pub global_rotation: Mat3<T>,
    pub global_translation: Vec3<T>,
}

impl<T: Real> PoseParams<T> {
    /// Zero articulation, zero shape, identity global transform.
    pub fn rest(num_joints: usize) -> Self {
        Self {
            theta: vec![[T::zero(); 3]; num_joints],
            phi: [T::zero(); NUM_SHAPE],
            global_rotation: identity3(),
            global_translation: [T::zero(); 3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().flatten().all(|v| v.is_finite())
            && self.phi.iter().all(|v| v.is_finite())
            && self.global_rotation.iter().flatten().all(|v| v.is_finite())
            && self.global_translation.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> PoseParams<U> {
        let c = |v: T| U::lit(v.as_f64());
        PoseParams {
            theta: self.theta.iter().map(|t| t.map(c)).collect(),
            phi: self.phi.map(c),
            global_rotation: self.global_rotation.map(|r| r.map(c)),
            global_translation: self.global_translation.map(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_bad_weights_and_cycles() {
        let mut rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        rig.validate().unwrap();
        let mut bad = rig.clone();
        bad.skinning_weights[0] += 0.1;
        assert!(bad.validate().is_err());
        rig.bone_parents[3] = 5;
        assert!(rig.validate().is_err());
    }
}
