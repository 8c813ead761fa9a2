//! MANO-compatible template container.
//!
//! A template file is a tensor checkpoint (see [`crate::autodiff::Checkpoint`])
//! with these records, all stored as `f64`:
//!
//! | name              | shape            | meaning                                   |
//! |-------------------|------------------|-------------------------------------------|
//! | `v_template`      | `N_M × 3`        | rest vertices (meters)                    |
//! | `f`               | `F × 3`          | triangle vertex indices                   |
//! | `weights`         | `N_M × N_j`      | skinning weights                          |
//! | `shapedirs`       | `N_M × 3 × 10`   | shape blendshape bases                    |
//! | `posedirs`        | `N_M × 3 × P`    | pose blendshape bases, `P = 9 (N_j − 1)`  |
//! | `kintree_parents` | `N_j`            | parent bone; negative for the root        |
//! | `J`               | `N_j × 3`        | rest joints (optional if `J_regressor`)   |
//! | `J_regressor`     | `N_j × N_M`      | joint regressor applied to `v_template`   |
//!
//! No template weights are distributed with this crate.

use std::path::Path;

use super::{TemplateRig, NUM_SHAPE};
use crate::autodiff::{Checkpoint, Tensor};
use crate::{Error, Real, Result};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

fn record<'a>(ck: &'a Checkpoint, path: &Path, name: &str, shape: &[usize]) -> Result<&'a Tensor<f64>> {
    let t = ck.get(name).map_err(|_| format_err(path, format!("missing record `{name}`")))?;
    let ok = t.shape().len() == shape.len() && t.shape().iter().zip(shape).all(|(&a, &b)| b == 0 || a == b);
    if !ok {
        return Err(format_err(path, format!("record `{name}` has shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(t)
}

/// Reads a template container and validates it.
pub fn load_template<T: Real>(path: impl AsRef<Path>) -> Result<TemplateRig<T>> {
    let path = path.as_ref();
    template_from_checkpoint(&Checkpoint::load(path)?, "", path)
}

/// Template records stored under `prefix` in `ck`; `path` names the source in errors.
pub fn template_from_checkpoint<T: Real>(ck: &Checkpoint, prefix: &str, path: &Path) -> Result<TemplateRig<T>> {
    let key = |name: &str| format!("{prefix}{name}");
    let v = record(ck, path, &key("v_template"), &[0, 3])?;
    let n = v.rows();
    let parents = ck.get(&key("kintree_parents")).map_err(|_| format_err(path, format!("missing record `{}`", key("kintree_parents"))))?;
    let nj = parents.len();
    if nj == 0 {
        return Err(format_err(path, "empty kinematic tree"));
    }
    let f = record(ck, path, &key("f"), &[0, 3])?;
    let w = record(ck, path, &key("weights"), &[n, nj])?;
    let s = record(ck, path, &key("shapedirs"), &[n, 3, NUM_SHAPE])?;
    let p = record(ck, path, &key("posedirs"), &[n, 3, 9 * (nj - 1)])?;
    let joints = match ck.get(&key("J")) {
        Ok(_) => record(ck, path, &key("J"), &[nj, 3])?.clone(),
        Err(_) => record(ck, path, &key("J_regressor"), &[nj, n])?.matmul(v)?,
    };
    let mut faces = Vec::with_capacity(f.rows());
    for row in f.data().chunks(3) {
        let mut face = [0usize; 3];
        for (dst, &x) in face.iter_mut().zip(row) {
            if x < 0.0 || x.fract() != 0.0 {
                return Err(format_err(path, format!("face index {x} is not a nonnegative integer")));
            }
            *dst = x as usize;
        }
        faces.push(face);
    }
    let bone_parents = parents
        .data()
        .iter()
        .enumerate()
        .map(|(j, &x)| if j == 0 || x < 0.0 { 0 } else { x as usize })
        .collect();
    let c = |x: &f64| T::lit(*x);
    let rig = TemplateRig {
        vertices: v.cast::<T>().to_vec3s(),
        faces,
        skinning_weights: w.data().iter().map(c).collect(),
        shape_bases: s.data().iter().map(c).collect(),
        pose_bases: p.data().iter().map(c).collect(),
        bone_parents,
        rest_joints: joints.cast::<T>().to_vec3s(),
    };
    rig.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(rig)
}

/// Writes `rig` in the container format read by [`load_template`].
pub fn save_template<T: Real>(rig: &TemplateRig<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut ck = Checkpoint::new();
    template_into_checkpoint(rig, &mut ck, "")?;
    ck.save(path)
}

/// Adds the template records of `rig` to `ck` under `prefix`.
pub fn template_into_checkpoint<T: Real>(rig: &TemplateRig<T>, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
    let key = |name: &str| format!("{prefix}{name}");
    let n = rig.num_vertices();
    let nj = rig.num_joints();
    ck.insert(key("v_template"), &Tensor::from_vec3s(&rig.vertices));
    let f: Vec<f64> = rig.faces.iter().flatten().map(|&i| i as f64).collect();
    ck.insert(key("f"), &Tensor::from_rows(rig.faces.len(), 3, f));
    ck.insert(key("weights"), &Tensor::from_rows(n, nj, rig.skinning_weights.clone()));
    ck.insert(key("shapedirs"), &Tensor::new(vec![n, 3, NUM_SHAPE], rig.shape_bases.clone())?);
    ck.insert(key("posedirs"), &Tensor::new(vec![n, 3, rig.pose_dim()], rig.pose_bases.clone())?);
    let parents: Vec<f64> = rig.bone_parents.iter().enumerate().map(|(j, &p)| if j == 0 { -1.0 } else { p as f64 }).collect();
    ck.insert(key("kintree_parents"), &Tensor::from_rows(1, nj, parents));
    ck.insert(key("J"), &Tensor::from_vec3s(&rig.rest_joints));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{build_toy_rig, ToyRigConfig};

    #[test]
    fn round_trip_preserves_rig() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.hsplt");
        save_template(&rig, &path).unwrap();
        let back: TemplateRig<f64> = load_template(&path).unwrap();
        assert_eq!(back, rig);
    }

    #[test]
    fn joint_regressor_is_applied() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.hsplt");
        save_template(&rig, &path).unwrap();
        let mut ck = Checkpoint::load(&path).unwrap();
        ck.records.remove("J");
        // Each joint regresses onto a single vertex.
        let n = rig.num_vertices();
        let mut reg = vec![0.0; 16 * n];
        for j in 0..16 {
            reg[j * n + j * 10] = 1.0;
        }
        ck.insert("J_regressor", &Tensor::from_rows(16, n, reg));
        ck.save(&path).unwrap();
        let back: TemplateRig<f64> = load_template(&path).unwrap();
        for j in 0..16 {
            assert_eq!(back.rest_joints[j], rig.vertices[j * 10]);
        }
    }

    #[test]
    fn missing_record_is_reported() {
        let rig = build_toy_rig::<f64>(&ToyRigConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.hsplt");
        save_template(&rig, &path).unwrap();
        let mut ck = Checkpoint::load(&path).unwrap();
        ck.records.remove("posedirs");
        ck.save(&path).unwrap();
        let err = load_template::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("posedirs"), "{err}");
    }
}
