use std::path::Path;
use std::sync::Arc;

use super::config::ShadingFeatures;
use crate::appearance::{compose_colors, Appearance, AttentionConfig};
use crate::autodiff::{Checkpoint, ParamStore, Tensor};
use crate::geometry::{bounding_sphere, CanonicalPointSet, PlyPoint, SdfConfig, SdfNetwork};
use crate::linalg::Vec3;
use crate::mesh::vertex_normals;
use crate::renderer::{project, rasterize, Camera, RenderTarget};
use crate::rig::{
    deform_normals, deform_points, deformation_jacobian_inverse, forward_kinematics, template_from_checkpoint,
    template_into_checkpoint, template_normal_deformation, PerPointRigData, PoseParams, TemplateRig,
};
use crate::{Error, Real, Result};

/// Architecture of a [`HandModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub sdf: SdfConfig,
    pub attention: AttentionConfig,
    pub shading_features: ShadingFeatures,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { sdf: SdfConfig::default(), attention: AttentionConfig::default(), shading_features: ShadingFeatures::Deformed }
    }
}

/// Template rig, canonical points, SDF and appearance modules.
#[derive(Clone, Debug)]
pub struct HandModel<T: Real> {
    pub rig: Arc<TemplateRig<T>>,
    pub points: CanonicalPointSet<T>,
    pub sdf: SdfNetwork<T>,
    pub appearance: Appearance<T>,
    /// Area-weighted rest normals of the template.
    pub template_normals: Vec<Vec3<T>>,
    pub config: ModelConfig,
}

impl<T: Real> HandModel<T> {
    /// Points seeded from the template; SDF and appearance inputs normalized
    /// by the template's bounding box.
    pub fn new(rig: TemplateRig<T>, config: ModelConfig) -> Result<Self> {
        rig.validate()?;
        let points = CanonicalPointSet::from_template(&rig)?;
        let (center, scale) = bounding_sphere(&rig.vertices);
        let sdf = SdfNetwork::new(&config.sdf, center, scale);
        let appearance = Appearance::new(&config.attention, center, scale);
        let template_normals = vertex_normals(&rig.vertices, &rig.faces);
        Ok(Self { rig: Arc::new(rig), points, sdf, appearance, template_normals, config })
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Unit SDF normals at the canonical points and their degeneracy flags.
    pub fn canonical_normals(&self) -> Result<(Vec<Vec3<T>>, Vec<bool>)> {
        self.sdf.normals(&self.points.coords)
    }

    /// Shading queries and keys for `pose` given canonical normals.
    pub fn shading_inputs(&self, normals: &[Vec3<T>], pose: &PoseParams<T>) -> Result<(Vec<Vec3<T>>, Vec<Vec3<T>>)> {
        match self.config.shading_features {
            ShadingFeatures::Canonical => Ok((normals.to_vec(), self.template_normals.clone())),
            ShadingFeatures::Deformed => {
                let bt = forward_kinematics(&self.rig, pose);
                let jinv = deformation_jacobian_inverse(&self.points.binding, &bt);
                Ok((deform_normals(normals, &jinv)?, template_normal_deformation(&self.rig, &bt)))
            }
        }
    }

    /// Pose-independent albedo of every canonical point.
    pub fn albedo(&self) -> Result<Vec<Vec3<T>>> {
        self.appearance.albedo(&self.points.coords, &self.rig.vertices)
    }

    pub fn shading(&self, pose: &PoseParams<T>) -> Result<Vec<T>> {
        let (normals, _) = self.canonical_normals()?;
        let (dc, dm) = self.shading_inputs(&normals, pose)?;
        self.appearance.shading(&dc, &dm)
    }

    /// Composed per-point colors under `pose`.
    pub fn colors(&self, pose: &PoseParams<T>) -> Result<Vec<Vec3<T>>> {
        compose_colors(&self.albedo()?, &self.shading(pose)?)
    }

    pub fn deformed_points(&self, pose: &PoseParams<T>) -> Result<Vec<Vec3<T>>> {
        let bt = forward_kinematics(&self.rig, pose);
        deform_points(&self.rig, &self.points.binding, &self.points.coords, &bt, pose)
    }

    /// Template vertices under `pose`.
    pub fn posed_template(&self, pose: &PoseParams<T>) -> Result<Vec<Vec3<T>>> {
        posed_template(&self.rig, pose)
    }

    /// Splats the deformed points with the given per-point colors.
    pub fn render_with_colors(&self, pose: &PoseParams<T>, camera: &Camera<T>, colors: &[Vec3<T>]) -> Result<RenderTarget<T>> {
        let screen = project(&self.deformed_points(pose)?, self.points.radius, camera);
        rasterize(&screen, colors, camera.width, camera.height)
    }

    pub fn render(&self, pose: &PoseParams<T>, camera: &Camera<T>) -> Result<RenderTarget<T>> {
        self.render_with_colors(pose, camera, &self.colors(pose)?)
    }

    /// Canonical points with SDF normals and albedo for PLY export.
    pub fn ply_points(&self) -> Result<Vec<PlyPoint<T>>> {
        let (normals, _) = self.canonical_normals()?;
        let albedo = self.albedo()?;
        Ok((0..self.num_points())
            .map(|i| PlyPoint {
                position: self.points.coords[i],
                normal: normals[i],
                color: albedo[i],
                generation: self.points.birth_generation[i],
                visible: self.points.visible[i],
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        template_into_checkpoint(&self.rig, &mut ck, "rig.")?;
        let p = &self.points;
        ck.insert("points.coords", &Tensor::from_vec3s(&p.coords));
        let births: Vec<f64> = p.birth_generation.iter().map(|&g| g as f64).collect();
        ck.insert("points.birth_generation", &Tensor::from_rows(1, births.len(), births));
        let visible: Vec<f64> = p.visible.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        ck.insert("points.visible", &Tensor::from_rows(1, visible.len(), visible));
        ck.insert("points.radius0", &Tensor::scalar(p.radius0));
        ck.insert("points.radius", &Tensor::scalar(p.radius));
        ck.insert_scalar("points.generation", p.generation as f64);
        ck.insert_params("", &self.sdf.params);
        ck.insert_params("", &self.appearance.albedo.params);
        ck.insert_params("", &self.appearance.shading.params);
        let c = &self.config;
        ck.insert_scalar("config.sdf.hidden_layers", c.sdf.hidden_layers as f64);
        ck.insert_scalar("config.sdf.width", c.sdf.width as f64);
        ck.insert_scalar("config.sdf.beta", c.sdf.beta);
        ck.insert_scalar("config.attention.hidden", c.attention.hidden as f64);
        ck.insert_scalar("config.attention.d_cross", c.attention.d_cross as f64);
        let shading = match c.shading_features {
            ShadingFeatures::Deformed => 0.0,
            ShadingFeatures::Canonical => 1.0,
        };
        ck.insert_scalar("config.shading_features", shading);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, source: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: source.to_path_buf(), reason };
        let rig = template_from_checkpoint::<T>(ck, "rig.", source)?;
        let usize_of = |name: &str| -> Result<usize> {
            let v = ck.scalar(name).map_err(|e| bad(e.to_string()))?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(bad(format!("`{name}` is not a count")));
            }
            Ok(v as usize)
        };
        let sdf = SdfConfig {
            hidden_layers: usize_of("config.sdf.hidden_layers")?,
            width: usize_of("config.sdf.width")?,
            beta: ck.scalar("config.sdf.beta").map_err(|e| bad(e.to_string()))?,
            ..SdfConfig::default()
        };
        let attention = AttentionConfig { hidden: usize_of("config.attention.hidden")?, d_cross: usize_of("config.attention.d_cross")?, ..Default::default() };
        let shading_features = match usize_of("config.shading_features")? {
            0 => ShadingFeatures::Deformed,
            1 => ShadingFeatures::Canonical,
            v => return Err(bad(format!("unknown shading feature mode {v}"))),
        };
        let mut model = Self::new(rig, ModelConfig { sdf, attention, shading_features })?;
        restore(&mut model.sdf.params, ck, source)?;
        restore(&mut model.appearance.albedo.params, ck, source)?;
        restore(&mut model.appearance.shading.params, ck, source)?;

        let coords = ck.get_as::<T>("points.coords").map_err(|e| bad(e.to_string()))?;
        if coords.shape().len() != 2 || coords.cols() != 3 {
            return Err(bad("points.coords must be N×3".into()));
        }
        let n = coords.rows();
        let births = ck.get("points.birth_generation").map_err(|e| bad(e.to_string()))?;
        let visible = ck.get("points.visible").map_err(|e| bad(e.to_string()))?;
        if births.len() != n || visible.len() != n {
            return Err(bad("point attribute lengths disagree".into()));
        }
        let p = &mut model.points;
        p.coords = coords.to_vec3s();
        p.birth_generation = births.data().iter().map(|&g| g as u32).collect();
        p.visible = visible.data().iter().map(|&v| v != 0.0).collect();
        p.radius0 = ck.get_as::<T>("points.radius0").map_err(|e| bad(e.to_string()))?.item();
        p.radius = ck.get_as::<T>("points.radius").map_err(|e| bad(e.to_string()))?.item();
        p.generation = usize_of("points.generation")? as u32;
        p.rebind(&model.rig)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

fn restore<T: Real>(store: &mut ParamStore<T>, ck: &Checkpoint, source: &Path) -> Result<()> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let t = ck.get_as::<T>(&name).map_err(|_| Error::Format { path: source.to_path_buf(), reason: format!("missing record `{name}`") })?;
        let p = store.get_mut(&name)?;
        if p.shape != t.shape() {
            return Err(Error::Format { path: source.to_path_buf(), reason: format!("record `{name}` has shape {:?}, expected {:?}", t.shape(), p.shape) });
        }
        p.values = t.into_data();
    }
    Ok(())
}

/// Template vertices deformed by `pose` with their own skinning weights.
pub fn posed_template<T: Real>(rig: &TemplateRig<T>, pose: &PoseParams<T>) -> Result<Vec<Vec3<T>>> {
    let bt = forward_kinematics(rig, pose);
    deform_points(rig, &PerPointRigData::identity(rig), &rig.vertices, &bt, pose)
}
