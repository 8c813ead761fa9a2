//! Dataset manifests, pose files and the synthetic toy-rig dataset.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distributions::WeightedIndex;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{cross3, dot3, mat_mul, norm3, normalize3, rodrigues, rotation_log, scale3, sub3, transpose, Vec3};
use crate::mesh::vertex_normals;
use crate::renderer::{load_gray_png, load_rgb_png, project, rasterize, save_gray_png, save_rgb_png, Camera};
use crate::rig::{build_toy_rig, save_template, PoseParams, TemplateRig, ToyRigConfig, NUM_SHAPE};
use crate::training::{posed_template, Dataset, FrameSample};
use crate::geometry::CanonicalPointSet;
use crate::{Error, Real, Result};

/// On-disk pose (TOML): axis-angle per joint, shape coefficients and the
/// global rigid motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub theta: Vec<[f64; 3]>,
    pub phi: [f64; NUM_SHAPE],
    pub global_rotation: [[f64; 3]; 3],
    pub global_translation: [f64; 3],
}

impl PoseFile {
    pub fn from_pose<T: Real>(p: &PoseParams<T>) -> Self {
        let c = |v: T| v.as_f64();
        Self {
            theta: p.theta.iter().map(|t| t.map(c)).collect(),
            phi: p.phi.map(c),
            global_rotation: p.global_rotation.map(|r| r.map(c)),
            global_translation: p.global_translation.map(c),
        }
    }

    pub fn to_pose<T: Real>(&self) -> PoseParams<T> {
        PoseParams {
            theta: self.theta.iter().map(|t| t.map(T::lit)).collect(),
            phi: self.phi.map(T::lit),
            global_rotation: self.global_rotation.map(|r| r.map(T::lit)),
            global_translation: self.global_translation.map(T::lit),
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn save_pose<T: Real>(path: &Path, pose: &PoseParams<T>) -> Result<()> {
    let text = toml::to_string(&PoseFile::from_pose(pose)).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a pose file; the global rotation must be orthonormal within 1e-6.
pub fn load_pose<T: Real>(path: &Path) -> Result<PoseParams<T>> {
    let text = std::fs::read_to_string(path)?;
    let f: PoseFile = toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    let r = f.global_rotation;
    let rrt = mat_mul(&r, &transpose(&r));
    for (i, row) in rrt.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            if (v - want).abs() > 1e-6 {
                return Err(format_err(path, "global_rotation is not orthonormal"));
            }
        }
    }
    let pose: PoseParams<T> = f.to_pose();
    if !pose.is_finite() {
        return Err(format_err(path, "non-finite pose values"));
    }
    Ok(pose)
}

/// Pose at `t ∈ [0, 1]` between `a` and `b`: linear in joint axis-angles,
/// shape and translation, geodesic in the global rotation.
pub fn interpolate_pose<T: Real>(a: &PoseParams<T>, b: &PoseParams<T>, t: T) -> Result<PoseParams<T>> {
    if a.theta.len() != b.theta.len() {
        return Err(Error::ShapeMismatch { op: "interpolate_pose", lhs: vec![a.theta.len()], rhs: vec![b.theta.len()] });
    }
    let lerp = |x: T, y: T| x + (y - x) * t;
    let rel = rotation_log(&mat_mul(&transpose(&a.global_rotation), &b.global_rotation));
    Ok(PoseParams {
        theta: a.theta.iter().zip(&b.theta).map(|(x, y)| [0, 1, 2].map(|k| lerp(x[k], y[k]))).collect(),
        phi: std::array::from_fn(|k| lerp(a.phi[k], b.phi[k])),
        global_rotation: mat_mul(&a.global_rotation, &rodrigues(scale3(rel, t))),
        global_translation: [0, 1, 2].map(|k| lerp(a.global_translation[k], b.global_translation[k])),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Val,
}

/// Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    pub mask: String,
    pub camera: String,
    pub pose: String,
    #[serde(default)]
    pub split: Split,
}

/// Dataset index file (TOML).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Template container the poses refer to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub frames: Vec<FrameRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))?;
        toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?)?;
        Ok(())
    }

    /// Template path resolved against the manifest directory.
    pub fn template_path(&self, manifest_path: &Path) -> Option<PathBuf> {
        self.template.as_ref().map(|t| root_of(manifest_path).join(t))
    }
}

fn root_of(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_frame<T: Real>(root: &Path, index: usize, rec: &FrameRecord) -> Result<FrameSample<T>> {
    let frame = |reason: String| Error::Frame { frame: index, reason };
    let existing = |what: &str, rel: &str| {
        let p = root.join(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(frame(format!("{what} not found")))
        }
    };
    let image = existing("image", &rec.image)?;
    let mask = existing("mask", &rec.mask)?;
    let camera = existing("camera", &rec.camera)?;
    let pose = existing("pose", &rec.pose)?;
    let (w, h, rgb) = load_rgb_png::<T>(&image).map_err(|e| frame(format!("image: {e}")))?;
    let (mw, mh, m) = load_gray_png::<T>(&mask).map_err(|e| frame(format!("mask: {e}")))?;
    let camera = Camera::<T>::load(&camera).map_err(|e| frame(format!("camera: {e}")))?;
    let pose = load_pose::<T>(&pose).map_err(|e| frame(format!("pose: {e}")))?;
    if (w, h) != (mw, mh) || (w, h) != (camera.width, camera.height) {
        return Err(frame(format!("resolution mismatch: image {w}×{h}, mask {mw}×{mh}, camera {}×{}", camera.width, camera.height)));
    }
    let half = T::lit(0.5);
    let sample = FrameSample { rgb, mask: m.into_iter().map(|v| v > half).collect(), camera, pose };
    sample.validate(index)?;
    Ok(sample)
}

/// Loads every frame of a manifest, in parallel. Images are normalized to
/// `[0, 1]` and masks binarized at 0.5; frames of one split must share a
/// resolution.
pub fn load_dataset<T: Real>(manifest_path: &Path) -> Result<Dataset<T>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = root_of(manifest_path);
    let frames: Vec<FrameSample<T>> =
        manifest.frames.par_iter().enumerate().map(|(i, rec)| load_frame(&root, i, rec)).collect::<Result<_>>()?;
    let mut ds = Dataset::default();
    let mut first: [Option<(usize, usize)>; 2] = [None, None];
    for (i, (f, rec)) in frames.into_iter().zip(&manifest.frames).enumerate() {
        let slot = usize::from(rec.split == Split::Val);
        let res = (f.width(), f.height());
        match first[slot] {
            Some(r) if r != res => {
                return Err(Error::Frame { frame: i, reason: format!("resolution {}×{} differs from {}×{} of its split", res.0, res.1, r.0, r.1) })
            }
            _ => first[slot] = Some(res),
        }
        match rec.split {
            Split::Train => ds.train.push(f),
            Split::Val => ds.val.push(f),
        }
    }
    Ok(ds)
}

/// Settings of [`generate_synthetic_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub rig: ToyRigConfig,
    pub frames: usize,
    pub views: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Views whose frames go to the validation split.
    pub val_views: Vec<usize>,
    /// Bound of each articulation angle (radians).
    pub max_joint_angle: f64,
    /// Bound of the global rotation angle (radians).
    pub max_global_angle: f64,
    /// Direction toward the light, fixed in world space.
    pub light: Vec3<f64>,
    pub ambient: f64,
    pub diffuse: f64,
    /// Ground truth is rendered from this many surface samples per template vertex.
    pub surface_density: usize,
    /// Splat radius of the ground-truth samples as a multiple of radius₀.
    pub surface_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rig: ToyRigConfig::default(),
            frames: 2,
            views: 1,
            resolution: 256,
            seed: 0,
            val_views: Vec::new(),
            max_joint_angle: 0.35,
            max_global_angle: 30f64.to_radians(),
            light: [0.35, 0.5, -1.0],
            ambient: 0.45,
            diffuse: 0.55,
            surface_density: 16,
            surface_radius: std::f64::consts::FRAC_1_SQRT_2.powi(3),
        }
    }
}

/// Camera placement `(azimuth, elevation)` in degrees of view `k` of `n`:
/// a ring of views around the front axis and, for `n ≥ 4`, one view near
/// the axis inside the ring.
fn view_angles(k: usize, n: usize) -> (f64, f64) {
    if n == 1 || (n >= 4 && k == n - 1) {
        return (0.0, 5.0);
    }
    let ring = if n >= 4 { n - 1 } else { n };
    let a = std::f64::consts::TAU * k as f64 / ring as f64 + std::f64::consts::FRAC_PI_6;
    (35.0 * a.cos(), 25.0 * a.sin())
}

/// Per-vertex albedo: smooth color waves over the rest template.
pub fn synthetic_albedo(vertices: &[Vec3<f64>], seed: u64) -> Vec<Vec3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0105);
    let dirs: [Vec3<f64>; 3] = std::array::from_fn(|_| UnitSphere.sample(&mut rng));
    let phases: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    vertices
        .iter()
        .map(|&p| std::array::from_fn(|k| 0.5 + 0.3 * (70.0 * dot3(dirs[k], p) + phases[k]).sin()))
        .collect()
}

/// Area-weighted random points on a triangle mesh, stored as face index
/// plus barycentric weights so they follow the mesh through any pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSamples {
    pub faces: Vec<usize>,
    pub barycentric: Vec<Vec3<f64>>,
}

impl SurfaceSamples {
    pub fn sample(vertices: &[Vec3<f64>], faces: &[[usize; 3]], count: usize, rng: &mut impl Rng) -> Result<Self> {
        let areas: Vec<f64> = faces
            .iter()
            .map(|f| {
                let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
                0.5 * norm3(cross3(sub3(b, a), sub3(c, a)))
            })
            .collect();
        let pick = WeightedIndex::new(&areas).map_err(|e| Error::Config(format!("surface sampling: {e}")))?;
        let mut out = Self { faces: Vec::with_capacity(count), barycentric: Vec::with_capacity(count) };
        for _ in 0..count {
            out.faces.push(pick.sample(rng));
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            let su = u.sqrt();
            out.barycentric.push([1.0 - su, su * (1.0 - v), su * v]);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Interpolates per-vertex values at the samples.
    pub fn interpolate(&self, faces: &[[usize; 3]], values: &[Vec3<f64>]) -> Vec<Vec3<f64>> {
        self.faces
            .iter()
            .zip(&self.barycentric)
            .map(|(&f, w)| {
                let t = faces[f];
                std::array::from_fn(|k| w[0] * values[t[0]][k] + w[1] * values[t[1]][k] + w[2] * values[t[2]][k])
            })
            .collect()
    }
}

fn sample_pose(rng: &mut ChaCha8Rng, nj: usize, cfg: &SynthConfig) -> PoseParams<f64> {
    let mut pose = PoseParams::rest(nj);
    let a = cfg.max_joint_angle;
    for t in pose.theta.iter_mut().skip(1) {
        *t = [rng.gen_range(-a..=a), rng.gen_range(-a..=a) * 0.3, rng.gen_range(-a..=a) * 0.3];
    }
    let shape = Normal::new(0.0, 0.5).expect("valid sigma");
    pose.phi = std::array::from_fn(|_| shape.sample(rng));
    let axis: Vec3<f64> = UnitSphere.sample(rng);
    let angle = rng.gen_range(-cfg.max_global_angle..=cfg.max_global_angle);
    pose.global_rotation = rodrigues(scale3(axis, angle));
    pose
}

/// Ground-truth surface of the synthetic dataset and its splat radius.
pub fn synthetic_surface(rig: &TemplateRig<f64>, cfg: &SynthConfig) -> Result<(SurfaceSamples, f64)> {
    if cfg.surface_density == 0 || !(cfg.surface_radius > 0.0 && cfg.surface_radius.is_finite()) {
        return Err(Error::Config("surface_density and surface_radius must be positive".into()));
    }
    let seeds = CanonicalPointSet::from_template(rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5A4F);
    let surface = SurfaceSamples::sample(&rig.vertices, &rig.faces, cfg.surface_density * rig.vertices.len(), &mut rng)?;
    Ok((surface, seeds.radius0 * cfg.surface_radius))
}

/// Renders dense samples of the posed toy-rig surface with a fixed albedo
/// and a world-fixed ambient plus diffuse light, and writes images, masks
/// (rendered alpha > 0.5), cameras, poses, the template and `manifest.toml`
/// under `dir`. Returns the manifest path.
pub fn generate_synthetic_dataset(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    if cfg.frames == 0 || cfg.views == 0 || cfg.resolution == 0 {
        return Err(Error::Config("frames, views and resolution must be positive".into()));
    }
    if let Some(&v) = cfg.val_views.iter().find(|&&v| v >= cfg.views) {
        return Err(Error::Config(format!("validation view {v} out of range")));
    }
    let light = normalize3(cfg.light, 1e-12).ok_or_else(|| Error::Config("light direction must be nonzero".into()))?;
    let rig: TemplateRig<f64> = build_toy_rig(&cfg.rig);
    let (surface, radius) = synthetic_surface(&rig, cfg)?;
    let albedo = synthetic_albedo(&surface.interpolate(&rig.faces, &rig.vertices), cfg.seed);
    let (center, scale) = crate::geometry::bounding_sphere(&rig.vertices);

    for sub in ["images", "masks", "cameras", "poses"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    save_template(&rig, dir.join("template.ckpt"))?;

    let res = cfg.resolution;
    let distance = 0.4;
    let focal = 0.85 * 0.5 * res as f64 * distance / (1.15 * scale);
    let cameras: Vec<Camera<f64>> = (0..cfg.views)
        .map(|k| {
            let (az, el) = view_angles(k, cfg.views);
            let (az, el) = (az.to_radians(), el.to_radians());
            let dir = [az.sin() * el.cos(), el.sin(), -az.cos() * el.cos()];
            let eye = [0, 1, 2].map(|i| center[i] + distance * dir[i]);
            Camera::look_at(eye, center, [0.0, 1.0, 0.0], focal, res, res)
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = DatasetManifest { template: Some("template.ckpt".into()), frames: Vec::new() };
    for f in 0..cfg.frames {
        let pose = sample_pose(&mut rng, rig.num_joints(), cfg);
        let posed_vertices = posed_template(&rig, &pose)?;
        let posed = surface.interpolate(&rig.faces, &posed_vertices);
        let normals = surface.interpolate(&rig.faces, &vertex_normals(&posed_vertices, &rig.faces));
        let colors: Vec<Vec3<f64>> = albedo
            .iter()
            .zip(&normals)
            .map(|(a, n)| {
                let n = normalize3(*n, 1e-12).unwrap_or([0.0; 3]);
                let s = cfg.ambient + cfg.diffuse * dot3(n, light).max(0.0);
                a.map(|c| (c * s).min(1.0))
            })
            .collect();
        let pose_rel = format!("poses/{f:04}.toml");
        save_pose(&dir.join(&pose_rel), &pose)?;
        for (v, cam) in cameras.iter().enumerate() {
            let name = format!("{f:04}_{v}");
            let target = rasterize(&project(&posed, radius, cam), &colors, res, res)?;
            let mask: Vec<f64> = target.alpha.iter().map(|&a| if a > 0.5 { 1.0 } else { 0.0 }).collect();
            let rec = FrameRecord {
                image: format!("images/{name}.png"),
                mask: format!("masks/{name}.png"),
                camera: format!("cameras/{v}.toml"),
                pose: pose_rel.clone(),
                split: if cfg.val_views.contains(&v) { Split::Val } else { Split::Train },
            };
            save_rgb_png(&dir.join(&rec.image), res, res, &target.rgb)?;
            save_gray_png(&dir.join(&rec.mask), res, res, &mask)?;
            manifest.frames.push(rec);
        }
    }
    for (v, cam) in cameras.iter().enumerate() {
        cam.save(&dir.join(format!("cameras/{v}.toml")))?;
    }
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::load_template;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { frames: 2, views: 2, resolution: 32, seed, val_views: vec![1], ..Default::default() }
    }

    fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            let mut entries: Vec<_> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
            entries.sort();
            for p in entries {
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn synthetic_dataset_is_reproducible_and_loads() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = generate_synthetic_dataset(a.path(), &small(4)).unwrap();
        generate_synthetic_dataset(b.path(), &small(4)).unwrap();
        assert_eq!(read_all(a.path()), read_all(b.path()));

        let manifest = DatasetManifest::load(&pa).unwrap();
        assert_eq!(manifest.frames.len(), 4);
        let ds = load_dataset::<f64>(&pa).unwrap();
        assert_eq!((ds.train.len(), ds.val.len()), (2, 2));
        let f = &ds.train[0];
        assert_eq!((f.width(), f.height(), f.rgb.len(), f.mask.len()), (32, 32, 1024, 1024));
        assert!(f.mask.iter().any(|&m| m) && f.mask.iter().any(|&m| !m));
        let rig: TemplateRig<f64> = load_template(manifest.template_path(&pa).unwrap()).unwrap();
        assert_eq!(rig.num_joints(), f.pose.theta.len());
    }

    #[test]
    fn masks_are_thresholded_render_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(9);
        let path = generate_synthetic_dataset(dir.path(), &cfg).unwrap();
        let ds = load_dataset::<f64>(&path).unwrap();
        let rig: TemplateRig<f64> = build_toy_rig(&cfg.rig);
        let (surface, radius) = synthetic_surface(&rig, &cfg).unwrap();
        for f in ds.train.iter().chain(&ds.val) {
            let posed = surface.interpolate(&rig.faces, &posed_template(&rig, &f.pose).unwrap());
            let colors = vec![[0.5; 3]; posed.len()];
            let t = rasterize(&project(&posed, radius, &f.camera), &colors, 32, 32).unwrap();
            let want: Vec<bool> = t.alpha.iter().map(|&a| a > 0.5).collect();
            assert_eq!(f.mask, want);
        }
    }

    #[test]
    fn surface_samples_lie_on_their_faces() {
        let rig: TemplateRig<f64> = build_toy_rig(&ToyRigConfig::default());
        let (s, radius) = synthetic_surface(&rig, &SynthConfig::default()).unwrap();
        assert_eq!(s.len(), 16 * rig.vertices.len());
        let r0 = CanonicalPointSet::from_template(&rig).unwrap().radius0;
        assert!((radius - r0 / 8f64.sqrt()).abs() < 1e-15);
        let pts = s.interpolate(&rig.faces, &rig.vertices);
        for ((&f, w), p) in s.faces.iter().zip(&s.barycentric).zip(&pts) {
            assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let t = rig.faces[f];
            let n = cross3(sub3(rig.vertices[t[1]], rig.vertices[t[0]]), sub3(rig.vertices[t[2]], rig.vertices[t[0]]));
            assert!(dot3(n, sub3(*p, rig.vertices[t[0]])).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_mask_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = generate_synthetic_dataset(dir.path(), &small(1)).unwrap();
        let manifest = DatasetManifest::load(&path).unwrap();
        std::fs::remove_file(dir.path().join(&manifest.frames[1].mask)).unwrap();
        let err = load_dataset::<f64>(&path).unwrap_err();
        assert_eq!(err.to_string(), "frame 1: mask not found");
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = generate_synthetic_dataset(dir.path(), &small(2)).unwrap();
        let manifest = DatasetManifest::load(&path).unwrap();
        save_gray_png::<f64>(&dir.path().join(&manifest.frames[0].mask), 16, 16, &[0.0; 256]).unwrap();
        let err = load_dataset::<f64>(&path).unwrap_err();
        assert!(err.to_string().starts_with("frame 0: resolution mismatch"), "{err}");
    }

    #[test]
    fn pose_file_round_trip_and_interpolation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sample_pose(&mut rng, 6, &SynthConfig::default());
        let b = sample_pose(&mut rng, 6, &SynthConfig::default());
        save_pose(&path, &a).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["theta", "phi", "global_rotation", "global_translation"] {
            assert!(text.contains(key));
        }
        assert_eq!(load_pose::<f64>(&path).unwrap(), a);
        let start = interpolate_pose(&a, &b, 0.0).unwrap();
        let end = interpolate_pose(&a, &b, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((start.global_rotation[i][j] - a.global_rotation[i][j]).abs() < 1e-12);
                assert!((end.global_rotation[i][j] - b.global_rotation[i][j]).abs() < 1e-9);
            }
        }
        assert_eq!(end.theta.len(), 6);
        std::fs::write(&path, text.replace("global_rotation = [[", "global_rotation = [[2.0, ")).unwrap();
        assert!(load_pose::<f64>(&path).is_err());
    }
}
