//! Finite-difference suites over every differentiable stage: tape
//! primitives, skinning, the geometry regularizer and the full
//! render-to-loss pipeline. Used by the `gradcheck` command and the tests.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appearance::{compose_color, AttentionConfig, ContextAttention, Head, PARAM_NAMES};
use crate::autodiff::{finite_difference_check_multi, OpKind, Tape, Tensor, Var};
use crate::geometry::{bname, bounding_sphere, regularization_loss, regularization_terms, wname, SdfConfig, SdfNetwork, SdfVars};
use crate::linalg::{rodrigues, Vec3};
use crate::renderer::{project_var, rasterize_var, Camera};
use crate::rig::{
    bind_canonical_points, build_toy_rig, deform_normals_var, deform_points_var, deformation_jacobian_inverse, forward_kinematics,
    renormalize_rows, template_normal_deformation, PoseParams, TemplateRig, ToyRigConfig, NUM_SHAPE,
};
use crate::training::{mask_loss, perceptual_loss, rgb_loss, PerceptualExtractor};
use crate::Result;

/// Tolerance for checks that pass through the rasterizer.
pub const RENDER_TOLERANCE: f64 = 1e-3;
/// Tolerance for every other check.
pub const TOLERANCE: f64 = 1e-4;
/// Step of the primitive sweep.
pub const PRIMITIVE_STEP: f64 = 1e-4;
/// Random trials per primitive.
pub const PRIMITIVE_TRIALS: usize = 100;

const PIPELINE_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    /// Number of finite-difference comparisons that went into `max_error`.
    pub checks: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Runs every suite in order: primitives, deformation, regularizer, pipeline.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = primitive_suites(seed)?;
    out.push(deformation_suite()?);
    out.push(normal_deformation_suite(seed)?);
    out.push(regularizer_suite(seed)?);
    out.push(render_suite(seed)?);
    out.push(pipeline_suite(seed)?);
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

/// Uniform in `[-2, 2]` but at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.gen_range(gap..2.0);
            if rng.gen() { m } else { -m }
        })
        .collect();
    Tensor::from_rows(rows, cols, data)
}

/// Inputs for one random trial of `kind`.
fn primitive_inputs(kind: &OpKind, rng: &mut ChaCha8Rng) -> (OpKind, Vec<Tensor<f64>>) {
    let r = rng.gen_range(1..=4);
    let c = rng.gen_range(1..=4);
    match kind {
        OpKind::MatMul => {
            let k = rng.gen_range(1..=4);
            (OpKind::MatMul, vec![uniform(rng, r, k), uniform(rng, k, c)])
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let b = match rng.gen_range(0..4) {
                0 => uniform(rng, 1, c),
                1 => uniform(rng, r, 1),
                2 => uniform(rng, 1, 1),
                _ => uniform(rng, r, c),
            };
            (kind.clone(), vec![uniform(rng, r, c), b])
        }
        OpKind::ScalarMul(_) => (OpKind::ScalarMul(rng.gen_range(-2.0..2.0)), vec![uniform(rng, r, c)]),
        // Keeps the kink out of the central-difference stencil.
        OpKind::Relu => (OpKind::Relu, vec![away_from_zero(rng, r, c, 1e-2)]),
        OpKind::Concat { .. } => {
            let axis = rng.gen_range(0..2);
            let parts = rng.gen_range(1..=3);
            let inputs = (0..parts)
                .map(|_| {
                    let n = rng.gen_range(1..=3);
                    if axis == 0 { uniform(rng, n, c) } else { uniform(rng, r, n) }
                })
                .collect();
            (OpKind::Concat { axis }, inputs)
        }
        OpKind::GatherRows(_) => {
            let n = rng.gen_range(1..=6);
            let idx = (0..n).map(|_| rng.gen_range(0..r)).collect();
            (OpKind::GatherRows(idx), vec![uniform(rng, r, c)])
        }
        OpKind::Reshape(_) => {
            let shape = if rng.gen() { vec![c, r] } else { vec![r * c, 1] };
            (OpKind::Reshape(shape), vec![uniform(rng, r, c)])
        }
        other => (other.clone(), vec![uniform(rng, r, c)]),
    }
}

/// Scalarizes `out` with a fixed random weighting so every output entry
/// contributes to the gradient.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &[f64]) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = Tensor::new(shape, weights[..tape.value(out).len()].to_vec())?;
    let w = tape.constant(w)?;
    let m = tape.mul(out, w)?;
    tape.sum(m)
}

fn sweep<F>(name: &str, rng: &mut ChaCha8Rng, mut make: F) -> Result<SuiteResult>
where
    F: FnMut(&mut ChaCha8Rng) -> (Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>, Vec<Tensor<f64>>),
{
    let mut max_error = 0.0f64;
    for _ in 0..PRIMITIVE_TRIALS {
        let (f, inputs) = make(rng);
        let rep = finite_difference_check_multi(|t, v| f(t, v), &inputs, PRIMITIVE_STEP)?;
        max_error = max_error.max(rep.max_error());
    }
    Ok(SuiteResult { name: format!("primitive/{name}"), checks: PRIMITIVE_TRIALS, max_error, tolerance: TOLERANCE })
}

/// One suite per tape primitive, each over [`PRIMITIVE_TRIALS`] random inputs.
pub fn primitive_suites(seed: u64) -> Result<Vec<SuiteResult>> {
    let kinds = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::ScalarMul(1.0),
        OpKind::Softplus,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::SoftmaxRows,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::L2Norm,
        OpKind::Concat { axis: 0 },
        OpKind::GatherRows(vec![]),
        OpKind::Reshape(vec![]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in kinds {
        out.push(sweep(kind.name(), &mut rng, |rng| {
            let (k, inputs) = primitive_inputs(&kind, rng);
            let weights: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = move |t: &mut Tape<f64>, v: &[Var]| {
                let o = t.primitive(&k, v)?;
                weighted_sum(t, o, &weights)
            };
            (Box::new(f), inputs)
        })?);
    }
    out.push(sweep("div", &mut rng, |rng| {
        let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let inputs = vec![uniform(rng, r, c), away_from_zero(rng, r, c, 0.5)];
        let weights: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = move |t: &mut Tape<f64>, v: &[Var]| {
            let o = t.div(v[0], v[1])?;
            weighted_sum(t, o, &weights)
        };
        (Box::new(f), inputs)
    })?);
    out.push(sweep("abs", &mut rng, |rng| {
        let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let inputs = vec![away_from_zero(rng, r, c, 1e-2)];
        let weights: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = move |t: &mut Tape<f64>, v: &[Var]| {
            let o = t.abs(v[0])?;
            weighted_sum(t, o, &weights)
        };
        (Box::new(f), inputs)
    })?);
    out.push(sweep("transpose", &mut rng, |rng| {
        let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let inputs = vec![uniform(rng, r, c)];
        let weights: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = move |t: &mut Tape<f64>, v: &[Var]| {
            let o = t.transpose(v[0])?;
            weighted_sum(t, o, &weights)
        };
        (Box::new(f), inputs)
    })?);
    Ok(out)
}

/// 10 points on a 3-bone chain with dense blendshapes.
fn chain_rig() -> Arc<TemplateRig<f64>> {
    Arc::new(TemplateRig {
        vertices: vec![[0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 1.5, 0.0]],
        faces: vec![],
        skinning_weights: vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.6, 0.4, 0.0, 0.2, 0.8],
        shape_bases: (0..4 * 3 * NUM_SHAPE).map(|i| 0.01 * ((i * 7 % 11) as f64 - 5.0)).collect(),
        pose_bases: (0..4 * 3 * 18).map(|i| 0.02 * ((i * 5 % 13) as f64 - 6.0)).collect(),
        bone_parents: vec![0, 0, 1],
        rest_joints: vec![[0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 1.0, 0.0]],
    })
}

fn random_pose(num_joints: usize, rng: &mut ChaCha8Rng, scale: f64) -> PoseParams<f64> {
    let mut pose = PoseParams::rest(num_joints);
    for t in pose.theta.iter_mut() {
        *t = [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)];
    }
    for p in pose.phi.iter_mut() {
        *p = rng.gen_range(-1.0..1.0);
    }
    pose.global_rotation = rodrigues([rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
    pose.global_translation = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
    pose
}

/// Skinned deformation with respect to canonical points, shape and pose.
pub fn deformation_suite() -> Result<SuiteResult> {
    let rig = chain_rig();
    let pts: Vec<Vec3<f64>> = (0..10).map(|i| [0.05 * i as f64 - 0.2, 0.17 * i as f64, 0.03]).collect();
    let data = bind_canonical_points(&rig, &pts)?;
    let pose = random_pose(3, &mut ChaCha8Rng::seed_from_u64(9), 0.8);
    let theta = Tensor::from_vec3s(&pose.theta);
    let phi = Tensor::from_rows(1, NUM_SHAPE, pose.phi.to_vec());
    let weights = Tensor::from_rows(10, 3, (0..30).map(|i| ((i * 3 % 7) as f64) - 3.0).collect());
    let rep = finite_difference_check_multi(
        |tape: &mut Tape<f64>, v: &[Var]| {
            let out = deform_points_var(tape, &rig, &data, v[0], v[1], v[2], &pose)?;
            let w = tape.constant(weights.clone())?;
            let m = tape.mul(out, w)?;
            tape.sum(m)
        },
        &[Tensor::from_vec3s(&pts), phi, theta],
        PIPELINE_STEP,
    )?;
    Ok(SuiteResult { name: "deformation/points,phi,theta".into(), checks: 3, max_error: rep.max_error(), tolerance: TOLERANCE })
}

/// Normals pushed through the inverse deformation Jacobians.
pub fn normal_deformation_suite(seed: u64) -> Result<SuiteResult> {
    let rig = build_toy_rig::<f64>(&ToyRigConfig { fingers: 2, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4E);
    let pts: Vec<Vec3<f64>> = (0..8).map(|i| rig.vertices[(i * 37) % rig.vertices.len()]).collect();
    let data = bind_canonical_points(&rig, &pts)?;
    let bt = forward_kinematics(&rig, &random_pose(rig.num_joints(), &mut rng, 0.5));
    let jinv = deformation_jacobian_inverse(&data, &bt);
    let raw: Vec<Vec3<f64>> = (0..8).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let weights: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rep = finite_difference_check_multi(
        |tape: &mut Tape<f64>, v: &[Var]| {
            let d = deform_normals_var(tape, v[0], &jinv)?;
            weighted_sum(tape, d, &weights)
        },
        &[Tensor::from_vec3s(&renormalize_rows(&raw))],
        PIPELINE_STEP,
    )?;
    Ok(SuiteResult { name: "deformation/normals".into(), checks: 1, max_error: rep.max_error(), tolerance: TOLERANCE })
}

/// Zero-level-set plus eikonal loss with respect to SDF parameters and points.
pub fn regularizer_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DF);
    let cfg = SdfConfig { hidden_layers: 2, width: 8, beta: 10.0, ..Default::default() };
    let net = SdfNetwork::<f64>::new(&cfg, [0.1, 0.0, -0.1], 0.5);
    let pts: Vec<Vec3<f64>> = (0..7).map(|_| [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)]).collect();
    let omega: Vec<Vec3<f64>> = pts.iter().map(|p| p.map(|x| x + rng.gen_range(-0.1..0.1))).collect();
    let mut inputs = vec![Tensor::from_vec3s(&pts)];
    for l in 0..net.num_layers() {
        inputs.push(net.params.get(&wname(l))?.tensor());
        inputs.push(net.params.get(&bname(l))?.tensor());
    }
    let rep = finite_difference_check_multi(
        |tape: &mut Tape<f64>, v: &[Var]| {
            let vars = SdfVars { layers: v[1..].chunks(2).map(|c| (c[0], c[1])).collect() };
            let terms = regularization_terms(tape, &net, &vars, v[0], &omega)?;
            regularization_loss(tape, &terms, 1.0, 0.1)
        },
        &inputs,
        1e-5,
    )?;
    Ok(SuiteResult { name: "regularizer/sdf,points".into(), checks: inputs.len(), max_error: rep.max_error(), tolerance: TOLERANCE })
}

const IMAGE: usize = 8;
const POINTS: usize = 20;

struct Scene {
    rig: Arc<TemplateRig<f64>>,
    canonical: Vec<Vec3<f64>>,
    pose: PoseParams<f64>,
    camera: Camera<f64>,
    radius: f64,
    target: Vec<Vec3<f64>>,
    mask: Vec<bool>,
}

/// 20 jittered template points on a small two-finger rig, framed so the
/// splats overlap on an 8×8 image.
fn scene(seed: u64) -> Result<Scene> {
    let rig = Arc::new(build_toy_rig::<f64>(&ToyRigConfig { fingers: 2, ..Default::default() }));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE);
    let nv = rig.vertices.len();
    let canonical: Vec<Vec3<f64>> = (0..POINTS)
        .map(|_| rig.vertices[rng.gen_range(0..nv)].map(|x| x + rng.gen_range(-2e-3..2e-3)))
        .collect();
    let mut pose = random_pose(rig.num_joints(), &mut rng, 0.3);
    pose.global_translation = [0.0; 3];
    let data = bind_canonical_points(&rig, &canonical)?;
    let bt = forward_kinematics(&rig, &pose);
    let posed = crate::rig::deform_points(&rig, &data, &canonical, &bt, &pose)?;
    let (center, r) = bounding_sphere(&posed);
    let eye = [center[0], center[1], center[2] - 3.0 * r];
    let focal = 3.0 * (IMAGE as f64 / 2.0 - 0.5);
    let camera = Camera::look_at(eye, center, [0.0, 1.0, 0.0], focal, IMAGE, IMAGE)?;
    let radius = 1.6 * 3.0 * r / focal;
    let target = (0..IMAGE * IMAGE).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mask = (0..IMAGE * IMAGE).map(|_| rng.gen_bool(0.6)).collect();
    Ok(Scene { rig, canonical, pose, camera, radius, target, mask })
}

fn image_loss(tape: &mut Tape<f64>, s: &Scene, ex: &PerceptualExtractor<f64>, world: Var, colors: Var) -> Result<Var> {
    let screen = project_var(tape, world, s.radius, &s.camera)?;
    let rv = rasterize_var(tape, screen, colors, IMAGE, IMAGE)?;
    let l_rgb = rgb_loss(tape, rv.rgb, &s.target, &s.mask)?;
    let l_mask = mask_loss(tape, rv.alpha, &s.mask)?;
    let l_vgg = perceptual_loss(tape, ex, rv.rgb, &s.target, IMAGE, IMAGE)?;
    let l_vgg = tape.scalar_mul(l_vgg, 0.1)?;
    let l = tape.add(l_rgb, l_mask)?;
    tape.add(l, l_vgg)
}

/// Projection, rasterization and image losses with respect to world-space
/// positions and per-point colors.
pub fn render_suite(seed: u64) -> Result<SuiteResult> {
    let s = scene(seed)?;
    let data = bind_canonical_points(&s.rig, &s.canonical)?;
    let bt = forward_kinematics(&s.rig, &s.pose);
    let world = crate::rig::deform_points(&s.rig, &data, &s.canonical, &bt, &s.pose)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0);
    let colors: Vec<Vec3<f64>> = (0..POINTS).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let ex = PerceptualExtractor::<f64>::default();
    let rep = finite_difference_check_multi(
        |tape: &mut Tape<f64>, v: &[Var]| image_loss(tape, &s, &ex, v[0], v[1]),
        &[Tensor::from_vec3s(&world), Tensor::from_vec3s(&colors)],
        PIPELINE_STEP,
    )?;
    Ok(SuiteResult { name: "render/positions,colors".into(), checks: 2, max_error: rep.max_error(), tolerance: RENDER_TOLERANCE })
}

/// Canonical points through deformation, both appearance modules, color
/// composition, rendering and the image losses, with respect to the points
/// and every appearance parameter.
pub fn pipeline_suite(seed: u64) -> Result<SuiteResult> {
    let s = scene(seed)?;
    let data = bind_canonical_points(&s.rig, &s.canonical)?;
    let bt = forward_kinematics(&s.rig, &s.pose);
    let jinv = deformation_jacobian_inverse(&data, &bt);
    let d_m = template_normal_deformation(&s.rig, &bt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA1);
    let raw: Vec<Vec3<f64>> = (0..POINTS).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let normals = renormalize_rows(&raw);
    let (center, scale) = bounding_sphere(&s.rig.vertices);
    let cfg = AttentionConfig { hidden: 8, d_cross: 4, seed };
    let albedo = ContextAttention::<f64>::new("albedo", Head::Albedo, &cfg, center, scale);
    let shading = ContextAttention::<f64>::new("shading", Head::Shading, &cfg, [0.0; 3], 1.0);
    let ex = PerceptualExtractor::<f64>::default();
    let phi = Tensor::from_rows(1, NUM_SHAPE, s.pose.phi.to_vec());
    let theta = Tensor::from_vec3s(&s.pose.theta);

    let mut inputs = vec![Tensor::from_vec3s(&s.canonical)];
    for m in [&albedo, &shading] {
        for n in PARAM_NAMES {
            inputs.push(m.params.get(&format!("{}.{n}", m.prefix))?.tensor());
        }
    }
    let k = PARAM_NAMES.len();
    let rep = finite_difference_check_multi(
        |tape: &mut Tape<f64>, v: &[Var]| {
            let keys = tape.constant(Tensor::from_vec3s(&s.rig.vertices))?;
            let a = albedo.forward(tape, &ContextAttention::<f64>::assemble(&v[1..1 + k]), v[0], keys)?;
            let n = tape.constant(Tensor::from_vec3s(&normals))?;
            let dc = deform_normals_var(tape, n, &jinv)?;
            let dm = tape.constant(Tensor::from_vec3s(&d_m))?;
            let sh = shading.forward(tape, &ContextAttention::<f64>::assemble(&v[1 + k..]), dc, dm)?;
            let colors = compose_color(tape, a, sh)?;
            let phi = tape.constant(phi.clone())?;
            let theta = tape.constant(theta.clone())?;
            let world = deform_points_var(tape, &s.rig, &data, v[0], phi, theta, &s.pose)?;
            image_loss(tape, &s, &ex, world, colors)
        },
        &inputs,
        PIPELINE_STEP,
    )?;
    Ok(SuiteResult {
        name: "pipeline/points,appearance".into(),
        checks: inputs.len(),
        max_error: rep.max_error(),
        tolerance: RENDER_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let results = run_all(0).unwrap();
        for r in &results {
            eprintln!("{:<32} {:.3e}", r.name, r.max_error);
            assert!(r.passed(), "{}: {:.3e} >= {:.0e}", r.name, r.max_error, r.tolerance);
        }
        assert!(results.len() > 20);
    }

    #[test]
    fn scene_splats_cover_part_of_the_image() {
        let s = scene(3).unwrap();
        let data = bind_canonical_points(&s.rig, &s.canonical).unwrap();
        let bt = forward_kinematics(&s.rig, &s.pose);
        let w = crate::rig::deform_points(&s.rig, &data, &s.canonical, &bt, &s.pose).unwrap();
        let t = crate::renderer::rasterize(&crate::renderer::project(&w, s.radius, &s.camera), &vec![[0.5; 3]; POINTS], IMAGE, IMAGE).unwrap();
        let covered = t.alpha.iter().filter(|&&a| a > 0.0).count();
        assert!(covered > 16 && covered < IMAGE * IMAGE, "{covered}");
    }
}
