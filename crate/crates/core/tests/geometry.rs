use std::sync::OnceLock;

use handsplat::autodiff::{Adam, ParamStore, Tape, Tensor};
use handsplat::geometry::{regularization_loss, regularization_terms, SdfConfig, SdfNetwork};
use handsplat::linalg::{norm3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

fn shell_points(n: usize, r_lo: f64, r_hi: f64, seed: u64) -> Vec<Vec3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            let r = rng.gen_range(r_lo..r_hi);
            d.map(|x| x * r)
        })
        .collect()
}

/// Unit-sphere SDF fitted by supervised regression plus the eikonal term.
fn sphere_net() -> &'static SdfNetwork<f64> {
    static NET: OnceLock<SdfNetwork<f64>> = OnceLock::new();
    NET.get_or_init(|| {
        let mut net = SdfNetwork::new(&SdfConfig { init_radius: 1.0, ..Default::default() }, [0.0; 3], 1.0);
        let samples = shell_points(5000, 0.0, 2.2, 1);
        let mut adam = Adam::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let steps = 2000;
        for step in 0..steps {
            let batch: Vec<Vec3<f64>> = (0..256).map(|_| samples[rng.gen_range(0..samples.len())]).collect();
            let target: Vec<f64> = batch.iter().map(|p| norm3(*p) - 1.0).collect();
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape).unwrap();
            let x = tape.constant(Tensor::from_vec3s(&batch)).unwrap();
            let out = net.forward(&mut tape, &vars, x).unwrap();
            let t = tape.constant(Tensor::from_rows(batch.len(), 1, target)).unwrap();
            let d = tape.sub(out.value, t).unwrap();
            let d2 = tape.mul(d, d).unwrap();
            let fit = tape.mean(d2).unwrap();
            let n = tape.l2_norm_rows(out.gradient).unwrap();
            let one = tape.constant(Tensor::scalar(1.0)).unwrap();
            let e = tape.sub(n, one).unwrap();
            let e2 = tape.mul(e, e).unwrap();
            let eik = tape.mean(e2).unwrap();
            let eik = tape.scalar_mul(eik, 0.1).unwrap();
            let loss = tape.add(fit, eik).unwrap();
            tape.backward(loss).unwrap();
            net.params.pull_grads(&tape);
            let lr = 1e-3 * (0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos())).max(0.02);
            adam.step(&mut net.params, lr).unwrap();
        }
        net
    })
}

#[test]
fn sphere_fit_recovers_distances_and_normals() {
    let net = sphere_net();
    let v = net.eval(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
    assert!((v[0] + 1.0).abs() < 0.05, "F(0) = {}", v[0]);
    assert!((v[1] - 1.0).abs() < 0.05, "F(2,0,0) = {}", v[1]);
    let (n, deg) = net.normals(&[[1.0, 0.0, 0.0]]).unwrap();
    assert!(!deg[0]);
    assert!((n[0][0] - 1.0).abs() < 0.05 && n[0][1].abs() < 0.05 && n[0][2].abs() < 0.05, "{:?}", n[0]);
}

#[test]
fn fitted_sphere_is_eikonal_on_a_held_out_shell() {
    let net = sphere_net();
    let shell = shell_points(2000, 0.8, 1.2, 99);
    let g = net.gradient(&shell).unwrap();
    let mean = g.iter().map(|v| (norm3(*v) - 1.0).abs()).sum::<f64>() / g.len() as f64;
    assert!(mean < 0.05, "mean |‖∇F‖ − 1| = {mean}");
}

#[test]
fn regularization_pulls_points_to_the_surface() {
    let net = sphere_net();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start: Vec<Vec3<f64>> = shell_points(300, 0.0, 1.0, 8)
        .into_iter()
        .map(|p| {
            let d = p.map(|x| x / norm3(p).max(1e-9));
            let r = if rng.gen_bool(0.5) { 1.15 } else { 0.85 } + rng.gen_range(-0.05..0.05);
            d.map(|x| x * r)
        })
        .collect();
    let mean_abs = |pts: &[Vec3<f64>]| net.eval(pts).unwrap().iter().map(|v| v.abs()).sum::<f64>() / pts.len() as f64;
    let before = mean_abs(&start);

    let mut store = ParamStore::new();
    store.insert("points", Tensor::from_vec3s(&start));
    let mut adam = Adam::default();
    let mut orng = ChaCha8Rng::seed_from_u64(9);
    let steps = 500;
    for step in 0..steps {
        let pts = store.get("points").unwrap().tensor().to_vec3s();
        let omega = handsplat::geometry::sample_omega(&pts, 0.01, &mut orng);
        let mut tape = Tape::new();
        let vars = net.bind_frozen(&mut tape).unwrap();
        let p = store.bind(&mut tape, "points").unwrap();
        let terms = regularization_terms(&mut tape, net, &vars, p, &omega).unwrap();
        let loss = regularization_loss(&mut tape, &terms, 1.0, 0.1).unwrap();
        tape.backward(loss).unwrap();
        store.pull_grads(&tape);
        let lr = 0.01 * (1.0 - step as f64 / steps as f64).max(0.01);
        adam.step(&mut store, lr).unwrap();
    }
    let after = mean_abs(&store.get("points").unwrap().tensor().to_vec3s());
    assert!(after * 10.0 <= before, "mean |F| {before} → {after}");
}
