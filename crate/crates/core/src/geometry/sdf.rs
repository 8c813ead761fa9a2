use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::linalg::Vec3;
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SdfConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Softplus sharpness; `softplus(β z) / β` approaches ReLU as β grows.
    pub beta: f64,
    /// Radius (in normalized input units) of the sphere the initialization approximates.
    pub init_radius: f64,
    pub seed: u64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self { hidden_layers: 4, width: 128, beta: 100.0, init_radius: 0.5, seed: 0x5DF }
    }
}

/// MLP signed distance `F(p) = s · f((p − c) / s)`, so the network sees
/// inputs of unit scale while distances stay in world units.
#[derive(Clone, Debug)]
pub struct SdfNetwork<T> {
    pub params: ParamStore<T>,
    pub center: Vec3<T>,
    pub scale: T,
    pub beta: T,
    layers: usize,
}

/// Parameter nodes of an [`SdfNetwork`] bound to one tape.
#[derive(Clone, Debug)]
pub struct SdfVars {
    pub(crate) layers: Vec<(Var, Var)>,
}

/// Values and spatial gradients of the SDF on a batch.
#[derive(Clone, Copy, Debug)]
pub struct SdfOutput {
    /// `N × 1`.
    pub value: Var,
    /// `N × 3`, differentiable with respect to parameters and inputs.
    pub gradient: Var,
}

pub(crate) fn wname(l: usize) -> String {
    format!("sdf.w{l}")
}

pub(crate) fn bname(l: usize) -> String {
    format!("sdf.b{l}")
}

impl<T: Real> SdfNetwork<T> {
    /// Geometrically initialized network whose zero level set is roughly a
    /// sphere of radius `init_radius · scale` around `center`.
    pub fn new(config: &SdfConfig, center: Vec3<T>, scale: T) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let w = config.width;
        let layers = config.hidden_layers + 1;
        for l in 0..layers {
            let fan_in = if l == 0 { 3 } else { w };
            let last = l + 1 == layers;
            let fan_out = if last { 1 } else { w };
            let (mean, std, bias) = if last {
                ((std::f64::consts::PI / fan_in as f64).sqrt(), 1e-4, -config.init_radius)
            } else {
                (0.0, (2.0 / fan_out as f64).sqrt(), 0.0)
            };
            let normal = Normal::new(mean, std).expect("finite init");
            let data = (0..fan_in * fan_out).map(|_| T::lit(normal.sample(&mut rng))).collect();
            params.insert(wname(l), Tensor::from_rows(fan_in, fan_out, data));
            params.insert(bname(l), Tensor::full(&[1, fan_out], T::lit(bias)));
        }
        Self { params, center, scale, beta: T::lit(config.beta), layers }
    }

    /// Network without hidden layers: `F(p) = w · p + b`.
    pub fn affine(w: Vec3<T>, b: T) -> Self {
        let mut params = ParamStore::new();
        params.insert(wname(0), Tensor::from_rows(3, 1, w.to_vec()));
        params.insert(bname(0), Tensor::full(&[1, 1], b));
        Self { params, center: [T::zero(); 3], scale: T::one(), beta: T::lit(100.0), layers: 1 }
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for (_, p) in self.params.iter_mut() {
            p.requires_grad = on;
        }
    }

    /// Records the parameters on `tape` as learnable leaves.
    pub fn bind(&mut self, tape: &mut Tape<T>) -> Result<SdfVars> {
        let layers = (0..self.layers)
            .map(|l| Ok((self.params.bind(tape, &wname(l))?, self.params.bind(tape, &bname(l))?)))
            .collect::<Result<_>>()?;
        Ok(SdfVars { layers })
    }

    /// Records the parameters as constants.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Result<SdfVars> {
        let layers = (0..self.layers)
            .map(|l| {
                let w = tape.constant(self.params.get(&wname(l))?.tensor())?;
                let b = tape.constant(self.params.get(&bname(l))?.tensor())?;
                Ok((w, b))
            })
            .collect::<Result<_>>()?;
        Ok(SdfVars { layers })
    }

    /// Values and spatial gradients of `F` at the rows of `points` (`N × 3`).
    ///
    /// The gradient is assembled explicitly as a reverse chain on the tape,
    /// `g_l = (g_{l+1} ⊙ σ(β z_l)) W_lᵀ`, so losses on it (the eikonal term)
    /// differentiate with ordinary reverse mode.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &SdfVars, points: Var) -> Result<SdfOutput> {
        let shape = tape.value(points).shape().to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::InvalidShape { op: "sdf", shape, reason: "points must be N×3".into() });
        }
        let n = shape[0];
        let c = tape.constant(Tensor::from_rows(1, 3, self.center.to_vec()))?;
        let centered = tape.sub(points, c)?;
        let mut h = tape.scalar_mul(centered, T::one() / self.scale)?;
        let mut pre = Vec::with_capacity(self.layers);
        for &(w, b) in &vars.layers[..self.layers - 1] {
            let m = tape.matmul(h, w)?;
            let z = tape.add(m, b)?;
            let bz = tape.scalar_mul(z, self.beta)?;
            pre.push(bz);
            let sp = tape.softplus(bz)?;
            h = tape.scalar_mul(sp, T::one() / self.beta)?;
        }
        let (wl, bl) = vars.layers[self.layers - 1];
        let m = tape.matmul(h, wl)?;
        let out = tape.add(m, bl)?;
        let value = tape.scalar_mul(out, self.scale)?;

        // The input scaling and output scaling cancel in the gradient.
        let ones = tape.constant(Tensor::full(&[n, 1], T::one()))?;
        let wt = tape.transpose(wl)?;
        let mut g = tape.matmul(ones, wt)?;
        for (l, &bz) in pre.iter().enumerate().rev() {
            let s = tape.sigmoid(bz)?;
            let gs = tape.mul(g, s)?;
            let wt = tape.transpose(vars.layers[l].0)?;
            g = tape.matmul(gs, wt)?;
        }
        Ok(SdfOutput { value, gradient: g })
    }

    /// `F` at each point, without gradients.
    pub fn eval(&self, points: &[Vec3<T>]) -> Result<Vec<T>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape)?;
        let p = tape.constant(Tensor::from_vec3s(points))?;
        let out = self.forward(&mut tape, &vars, p)?;
        Ok(tape.value(out.value).data().to_vec())
    }

    /// `∇F` at each point by reverse-mode differentiation of `Σ F(p_i)`.
    pub fn gradient(&self, points: &[Vec3<T>]) -> Result<Vec<Vec3<T>>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape)?;
        let p = tape.leaf(Tensor::from_vec3s(points), true)?;
        let out = self.forward(&mut tape, &vars, p)?;
        let s = tape.sum(out.value)?;
        tape.backward(s)?;
        Ok(tape.grad(p).expect("points require grad").to_vec3s())
    }

    /// Unit canonical normals `∇F / ‖∇F‖`; points with `‖∇F‖ < 1e-8` are
    /// flagged degenerate and get a zero normal.
    pub fn normals(&self, points: &[Vec3<T>]) -> Result<(Vec<Vec3<T>>, Vec<bool>)> {
        let g = self.gradient(points)?;
        let eps = T::lit(DEGENERATE_GRADIENT);
        Ok(g.into_iter()
            .map(|v| match crate::linalg::normalize3(v, eps) {
                Some(n) => (n, false),
                None => ([T::zero(); 3], true),
            })
            .unzip())
    }
}

/// Gradient magnitude below which a normal is undefined.
pub const DEGENERATE_GRADIENT: f64 = 1e-8;

/// Normalizes the rows of an `N × 3` gradient variable. Rows shorter than
/// `1e-8` become zero and are reported as degenerate.
pub fn normalize_gradient<T: Real>(tape: &mut Tape<T>, gradient: Var) -> Result<(Var, Vec<bool>)> {
    let norms = tape.l2_norm_rows(gradient)?;
    let nv = tape.value(norms).data().to_vec();
    let eps = T::lit(DEGENERATE_GRADIENT);
    let degenerate: Vec<bool> = nv.iter().map(|&n| n < eps).collect();
    let pad: Vec<T> = degenerate.iter().map(|&d| if d { T::one() } else { T::zero() }).collect();
    let keep: Vec<T> = degenerate.iter().map(|&d| if d { T::zero() } else { T::one() }).collect();
    let n = nv.len();
    let pad = tape.constant(Tensor::from_rows(n, 1, pad))?;
    let keep = tape.constant(Tensor::from_rows(n, 1, keep))?;
    let safe = tape.add(norms, pad)?;
    let unit = tape.div(gradient, safe)?;
    Ok((tape.mul(unit, keep)?, degenerate))
}

/// Raw and per-point-mean geometry regularization terms.
#[derive(Clone, Copy, Debug)]
pub struct RegularizationTerms {
    /// `Σ_i F(p_i)²` over canonical points.
    pub sdf_sum: Var,
    /// `Σ (‖∇F‖ − 1)²` over canonical points and Ω.
    pub eikonal_sum: Var,
    pub sdf_mean: Var,
    pub eikonal_mean: Var,
    /// `∇F` at the canonical points (`N_C × 3`), reusable for normals.
    pub point_gradient: Var,
}

/// SDF and eikonal regularization. Ω enters the eikonal term only.
pub fn regularization_terms<T: Real>(
    tape: &mut Tape<T>,
    net: &SdfNetwork<T>,
    vars: &SdfVars,
    points: Var,
    omega: &[Vec3<T>],
) -> Result<RegularizationTerms> {
    if omega.is_empty() {
        return Err(Error::Empty("omega samples"));
    }
    let nc = tape.value(points).rows();
    let om = tape.constant(Tensor::from_vec3s(omega))?;
    let all = tape.concat(&[points, om], 0)?;
    let out = net.forward(tape, vars, all)?;
    let idx: Vec<usize> = (0..nc).collect();
    let f = tape.gather_rows(out.value, &idx)?;
    let f2 = tape.mul(f, f)?;
    let sdf_sum = tape.sum(f2)?;
    let norms = tape.l2_norm_rows(out.gradient)?;
    let one = tape.constant(Tensor::scalar(T::one()))?;
    let d = tape.sub(norms, one)?;
    let d2 = tape.mul(d, d)?;
    let eikonal_sum = tape.sum(d2)?;
    let sdf_mean = tape.scalar_mul(sdf_sum, T::one() / T::lit(nc.max(1) as f64))?;
    let eikonal_mean = tape.scalar_mul(eikonal_sum, T::one() / T::lit((nc + omega.len()) as f64))?;
    let point_gradient = tape.gather_rows(out.gradient, &idx)?;
    Ok(RegularizationTerms { sdf_sum, eikonal_sum, sdf_mean, eikonal_mean, point_gradient })
}

/// `λ_sdf · mean F² + λ_eik · mean (‖∇F‖ − 1)²`.
pub fn regularization_loss<T: Real>(tape: &mut Tape<T>, terms: &RegularizationTerms, lambda_sdf: T, lambda_eik: T) -> Result<Var> {
    let a = tape.scalar_mul(terms.sdf_mean, lambda_sdf)?;
    let b = tape.scalar_mul(terms.eikonal_mean, lambda_eik)?;
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check_multi;

    fn small() -> SdfNetwork<f64> {
        let cfg = SdfConfig { hidden_layers: 2, width: 8, beta: 10.0, ..Default::default() };
        SdfNetwork::new(&cfg, [0.1, 0.0, -0.1], 0.5)
    }

    fn pts() -> Vec<Vec3<f64>> {
        (0..7).map(|i| [0.1 * i as f64 - 0.3, 0.05 * (i * i) as f64 - 0.2, 0.2 - 0.07 * i as f64]).collect()
    }

    #[test]
    fn untrained_net_is_finite() {
        let net = SdfNetwork::<f64>::new(&SdfConfig::default(), [0.0; 3], 0.1);
        assert!(net.eval(&pts()).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn initialization_approximates_a_sphere() {
        let net = SdfNetwork::<f64>::new(&SdfConfig::default(), [0.0; 3], 1.0);
        let v = net.eval(&[[0.0, 0.0, 0.0], [1.5, 0.0, 0.0]]).unwrap();
        assert!(v[0] < 0.0 && v[1] > 0.0, "{v:?}");
    }

    #[test]
    fn plane_has_constant_gradient() {
        let net = SdfNetwork::affine([0.0, 0.0, 1.0], 0.0);
        for g in net.gradient(&pts()).unwrap() {
            assert_eq!(g, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn explicit_chain_matches_reverse_mode() {
        let net = small();
        let p = pts();
        let mut tape = Tape::new();
        let vars = net.bind_frozen(&mut tape).unwrap();
        let x = tape.constant(Tensor::from_vec3s(&p)).unwrap();
        let out = net.forward(&mut tape, &vars, x).unwrap();
        let chain = tape.value(out.gradient).to_vec3s();
        let rev = net.gradient(&p).unwrap();
        for (a, b) in chain.iter().zip(&rev) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = small();
        let p = pts();
        let h = 1e-5;
        let g = net.gradient(&p).unwrap();
        for (i, q) in p.iter().enumerate() {
            for k in 0..3 {
                let mut a = *q;
                let mut b = *q;
                a[k] += h;
                b[k] -= h;
                let num = (net.eval(&[a]).unwrap()[0] - net.eval(&[b]).unwrap()[0]) / (2.0 * h);
                assert!(crate::autodiff::relative_error(g[i][k], num) < 1e-4);
            }
        }
    }

    #[test]
    fn eikonal_loss_gradients_match_finite_differences() {
        // Second-order path: the loss depends on ∇F, differentiated w.r.t. weights and points.
        let net = small();
        let p = pts();
        let omega: Vec<Vec3<f64>> = p.iter().map(|q| [q[0] + 0.01, q[1] - 0.02, q[2]]).collect();
        let mut inputs = vec![Tensor::from_vec3s(&p)];
        for l in 0..net.num_layers() {
            inputs.push(net.params.get(&wname(l)).unwrap().tensor());
            inputs.push(net.params.get(&bname(l)).unwrap().tensor());
        }
        let rep = finite_difference_check_multi(
            |tape: &mut Tape<f64>, v: &[Var]| {
                let vars = SdfVars { layers: v[1..].chunks(2).map(|c| (c[0], c[1])).collect() };
                let terms = regularization_terms(tape, &net, &vars, v[0], &omega)?;
                regularization_loss(tape, &terms, 1.0, 0.1)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_error() < 1e-4, "{:?}", rep.per_input);
    }

    fn reg(net: &SdfNetwork<f64>, p: &[Vec3<f64>], omega: &[Vec3<f64>]) -> (f64, f64) {
        let mut tape = Tape::new();
        let vars = net.bind_frozen(&mut tape).unwrap();
        let x = tape.constant(Tensor::from_vec3s(p)).unwrap();
        let t = regularization_terms(&mut tape, net, &vars, x, omega).unwrap();
        (tape.value(t.sdf_sum).item(), tape.value(t.eikonal_sum).item())
    }

    #[test]
    fn plane_sdf_on_its_zero_set_has_zero_loss() {
        let p: Vec<Vec3<f64>> = (0..5).map(|i| [i as f64, -(i as f64), 0.0]).collect();
        let omega: Vec<Vec3<f64>> = (0..5).map(|i| [0.0, 1.0, 0.1 * i as f64]).collect();
        assert_eq!(reg(&SdfNetwork::affine([0.0, 0.0, 1.0], 0.0), &p, &omega), (0.0, 0.0));
        let (s, e) = reg(&SdfNetwork::affine([0.0, 0.0, 2.0], 0.0), &p, &omega);
        assert_eq!(s, 0.0);
        assert!((e - 10.0).abs() < 1e-12);
    }

    #[test]
    fn constant_sdf_counts_every_sample() {
        let p = pts();
        let omega = vec![[0.0; 3]; 4];
        let (s, e) = reg(&SdfNetwork::affine([0.0; 3], 1.0), &p, &omega);
        assert!((s - 7.0).abs() < 1e-12);
        assert!((e - 11.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gradients_are_flagged() {
        let net = SdfNetwork::affine([0.0; 3], 1.0);
        let (n, d) = net.normals(&pts()).unwrap();
        assert!(d.iter().all(|&x| x));
        assert!(n.iter().all(|v| *v == [0.0; 3]));
        let mut tape = Tape::new();
        let g = tape.leaf(Tensor::from_rows(2, 3, vec![0.0, 0.0, 0.0, 0.0, 3.0, 4.0]), true).unwrap();
        let (u, deg) = normalize_gradient(&mut tape, g).unwrap();
        assert_eq!(deg, vec![true, false]);
        assert_eq!(tape.value(u).data(), &[0.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
    }
}
