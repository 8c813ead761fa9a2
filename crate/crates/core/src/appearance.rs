//! Context-attention appearance: pose-independent albedo from canonical
//! coordinates and pose-aware shading from normal-deformation features,
//! composed by an element-wise product.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::linalg::Vec3;
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub hidden: usize,
    pub d_cross: usize,
    pub seed: u64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { hidden: 128, d_cross: 64, seed: 0xA77E }
    }
}

/// Output nonlinearity of a [`ContextAttention`] head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// `sigmoid`, range `(0, 1)`.
    Albedo,
    /// `softplus(x) / ln 2`, range `(0, ∞)`, equal to 1 at `x = 0`.
    Shading,
}

/// Embedding MLP shared by queries and keys, `W_q`, `W_k`, `W_v`, row-wise
/// softmax attention over keys and an output MLP.
#[derive(Clone, Debug)]
pub struct ContextAttention<T> {
    pub prefix: String,
    pub params: ParamStore<T>,
    pub head: Head,
    pub out_dim: usize,
    pub d_cross: usize,
    /// Inputs are mapped to `(x − center) / scale` before embedding.
    pub input_center: Vec3<T>,
    pub input_scale: T,
}

/// Parameter nodes of a [`ContextAttention`] on one tape.
#[derive(Clone, Debug)]
pub struct AttentionVars {
    embed: [(Var, Var); 2],
    wq: Var,
    wk: Var,
    wv: Var,
    out: [(Var, Var); 2],
}

pub(crate) const PARAM_NAMES: [&str; 11] = ["embed.w0", "embed.b0", "embed.w1", "embed.b1", "wq", "wk", "wv", "out.w0", "out.b0", "out.w1", "out.b1"];

impl<T: Real> ContextAttention<T> {
    pub fn new(prefix: &str, head: Head, config: &AttentionConfig, input_center: Vec3<T>, input_scale: T) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ prefix.bytes().fold(0u64, |h, b| h.wrapping_mul(31) + b as u64));
        let (h, d) = (config.hidden, config.d_cross);
        let out_dim = match head {
            Head::Albedo => 3,
            Head::Shading => 1,
        };
        let mut params = ParamStore::new();
        let mut dense = |name: &str, rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng| {
            let n = Normal::new(0.0, std).expect("finite std");
            let data = (0..rows * cols).map(|_| T::lit(n.sample(rng))).collect();
            params.insert(format!("{prefix}.{name}"), Tensor::from_rows(rows, cols, data));
        };
        dense("embed.w0", 3, h, (2.0 / 3.0f64).sqrt(), &mut rng);
        dense("embed.w1", h, h, (2.0 / h as f64).sqrt(), &mut rng);
        dense("wq", h, d, (1.0 / h as f64).sqrt(), &mut rng);
        dense("wk", h, d, (1.0 / h as f64).sqrt(), &mut rng);
        dense("wv", h, d, (1.0 / h as f64).sqrt(), &mut rng);
        dense("out.w0", d, h, (2.0 / d as f64).sqrt(), &mut rng);
        // Shading starts near 1 so the composed color starts at the albedo.
        let last_std = match head {
            Head::Albedo => (1.0 / h as f64).sqrt(),
            Head::Shading => 1e-3,
        };
        dense("out.w1", h, out_dim, last_std, &mut rng);
        for (name, n) in [("embed.b0", h), ("embed.b1", h), ("out.b0", h), ("out.b1", out_dim)] {
            params.insert(format!("{prefix}.{name}"), Tensor::zeros(&[1, n]));
        }
        Self { prefix: prefix.to_string(), params, head, out_dim, d_cross: d, input_center, input_scale }
    }

    fn key(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    pub(crate) fn assemble(v: &[Var]) -> AttentionVars {
        AttentionVars { embed: [(v[0], v[1]), (v[2], v[3])], wq: v[4], wk: v[5], wv: v[6], out: [(v[7], v[8]), (v[9], v[10])] }
    }

    pub fn bind(&mut self, tape: &mut Tape<T>) -> Result<AttentionVars> {
        let vars = PARAM_NAMES.iter().map(|n| self.params.bind(tape, &self.key(n))).collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(&vars))
    }

    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Result<AttentionVars> {
        let vars = PARAM_NAMES
            .iter()
            .map(|n| tape.constant(self.params.get(&self.key(n))?.tensor()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(&vars))
    }

    fn embed(&self, tape: &mut Tape<T>, vars: &AttentionVars, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::InvalidShape { op: "attention input", shape, reason: "expected N×3".into() });
        }
        let c = tape.constant(Tensor::from_rows(1, 3, self.input_center.to_vec()))?;
        let x = tape.sub(x, c)?;
        let x = tape.scalar_mul(x, T::one() / self.input_scale)?;
        let h = linear(tape, x, vars.embed[0])?;
        let h = tape.relu(h)?;
        linear(tape, h, vars.embed[1])
    }

    fn attend(&self, tape: &mut Tape<T>, vars: &AttentionVars, queries: Var, keys: Var) -> Result<(Var, Var)> {
        if tape.value(keys).rows() == 0 {
            return Err(Error::Empty("attention keys"));
        }
        let eq = self.embed(tape, vars, queries)?;
        let ek = self.embed(tape, vars, keys)?;
        let q = tape.matmul(eq, vars.wq)?;
        let k = tape.matmul(ek, vars.wk)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let scaled = tape.scalar_mul(logits, T::one() / T::lit(self.d_cross as f64).sqrt())?;
        Ok((tape.softmax_rows(scaled)?, ek))
    }

    /// Row-stochastic attention `softmax(Q Kᵀ / √d)`, `N_q × N_k`.
    pub fn attention_weights(&self, tape: &mut Tape<T>, vars: &AttentionVars, queries: Var, keys: Var) -> Result<Var> {
        Ok(self.attend(tape, vars, queries, keys)?.0)
    }

    /// Attended features `S V`, `N_q × d_cross`, with `V = F(keys) W_v`.
    pub fn cross_attention(&self, tape: &mut Tape<T>, vars: &AttentionVars, queries: Var, keys: Var) -> Result<Var> {
        let (s, ek) = self.attend(tape, vars, queries, keys)?;
        let v = tape.matmul(ek, vars.wv)?;
        tape.matmul(s, v)
    }

    /// Full module: attention, output MLP and the head nonlinearity.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &AttentionVars, queries: Var, keys: Var) -> Result<Var> {
        let f = self.cross_attention(tape, vars, queries, keys)?;
        let h = linear(tape, f, vars.out[0])?;
        let h = tape.relu(h)?;
        let o = linear(tape, h, vars.out[1])?;
        match self.head {
            Head::Albedo => tape.sigmoid(o),
            Head::Shading => {
                let s = tape.softplus(o)?;
                tape.scalar_mul(s, T::one() / T::LN_2())
            }
        }
    }

    /// Forward pass on plain arrays.
    pub fn evaluate(&self, queries: &[Vec3<T>], keys: &[Vec3<T>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape)?;
        let q = tape.constant(Tensor::from_vec3s(queries))?;
        let k = tape.constant(Tensor::from_vec3s(keys))?;
        let out = self.forward(&mut tape, &vars, q, k)?;
        Ok(tape.value(out).clone())
    }
}

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let m = tape.matmul(x, w)?;
    tape.add(m, b)
}

/// Albedo (`albedo.*`) and shading (`shading.*`) modules.
#[derive(Clone, Debug)]
pub struct Appearance<T> {
    pub albedo: ContextAttention<T>,
    pub shading: ContextAttention<T>,
}

impl<T: Real> Appearance<T> {
    /// Albedo inputs are normalized by the template's bounding sphere;
    /// normal-deformation features are already unit scale.
    pub fn new(config: &AttentionConfig, coord_center: Vec3<T>, coord_scale: T) -> Self {
        Self {
            albedo: ContextAttention::new("albedo", Head::Albedo, config, coord_center, coord_scale),
            shading: ContextAttention::new("shading", Head::Shading, config, [T::zero(); 3], T::one()),
        }
    }

    /// Pose-independent albedo `N_C × 3` from canonical and template coordinates.
    pub fn albedo(&self, canonical: &[Vec3<T>], template: &[Vec3<T>]) -> Result<Vec<Vec3<T>>> {
        Ok(self.albedo.evaluate(canonical, template)?.to_vec3s())
    }

    /// Shading `N_C` from deformed-normal features of points and template.
    pub fn shading(&self, d_c: &[Vec3<T>], d_m: &[Vec3<T>]) -> Result<Vec<T>> {
        Ok(self.shading.evaluate(d_c, d_m)?.into_data())
    }
}

/// `albedo ⊙ shading`, shading broadcast over channels.
pub fn compose_color<T: Real>(tape: &mut Tape<T>, albedo: Var, shading: Var) -> Result<Var> {
    tape.mul(albedo, shading)
}

/// [`compose_color`] on plain arrays.
pub fn compose_colors<T: Real>(albedo: &[Vec3<T>], shading: &[T]) -> Result<Vec<Vec3<T>>> {
    if albedo.len() != shading.len() {
        return Err(Error::ShapeMismatch { op: "compose_color", lhs: vec![albedo.len(), 3], rhs: vec![shading.len(), 1] });
    }
    Ok(albedo.iter().zip(shading).map(|(a, &s)| a.map(|c| c * s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check_multi;
    use rand::Rng;

    fn small(head: Head) -> ContextAttention<f64> {
        let cfg = AttentionConfig { hidden: 6, d_cross: 4, seed: 1 };
        ContextAttention::new("t", head, &cfg, [0.1, -0.1, 0.0], 0.5)
    }

    fn rand_pts(n: usize, seed: u64) -> Vec<Vec3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
    }

    fn weights(m: &ContextAttention<f64>, q: &[Vec3<f64>], k: &[Vec3<f64>]) -> Tensor<f64> {
        let mut tape = Tape::new();
        let vars = m.bind_frozen(&mut tape).unwrap();
        let qv = tape.constant(Tensor::from_vec3s(q)).unwrap();
        let kv = tape.constant(Tensor::from_vec3s(k)).unwrap();
        let s = m.attention_weights(&mut tape, &vars, qv, kv).unwrap();
        tape.value(s).clone()
    }

    #[test]
    fn single_key_gets_all_attention() {
        let m = small(Head::Albedo);
        let q = rand_pts(5, 1);
        let k = rand_pts(1, 2);
        assert!(weights(&m, &q, &k).data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn duplicate_keys_get_identical_columns() {
        let m = small(Head::Albedo);
        let mut k = rand_pts(3, 3);
        k.push(k[1]);
        let s = weights(&m, &rand_pts(4, 4), &k);
        for r in 0..4 {
            assert_eq!(s.at(r, 1), s.at(r, 3));
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_dense_reimplementation() {
        let m = small(Head::Albedo);
        let q = rand_pts(4, 5);
        let k = rand_pts(6, 6);
        let mut tape = Tape::new();
        let vars = m.bind_frozen(&mut tape).unwrap();
        let qv = tape.constant(Tensor::from_vec3s(&q)).unwrap();
        let kv = tape.constant(Tensor::from_vec3s(&k)).unwrap();
        let f = m.cross_attention(&mut tape, &vars, qv, kv).unwrap();
        let got = tape.value(f).clone();

        let p = |n: &str| m.params.get(&format!("t.{n}")).unwrap().tensor();
        let embed = |x: Vec3<f64>| -> Vec<f64> {
            let x: Vec<f64> = (0..3).map(|i| (x[i] - m.input_center[i]) / m.input_scale).collect();
            let dense = |x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>, relu: bool| -> Vec<f64> {
                (0..w.cols())
                    .map(|j| {
                        let s: f64 = (0..w.rows()).map(|i| x[i] * w.at(i, j)).sum::<f64>() + b.data()[j];
                        if relu { s.max(0.0) } else { s }
                    })
                    .collect()
            };
            let h = dense(&x, &p("embed.w0"), &p("embed.b0"), true);
            dense(&h, &p("embed.w1"), &p("embed.b1"), false)
        };
        let proj = |e: &[f64], w: &Tensor<f64>| -> Vec<f64> {
            (0..w.cols()).map(|j| (0..w.rows()).map(|i| e[i] * w.at(i, j)).sum()).collect()
        };
        let keys: Vec<(Vec<f64>, Vec<f64>)> = k.iter().map(|&x| {
            let e = embed(x);
            (proj(&e, &p("wk")), proj(&e, &p("wv")))
        }).collect();
        for (r, &x) in q.iter().enumerate() {
            let qq = proj(&embed(x), &p("wq"));
            let logits: Vec<f64> = keys.iter().map(|(kk, _)| qq.iter().zip(kk).map(|(a, b)| a * b).sum::<f64>() / 2.0).collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..4 {
                let want: f64 = keys.iter().zip(&e).map(|((_, v), w)| v[c] * w / z).sum();
                assert!((got.at(r, c) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn albedo_is_in_unit_interval_and_pure() {
        let app = Appearance::<f64>::new(&AttentionConfig::default(), [0.0; 3], 0.1);
        let q = rand_pts(20, 7).into_iter().map(|p| p.map(|x| x * 0.1)).collect::<Vec<_>>();
        let k = rand_pts(30, 8).into_iter().map(|p| p.map(|x| x * 0.1)).collect::<Vec<_>>();
        let a = app.albedo(&q, &k).unwrap();
        assert_eq!(a, app.albedo(&q, &k).unwrap());
        assert!(a.iter().flatten().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn initial_shading_is_near_one_and_row_wise() {
        let app = Appearance::<f64>::new(&AttentionConfig::default(), [0.0; 3], 0.1);
        let unit = |v: Vec3<f64>| { let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(); v.map(|x| x / n) };
        let dc: Vec<Vec3<f64>> = rand_pts(50, 9).into_iter().map(unit).collect();
        let dm: Vec<Vec3<f64>> = rand_pts(40, 10).into_iter().map(unit).collect();
        let s = app.shading(&dc, &dm).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((0.9..=1.1).contains(&mean), "{mean}");
        assert!(s.iter().all(|&x| x > 0.0));
        let mut rev = dc.clone();
        rev.reverse();
        let sr = app.shading(&rev, &dm).unwrap();
        for (i, v) in sr.iter().enumerate() {
            assert_eq!(*v, s[dc.len() - 1 - i]);
        }
    }

    #[test]
    fn compose_examples() {
        let out = compose_colors(&[[0.5, 0.2, 0.8]], &[0.5]).unwrap();
        for (a, b) in out[0].iter().zip([0.25f64, 0.1, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(compose_colors(&[[0.5, 0.2, 0.8]], &[1.0]).unwrap()[0], [0.5, 0.2, 0.8]);
        assert_eq!(compose_colors(&[[0.5, 0.2, 0.8]], &[0.0]).unwrap()[0], [0.0; 3]);
    }

    #[test]
    fn end_to_end_gradients() {
        for head in [Head::Albedo, Head::Shading] {
            let m = small(head);
            let q = Tensor::from_vec3s(&rand_pts(5, 11));
            let k = Tensor::from_vec3s(&rand_pts(4, 12));
            let mut inputs = vec![q, k];
            for n in PARAM_NAMES {
                inputs.push(m.params.get(&format!("t.{n}")).unwrap().tensor());
            }
            let wts = Tensor::from_rows(5, m.out_dim, (0..5 * m.out_dim).map(|i| (i as f64 * 0.37).sin()).collect());
            let rep = finite_difference_check_multi(
                |tape: &mut Tape<f64>, v: &[Var]| {
                    let vars = ContextAttention::<f64>::assemble(&v[2..]);
                    let o = m.forward(tape, &vars, v[0], v[1])?;
                    let w = tape.constant(wts.clone())?;
                    let p = tape.mul(o, w)?;
                    tape.sum(p)
                },
                &inputs,
                1e-6,
            )
            .unwrap();
            assert!(rep.max_error() < 1e-4, "{head:?}: {:?}", rep.per_input);
        }
    }
}
