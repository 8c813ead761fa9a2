use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::linalg::Vec3;
use crate::{Error, Real, Result};

/// Weights of the loss terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_rgb: f64,
    pub lambda_vgg: f64,
    pub lambda_mask: f64,
    pub lambda_reg: f64,
    pub lambda_sdf: f64,
    pub lambda_eik: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_rgb: 1.0, lambda_vgg: 0.1, lambda_mask: 1.0, lambda_reg: 1.0, lambda_sdf: 1.0, lambda_eik: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_rgb, self.lambda_vgg, self.lambda_mask, self.lambda_reg, self.lambda_sdf, self.lambda_eik];
        if all.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Values of the individual loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub rgb: f64,
    pub vgg: f64,
    pub mask: f64,
    pub reg: f64,
}

impl LossParts {
    /// `λ_rgb·L_rgb + λ_vgg·L_vgg + λ_mask·L_mask + λ_reg·L_reg`.
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda_rgb * self.rgb + w.lambda_vgg * self.vgg + w.lambda_mask * self.mask + w.lambda_reg * self.reg
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [("rgb", self.rgb), ("vgg", self.vgg), ("mask", self.mask), ("reg", self.reg)].into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

fn check_pixels(op: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch { op, lhs: vec![got], rhs: vec![expected] });
    }
    Ok(())
}

/// Mean absolute color error over foreground pixels of `mask`.
/// An empty mask yields 0 (with a warning).
pub fn rgb_loss<T: Real>(tape: &mut Tape<T>, rgb: Var, target: &[Vec3<T>], mask: &[bool]) -> Result<Var> {
    check_pixels("rgb_loss", tape.value(rgb).rows(), target.len())?;
    check_pixels("rgb_loss", mask.len(), target.len())?;
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        log::warn!("rgb loss on an empty mask; returning 0");
        return tape.constant(Tensor::scalar(T::zero()));
    }
    let t = tape.constant(Tensor::from_vec3s(target))?;
    let d = tape.sub(rgb, t)?;
    let a = tape.abs(d)?;
    let w = T::one() / T::lit(3.0 * count as f64);
    let weights = tape.constant(Tensor::from_rows(mask.len(), 1, mask.iter().map(|&m| if m { w } else { T::zero() }).collect()))?;
    let m = tape.mul(a, weights)?;
    tape.sum(m)
}

/// Mean absolute silhouette error over all pixels.
pub fn mask_loss<T: Real>(tape: &mut Tape<T>, alpha: Var, mask: &[bool]) -> Result<Var> {
    check_pixels("mask_loss", tape.value(alpha).len(), mask.len())?;
    let t = tape.constant(Tensor::from_rows(mask.len(), 1, mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect()))?;
    let d = tape.sub(alpha, t)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// [`rgb_loss`] on plain arrays.
pub fn rgb_loss_value<T: Real>(rgb: &[Vec3<T>], target: &[Vec3<T>], mask: &[bool]) -> Result<T> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::from_vec3s(rgb))?;
    let l = rgb_loss(&mut tape, v, target, mask)?;
    Ok(tape.value(l).item())
}

/// [`mask_loss`] on plain arrays.
pub fn mask_loss_value<T: Real>(alpha: &[T], mask: &[bool]) -> Result<T> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::from_rows(alpha.len(), 1, alpha.to_vec()))?;
    let l = mask_loss(&mut tape, v, mask)?;
    Ok(tape.value(l).item())
}

/// `3×3`, stride-2, zero-padded convolution followed by ReLU.
#[derive(Clone, Debug)]
struct ConvStage<T> {
    cin: usize,
    cout: usize,
    /// `[cout][cin][3][3]`.
    weights: Vec<T>,
}

/// Channel-last feature map.
#[derive(Clone, Debug)]
struct Feature<T> {
    w: usize,
    h: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Real> ConvStage<T> {
    fn out_size(n: usize) -> usize {
        n.div_ceil(2)
    }

    /// Pre-activation output.
    fn forward(&self, x: &Feature<T>) -> Feature<T> {
        let (wo, ho) = (Self::out_size(x.w), Self::out_size(x.h));
        let mut out = vec![T::zero(); wo * ho * self.cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let o = &mut out[(oy * wo + ox) * self.cout..(oy * wo + ox + 1) * self.cout];
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let inp = &x.data[(iy as usize * x.w + ix as usize) * x.c..][..x.c];
                        for (co, ov) in o.iter_mut().enumerate() {
                            let wrow = &self.weights[co * self.cin * 9..];
                            for (ci, &v) in inp.iter().enumerate() {
                                *ov += wrow[ci * 9 + ky * 3 + kx] * v;
                            }
                        }
                    }
                }
            }
        }
        Feature { w: wo, h: ho, c: self.cout, data: out }
    }

    /// Gradient with respect to the input given the gradient of the pre-activation output.
    fn backward(&self, x: &Feature<T>, g: &Feature<T>) -> Feature<T> {
        let mut gx = vec![T::zero(); x.data.len()];
        for oy in 0..g.h {
            for ox in 0..g.w {
                let go = &g.data[(oy * g.w + ox) * self.cout..][..self.cout];
                if go.iter().all(|v| v.is_zero()) {
                    continue;
                }
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let gi = &mut gx[(iy as usize * x.w + ix as usize) * x.c..][..x.c];
                        for (co, &gv) in go.iter().enumerate() {
                            let wrow = &self.weights[co * self.cin * 9..];
                            for (ci, giv) in gi.iter_mut().enumerate() {
                                *giv += wrow[ci * 9 + ky * 3 + kx] * gv;
                            }
                        }
                    }
                }
            }
        }
        Feature { w: x.w, h: x.h, c: x.c, data: gx }
    }
}

fn relu<T: Real>(f: &Feature<T>) -> Feature<T> {
    Feature { data: f.data.iter().map(|&v| v.max(T::zero())).collect(), ..f.clone() }
}

/// Frozen random convolutional pyramid standing in for a pretrained
/// perceptual network: three stride-2 stages with 8, 16 and 32 channels.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T> {
    stages: Vec<ConvStage<T>>,
}

/// Extractor seed.
pub const PERCEPTUAL_SEED: u64 = 0x5EED;

impl<T: Real> Default for PerceptualExtractor<T> {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

impl<T: Real> PerceptualExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut cin = 3;
        for cout in [8, 16, 32] {
            let normal = Normal::new(0.0, (2.0 / (9.0 * cin as f64)).sqrt()).expect("positive std");
            let weights = (0..cout * cin * 9).map(|_| T::lit(normal.sample(&mut rng))).collect();
            stages.push(ConvStage { cin, cout, weights });
            cin = cout;
        }
        Self { stages }
    }

    /// Pre-activations and post-ReLU features of every stage.
    fn features(&self, rgb: &[Vec3<T>], width: usize, height: usize) -> (Vec<Feature<T>>, Vec<Feature<T>>) {
        let mut x = Feature { w: width, h: height, c: 3, data: rgb.iter().flatten().copied().collect() };
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for s in &self.stages {
            let z = s.forward(&x);
            x = relu(&z);
            pre.push(z);
            post.push(x.clone());
        }
        (pre, post)
    }

    /// `Σ_stages mean |F_s(a) − F_s(b)|`.
    pub fn loss(&self, a: &[Vec3<T>], b: &[Vec3<T>], width: usize, height: usize) -> Result<T> {
        check_pixels("perceptual_loss", a.len(), width * height)?;
        check_pixels("perceptual_loss", b.len(), width * height)?;
        let (_, fa) = self.features(a, width, height);
        let (_, fb) = self.features(b, width, height);
        Ok(fa.iter().zip(&fb).map(|(x, y)| mean_abs_diff(&x.data, &y.data)).fold(T::zero(), |s, v| s + v))
    }
}

fn mean_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(T::zero(), |s, v| s + v) / T::lit(a.len().max(1) as f64)
}

struct PerceptualOp<T> {
    extractor: PerceptualExtractor<T>,
    input: Feature<T>,
    pre: Vec<Feature<T>>,
    post: Vec<Feature<T>>,
    target: Vec<Feature<T>>,
}

impl<T: Real> CustomOp<T> for PerceptualOp<T> {
    fn name(&self) -> &str {
        "perceptual_loss"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let scale = g.item();
        let n = self.stages();
        let mut carry: Option<Feature<T>> = None;
        for s in (0..n).rev() {
            let post = &self.post[s];
            let inv = scale / T::lit(post.data.len() as f64);
            let mut gpost: Vec<T> = post
                .data
                .iter()
                .zip(&self.target[s].data)
                .map(|(&x, &y)| {
                    let d = x - y;
                    if d > T::zero() {
                        inv
                    } else if d < T::zero() {
                        -inv
                    } else {
                        T::zero()
                    }
                })
                .collect();
            if let Some(c) = carry.take() {
                gpost.iter_mut().zip(&c.data).for_each(|(a, &b)| *a += b);
            }
            let gpre: Vec<T> = gpost.iter().zip(&self.pre[s].data).map(|(&gv, &z)| if z > T::zero() { gv } else { T::zero() }).collect();
            let gpre = Feature { data: gpre, ..self.pre[s].clone() };
            let input = if s == 0 { &self.input } else { &self.post[s - 1] };
            carry = Some(self.extractor.stages[s].backward(input, &gpre));
        }
        let gin = carry.expect("at least one stage");
        Ok(vec![Some(Tensor::from_rows(gin.w * gin.h, 3, gin.data))])
    }
}

impl<T: Real> PerceptualOp<T> {
    fn stages(&self) -> usize {
        self.extractor.stages.len()
    }
}

/// Differentiable perceptual loss of an `H·W × 3` image against a fixed target.
pub fn perceptual_loss<T: Real>(
    tape: &mut Tape<T>,
    extractor: &PerceptualExtractor<T>,
    rgb: Var,
    target: &[Vec3<T>],
    width: usize,
    height: usize,
) -> Result<Var> {
    let v = tape.value(rgb);
    check_pixels("perceptual_loss", v.rows(), width * height)?;
    check_pixels("perceptual_loss", target.len(), width * height)?;
    let a = v.to_vec3s();
    let (pre, post) = extractor.features(&a, width, height);
    let (_, tf) = extractor.features(target, width, height);
    let value = post.iter().zip(&tf).map(|(x, y)| mean_abs_diff(&x.data, &y.data)).fold(T::zero(), |s, v| s + v);
    let input = Feature { w: width, h: height, c: 3, data: a.iter().flatten().copied().collect() };
    let op = PerceptualOp { extractor: extractor.clone(), input, pre, post, target: tf };
    tape.custom(&[rgb], Tensor::scalar(value), Box::new(op))
}
