use crate::linalg::Vec3;
use crate::{Error, Real, Result};

/// PSNR returned when the MSE falls below `1e-10`.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub iou: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op: "metrics", lhs: vec![a], rhs: vec![b] });
    }
    Ok(())
}

/// `10 log₁₀(1 / MSE)` for images in `[0, 1]`.
pub fn psnr<T: Real>(a: &[Vec3<T>], b: &[Vec3<T>]) -> Result<f64> {
    check(a.len(), b.len())?;
    let n = (a.len() * 3).max(1) as f64;
    let mse: f64 = a.iter().zip(b).flat_map(|(x, y)| (0..3).map(move |k| (x[k].as_f64() - y[k].as_f64()).powi(2))).sum::<f64>() / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_kernel() -> [f64; 11] {
    let mut k = [0.0; 11];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = (-x * x / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of a `w×h` plane.
fn filter(x: &[f64], w: usize, h: usize, k: &[f64; 11]) -> (Vec<f64>, usize, usize) {
    let (wo, ho) = (w - 10, h - 10);
    let mut tmp = vec![0.0; wo * h];
    for y in 0..h {
        for xo in 0..wo {
            tmp[y * wo + xo] = (0..11).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..11).map(|i| k[i] * tmp[(yo + i) * wo + xo]).sum();
        }
    }
    (out, wo, ho)
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    if w < 11 || h < 11 {
        // Single global window.
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        return ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    let k = gaussian_kernel();
    let (mu_a, wo, ho) = filter(a, w, h, &k);
    let (mu_b, _, _) = filter(b, w, h, &k);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (saa, _, _) = filter(&aa, w, h, &k);
    let (sbb, _, _) = filter(&bb, w, h, &k);
    let (sab, _, _) = filter(&ab, w, h, &k);
    let mut total = 0.0;
    for i in 0..wo * ho {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = saa[i] - ma * ma;
        let vb = sbb[i] - mb * mb;
        let cov = sab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / (wo * ho) as f64
}

/// Mean SSIM over channels: 11×11 Gaussian window (σ = 1.5), `k₁ = 0.01`,
/// `k₂ = 0.03`, dynamic range 1, valid windows only.
pub fn ssim<T: Real>(a: &[Vec3<T>], b: &[Vec3<T>], width: usize, height: usize) -> Result<f64> {
    check(a.len(), b.len())?;
    check(a.len(), width * height)?;
    let mut s = 0.0;
    for ch in 0..3 {
        let pa: Vec<f64> = a.iter().map(|v| v[ch].as_f64()).collect();
        let pb: Vec<f64> = b.iter().map(|v| v[ch].as_f64()).collect();
        s += ssim_plane(&pa, &pb, width, height);
    }
    Ok(s / 3.0)
}

/// `|A ∩ B| / |A ∪ B|` with the rendered silhouette thresholded at 0.5.
/// Two empty masks give 1.
pub fn iou<T: Real>(alpha: &[T], mask: &[bool]) -> Result<f64> {
    check(alpha.len(), mask.len())?;
    let half = T::lit(0.5);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &m) in alpha.iter().zip(mask) {
        let p = a > half;
        inter += usize::from(p && m);
        union += usize::from(p || m);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn metrics<T: Real>(rgb: &[Vec3<T>], target: &[Vec3<T>], alpha: &[T], mask: &[bool], width: usize, height: usize) -> Result<Metrics> {
    Ok(Metrics { iou: iou(alpha, mask)?, psnr: psnr(rgb, target)?, ssim: ssim(rgb, target, width, height)? })
}
