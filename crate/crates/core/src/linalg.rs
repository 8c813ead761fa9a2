//! Small fixed-size linear algebra: 3-vectors, 3×3 matrices, rigid motions
//! and the axis-angle (Rodrigues) map with its exact derivative.

use crate::Real;

pub type Vec3<T> = [T; 3];
/// Row-major 3×3 matrix, `m[row][col]`.
pub type Mat3<T> = [[T; 3]; 3];

#[inline]
pub fn add3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3<T: Real>(a: Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

#[inline]
pub fn dist2<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    let d = sub3(a, b);
    dot3(d, d)
}

/// Unit vector along `a`, or `None` when `|a|` is below `eps`.
pub fn normalize3<T: Real>(a: Vec3<T>, eps: T) -> Option<Vec3<T>> {
    let n = norm3(a);
    if n < eps {
        None
    } else {
        Some(scale3(a, T::one() / n))
    }
}

pub fn identity3<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn zeros3<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

/// Row vector times matrix: `v · m`.
#[inline]
pub fn vec_mat<T: Real>(v: Vec3<T>, m: &Mat3<T>) -> Vec3<T> {
    let mut out = [T::zero(); 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = v[0] * m[0][c] + v[1] * m[1][c] + v[2] * m[2][c];
    }
    out
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = zeros3();
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_add<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] += b[r][c];
        }
    }
    out
}

pub fn mat_scale<T: Real>(a: &Mat3<T>, s: T) -> Mat3<T> {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = zeros3();
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

pub fn det<T: Real>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse through the adjugate; `None` when `|det| < min_det`.
pub fn inverse<T: Real>(a: &Mat3<T>, min_det: T) -> Option<Mat3<T>> {
    let d = det(a);
    if d.abs() < min_det {
        return None;
    }
    let inv_d = T::one() / d;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    Some([
        [cof(1, 2, 1, 2) * inv_d, -cof(0, 2, 1, 2) * inv_d, cof(0, 1, 1, 2) * inv_d],
        [-cof(1, 2, 0, 2) * inv_d, cof(0, 2, 0, 2) * inv_d, -cof(0, 1, 0, 2) * inv_d],
        [cof(1, 2, 0, 1) * inv_d, -cof(0, 2, 0, 1) * inv_d, cof(0, 1, 0, 1) * inv_d],
    ])
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi sweeps.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: &Mat3<T>) -> (Vec3<T>, Mat3<T>) {
    let mut m = *a;
    let mut v = identity3::<T>();
    for _ in 0..50 {
        let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        if off <= T::epsilon() * T::epsilon() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if m[p][q] == T::zero() {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (T::lit(2.0) * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let mkp = m[k][p];
                let mkq = m[k][q];
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let mpk = m[p][k];
                let mqk = m[q][k];
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    ([m[0][0], m[1][1], m[2][2]], v)
}

/// Moore–Penrose pseudo-inverse, `(AᵀA)⁺ Aᵀ`, truncating singular values
/// below `rel_tol · σ_max`.
pub fn pseudo_inverse<T: Real>(a: &Mat3<T>, rel_tol: T) -> Mat3<T> {
    let ata = mat_mul(&transpose(a), a);
    let (lambda, v) = symmetric_eigen(&ata);
    let lmax = lambda.iter().fold(T::zero(), |m, &l| m.max(l));
    let cutoff = lmax * rel_tol * rel_tol;
    let mut ata_pinv = zeros3::<T>();
    for i in 0..3 {
        if lambda[i] > cutoff && lambda[i] > T::zero() {
            let inv = T::one() / lambda[i];
            for r in 0..3 {
                for c in 0..3 {
                    ata_pinv[r][c] += inv * v[r][i] * v[c][i];
                }
            }
        }
    }
    mat_mul(&ata_pinv, &transpose(a))
}

/// Skew-symmetric cross-product matrix `[w]×`.
pub fn skew<T: Real>(w: Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    [[z, -w[2], w[1]], [w[2], z, -w[0]], [-w[1], w[0], z]]
}

/// Coefficients of `R = I + a K + b K²` and their radial derivatives divided
/// by the angle, `c = a'(θ)/θ`, `d = b'(θ)/θ`; Taylor series near zero.
fn rodrigues_coefficients<T: Real>(theta2: T) -> (T, T, T, T) {
    if theta2 < T::lit(1e-6) {
        let t2 = theta2;
        let t4 = t2 * t2;
        let a = T::one() - t2 / T::lit(6.0) + t4 / T::lit(120.0);
        let b = T::lit(0.5) - t2 / T::lit(24.0) + t4 / T::lit(720.0);
        let c = -T::one() / T::lit(3.0) + t2 / T::lit(30.0) - t4 / T::lit(840.0);
        let d = -T::one() / T::lit(12.0) + t2 / T::lit(180.0) - t4 / T::lit(6720.0);
        (a, b, c, d)
    } else {
        let theta = theta2.sqrt();
        let (s, co) = theta.sin_cos();
        let a = s / theta;
        let b = (T::one() - co) / theta2;
        let c = (theta * co - s) / (theta2 * theta);
        let d = (theta * s - T::lit(2.0) * (T::one() - co)) / (theta2 * theta2);
        (a, b, c, d)
    }
}

/// Rotation matrix of an axis-angle vector.
pub fn rodrigues<T: Real>(w: Vec3<T>) -> Mat3<T> {
    let (a, b, _, _) = rodrigues_coefficients(dot3(w, w));
    let k = skew(w);
    let k2 = mat_mul(&k, &k);
    mat_add(&identity3(), &mat_add(&mat_scale(&k, a), &mat_scale(&k2, b)))
}

/// Rotation matrix and its three partial derivatives `∂R/∂w_k`.
pub fn rodrigues_with_jacobian<T: Real>(w: Vec3<T>) -> (Mat3<T>, [Mat3<T>; 3]) {
    let (a, b, c, d) = rodrigues_coefficients(dot3(w, w));
    let k = skew(w);
    let k2 = mat_mul(&k, &k);
    let r = mat_add(&identity3(), &mat_add(&mat_scale(&k, a), &mat_scale(&k2, b)));
    let radial = mat_add(&mat_scale(&k, c), &mat_scale(&k2, d));
    let mut dr = [zeros3(); 3];
    for (axis, out) in dr.iter_mut().enumerate() {
        let mut e = [T::zero(); 3];
        e[axis] = T::one();
        let ek = skew(e);
        let sym = mat_add(&mat_mul(&ek, &k), &mat_mul(&k, &ek));
        *out = mat_add(
            &mat_add(&mat_scale(&ek, a), &mat_scale(&sym, b)),
            &mat_scale(&radial, w[axis]),
        );
    }
    (r, dr)
}

/// Axis-angle vector of a rotation matrix (inverse of [`rodrigues`]).
pub fn rotation_log<T: Real>(r: &Mat3<T>) -> Vec3<T> {
    let tr = r[0][0] + r[1][1] + r[2][2];
    let cos = ((tr - T::one()) / T::lit(2.0)).max(-T::one()).min(T::one());
    let angle = cos.acos();
    let v = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    if angle < T::lit(1e-7) {
        return scale3(v, T::lit(0.5));
    }
    if T::PI() - angle < T::lit(1e-4) {
        // Near π the skew part vanishes; recover the axis from R + I.
        let b = mat_add(r, &identity3());
        let col = (0..3)
            .max_by(|&i, &j| b[i][i].partial_cmp(&b[j][j]).unwrap())
            .unwrap();
        let axis = [b[0][col], b[1][col], b[2][col]];
        let mut axis = normalize3(axis, T::lit(1e-12)).unwrap_or([T::one(), T::zero(), T::zero()]);
        if dot3(axis, v) < T::zero() {
            axis = scale3(axis, -T::one());
        }
        return scale3(axis, angle);
    }
    scale3(v, angle / (T::lit(2.0) * angle.sin()))
}

/// Rigid motion `x ↦ rot · x + trans` (a 4×4 homogeneous transform whose
/// last row is `[0 0 0 1]`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid<T> {
    pub rot: Mat3<T>,
    pub trans: Vec3<T>,
}

impl<T: Real> Rigid<T> {
    pub fn identity() -> Self {
        Self { rot: identity3(), trans: [T::zero(); 3] }
    }

    pub fn new(rot: Mat3<T>, trans: Vec3<T>) -> Self {
        Self { rot, trans }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self { rot: identity3(), trans: t }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        add3(mat_vec(&self.rot, p), self.trans)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rot: mat_mul(&self.rot, &other.rot),
            trans: add3(mat_vec(&self.rot, other.trans), self.trans),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose(&self.rot);
        Self { rot: rt, trans: scale3(mat_vec(&rt, self.trans), -T::one()) }
    }

    pub fn to_homogeneous(&self) -> [[T; 4]; 4] {
        let (z, o) = (T::zero(), T::one());
        let r = &self.rot;
        let t = &self.trans;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [z, z, z, o],
        ]
    }
}
