//! Canonical point set: SDF network, geometry regularization, upsampling on
//! a shrinking radius schedule and visibility pruning.

mod ply;
mod sdf;

pub use ply::{write_ply, PlyPoint};
pub(crate) use sdf::{bname, wname};
pub use sdf::{
    normalize_gradient, regularization_loss, regularization_terms, RegularizationTerms, SdfConfig, SdfNetwork,
    SdfOutput, SdfVars, DEGENERATE_GRADIENT,
};

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitBall};

use crate::linalg::{add3, scale3, Vec3};
use crate::mesh::median_nearest_neighbor_distance;
use crate::rig::{bind_canonical_points, PerPointRigData, TemplateRig};
use crate::{Error, Real, Result};

/// Ω standard deviation as a multiple of the current radius.
pub const OMEGA_SIGMA_FACTOR: f64 = 1.5;

/// Learnable canonical points sharing one splat radius per generation.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPointSet<T> {
    pub coords: Vec<Vec3<T>>,
    pub radius0: T,
    pub radius: T,
    pub generation: u32,
    /// Seen inside the foreground silhouette during the current epoch.
    pub visible: Vec<bool>,
    /// Generation at which each point was created; generation-0 points are
    /// the template seeds and are never pruned.
    pub birth_generation: Vec<u32>,
    pub binding: PerPointRigData<T>,
}

/// `r₀ · (1/√2)^g`, multiplied out in the same order as repeated upsampling.
pub fn radius_for_generation<T: Real>(radius0: T, generation: u32) -> T {
    let shrink = T::FRAC_1_SQRT_2();
    (0..generation).fold(radius0, |r, _| r * shrink)
}

/// Result of [`CanonicalPointSet::prune`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneReport {
    /// Old index of every surviving point, in order.
    pub kept: Vec<usize>,
    pub removed: usize,
}

impl<T: Real> CanonicalPointSet<T> {
    /// One point per template vertex; `radius₀` is the median nearest-
    /// neighbor spacing of the template so neighboring splats overlap.
    pub fn from_template(rig: &TemplateRig<T>) -> Result<Self> {
        let coords = rig.vertices.clone();
        let binding = bind_canonical_points(rig, &coords)?;
        let radius0 = median_nearest_neighbor_distance(&coords);
        if radius0 <= T::zero() {
            return Err(Error::Geometry("template vertices coincide; cannot derive a radius".into()));
        }
        Ok(Self {
            visible: vec![false; coords.len()],
            birth_generation: vec![0; coords.len()],
            coords,
            radius0,
            radius: radius0,
            generation: 0,
            binding,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn nearest_template_index(&self) -> &[usize] {
        &self.binding.nearest_template_index
    }

    /// Recomputes nearest-vertex rig data for every point.
    pub fn rebind(&mut self, rig: &TemplateRig<T>) -> Result<()> {
        self.binding = bind_canonical_points(rig, &self.coords)?;
        Ok(())
    }

    /// Adds one child per point, drawn uniformly inside the sphere of the
    /// current radius around it, then shrinks the radius by `1/√2` and
    /// rebinds. Returns the parent index of each new point (new points are
    /// appended in parent order).
    pub fn upsample(&mut self, rig: &TemplateRig<T>, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let n = self.len();
        let r = self.radius.as_f64();
        let gen = self.generation + 1;
        for i in 0..n {
            let u: [f64; 3] = UnitBall.sample(rng);
            let child = add3(self.coords[i], u.map(|x| T::lit(x * r)));
            self.coords.push(child);
            self.visible.push(false);
            self.birth_generation.push(gen);
        }
        self.generation = gen;
        self.radius = self.radius * T::FRAC_1_SQRT_2();
        self.rebind(rig)?;
        Ok((0..n).collect())
    }

    pub fn begin_epoch(&mut self) {
        self.visible.iter_mut().for_each(|v| *v = false);
    }

    /// ORs per-point visibility flags from one processed frame.
    pub fn mark_visible(&mut self, flags: &[bool]) -> Result<()> {
        if flags.len() != self.len() {
            return Err(Error::ShapeMismatch { op: "mark_visible", lhs: vec![self.len()], rhs: vec![flags.len()] });
        }
        for (v, &f) in self.visible.iter_mut().zip(flags) {
            *v |= f;
        }
        Ok(())
    }

    /// Removes points never marked visible this epoch, except template
    /// seeds. Refuses (leaving the set untouched) when more than half of the
    /// points would go. Flags are left as they are, so a second call in the
    /// same epoch removes nothing; [`begin_epoch`](Self::begin_epoch) resets them.
    pub fn prune(&mut self) -> Result<PruneReport> {
        let total = self.len();
        let kept: Vec<usize> = (0..total).filter(|&i| self.visible[i] || self.birth_generation[i] == 0).collect();
        let removed = total - kept.len();
        if removed * 2 > total {
            return Err(Error::PruneTooAggressive { removed, total });
        }
        if removed == 0 {
            return Ok(PruneReport { kept, removed });
        }
        let nj = self.binding.num_joints;
        self.coords = kept.iter().map(|&i| self.coords[i]).collect();
        self.visible = kept.iter().map(|&i| self.visible[i]).collect();
        self.birth_generation = kept.iter().map(|&i| self.birth_generation[i]).collect();
        self.binding.nearest_template_index = kept.iter().map(|&i| self.binding.nearest_template_index[i]).collect();
        self.binding.weights = kept.iter().flat_map(|&i| self.binding.weights[i * nj..(i + 1) * nj].to_vec()).collect();
        Ok(PruneReport { kept, removed })
    }
}

/// One Gaussian perturbation (σ = 1.5 · radius per axis) of every point.
pub fn sample_omega<T: Real>(points: &[Vec3<T>], radius: T, rng: &mut impl Rng) -> Vec<Vec3<T>> {
    let sigma = OMEGA_SIGMA_FACTOR * radius.as_f64();
    if sigma <= 0.0 {
        return points.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    points
        .iter()
        .map(|&p| {
            let d = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
            add3(p, d.map(T::lit))
        })
        .collect()
}

/// Axis-aligned bounding-box center and half-diagonal, used to normalize
/// SDF inputs.
pub fn bounding_sphere<T: Real>(points: &[Vec3<T>]) -> (Vec3<T>, T) {
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let c = scale3(add3(lo, hi), T::lit(0.5));
    let r = crate::linalg::dist2(lo, hi).sqrt() * T::lit(0.5);
    (c, r)
}
