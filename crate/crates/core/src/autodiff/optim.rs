use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u32,
}

/// Bias-corrected Adam with per-parameter moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new(T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: T, beta2: T, eps: T) -> Self {
        Self { beta1, beta2, eps, state: BTreeMap::new() }
    }

    /// Updates every parameter of `store` that requires grad and carries a
    /// gradient, then clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: T) -> Result<()> {
        for (name, p) in store.iter_mut() {
            let Some(g) = p.grad.take() else { continue };
            if !p.requires_grad {
                continue;
            }
            if g.len() != p.values.len() {
                return Err(Error::ShapeMismatch { op: "adam", lhs: vec![p.values.len()], rhs: vec![g.len()] });
            }
            let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); g.len()],
                v: vec![T::zero(); g.len()],
                step: 0,
            });
            if st.m.len() != g.len() {
                return Err(Error::ShapeMismatch { op: "adam state", lhs: vec![st.m.len()], rhs: vec![g.len()] });
            }
            st.step += 1;
            let t = st.step as i32;
            let c1 = T::one() - self.beta1.powi(t);
            let c2 = T::one() - self.beta2.powi(t);
            for (((x, &gi), m), v) in p.values.iter_mut().zip(&g).zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
                *m = self.beta1 * *m + (T::one() - self.beta1) * gi;
                *v = self.beta2 * *v + (T::one() - self.beta2) * gi * gi;
                let mh = *m / c1;
                let vh = *v / c2;
                *x -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Re-indexes the moments of a row-structured parameter after its rows
    /// were reordered: new row `r` takes old row `map[r]`, or zero moments
    /// when `None`.
    pub fn remap_rows(&mut self, name: &str, cols: usize, map: &[Option<usize>]) {
        let Some(st) = self.state.get_mut(name) else { return };
        let pick = |src: &[T]| {
            let mut out = vec![T::zero(); map.len() * cols];
            for (r, m) in map.iter().enumerate() {
                if let Some(o) = m {
                    out[r * cols..(r + 1) * cols].copy_from_slice(&src[o * cols..(o + 1) * cols]);
                }
            }
            out
        };
        st.m = pick(&st.m);
        st.v = pick(&st.v);
    }

    pub fn forget(&mut self, name: &str) {
        self.state.remove(name);
    }

    pub fn steps_taken(&self, name: &str) -> u32 {
        self.state.get(name).map_or(0, |s| s.step)
    }
}
