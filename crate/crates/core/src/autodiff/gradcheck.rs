//! Central finite differences: the validation oracle for every gradient in
//! the crate.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Real, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Per-input outcome of [`finite_difference_check_multi`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error for each input tensor.
    pub per_input: Vec<f64>,
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<T, F>(f: &F, inputs: &[Tensor<T>], grad: bool) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), grad))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences with step `h`, for every coordinate of every input.
pub fn finite_difference_check_multi<T, F>(f: F, inputs: &[Tensor<T>], h: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = evaluate(&f, inputs, true)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NonScalarLoss(tape.value(out).shape().to_vec()));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).map(|g| g.cast()).unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let mut num = Tensor::<f64>::zeros(x.shape());
        let mut max_err = 0.0f64;
        for k in 0..x.len() {
            let orig = x.data()[k];
            work[i].data_mut()[k] = orig + T::lit(h);
            let fp = evaluate(&f, &work, false)?;
            let plus = fp.0.value(fp.2).item().as_f64();
            work[i].data_mut()[k] = orig - T::lit(h);
            let fm = evaluate(&f, &work, false)?;
            let minus = fm.0.value(fm.2).item().as_f64();
            work[i].data_mut()[k] = orig;
            let n = (plus - minus) / (2.0 * h);
            num.data_mut()[k] = n;
            max_err = max_err.max(relative_error(analytic[i].data()[k], n));
        }
        per_input.push(max_err);
        numeric.push(num);
    }
    Ok(GradCheckReport { per_input, analytic, numeric })
}

/// Single-input form: max relative error between analytic and numeric
/// gradients of `f` at `x`.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let report = finite_difference_check_multi(|tape, v| f(tape, v[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_error())
}
