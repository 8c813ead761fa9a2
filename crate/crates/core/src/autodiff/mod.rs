//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! [`Tape`] records primitives in execution order; [`Tape::backward`] sweeps
//! it once in reverse. Learnable tensors live in a [`ParamStore`] and are
//! bound to a fresh tape for every forward pass. Operations with a
//! closed-form adjoint (skinning, projection, rasterization) plug in through
//! [`CustomOp`].

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{
    finite_difference_check, finite_difference_check_multi, relative_error, GradCheckReport, DEFAULT_STEP,
};
pub use optim::Adam;
pub use params::{DiffTensor, ParamStore};
pub use tape::{softplus, CustomOp, Tape, Var};
pub use tensor::Tensor;

use crate::{Error, Real, Result};

/// Primitive selector for [`Tape::primitive`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Softplus,
    Relu,
    Sigmoid,
    Tanh,
    SoftmaxRows,
    Sum,
    Mean,
    L2Norm,
    Concat { axis: usize },
    GatherRows(Vec<usize>),
    Reshape(Vec<usize>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::ScalarMul(_) => "scalar-mul",
            OpKind::Softplus => "softplus",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::SoftmaxRows => "softmax-rows",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::L2Norm => "l2-norm",
            OpKind::Concat { .. } => "concat",
            OpKind::GatherRows(_) => "gather-rows",
            OpKind::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

impl<T: Real> Tape<T> {
    /// Uniform entry point over the primitive set.
    pub fn primitive(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::InvalidShape {
                    op: kind.name(),
                    shape: vec![inputs.len()],
                    reason: format!("expects {n} inputs"),
                });
            }
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::ScalarMul(s) => self.scalar_mul(inputs[0], T::lit(*s)),
            OpKind::Softplus => self.softplus(inputs[0]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Sigmoid => self.sigmoid(inputs[0]),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::SoftmaxRows => self.softmax_rows(inputs[0]),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::L2Norm => self.l2_norm_rows(inputs[0]),
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::GatherRows(idx) => self.gather_rows(inputs[0], idx),
            OpKind::Reshape(shape) => self.reshape(inputs[0], shape),
        }
    }
}
