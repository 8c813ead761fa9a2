pub mod appearance;
pub mod autodiff;
mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod relight;
pub mod renderer;
pub mod rig;
mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type HandModel32 = training::HandModel<f32>;
pub type HandModel64 = training::HandModel<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
