//! Minimal dense-tensor engine: `f64` tensors, a reverse-mode tape with the
//! layer primitives the spatial upsampling models need, Adam, and a binary
//! checkpoint format.

mod conv;
mod error;
mod gradcheck;
mod linalg;
mod optim;
mod params;
mod tape;
mod tensor;

pub mod checkpoint;

pub use conv::{conv2d, Conv2d};
pub use error::{Result, TensorError};
pub use gradcheck::grad_check;
pub use linalg::solve;
pub use optim::Adam;
pub use params::{fan_in_uniform, uniform, Bound, ParamStore};
pub use tape::{mish_scalar, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
