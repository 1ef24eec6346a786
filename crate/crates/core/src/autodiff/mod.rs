//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
