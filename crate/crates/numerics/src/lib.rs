//! Dense `f64` tensors with tape-based reverse-mode differentiation,
//! finite-difference gradient checking, an Adam optimizer and a binary
//! checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod optim;
mod params;
mod tensor;

pub use error::{NumericsError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Reduction, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{matmul, Initializer, Tensor};
