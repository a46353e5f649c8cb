//! Minimal reverse-mode automatic differentiation.

mod check;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_gradient, max_gradient_error, relative_error};
pub use optim::{make_optimizer, Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_sigmoid, sigmoid, softplus, Tensor};
