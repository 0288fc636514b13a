//! Dense tensors, reverse-mode differentiation, parameter storage,
//! initialization, optimizers and finite-difference gradient checking.

mod gradcheck;
pub mod init;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GradSample};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Axis, EmptyRow, Tape, Var};
pub use tensor::Tensor;
