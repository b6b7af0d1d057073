//! Dense tensors, reverse-mode differentiation and a finite-difference oracle.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport, DEFAULT_EPS};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, OpKind, Primitive, Tape, Var};
pub use tensor::Tensor;

pub use tape::{sigmoid, softplus};
