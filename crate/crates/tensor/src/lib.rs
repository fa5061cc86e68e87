//! Minimal dense-tensor core with reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]; differentiable computation goes through
//! [`Var`] handles. Parameters are owned by a [`ParamStore`] and enter a
//! forward pass through a [`Scope`], which decides whether they are
//! tracked. [`backward`] replays the recorded [`Tape`] in reverse and
//! accumulates gradients into the store.

pub mod checkpoint;
mod elem;
mod error;
pub mod gradcheck;
pub mod ops;
mod param;
mod tensor;
mod var;

pub use elem::Elem;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use ops::{Conv2dSpec, Padding};
pub use param::{ParamId, ParamStore, Parameter, Scope};
pub use tensor::Tensor;
pub use var::{backward, BackwardFn, Tape, Var};
