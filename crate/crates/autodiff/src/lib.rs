//! Dense `f64` matrices with a reverse-mode tape.
//!
//! The crate is deliberately small: two-dimensional tensors, a fixed set of
//! differentiable primitives, a named parameter registry, Adam, a central
//! finite-difference gradient checker and a bit-exact checkpoint format.

mod checkpoint;
mod error;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_HEADER};
pub use error::{Error, Result};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{BoundParams, Gradients, ParamRegistry};
pub use tape::{sigmoid, BackwardFn, Tape, Var};
pub use tensor::{SparseMatrix, Tensor};
