//! Dense matrices, a deterministic RNG, a reverse-mode tape and a
//! finite-difference gradient oracle.

mod finite_diff;
mod matrix;
mod rng;
mod tape;

pub use finite_diff::finite_diff_grad;
pub use matrix::{Axis, Matrix};
pub use rng::Rng;
pub use tape::{Gradients, OpKind, Tape, Var, LOG_FLOOR};
