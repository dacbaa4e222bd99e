//! Minimal reverse-mode automatic differentiation over dense row-major
//! tensors. A [`Graph`] records every operation as it executes; calling
//! [`Graph::backward`] replays the record in reverse and accumulates
//! gradients into the leaves that asked for them.
//!
//! The op set is exactly what a GPT-2 style decoder needs. Everything is
//! generic over [`Scalar`] so the same code runs in 32-bit for training and
//! in 64-bit for finite-difference checks.

mod double_double;
mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use double_double::DoubleDouble;
pub use gradcheck::{extended_diff_check, finite_diff_check, finite_diff_check_many, GradCheckReport, ScalarFn};
pub use graph::{Graph, Var, MASK_SENTINEL};
pub use scalar::Scalar;
pub use tensor::Tensor;
