//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The [`Tape`] records every forward operation in evaluation order and
//! replays them backwards from a scalar root. Parameters are leaves created
//! with [`Tape::parameter`]; data and frozen quantities are constants.

mod gemm;
pub mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{ConvGeom, OpKind, Tape, Var};
pub use tensor::Tensor;
