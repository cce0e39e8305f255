//! Dense tensors and a reverse-mode differentiation tape.
//!
//! Storage and compute are generic over [`Float`] so the same kernels run in
//! `f32` for training and in `f64` when a finite-difference reference is
//! needed. Reductions accumulate in `f64` regardless of the element type.

mod error;
mod float;
pub mod gradcheck;
pub mod mxt;
pub mod ops;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use float::Float;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
