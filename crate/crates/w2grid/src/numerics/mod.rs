//! Minimal dense-tensor engine: 64-bit row-major tensors, a deterministic
//! counter-based RNG, explicit forward/backward primitives, and a central
//! finite-difference gradient checker.

mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use ops::*;
pub use rng::Rng;
pub use tensor::{NumericsError, Tensor};
