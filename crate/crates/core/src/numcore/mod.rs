//! Tensor arithmetic, reverse-mode differentiation, optimizers, and
//! parameter persistence. Everything trains in f32 on a per-thread tape;
//! only the finite-difference oracle widens to f64.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod store;
pub mod tape;
pub mod tensor;

pub use nn::{conv_out, Conv2d, Linear};
pub use store::{Adam, ParamId, ParamStore};
pub use tape::{Tape, Var, COSINE_EPS, LOG_EPS};
pub use tensor::{derive_seed, Tensor};
