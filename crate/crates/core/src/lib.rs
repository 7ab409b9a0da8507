//! Fear-conditioned reinforcement learning, end to end: a Siamese-gated
//! LSTM controller feeding a memory-augmented danger classifier over 3-step
//! behavior windows, whose output drives a thresholded negative intrinsic
//! reward for a PPO agent in a sidewalk-style POMDP with a non-descriptive
//! terminal state.

pub mod dataset;
pub mod env;
pub mod error;
pub mod harness;
pub mod numcore;
pub mod ppo;
pub mod reward;
pub mod slstm;
pub mod smann;

pub use error::{FearError, Result};
pub use numcore::{Adam, ParamId, ParamStore, Tape, Tensor, Var};
