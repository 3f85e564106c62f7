//! Minimal differentiable numeric core: named parameter sets, a reverse-mode
//! tape over `Tensor2` ops, an adaptive-moment optimizer, and
//! finite-difference gradient checking.

mod adam;
pub mod gradcheck;
mod params;
mod tape;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use params::ParamSet;
pub use tape::{GradMap, Grads, Tape, Var};
