//! Minimal dense autodiff engine backing the agent.

mod graph;
mod matrix;
mod optim;
mod params;

pub use graph::{log_softmax_groups, softmax_groups, Grads, Tape, Var};
pub use matrix::{matmul, Matrix};
pub use optim::{clip_grad_norm, AdamW};
pub use params::{init_weight, ParamSet};
