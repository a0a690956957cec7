pub mod agent;
pub mod envs;
pub mod error;
pub mod nn;
pub mod objectives;
pub mod replay;
pub mod rollout;
pub mod trainer;
pub mod value_codec;

pub use error::{Error, Result};
