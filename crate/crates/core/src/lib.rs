pub mod config;
pub mod density;
pub mod envs;
pub mod error;
pub mod eval;
pub mod hrl;
pub mod sac;
pub mod skills;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
