pub mod analytics;
pub mod baselines;
pub mod data;
pub mod engine;
pub mod error;
pub mod loss;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Result, SimexError};
