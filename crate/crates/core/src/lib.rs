pub mod baselines;
pub mod bench;
pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod gnn;
pub mod pipeline;
pub mod ranking;
pub mod similarity;
pub mod sparse;

pub use error::{Error, Result};
