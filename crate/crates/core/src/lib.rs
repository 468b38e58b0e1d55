pub mod autograd;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod nn;
pub mod report;
pub mod train;

pub use error::{Error, Result};
