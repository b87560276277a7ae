pub mod cli;
pub mod config;
pub mod cycle;
pub mod error;
pub mod metrics;
pub mod net;
pub mod seqdata;
pub mod train;

pub use error::{Error, Result};
