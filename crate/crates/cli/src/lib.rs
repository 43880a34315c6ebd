//! Library surface of the batch CLI, shared by the binary and the
//! acceptance suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod model_io;
pub mod pipeline;

pub use error::{CliError, CliResult};
