//! Command implementations behind the `panfuse` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod matrix;
pub mod output;
pub mod synthdata;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
