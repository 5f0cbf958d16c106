//! Command-line experiments on top of `oadfl-core`: configuration, on-disk
//! formats, task construction and the run/compare/sweep drivers.

pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod idx;
pub mod records;
pub mod tasks;

pub use error::{CliError, Result};
