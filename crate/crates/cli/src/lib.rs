//! Command-line front end for `robust-conformal`: TOML configuration, CSV
//! ingestion, orchestration and result files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod table;

pub use config::Config;
pub use error::{CliError, CliResult};
