//! Library side of the `mfc` command-line tool: configuration parsing and
//! subcommand bodies.

pub mod commands;
pub mod config;

pub use commands::{CliError, CliResult, PolicyChoice};
pub use config::{parse_config, Config, ConfigError, Protocol};
