//! Command-line front end: configuration files and one function per
//! subcommand.

pub mod args;
pub mod commands;
pub mod config;

pub use args::Cli;
pub use commands::{exit_code, run};
pub use config::Config;
