//! Library half of the command-line front end, split out so integration
//! tests can drive command plumbing and share helpers with the binary.

pub mod config;
pub mod manifest;
pub mod runner;

pub use runner::{run, Cli, CliError};
