//! Command-line pipeline and HTTP service around the `kwcomplete` library.

pub mod commands;
pub mod manifest;
pub mod plot;
pub mod server;

pub use commands::{run, Cli, Command};
