//! Shared implementation of the `decoopt` command line and its plan server.

pub mod error;
pub mod menu;
pub mod ops;
pub mod server;

pub use error::{CliError, CliResult, Kind};
