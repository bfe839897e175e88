//! Library half of the `mtad-gat` command-line tool: configuration, file
//! formats, the synthetic generator and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod synth;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
