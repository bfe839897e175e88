use std::fmt;

use mtad_gat::{Error, ErrorKind};

/// A library error together with the stage or file it came from.
#[derive(Debug)]
pub struct CliError {
    pub context: String,
    pub source: Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.context, self.source)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        self.source.kind()
    }

    /// 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::Io | ErrorKind::Internal => 1,
        }
    }

    pub fn config(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            context: context.into(),
            source: Error::config(msg),
        }
    }

    pub fn data(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            context: context.into(),
            source: Error::data(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Context<T> {
    fn context(self, ctx: impl Into<String>) -> CliResult<T>;
    fn with_context<S: Into<String>>(self, ctx: impl FnOnce() -> S) -> CliResult<T>;
}

impl<T, E: Into<Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, ctx: impl Into<String>) -> CliResult<T> {
        self.map_err(|e| CliError {
            context: ctx.into(),
            source: e.into(),
        })
    }

    fn with_context<S: Into<String>>(self, ctx: impl FnOnce() -> S) -> CliResult<T> {
        self.map_err(|e| CliError {
            context: ctx().into(),
            source: e.into(),
        })
    }
}
