//! Error type shared across the crate.
//!
//! Shape mismatches in the hot numeric paths are treated as programmer error
//! and panic with both shapes in the message; recoverable conditions (bad
//! config, checkpoint I/O, diverged training) surface as [`Error`].

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration value; the message names the offending field.
    Config(String),
    /// Malformed or unreadable checkpoint data.
    Checkpoint(String),
    /// A training loop produced a non-finite loss and aborted.
    Diverged {
        phase: &'static str,
        iter: usize,
        detail: String,
    },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Diverged { phase, iter, detail } => {
                write!(f, "{phase} training diverged at iteration {iter}: {detail}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
