use std::fmt;

use vireid_core::Error;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or input files; nothing was written. Exit 1.
    Usage(String),
    /// The command started and then failed. Exit 2.
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Errors raised while checking inputs, before any output exists, are usage errors.
pub trait Validating<T> {
    fn validating(self) -> CmdResult<T>;
}

impl<T> Validating<T> for vireid_core::Result<T> {
    fn validating(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.to_string()))
    }
}
