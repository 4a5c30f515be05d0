//! Exit-code tagging for command errors.

use std::fmt;

pub const EXIT_OK: u8 = 0;
/// Bad usage or unreadable input.
pub const EXIT_INPUT: u8 = 2;
/// Input was read but failed validation or analysis.
pub const EXIT_INVALID: u8 = 3;

/// An error carrying the process exit code it should produce.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for Coded {}

pub trait ExitContext<T> {
    fn exit_code(self, code: u8) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for Result<T, E> {
    fn exit_code(self, code: u8) -> anyhow::Result<T> {
        self.map_err(|e| {
            anyhow::Error::new(Coded {
                code,
                error: e.into(),
            })
        })
    }
}

pub fn coded(code: u8, error: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(Coded { code, error })
}

/// Exit code for `err`; untagged errors count as input errors.
pub fn exit_code_of(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Coded>())
        .map_or(EXIT_INPUT, |c| c.code)
}
