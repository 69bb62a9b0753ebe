use thiserror::Error;

/// Failure modes shared by every module.
///
/// `Domain` means an input violated a precondition; `Numerical` means a
/// computation on valid input failed (blowup, step underflow, unstable step);
/// `Undetermined` means a classification could not be decided on the span given.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("undetermined: {0}")]
    Undetermined(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 1,
            Error::Numerical(_) | Error::Undetermined(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
