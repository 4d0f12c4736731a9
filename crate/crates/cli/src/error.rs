use std::fmt;

/// A command failure, split by exit code: bad input or configuration (1)
/// versus a runtime or numerical failure (2).
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<avfuse::Error> for Failure {
    fn from(e: avfuse::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub(crate) fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

pub(crate) fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}
