use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("tolerance check failed: {0}")]
    Tolerance(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => 2,
            Self::Validation(_) => 3,
            Self::Tolerance(_) => 1,
            Self::Runtime(_) => 4,
        }
    }
}

impl From<telegraph_core::Error> for CliError {
    fn from(e: telegraph_core::Error) -> Self {
        use telegraph_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::PreconditionViolation { .. } | E::MethodMismatch(_) | E::UnsupportedRegime(_) => {
                Self::Validation(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
