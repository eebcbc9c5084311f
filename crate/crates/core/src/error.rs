use thiserror::Error;

pub type Result<T> = std::result::Result<T, EchoError>;

#[derive(Debug, Error)]
pub enum EchoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("fit did not converge: {0}")]
    NoConvergence(String),

    #[error("unphysical fit: {0}")]
    UnphysicalFit(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EchoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EchoError::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        EchoError::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(EchoError::invalid(format!(
            "{name} must be finite, got {value}"
        )))
    }
}
