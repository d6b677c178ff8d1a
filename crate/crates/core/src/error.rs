use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum AruError {
    /// Tensor dimensions incompatible with the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Bad argument supplied by the caller (config value, flag combination, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation produced NaN or Inf from finite inputs.
    #[error("non-finite values produced by {op}{}", ctx_suffix(.context))]
    NonFinite {
        op: &'static str,
        context: Option<String>,
    },

    /// The requested operation is not available for this configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Dataset or file-content problem.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Checkpoint / weight-file format violation.
    #[error("format error: {0}")]
    Format(String),
}

fn ctx_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl AruError {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AruError::InvalidArgument(_) | AruError::Unsupported(_) => 1,
            AruError::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, AruError>;
