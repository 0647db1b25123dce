use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ArtError>;

#[derive(Debug, Error)]
pub enum ArtError {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {}", .fields.join(", "))]
    Incompatible { fields: Vec<String> },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl ArtError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ArtError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 usage or configuration,
    /// 2 data, 3 checkpoint incompatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            ArtError::Config(_) | ArtError::Index(_) => 1,
            ArtError::Incompatible { .. } => 3,
            ArtError::Parse { .. }
            | ArtError::Io { .. }
            | ArtError::Format(_)
            | ArtError::Shape { .. }
            | ArtError::Contract(_)
            | ArtError::Numeric(_) => 2,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        ArtError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
