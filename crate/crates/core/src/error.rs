use thiserror::Error;

/// Errors surfaced by the library and mapped to CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 bad input, 3 numeric divergence, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. } | Error::Config(_) | Error::Input(_) | Error::Json(_) => 2,
            Error::Divergence(_) => 3,
            Error::Io { .. } | Error::Image(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
