use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate frame: start and goal coincide (separation {0} m)")]
    DegenerateFrame(f64),

    #[error("fit error for demo `{demo}`: {reason}")]
    Fit { demo: String, reason: String },

    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },

    #[error("demonstration generation failed for `{setting}`: {reason}")]
    Generation { setting: String, reason: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
