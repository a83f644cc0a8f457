use std::path::PathBuf;

/// Errors produced by the library. Each variant maps onto a stable CLI exit
/// code through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    SampleRate { got: u32, expected: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error{}: {msg}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },

    #[error("cannot decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("attention maps were not captured; enable capture before the forward pass")]
    NotCaptured,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("numeric divergence: {0}")]
    NumericDivergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse {
            line: None,
            msg: msg.into(),
        }
    }

    /// 0 success, 2 user/input error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericDivergence(_) => 3,
            Error::Tensor(_) => 1,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: Some(e.line()),
            msg: e.to_string(),
        }
    }
}
