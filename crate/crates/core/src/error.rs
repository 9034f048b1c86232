use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported codec in {path}: {detail}")]
    UnsupportedCodec { path: PathBuf, detail: String },
    #[error("malformed wav {path}: {detail}")]
    MalformedWav { path: PathBuf, detail: String },
    #[error("{path} contains no audio frames")]
    EmptyAudio { path: PathBuf },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("all instances are masked out")]
    AllMasked,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("no includable class for {0}")]
    NoIncludableClass(&'static str),
    #[error("class directory {0} contains no wav files")]
    EmptyClass(PathBuf),
    #[error("fold {0} has no validation recordings")]
    EmptyFold(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
    #[error("image encoding error: {0}")]
    Image(String),
}

impl Error {
    /// Stable short identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Unreadable { .. } => "unreadable",
            Error::UnsupportedCodec { .. } => "unsupported_codec",
            Error::MalformedWav { .. } => "malformed_wav",
            Error::EmptyAudio { .. } => "empty_audio",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::TooShort { .. } => "too_short",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::AllMasked => "all_masked",
            Error::NonFinite(_) => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::NoIncludableClass(_) => "no_includable_class",
            Error::EmptyClass(_) => "empty_class",
            Error::EmptyFold(_) => "empty_fold",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
            Error::Image(_) => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
