use thiserror::Error;

/// Errors produced anywhere in the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("stream error: {0}")]
    Stream(String),
    #[error("model mismatch: bitstream expects model {expected:08x}, got {found:08x}")]
    ModelMismatch { expected: u32, found: u32 },
    #[error("image error: {0}")]
    Image(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("training diverged at step {step}: {term}")]
    Diverged { step: usize, term: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used for machine-parsable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Constraint(_) => "constraint",
            Error::Usage(_) => "usage",
            Error::Domain(_) => "domain",
            Error::Degenerate(_) => "degenerate",
            Error::BadMagic { .. } => "magic",
            Error::Version(_) => "version",
            Error::Checksum { .. } => "checksum",
            Error::Truncated(_) => "truncated",
            Error::Format { .. } => "format",
            Error::Stream(_) => "stream",
            Error::ModelMismatch { .. } => "model-mismatch",
            Error::Image(_) => "image",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
