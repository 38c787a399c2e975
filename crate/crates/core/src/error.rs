use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite values in input to {0}")]
    NonFinite(&'static str),

    #[error("unidentifiable configuration: {0}")]
    Identifiability(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unstable AR filter: {0}")]
    UnstableFilter(String),

    /// The estimated anchor entry is zero so the scalar gauge cannot be fixed.
    #[error("degenerate scaling anchor: estimated [H]_(1,1) is zero")]
    DegenerateAnchor,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::DimensionMismatch(msg.into()))
}
