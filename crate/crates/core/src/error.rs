use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions are incompatible with the operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A numeric or structural parameter is outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// The model configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),
    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),
    /// Raised by caller-supplied hooks, e.g. a training observer that
    /// failed to write a file.
    #[error("{0}")]
    External(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
