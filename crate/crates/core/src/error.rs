use thiserror::Error;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: input {input}, kernel {kernel}, padding {padding}, stride {stride} gives an output extent below 1")]
    InvalidGeometry {
        input: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    #[error("invalid shape {0:?}: batch, height and width must be at least 1")]
    InvalidShape(Shape4),
    #[error("data length {found} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Shape4,
        expected: usize,
        found: usize,
    },
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Shape4, right: Shape4 },
    #[error("length mismatch in {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },
    #[error("model format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
