use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numeric core, the models and the pure data routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: input has zero norm")]
    ZeroNorm { op: &'static str },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("expected image feature variant {expected}, found {found}")]
    Variant {
        expected: &'static str,
        found: &'static str,
    },
    #[error("missing image for {0}")]
    MissingImage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
