use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch on axis {axis}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: output would be empty (shape {shape:?})")]
    EmptyOutput { op: &'static str, shape: [usize; 5] },
    #[error("tensor data length {found} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: [usize; 5],
        expected: usize,
        found: usize,
    },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 5] },
    #[error("backward already ran on this graph; run a new forward pass first")]
    BackwardTwice,
    #[error("unknown graph variable #{0}")]
    UnknownVar(usize),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("extent {extent:?} is not divisible by factors {factors:?}")]
    NotDivisible {
        extent: [usize; 3],
        factors: [usize; 3],
    },
    #[error("{what}: extent {extent:?} is below the minimum {minimum:?}")]
    ExtentTooSmall {
        what: &'static str,
        extent: [usize; 3],
        minimum: [usize; 3],
    },
    #[error("projection discriminator grid mismatch: HR grid {hr:?} / scale {scale:?} != LR grid {lr:?}")]
    GridMismatch {
        hr: [usize; 3],
        lr: [usize; 3],
        scale: [usize; 3],
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing class: {0}")]
    MissingClass(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
