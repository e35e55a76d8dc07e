use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },

    #[error("expected a 1x1 tensor, got {shape:?}")]
    NotScalar { shape: [usize; 2] },

    #[error("backward already ran on this tape; call reset_grads() before running it again")]
    DoubleBackward,

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("non-finite value {value} at {name}[{index}] during {stage}")]
    NonFinite {
        stage: &'static str,
        name: String,
        index: usize,
        value: f64,
    },

    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    StepSize(f64),

    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
