use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("trace argument {0} is outside [-1, 1] beyond tolerance; inputs are not rotations")]
    TraceOutOfRange(f64),
    #[error("group closure for {kind} produced {found} elements, expected {expected}")]
    GroupClosure {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
    #[error("softmax overflow at temperature {temperature}; use a larger temperature")]
    TemperatureTooSmall { temperature: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward called for `{0}` without a recorded forward pass")]
    NotRecorded(&'static str),
    #[error("training diverged (non-finite loss) at iteration {iteration}, seed {seed}")]
    Diverged { iteration: usize, seed: u64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> Error {
    Error::DimensionMismatch {
        op,
        detail: detail.into(),
    }
}
