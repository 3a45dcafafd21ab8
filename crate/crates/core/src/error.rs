use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("batchnorm running statistics for `{0}` are uninitialized; run a train-mode step first")]
    UninitializedStats(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("rollout diverged at timestep {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("step size error: dt = {dt:e} exceeds the stability bound {limit:e}")]
    StepSize { dt: f64, limit: f64 },

    #[error("stability error: {0}")]
    Stability(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupted file: {0}")]
    Corruption(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
