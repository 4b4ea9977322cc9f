use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("infeasible target length {target} for input length {input} (stride {stride}, kernel {kernel}); allowed [{lo}, {hi}]")]
    InfeasibleLength {
        target: usize,
        input: usize,
        stride: usize,
        kernel: usize,
        lo: usize,
        hi: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown layer `{0}`")]
    InvalidLayer(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("not a weights file (bad magic bytes {0:02x?})")]
    BadMagic([u8; 4]),

    #[error("unsupported weights format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("threshold tuning needs both labels, split contains only `{0}`")]
    SingleClass(&'static str),

    #[error("train and test splits overlap in {0} window(s)")]
    OverlappingSplits(usize),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Truncated(_) => 3,
            Error::Divergence { .. } => 5,
            _ => 4,
        }
    }
}
