use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: matrix is singular beyond the jitter tolerance")]
    Singular { op: &'static str },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("invalid index partition: {0}")]
    Partition(String),

    #[error("rank condition violated: {0}")]
    Rank(String),

    #[error("{op}: transform `{transform}` is not supported here")]
    IncompatibleTransform { op: &'static str, transform: String },

    #[error("invalid noise model: {0}")]
    Noise(String),

    #[error("function evaluation failed: {0}")]
    Evaluation(String),

    #[error("model contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step {step} ({mode}): {source}")]
    AtStep {
        step: usize,
        mode: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize, mode: impl Into<String>) -> Self {
        Error::AtStep { step, mode: mode.into(), source: Box::new(self) }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    /// True for failures of the numerics (singular or non-finite matrices), as
    /// opposed to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::NonFinite { .. } => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
