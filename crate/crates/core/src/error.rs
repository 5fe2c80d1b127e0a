use thiserror::Error;

pub type Result<T> = std::result::Result<T, RteError>;

#[derive(Debug, Error)]
pub enum RteError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure in `{operator}` at t = {t:e}: {detail}")]
    NumericalFailure { operator: String, t: f64, detail: String },

    #[error("degenerate low-rank state: {0}")]
    DegenerateState(String),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("division guard: {0}")]
    DivisionGuard(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<RteError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RteError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RteError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        RteError::Config { path: path.into(), message: message.into() }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        RteError::AtStep { step, source: Box::new(self) }
    }

    /// The innermost error, with step annotations stripped.
    pub fn root(&self) -> &RteError {
        match self {
            RteError::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the `rte` binary.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            RteError::NumericalFailure { .. } | RteError::DegenerateState(_) | RteError::DivisionGuard(_) => 3,
            RteError::SizeCap(_) => 4,
            _ => 2,
        }
    }
}
