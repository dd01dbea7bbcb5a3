use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inadmissible exponents: {0}")]
    Inadmissible(String),

    /// The reaction was evaluated at a nonpositive argument; callers must use the shifted form.
    #[error("singular domain: reaction evaluated at s = {0:e} <= 0")]
    SingularDomain(f64),

    #[error("{stage}: no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        stage: String,
        iterations: usize,
        residual: f64,
        /// Per-iteration diagnostic (gradient norms or distances), possibly empty.
        trace: Vec<f64>,
    },

    #[error(
        "{stage}: trap escape at node {node} (r = {radius}): value {value:e} outside [{lower:e}, {upper:e}]"
    )]
    TrapEscape {
        stage: String,
        node: usize,
        radius: f64,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("{stage}: construction failed: {detail}")]
    ConstructionFailed { stage: String, detail: String },

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn construction(stage: &str, detail: impl Into<String>) -> Self {
        Error::ConstructionFailed {
            stage: stage.to_string(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Inadmissible(_) | Error::Config(_) | Error::Json(_)
        )
    }
}
