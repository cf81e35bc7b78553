use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate desired thrust: |f| = {norm:.3e} <= {eps:.1e}")]
    DegenerateThrust { norm: f64, eps: f64 },

    #[error("simulation diverged at t = {t:.4} s: {reason}")]
    SimulationDiverged { t: f64, reason: String },

    #[error("numerical jacobian has non-finite entries ({0})")]
    NumericalJacobian(&'static str),

    #[error("objective {index} has degenerate range: nadir equals utopia ({value})")]
    DegenerateRange { index: usize, value: f64 },

    #[error("no feasible point found (max violation {violation:.3e})")]
    Infeasible { violation: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
