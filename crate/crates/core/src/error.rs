use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// State left the finite region (or crossed the divergence guard) during an Euler step.
    #[error("simulation diverged at t={t}: x={x:?}, a={a:?}")]
    SimulationDiverged { t: f64, x: Vec<f64>, a: Vec<f64> },

    /// A learner produced a non-finite or exploding parameter vector.
    #[error("parameters diverged; last finite parameters {last_finite:?}")]
    ParameterDiverged { last_finite: Vec<f64> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Numerical domain violation, e.g. a matrix that should be SPD is not.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller violated an operation contract (e.g. missing terminal payoff).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("policy improvement undefined: {0}")]
    ImprovementUndefined(String),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
