use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The posterior at t = 0 is atomic; scores are undefined there.
    #[error("degenerate time t = {0}: posterior is atomic")]
    DegenerateTime(f64),

    #[error("infeasible grid: {steps} steps cannot satisfy the step constraint, need at least {min_steps}")]
    InfeasibleGrid { steps: usize, min_steps: usize },

    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("logistic fit failed ({reason}) after {iterations} iterations, |grad|_inf = {grad_norm:e}")]
    FitFailure {
        reason: FitFailureReason,
        iterations: usize,
        grad_norm: f64,
        last_beta: Vec<f64>,
    },

    #[error("non-finite field value at step {step}")]
    Step { step: usize, state: Vec<f64> },

    #[error("{aborted} of {total} reverse paths aborted, above the {max_fraction} tolerance")]
    AbortedPaths {
        aborted: usize,
        total: usize,
        max_fraction: f64,
    },

    #[error("quadrature did not converge: last two estimates {previous:e} and {current:e}")]
    OracleFailure { previous: f64, current: f64 },

    #[error("table parse error at line {line}: {message}")]
    Table { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFailureReason {
    Separable,
    NotConverged,
    SingularHessian,
}

impl std::fmt::Display for FitFailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitFailureReason::Separable => "data appear separable",
            FitFailureReason::NotConverged => "iteration limit reached",
            FitFailureReason::SingularHessian => "singular Hessian",
        })
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
