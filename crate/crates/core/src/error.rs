use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the library.
///
/// Variants are grouped by the stage that produces them so the CLI can map
/// them onto exit codes: model/configuration problems, hypothesis-check
/// failures, and numerical solver failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("model specification error: {0}")]
    Model(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("negative rate {rate} for jump `{jump}` at x = {x:?}")]
    NegativeRate { jump: String, x: Vec<f64>, rate: f64 },

    #[error("non-finite rate for jump `{jump}` at x = {x:?}")]
    NonFiniteRate { jump: String, x: Vec<f64> },

    #[error("center is not a drift zero: |F(center)| = {residual:e} exceeds tolerance {tol:e}")]
    NotStationary { residual: f64, tol: f64 },

    #[error("degenerate sample box: {0}")]
    DegenerateBox(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("integration diverged after t = {t_last}")]
    Divergence { t_last: f64 },

    #[error("stationary-point search did not converge after {iterations} iterations (best residual {residual:e} at {best:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("multiple stationary points found: {0:?}")]
    MultipleRoots(Vec<Vec<f64>>),

    #[error("truncated chain is reducible; {count} states unreachable, e.g. {examples:?}")]
    Reducible { count: usize, examples: Vec<Vec<i64>> },

    #[error("birth-death chain not irreducible: zero death rate at interior state {state}")]
    NotIrreducible { state: i64 },

    #[error("box too small: {0}")]
    BoxTooSmall(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("rate overflow at state {state:?}")]
    RateOverflow { state: Vec<f64> },

    #[error("simulation blew up at t = {t}")]
    Blowup { t: f64 },

    #[error("too few batches: {got} (at least {min} required)")]
    TooFewBatches { got: usize, min: usize },

    #[error("refused: {0}")]
    Refused(String),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error reports a failed modelling hypothesis rather than
    /// a numerical or input problem.
    pub fn is_hypothesis_failure(&self) -> bool {
        matches!(
            self,
            Error::Hypothesis(_)
                | Error::NotStationary { .. }
                | Error::MultipleRoots(_)
                | Error::NotSpd(_)
                | Error::Reducible { .. }
                | Error::NotIrreducible { .. }
                | Error::Refused(_)
        )
    }

    /// True for errors originating in the input files (parse or schema).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Model(_) | Error::Config(_) | Error::Io(_)
        )
    }
}
