use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point is outside the C² locus of the function")]
    NonSmoothPoint,

    #[error("point has no kink coordinate; the semijet is the classical jet family")]
    SmoothPoint,

    #[error("unknown builtin example `{0}`")]
    UnknownExample(String),

    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rate function is negative ({value}) at {point:?}")]
    NegativeRate { point: Vec<f64>, value: f64 },

    #[error("connector knots coincide (a = b = {0}); the boundary system is singular")]
    SingularConnector(f64),

    #[error("connector precondition violated: {0}")]
    ConnectorPrecondition(String),

    #[error("connector has an interior extremum near |x| = {at} (c' = {slope})")]
    NonMonotoneConnector { at: f64, slope: f64 },

    #[error("connector boundary residual {residual:e} exceeds tolerance")]
    IllConditionedConnector { residual: f64 },

    #[error("no stabilizing feedback gain found: {0}")]
    Unstabilizable(String),

    #[error("Riccati iteration did not converge after {iterations} steps (residual {residual:e})")]
    RiccatiDivergence { iterations: usize, residual: f64 },

    #[error("symmetric eigensolver did not converge after {0} sweeps")]
    EigenConvergence(usize),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("linear system is singular: {0}")]
    Singular(String),
}
