//! Crate-wide error type.
//!
//! All fallible operations in this crate return [`Result`]. Variants are
//! grouped by subsystem so callers can match on the failure class without
//! string inspection; every variant still renders a human-readable message
//! for CLI surfaces.

/// Errors raised by the solver library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument was outside the mathematical domain of the operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A series summation exhausted its term budget before the stopping
    /// rule fired.
    #[error("series in {op} did not converge within {max_terms} terms")]
    SeriesNonConvergence { op: &'static str, max_terms: usize },

    /// A probability table could not be extended to the requested tail mass
    /// within the size cap.
    #[error("truncation-law table for {law} did not reach tail mass {tail_tol:e} within {cap} entries")]
    TableOverflow {
        law: &'static str,
        tail_tol: f64,
        cap: usize,
    },

    /// Rejection resampling (tie avoidance in simplex draws) failed to
    /// produce a valid point within the attempt cap.
    #[error("sampler failed to produce a valid point after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    /// Expression text failed to parse; `offset` is the byte position at
    /// which the parser gave up.
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// An expression could not be evaluated at the requested point.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A problem definition violates a structural precondition (as opposed
    /// to the convergence conditions reported by `validate_problem`).
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The cost budget cannot afford even one inner sample per truncation
    /// level; `minimal_theta` is the smallest total budget that can.
    #[error(
        "budget M = {m:.6e} cannot afford one inner sample per level (needs {required:.6e}); \
         minimal feasible theta_target = {minimal_theta:.6e}"
    )]
    BudgetTooSmall {
        m: f64,
        required: f64,
        minimal_theta: f64,
    },

    /// An allocation plan built for one equation family was used with a
    /// problem of another family.
    #[error("allocation plan was built for the {plan} family but the problem is {problem}")]
    FamilyMismatch { plan: &'static str, problem: &'static str },

    /// An estimator or allocation configuration field is out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A deterministic reference solve failed to converge.
    #[error("oracle did not converge: {0}")]
    OracleNoConvergence(String),

    /// The linear system inside a quadrature solve was singular to working
    /// precision.
    #[error("singular linear system in quadrature solve (pivot {pivot:e} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    /// The requested oracle does not support the problem (e.g. Fredholm
    /// reference solve in dimension > 1).
    #[error("oracle does not support this problem: {0}")]
    OracleUnsupported(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
