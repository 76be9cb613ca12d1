use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid integrator configuration: {0}")]
    InvalidIntegratorConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integrator hit the step limit ({steps} steps) at t = {t}")]
    StepLimitExceeded { t: f64, steps: usize },

    #[error("integrator produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("unknown parameter name `{0}`")]
    SubsetUnknownName(String),

    #[error("duplicate parameter name `{0}` in subset")]
    DuplicateName(String),

    #[error("subset size {j} outside 1..={pool}")]
    InvalidSubsetSize { j: usize, pool: usize },

    #[error("SVD did not converge")]
    ConvergenceFailure,

    #[error("matrix is rank deficient (numerical rank {rank} < {p})")]
    RankDeficient { rank: usize, p: usize },

    #[error("negative covariance diagonal {value} at index {index}")]
    NegativeDiagonal { index: usize, value: f64 },

    #[error("coefficient of variation undefined: parameter {index} is zero")]
    ZeroParameterValue { index: usize },

    #[error("degenerate degrees of freedom: n = {n}, p = {p}")]
    DegenerateDof { n: usize, p: usize },

    #[error("invalid fit configuration: {0}")]
    InvalidFitConfig(String),

    #[error("data error: {0}")]
    DataParse(String),
}
