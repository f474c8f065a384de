use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model must have at least one Prony term")]
    EmptyModel,

    #[error("length mismatch: {rates} rates but {weights} weights")]
    LengthMismatch { rates: usize, weights: usize },

    #[error("rates must be strictly increasing: r[{index}] = {value} does not exceed r[{}] = {previous}", index - 1)]
    NonIncreasingRates {
        index: usize,
        previous: f64,
        value: f64,
    },

    #[error("{what} must be positive and finite, got {value}{}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    NonPositive {
        what: &'static str,
        index: Option<usize>,
        value: f64,
    },

    #[error("stretched exponential needs tau > 0 and 0 < beta < 1 (tau = {tau}, beta = {beta})")]
    InvalidStretched { tau: f64, beta: f64 },

    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("tolerance must be non-negative and finite, got {0}")]
    InvalidTolerance(f64),

    #[error("time grid is empty")]
    EmptyGrid,

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("non-negative least squares left no positive weight")]
    InfeasibleNonNegativity,

    #[error("mode index must be >= 1")]
    InvalidModeIndex,

    #[error("lambda = {lambda} lies on the pole -r[{index}] (distance {distance:e})")]
    Pole {
        index: usize,
        lambda: f64,
        distance: f64,
    },

    #[error("no sign change on bracket {bracket} = ({lo}, {hi}): f(lo) = {f_lo}, f(hi) = {f_hi}")]
    BracketFailure {
        bracket: usize,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("deflation residual {residual:e} exceeds {tolerance:e} at k = {k} (root {root})")]
    DeflationResidual {
        k: u32,
        root: f64,
        residual: f64,
        tolerance: f64,
    },

    #[error("polynomial has a zero leading coefficient")]
    ZeroLeadingCoefficient,

    #[error("polynomial must have degree >= {min}, got {degree}")]
    DegreeTooLow { degree: usize, min: usize },

    #[error("root iteration did not converge after {iterations} iterations (backward error {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("root {index} has no complex conjugate partner")]
    ConjugateClosure { index: usize },

    #[error("both clusters use mode index k = {0}; the difference identity degenerates")]
    DegeneratePair(u32),

    #[error("cluster sizes differ or are too small ({first} and {second} roots; need equal and >= 3)")]
    ClusterShape { first: usize, second: usize },

    #[error("clusters are inconsistent: lambda^2 division residual {residual:e} exceeds {tolerance:e}")]
    InconsistentClusters { residual: f64, tolerance: f64 },

    #[error("recovered parameters are invalid: {0}")]
    InvalidRecovery(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{what}: residual {residual:e} exceeds {tolerance:e}")]
    Tolerance {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyModel
            | Error::LengthMismatch { .. }
            | Error::NonIncreasingRates { .. }
            | Error::NonPositive { .. }
            | Error::InvalidStretched { .. } => "invalid_model",
            Error::NegativeTime(_) | Error::InvalidTolerance(_) | Error::InvalidModeIndex => {
                "invalid_argument"
            }
            Error::EmptyGrid | Error::InvalidGrid(_) | Error::InfeasibleNonNegativity => "fit",
            Error::Pole { .. } => "pole",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::DeflationResidual { .. } => "deflation_residual",
            Error::ZeroLeadingCoefficient | Error::DegreeTooLow { .. } => "invalid_polynomial",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Unsupported(_) => "unsupported",
            Error::ConjugateClosure { .. }
            | Error::DegeneratePair(_)
            | Error::ClusterShape { .. }
            | Error::InconsistentClusters { .. }
            | Error::InvalidRecovery(_) => "inverse",
            Error::Config(_) => "config",
            Error::Tolerance { .. } => "tolerance",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
