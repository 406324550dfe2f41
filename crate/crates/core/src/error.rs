use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian (asymmetry {asymmetry:.3e})")]
    NonHermitian { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("function is undefined on eigenvalue {eigenvalue}")]
    Domain { eigenvalue: f64 },

    #[error("operator has eigenvalue {eigenvalue:.3e} below the clip tolerance")]
    NotPositive { eigenvalue: f64 },

    #[error("measurement acceptance probability {0:.3e} is too small")]
    ZeroAcceptance(f64),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("matrix is not column stochastic: {0}")]
    NotStochastic(String),

    #[error("channel is not classical")]
    NotClassical,

    #[error("primal/dual gap {gap:.3e} exceeds tolerance")]
    NumericalGap { gap: f64 },

    #[error("bracket inverted: lower {lower} > upper {upper}")]
    BracketInverted { lower: f64, upper: f64 },

    #[error("Renyi divergence of order {alpha} is infinite")]
    InfiniteRenyi { alpha: f64 },

    #[error("channel divergence is infinite")]
    InfiniteDivergence,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("dimension {dim} exceeds cap {cap}")]
    CapExceeded { dim: usize, cap: usize },

    #[error("dimension {0} is odd")]
    OddDimension(usize),

    #[error("vector length {0} is odd")]
    OddLength(usize),

    #[error("unknown suite '{0}'")]
    UnknownSuite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
