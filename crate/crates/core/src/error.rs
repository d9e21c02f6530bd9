use thiserror::Error;

/// Errors produced by the conformal, bound, simulation and ingestion routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("split sizes do not add up: {0}")]
    SizeMismatch(String),
    #[error("series too short: need more than {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("empty input")]
    EmptyInput,
    #[error("no calibration points fall in set `{0}`")]
    EmptyConditionSet(String),
    #[error("rank-one-out needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("calibration data is empty")]
    EmptyCalibration,
    #[error("test data is empty")]
    EmptyTest,
    #[error("training data is empty")]
    EmptyTraining,
    #[error("score has no closed-form interval inversion")]
    NotInvertible,
    #[error("predictor mode does not support this operation: {0}")]
    WrongMode(&'static str),
    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),
    #[error("chain has no unique stationary distribution")]
    NoUniqueStationary,
    #[error("autoregressive coefficient {0} is not in (-1, 1)")]
    NonStationaryLambda(f64),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("no feasible block plan for the given sample size, confidence and mixing profile")]
    NoFeasiblePlan,
    #[error("scale estimate must be positive, got {0}")]
    NonpositiveScale(f64),
    #[error("lambda {0} is not on the grid")]
    LambdaNotInGrid(f64),
    #[error("no grid value controls the risk at the requested level")]
    NoControllingLambda,
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: timestamp is not strictly increasing")]
    NonMonotoneTimestamps { line: u64 },
    #[error("line {line}: price must be positive")]
    NonpositivePrice { line: u64 },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
