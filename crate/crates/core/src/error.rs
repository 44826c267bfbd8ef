use thiserror::Error;

/// Round for display so `0.5 + 0.3 + 0.1` prints as `0.9`.
fn display_mass(mass: &f64) -> f64 {
    (mass * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("{field} not symmetric")]
    NotSymmetric { field: &'static str },
    #[error("{field} not positive semidefinite")]
    NotPositiveSemidefinite { field: &'static str },
    #[error("{field} not positive definite")]
    NotPositiveDefinite { field: &'static str },
    #[error("{field}: probability {value} outside [0, 1]{}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    ProbabilityOutOfRange {
        field: &'static str,
        index: Option<usize>,
        value: f64,
    },
    #[error("{field}: PMF mass {} ≠ 1", display_mass(mass))]
    PmfMass { field: &'static str, mass: f64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix not symmetric within {tol:e} (max asymmetry {asymmetry:e})")]
    NotSymmetric { tol: f64, asymmetry: f64 },
    #[error("matrix not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("step {step} outside the horizon 0..{horizon}")]
    StepOutOfHorizon { step: usize, horizon: usize },
    #[error("mode {mode} outside 0..={max}")]
    ModeOutOfRange { mode: usize, max: usize },
    #[error("state estimate has length {found}, expected {expected}")]
    EstimateLength { expected: usize, found: usize },
    #[error("transition matrix has {found} modes, model has {expected}")]
    ModeCountMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("sequence for step {step} already recorded")]
    DuplicateSend { step: usize },
    #[error("sequence origin {found} out of order, expected {expected}")]
    SendOutOfOrder { expected: usize, found: usize },
    #[error("sequence has {found} entries, expected {expected}")]
    SequenceLength { expected: usize, found: usize },
    #[error("mode {mode} outside 0..={max}")]
    ModeOutOfRange { mode: usize, max: usize },
    #[error("acknowledgement for step {step} arrived before its sequence was sent")]
    AckBeforeSend { step: usize },
    #[error("estimate requested for step {requested}, estimator is at step {current}")]
    StepMismatch { requested: usize, current: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("instance too large: {paths} mode paths exceed the limit of {limit}")]
    InstanceTooLarge { paths: f64, limit: usize },
    #[error("insufficient data: {found} transitions, need at least {required}")]
    InsufficientData { found: usize, required: usize },
    #[error("gain schedule does not match the scenario: {0}")]
    ScheduleMismatch(String),
    #[error("at least one run is required")]
    NoRuns,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("missing required section: {0}")]
    MissingSection(&'static str),
    #[error("missing required key: {0}")]
    MissingKey(String),
    #[error("unknown network fixture \"{0}\"")]
    UnknownFixture(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("malformed results CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
