use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("integration diverged at t = {time}")]
    IntegrationDiverged { time: f64 },
    #[error("innovation covariance is numerically singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("covariance is not symmetric positive semidefinite")]
    InvalidCovariance,
    #[error("truncation rectangle has vanishing probability mass ({mass:e})")]
    VanishingMass { mass: f64 },
    #[error("censored-history covariance is degenerate")]
    DegenerateHistory,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid censor region: {0}")]
    InvalidRegion(String),
    #[error("target time {target} precedes belief time {current}")]
    TimeOrder { current: f64, target: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("step {step} (t = {time}): {source}")]
    AtStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<FilterError>,
    },
}

pub type Result<T, E = FilterError> = std::result::Result<T, E>;

pub(crate) fn dim_err(what: impl Into<String>) -> FilterError {
    FilterError::Dimension(what.into())
}
