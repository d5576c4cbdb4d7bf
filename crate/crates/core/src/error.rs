use thiserror::Error;

pub type Result<T> = std::result::Result<T, MixError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixError {
    #[error("invalid location estimate for component {component}: {value}")]
    InvalidLocation { component: usize, value: f64 },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("mode undefined: alpha + n = {value} for component {component}")]
    ModeUndefined { component: usize, value: f64 },

    #[error("more components than observations ({k} > {n})")]
    TooManyComponents { k: usize, n: usize },

    #[error("observation {index} unsupported by all components")]
    UnsupportedObservation { index: usize },

    #[error("empty trace")]
    EmptyTrace,

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("Chib denominator zero")]
    ChibDenominatorZero,

    #[error("label {label} out of range for K = {k}")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("component {component} out of range for K = {k}")]
    ComponentOutOfRange { component: usize, k: usize },

    #[error("invalid observations: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid density grid: {0}")]
    InvalidGrid(String),
}

impl MixError {
    /// Numerical failures (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MixError::Quadrature(_)
                | MixError::ModeUndefined { .. }
                | MixError::UnsupportedObservation { .. }
                | MixError::EmptyTrace
                | MixError::ChibDenominatorZero
                | MixError::InvalidLocation { .. }
        )
    }
}
