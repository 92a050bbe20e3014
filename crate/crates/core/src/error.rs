use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by the mechanics, constraint, control and integration layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("metric is not symmetric positive definite at q = {q:?}")]
    MetricDegenerate { q: Vec<f64> },

    #[error("control vector fields are dependent: rank {rank} < {inputs}")]
    DependentInputs { rank: usize, inputs: usize },

    #[error("transversality violated at t = {t}: coupling matrix condition {condition:e}")]
    Transversality { t: f64, condition: f64, state: Vec<f64> },

    #[error("rank deficient {what}: rank {rank}, expected {expected}")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("state is off the constraint manifold: |phi|_inf = {residual:e} > {tolerance:e}")]
    OffManifold { residual: f64, tolerance: f64 },

    #[error("reduced Chetaev system is singular at t = {t}")]
    ChetaevDegenerate { t: f64 },

    #[error("constraint drift {residual:e} exceeds {limit:e} at t = {t}")]
    ConstraintDrift { t: f64, residual: f64, limit: f64 },

    #[error("integration blew up at t = {t}")]
    Blowup { t: f64 },

    #[error("projection onto the constraint manifold did not converge (residual {residual:e})")]
    ProjectionFailed { residual: f64 },

    #[error("invalid decay window: {0}")]
    DecayWindow(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
