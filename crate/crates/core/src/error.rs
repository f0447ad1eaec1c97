use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sampling box too small: {0}")]
    BoxTooSmall(String),

    #[error("Hilbert space dimension {dim} exceeds the configured maximum {max} (largest admissible fock cutoff: {max_cutoff})")]
    DimensionOverflow { dim: usize, max: usize, max_cutoff: usize },

    #[error("{what} did not converge (residual {residual:.3e})")]
    NonConvergence { what: &'static str, residual: f64 },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors that come from numerical routines rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::Undefined(_) | Error::DimensionOverflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    ensure_finite(name, value)?;
    if value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be > 0, got {value}")))
    }
}

pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    ensure_finite(name, value)?;
    if value >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be >= 0, got {value}")))
    }
}

pub(crate) fn ensure_probability(name: &'static str, value: f64) -> Result<()> {
    ensure_finite(name, value)?;
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must lie in [0, 1], got {value}")))
    }
}
