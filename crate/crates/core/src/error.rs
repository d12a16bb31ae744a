//! Error type shared by every module in the library.
//!
//! Variants map one-to-one onto the failure modes of the public operations:
//! validation problems carry the offending parameter name so front ends can
//! produce field-level diagnostics, numerical problems carry enough context
//! to reproduce the failure.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A parameter failed validation (wrong sign, non-finite, out of range).
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// An input collection was empty, unsorted, or inconsistently shaped.
    #[error("invalid input `{name}`: {message}")]
    InvalidInput { name: &'static str, message: String },

    /// An adaptive numerical routine failed to converge.
    #[error("{routine} did not converge: {details}")]
    NonConvergence { routine: &'static str, details: String },

    /// The requested derivative is indistinguishable from numerical noise.
    #[error("degenerate operating point: {0}")]
    DegenerateOperatingPoint(String),

    /// A sample-rate precondition was violated.
    #[error("sampling violation: {0}")]
    SamplingViolation(String),

    /// A trace or window length precondition was violated.
    #[error("length error: {0}")]
    LengthError(String),

    /// Symbol timing metadata is inconsistent with the trace.
    #[error("sync error: {0}")]
    SyncError(String),

    /// A least-squares fit failed or its inputs do not support a fit.
    #[error("fit error: {0}")]
    FitError(String),

    /// Spectral peaks could not be resolved for fitting.
    #[error("resolution error: {0}")]
    ResolutionError(String),

    /// A derived quantity fell outside the representable range of the data
    /// (for example a sensitivity curve that never doubles).
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// A campaign configuration names an invalid sweep point.
    #[error("configuration error: {0}")]
    Configuration(String),
}

impl CoreError {
    pub fn invalid_parameter(name: &'static str, message: impl Into<String>) -> Self {
        CoreError::InvalidParameter { name, message: message.into() }
    }

    pub fn invalid_input(name: &'static str, message: impl Into<String>) -> Self {
        CoreError::InvalidInput { name, message: message.into() }
    }
}

/// Validate that `value` is finite and strictly positive.
pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(CoreError::invalid_parameter(
            name,
            format!("must be finite and > 0, got {value}"),
        ));
    }
    Ok(())
}

/// Validate that `value` is finite (any sign).
pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(CoreError::invalid_parameter(name, format!("must be finite, got {value}")));
    }
    Ok(())
}

/// Validate that `value` is finite and non-negative.
pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(CoreError::invalid_parameter(
            name,
            format!("must be finite and >= 0, got {value}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_parameter_message_names_the_field() {
        let err = ensure_positive("gamma_e", -1.0).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("gamma_e"), "error should name the parameter: {text}");
        assert!(text.contains("-1"), "error should include the offending value: {text}");
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(ensure_finite("delta_p", f64::NAN).is_err());
        assert!(ensure_finite("delta_p", f64::INFINITY).is_err());
        assert!(ensure_finite("delta_p", -3.5).is_ok());
        assert!(ensure_non_negative("corner", -0.1).is_err());
        assert!(ensure_non_negative("corner", 0.0).is_ok());
    }
}
