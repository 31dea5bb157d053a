//! Error type shared by every module of the crate.
//!
//! All fallible operations return [`Error`]; each variant belongs to the
//! module that raises it and [`Error::code`] exposes a stable
//! `module/VariantName` string that front ends can print or match on without
//! parsing display text.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error for model validation, simulation, projection, bound
/// evaluation, and configuration handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Correlation outside the admissible interval: (−1, 1) normally, or
    /// [−1, 1] when the complete-market flag is set.
    #[error("correlation rho = {rho} outside {allowed} (set complete_market_mode for |rho| = 1)")]
    RhoOutOfRange {
        /// Offending value.
        rho: f64,
        /// Human-readable admissible interval.
        allowed: &'static str,
    },

    /// A parameter that must be strictly positive is zero or negative.
    #[error("parameter {name} = {value} must be strictly positive")]
    NonPositiveParameter {
        /// Parameter name as written in the configuration file.
        name: &'static str,
        /// Offending value.
        value: f64,
    },

    /// The discount rate is too small for the squared conditional-expectation
    /// process to exist: the closed forms need 2r > (π⋆σ)².
    #[error("integrability violated: 2r = {two_r} must exceed (pi_star*sigma)^2 = {mpr_sq}")]
    IntegrabilityViolation {
        /// 2r.
        two_r: f64,
        /// Squared market price of risk.
        mpr_sq: f64,
    },

    /// The endowment tail bound decays at rate ν = r − (π⋆σ)²/2 ≤ 0, so no
    /// finite truncation horizon reaches the requested tolerance.
    #[error("tail decay rate nu = {nu} is not positive; horizon truncation impossible")]
    DecayRateNonPositive {
        /// ν = r − (π⋆σ)²/2.
        nu: f64,
    },

    /// A materialized ensemble would exceed the per-field allocation budget.
    #[error(
        "ensemble needs {requested} scalars per field, budget is {budget}; \
         reduce n_paths/horizon or use the streaming pipeline"
    )]
    AllocationTooLarge {
        /// n_paths · (n_steps + 1) for the requested run.
        requested: usize,
        /// Configured per-field element budget.
        budget: usize,
    },

    /// The regression design matrix is rank deficient and no ridge term was
    /// supplied to regularize it.
    #[error("singular design matrix at time step {step} (ridge = 0); drop duplicate features or set ridge > 0")]
    SingularDesignMatrix {
        /// Time-step index where the normal equations failed.
        step: usize,
    },

    /// A regression feature evaluated to a non-finite value on the sample.
    #[error("feature {feature} evaluated to a non-finite value at time step {step}")]
    BasisRangeOverflow {
        /// Feature index in the basis.
        feature: usize,
        /// Time-step index.
        step: usize,
    },

    /// The tridiagonal system of the factor ODE solver lost positivity /
    /// hit a zero pivot (e.g. zero discounting with free boundary closure).
    #[error("tridiagonal solve failed: zero pivot at row {row}")]
    SingularSystem {
        /// Row index of the vanishing pivot.
        row: usize,
    },

    /// A bound evaluation was requested at a quantity above the admissible
    /// threshold.
    #[error("eps = {eps} is not below the admissible threshold eps_L = {eps_l}")]
    EpsTooLarge {
        /// Requested quantity.
        eps: f64,
        /// Admissible threshold.
        eps_l: f64,
    },

    /// Too many paths violated positivity of the candidate wealth in the
    /// lower-bound evaluation.
    #[error("primal positivity violated on {frac} of paths at eps = {eps} (limit {limit})")]
    TooManyViolations {
        /// Measured violation fraction.
        frac: f64,
        /// Quantity at which it was measured.
        eps: f64,
        /// Acceptance limit.
        limit: f64,
    },

    /// The dual density became non-positive on some path, which the stopping
    /// barriers are supposed to exclude; indicates an internal indexing bug.
    #[error("dual density non-positive on path {path} at eps = {eps}: value {value}")]
    NonPositiveDensity {
        /// Path index.
        path: usize,
        /// Quantity.
        eps: f64,
        /// Offending density value.
        value: f64,
    },

    /// Residual analysis needs at least three grid points to certify decay.
    #[error("eps grid has {len} points; residual analysis needs at least {min}")]
    GridTooSmall {
        /// Supplied grid length.
        len: usize,
        /// Minimum required.
        min: usize,
    },

    /// The configuration file could not be parsed.
    #[error("config parse error at line {line}: {reason}")]
    ConfigParseError {
        /// 1-based line number in the configuration file.
        line: usize,
        /// What went wrong.
        reason: String,
    },

    /// An I/O operation on an input or output artifact failed.
    #[error("i/o error on {path}: {source}")]
    IoError {
        /// File the operation touched.
        path: String,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable `module/VariantName` code for front-end reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::RhoOutOfRange { .. } => "model/RhoOutOfRange",
            Error::NonPositiveParameter { .. } => "model/NonPositiveParameter",
            Error::IntegrabilityViolation { .. } => "model/IntegrabilityViolation",
            Error::DecayRateNonPositive { .. } => "model/DecayRateNonPositive",
            Error::AllocationTooLarge { .. } => "paths/AllocationTooLarge",
            Error::SingularDesignMatrix { .. } => "kw/SingularDesignMatrix",
            Error::BasisRangeOverflow { .. } => "kw/BasisRangeOverflow",
            Error::SingularSystem { .. } => "kw/SingularSystem",
            Error::EpsTooLarge { .. } => "bounds/EpsTooLarge",
            Error::TooManyViolations { .. } => "bounds/TooManyViolations",
            Error::NonPositiveDensity { .. } => "bounds/NonPositiveDensity",
            Error::GridTooSmall { .. } => "bounds/GridTooSmall",
            Error::ConfigParseError { .. } => "config/ConfigParseError",
            Error::IoError { .. } => "io/IoError",
        }
    }

    /// Wraps a `std::io::Error` with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::IoError {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_module_qualified() {
        let err = Error::RhoOutOfRange {
            rho: 1.2,
            allowed: "(-1, 1)",
        };
        assert_eq!(err.code(), "model/RhoOutOfRange");
        let err = Error::SingularDesignMatrix { step: 3 };
        assert_eq!(err.code(), "kw/SingularDesignMatrix");
    }

    #[test]
    fn display_carries_values() {
        let err = Error::NonPositiveParameter {
            name: "sigma",
            value: -0.5,
        };
        let msg = err.to_string();
        assert!(msg.contains("sigma"), "message should name the parameter: {msg}");
        assert!(msg.contains("-0.5"), "message should carry the value: {msg}");
    }

    #[test]
    fn io_helper_preserves_path() {
        let err = Error::io(
            "/tmp/out.csv",
            std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        );
        assert_eq!(err.code(), "io/IoError");
        assert!(err.to_string().contains("/tmp/out.csv"));
    }
}
