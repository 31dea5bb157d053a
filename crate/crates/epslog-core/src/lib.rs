//! Numerical core for small-position expansions of the log-utility value of
//! an agent holding a trickle of non-traded income in a factor market.
//!
//! The crate simulates the market state, computes the two nested
//! conditional-expectation projections of the income (in closed form and by
//! cross-sectional regression), estimates the moments entering the quartic
//! value and certainty-equivalent expansions, and evaluates primal/dual
//! bounds that certify the expansion error empirically.
//!
//! All numerical code is generic over the scalar type through
//! [`scalar::Real`]; the aliases at the crate root fix `f64`, which is what
//! the command-line front end uses.

pub mod bounds;
pub mod error;
pub mod expansion;
pub mod kw;
pub mod model;
pub mod paths;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};

/// Default market parameters in `f64`.
pub type MarketSpec = model::MarketSpec<f64>;
/// Default numerics configuration in `f64`.
pub type NumericsConfig = model::NumericsConfig<f64>;
/// Numeraire quantities in `f64`.
pub type NumeraireSpec = model::NumeraireSpec<f64>;
/// Validated specification in `f64`.
pub type ValidatedSpec = model::ValidatedSpec<f64>;
/// Materialized ensemble in `f64`.
pub type PathBundle = paths::PathBundle<f64>;
/// Time grid in `f64`.
pub type TimeGrid = paths::TimeGrid<f64>;
/// Projected decomposition paths in `f64`.
pub type KWPaths = kw::KWPaths<f64>;
/// Terminal moments in `f64`.
pub type Moments = kw::Moments<f64>;
/// Orthogonality diagnostics in `f64`.
pub type OrthogonalityReport = kw::OrthogonalityReport<f64>;
/// Regression feature basis in `f64`.
pub type RegressionBasis = kw::RegressionBasis<f64>;
/// Value/consumption expansion table in `f64`.
pub type ExpansionReport = expansion::ExpansionReport<f64>;
/// Primal/dual certification table in `f64`.
pub type BoundsReport = bounds::BoundsReport<f64>;
/// Decay-check summary of a certification table in `f64`.
pub type ResidualSummary = bounds::ResidualSummary<f64>;
/// Streamed closed-form estimation results in `f64`.
pub type ClosedFormStream = pipeline::ClosedFormStream<f64>;
/// Streamed regression fit/evaluation results in `f64`.
pub type RegressionStream = pipeline::RegressionStream<f64>;
