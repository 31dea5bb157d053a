//! Market and numerics specifications, derived numeraire quantities, and the
//! checkable validity conditions.
//!
//! The market has one riskless baseline, one risky asset with excess return
//! `dR = a·dt + σ·dW¹`, and a mean-reverting factor
//! `dZ = k(θ − Z)·dt + b·dB` with `B = ρ·W¹ + √(1−ρ²)·W²`. The agent holds a
//! small position in a non-traded income stream paying at rate `Z` per unit
//! time, discounted at rate `r`. All downstream quantities are expressed in
//! units of the growth-optimal (numeraire) portfolio, which for this market
//! is the constant-weight strategy `π⋆ = a/σ²` with market price of risk
//! `mpr = π⋆σ = a/σ`; dividing by its wealth process multiplies payoffs by
//! the exponential martingale `S₀(t) = exp(−mpr·W¹(t) − ½·mpr²·t)`.
//!
//! Validity conditions
//! -------------------
//! * `2r > mpr²` makes the squared conditional-expectation process of the
//!   income integrable (hard error otherwise).
//! * `r > 7·mpr²/2` is a sufficient condition for the fourth moment of the
//!   cumulative income to exist; it is reported as a warning, not an error,
//!   because the moments may exist without it.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Scalar parameters of the factor market and income stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketSpec<T: Real> {
    /// Discount rate of the income stream, per unit time (> 0).
    pub r: T,
    /// Excess drift rate of the risky asset.
    pub a: T,
    /// Volatility of the risky asset (> 0).
    pub sigma: T,
    /// Correlation between the factor driver and the asset driver.
    ///
    /// Must lie in (−1, 1); the endpoints are admitted only when
    /// [`complete_market_mode`](Self::complete_market_mode) is set.
    pub rho: T,
    /// Mean-reversion speed of the factor (> 0).
    pub k: T,
    /// Long-run mean of the factor.
    pub theta: T,
    /// Volatility of the factor (≥ 0).
    pub b: T,
    /// Initial factor value.
    pub z0: T,
    /// Permits |ρ| = 1 for studying the perfectly-hedgeable limit.
    pub complete_market_mode: bool,
}

impl<T: Real> MarketSpec<T> {
    /// Reference parameter set used by the command-line tool when no
    /// configuration file overrides it.
    pub fn defaults() -> Self {
        MarketSpec {
            r: lit(1.0),
            a: lit(0.1),
            sigma: lit(0.2),
            rho: lit(0.5),
            k: lit(1.0),
            theta: lit(0.0),
            b: lit(0.3),
            z0: lit(0.2),
            complete_market_mode: false,
        }
    }
}

/// Discretization and ensemble controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericsConfig<T: Real> {
    /// Time step of the uniform grid (> 0).
    pub dt: T,
    /// Number of simulated paths (≥ 2).
    pub n_paths: usize,
    /// Seed from which every per-path random stream is derived.
    pub seed: u64,
    /// Tolerance for truncating the infinite-horizon income integral.
    pub horizon_tol: T,
    /// Evaluate path kernels on a thread pool; per-path streams make the
    /// result independent of the thread count either way.
    pub parallel: bool,
    /// Pair path 2p+1 with path 2p through negated Gaussian draws.
    ///
    /// On by default for moment estimation, where the pairing cancels the
    /// leading odd fluctuations; bound evaluation switches it off because the
    /// common-random-number coupling across quantities matters more there.
    pub antithetic: bool,
    /// Per-field element budget for materialized ensembles
    /// (`n_paths · (n_steps + 1)` must stay at or below it). Streaming
    /// estimators are exempt; they hold only per-chunk state.
    pub alloc_budget: usize,
}

impl<T: Real> NumericsConfig<T> {
    /// Reference numerics used by the command-line tool: `dt = 0.005`,
    /// `2·10⁵` paths, seed 0, tail tolerance `10⁻⁴`.
    pub fn defaults() -> Self {
        NumericsConfig {
            dt: lit(0.005),
            n_paths: 200_000,
            seed: 0,
            horizon_tol: lit(1e-4),
            parallel: true,
            antithetic: false,
            alloc_budget: 1 << 25,
        }
    }
}

/// Quantities of the growth-optimal portfolio implied by a [`MarketSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumeraireSpec<T: Real> {
    /// Numeraire portfolio weight π⋆ = a/σ².
    pub pi_star: T,
    /// Market price of risk π⋆σ = a/σ.
    pub mpr: T,
    /// Risk-adjusted factor drift constant η = kθ − bσπ⋆ρ; under the
    /// numeraire-induced measure the factor mean-reverts to η/k.
    pub eta: T,
}

/// Factor dynamics and income data for the general (non-closed-form) route:
/// `dZ = μ(Z)·dt + κ(Z)·dB`, income rate `λ(Z)`, discount rate `R₀(Z)`.
///
/// Used by the steady-state ODE solver
/// [`solve_psi_ode`](crate::kw::solve_psi_ode), which works on the truncated
/// interval [`z_lo`](Self::z_lo)..[`z_hi`](Self::z_hi).
pub struct GeneralFactorSpec<T: Real> {
    /// Factor drift μ(z).
    pub mu: Box<dyn Fn(T) -> T + Send + Sync>,
    /// Factor volatility κ(z); must be strictly positive on the interior.
    pub kappa: Box<dyn Fn(T) -> T + Send + Sync>,
    /// Income rate λ(z).
    pub lam: Box<dyn Fn(T) -> T + Send + Sync>,
    /// Discount rate R₀(z).
    pub r0: Box<dyn Fn(T) -> T + Send + Sync>,
    /// Hedge-adjustment coefficient π⋆σρ multiplying κ in the first-order
    /// term of the steady-state equation.
    pub hedge_coeff: T,
    /// Lower end of the truncated factor domain.
    pub z_lo: T,
    /// Upper end of the truncated factor domain.
    pub z_hi: T,
}

impl<T: Real> std::fmt::Debug for GeneralFactorSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralFactorSpec")
            .field("z_lo", &self.z_lo)
            .field("z_hi", &self.z_hi)
            .field("hedge_coeff", &self.hedge_coeff)
            .finish_non_exhaustive()
    }
}

impl<T: Real> GeneralFactorSpec<T> {
    /// Instantiates the general route with the concrete market's data:
    /// μ(z) = k(θ − z), κ(z) = b, λ(z) = z, R₀(z) = r, hedge coefficient
    /// π⋆σρ.
    pub fn from_market(market: &MarketSpec<T>, num: &NumeraireSpec<T>, z_lo: T, z_hi: T) -> Self {
        let (k, theta, b, r) = (market.k, market.theta, market.b, market.r);
        GeneralFactorSpec {
            mu: Box::new(move |z| k * (theta - z)),
            kappa: Box::new(move |_| b),
            lam: Box::new(move |z| z),
            r0: Box::new(move |_| r),
            hedge_coeff: num.mpr * market.rho,
            z_lo,
            z_hi,
        }
    }
}

/// A market/numerics pair that passed [`validate_spec`], with any warnings
/// produced along the way.
#[derive(Debug, Clone)]
pub struct ValidatedSpec<T: Real> {
    /// The validated market parameters.
    pub market: MarketSpec<T>,
    /// The validated numerics configuration.
    pub numerics: NumericsConfig<T>,
    /// Non-fatal diagnostics (currently: the fourth-moment sufficient
    /// condition `r > 7·mpr²/2` failing).
    pub warnings: Vec<String>,
}

fn require_positive<T: Real>(name: &'static str, value: T) -> Result<()> {
    if value > T::zero() {
        Ok(())
    } else {
        Err(Error::NonPositiveParameter {
            name,
            value: value.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Checks every invariant of the market and numerics parameters and returns
/// the pair bundled with warnings.
///
/// Errors: [`Error::NonPositiveParameter`] for σ, k, r, b (≥ 0), dt,
/// horizon_tol, n_paths; [`Error::RhoOutOfRange`]; and
/// [`Error::IntegrabilityViolation`] when `2r ≤ mpr²`.
pub fn validate_spec<T: Real>(
    market: &MarketSpec<T>,
    numerics: &NumericsConfig<T>,
) -> Result<ValidatedSpec<T>> {
    require_positive("sigma", market.sigma)?;
    require_positive("k", market.k)?;
    require_positive("r", market.r)?;
    if !(market.b >= T::zero()) {
        return Err(Error::NonPositiveParameter {
            name: "b",
            value: market.b.to_f64().unwrap_or(f64::NAN),
        });
    }
    require_positive("dt", numerics.dt)?;
    require_positive("horizon_tol", numerics.horizon_tol)?;
    if numerics.n_paths < 2 {
        return Err(Error::NonPositiveParameter {
            name: "n_paths",
            value: numerics.n_paths as f64,
        });
    }

    let one = T::one();
    let rho_ok = if market.complete_market_mode {
        market.rho >= -one && market.rho <= one
    } else {
        market.rho > -one && market.rho < one
    };
    if !rho_ok {
        return Err(Error::RhoOutOfRange {
            rho: market.rho.to_f64().unwrap_or(f64::NAN),
            allowed: if market.complete_market_mode {
                "[-1, 1]"
            } else {
                "(-1, 1)"
            },
        });
    }

    let num = derive_numeraire(market);
    let mpr_sq = num.mpr * num.mpr;
    let two_r = lit::<T>(2.0) * market.r;
    if !(two_r > mpr_sq) {
        return Err(Error::IntegrabilityViolation {
            two_r: two_r.to_f64().unwrap_or(f64::NAN),
            mpr_sq: mpr_sq.to_f64().unwrap_or(f64::NAN),
        });
    }

    let mut warnings = Vec::new();
    let fourth_moment_threshold = lit::<T>(3.5) * mpr_sq;
    if !(market.r > fourth_moment_threshold) {
        warnings.push(format!(
            "WARNING: r = {} does not exceed 7*mpr^2/2 = {}; the fourth moment \
             of the cumulative income is not guaranteed by the checkable \
             sufficient condition",
            market.r, fourth_moment_threshold,
        ));
    }

    Ok(ValidatedSpec {
        market: *market,
        numerics: *numerics,
        warnings,
    })
}

/// Derives the numeraire-portfolio quantities: π⋆ = a/σ², mpr = π⋆σ,
/// η = kθ − bσπ⋆ρ.
///
/// Deterministic and idempotent; requires only σ ≠ 0.
pub fn derive_numeraire<T: Real>(market: &MarketSpec<T>) -> NumeraireSpec<T> {
    let pi_star = market.a / (market.sigma * market.sigma);
    let mpr = pi_star * market.sigma;
    let eta = market.k * market.theta - market.b * market.sigma * pi_star * market.rho;
    NumeraireSpec { pi_star, mpr, eta }
}

/// Smallest grid-aligned horizon `T_max` at which the analytic tail bound
/// `C_Z·e^{−ν·T}/ν ≤ tol` holds, with decay rate `ν = r − mpr²/2` and
/// `C_Z = sqrt(2(θ² + b²/(2k)) + 2(z0 − θ)²)`.
///
/// The bound dominates `E|F(∞) − F(T)|` for the cumulative income `F` by
/// Cauchy–Schwarz applied to the integrand `e^{−rt}·S₀·|Z|`, so truncating
/// the simulation at `T_max` perturbs first moments by at most `tol`.
/// Returns at least one step. Errors: [`Error::DecayRateNonPositive`] when
/// ν ≤ 0.
pub fn horizon_truncation<T: Real>(market: &MarketSpec<T>, dt: T, tol: T) -> Result<T> {
    let num = derive_numeraire(market);
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);
    let nu = market.r - half * num.mpr * num.mpr;
    if !(nu > T::zero()) {
        return Err(Error::DecayRateNonPositive {
            nu: nu.to_f64().unwrap_or(f64::NAN),
        });
    }
    let dev = market.z0 - market.theta;
    let c_z = (two * (market.theta * market.theta + market.b * market.b / (two * market.k))
        + two * dev * dev)
        .sqrt();
    let t_star = if c_z == T::zero() {
        T::zero()
    } else {
        // Solve C_Z·e^{−ν·T}/ν = tol for T; negative solutions mean the
        // bound already holds at T = 0.
        (c_z / (nu * tol)).ln().max(T::zero()) / nu
    };
    let steps = (t_star / dt).ceil().to_usize().unwrap_or(0).max(1);
    Ok(crate::scalar::from_count::<T>(steps) * dt)
}
