//! Primal/dual certification of the quartic value approximation.
//!
//! The value of the position admits a sandwich: an admissible candidate
//! strategy gives a lower bound, and a change-of-measure argument gives an
//! upper bound. Both are Monte Carlo means over the same ensemble:
//!
//! ```text
//!     u_low = E[ ln(1 + ε·Δ^τ(T) + ε²·Γ^τ(T) − ε·m(T)) ]
//!     u_up  = −ε·E[m(T)] − ε²·E[(N^τ(T))²] − ε³·E[P^τ(T)·N^τ(T)]
//!             + E[ −ln(1 + ε·N^τ(T) + ε²·P^τ(T)) + ε·N^τ(T) + ε²·P^τ(T) ],
//! ```
//!
//! where `X^τ` denotes the process stopped at the first grid time any of
//! the four barriers
//!
//! ```text
//!     |Δ| ≥ 1/(6ε),  |Γ| ≥ 1/(6ε²),  |N| ≥ 1/(4ε),  |P| ≥ 1/(4ε²)
//! ```
//!
//! is breached. The barriers force the dual density `1 + εN^τ + ε²P^τ`
//! to stay above ½ up to a one-step overshoot, and they certify the
//! admissibility of the candidate for every
//! `ε < ε^L = min(1, 1/(4|A₁|), 1/(2√P(0)))`.
//!
//! The certified payoff `m(T) = Δ(T) + N(T)` is the terminal value of the
//! projected income closure — the identical random variable whose moments
//! feed the quartic approximation. Under the regression backend it equals
//! the accumulated income integral path by path; under the closed-form
//! backend the two differ by the unresolved beyond-horizon tail, whose
//! mean the horizon rule keeps below the configured tolerance. Certifying
//! the closure keeps the bound/approximation comparison free of that
//! modeling term, so the reported ratios measure the expansion error
//! itself.
//!
//! # Numerical notes
//!
//! Each ensemble mean is evaluated with control variates of exactly known
//! zero expectation: the primal integrand subtracts
//! `ε·Δ^τ + ε²·Γ^τ + ε³·N^τΓ^τ` (stopped martingales started at zero, and
//! a product of strongly orthogonal martingales), the dual integrand adds
//! `ε⁴·P^τΓ^τ`. A term-by-term expansion shows the adjusted per-path
//! integrands match the per-path integrand of the quartic approximation
//! through order ε⁴, so when `u_hat` is evaluated with moments from the
//! *same* paths, the errors `u_hat − u_low` and `u_up − u_hat` are means
//! of O(ε⁵) quantities: both the bias and the Monte Carlo noise of the
//! reported ε⁻⁴-scaled ratios shrink linearly in ε, which is what makes
//! the empirical o(ε⁴) check feasible at practical path counts. The
//! control variates change no expectation: the reported bounds are
//! unbiased estimates of the expressions above.
//!
//! The first-passage check runs on grid values (no bridge correction);
//! one-step overshoot beyond a barrier is possible and its ensemble
//! maximum is reported next to the largest single-step increment, which
//! bounds it by construction. Paths whose primal argument is not
//! positive are excluded from the primal mean and reported in
//! `primal_violation_frac`; more than 1% such paths aborts with
//! [`TooManyViolations`](crate::Error::TooManyViolations { .. }). Standard
//! errors are plain i.i.d.-path estimates: bound runs draw independent
//! (non-antithetic) ensembles.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion::value_expansion;
use crate::kw::moments::MeanVar;
use crate::kw::{KWPaths, Moments};
use crate::paths::PathBundle;
use crate::scalar::{from_count, lit, Real};

/// Largest admissible position size for bound runs.
///
/// `min(1, 1/(4|A₁|), 1/(2√P(0)))`, with degenerate inputs (zero mean or
/// zero variance) contributing no restriction.
pub fn eps_limit<T: Real>(a1: T, p0: T) -> T {
    let quarter_inv = if a1 == T::zero() {
        T::infinity()
    } else {
        T::one() / (lit::<T>(4.0) * a1.abs())
    };
    let half_inv_sqrt = if p0 > T::zero() {
        T::one() / (lit::<T>(2.0) * p0.sqrt())
    } else {
        T::infinity()
    };
    T::one().min(quarter_inv).min(half_inv_sqrt)
}

/// Position size plus the derived barrier levels.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StoppingConfig<T: Real> {
    /// Position size.
    pub eps: T,
    /// Barrier on |Δ|: `1/(6ε)`.
    pub barrier_delta: T,
    /// Barrier on |Γ|: `1/(6ε²)`.
    pub barrier_gamma: T,
    /// Barrier on |N|: `1/(4ε)`.
    pub barrier_n: T,
    /// Barrier on |P|: `1/(4ε²)`.
    pub barrier_p: T,
    /// Admissibility threshold the run was validated against.
    pub eps_limit: T,
}

impl<T: Real> StoppingConfig<T> {
    /// Whether the four process levels breach any barrier.
    pub(crate) fn breached(&self, delta: T, gamma: T, n: T, p: T) -> bool {
        delta.abs() >= self.barrier_delta
            || gamma.abs() >= self.barrier_gamma
            || n.abs() >= self.barrier_n
            || p.abs() >= self.barrier_p
    }

    /// Builds the barrier set for `eps`, rejecting sizes at or beyond the
    /// admissible threshold computed from the initial levels `(a1, p0)`.
    pub fn new(eps: T, a1: T, p0: T) -> Result<Self> {
        assert!(eps > T::zero(), "position size must be positive");
        let limit = eps_limit(a1, p0);
        if eps >= limit {
            return Err(Error::EpsTooLarge {
                eps: eps.to_f64().unwrap_or(f64::NAN),
                eps_l: limit.to_f64().unwrap_or(f64::NAN),
            });
        }
        let six = lit::<T>(6.0);
        let four = lit::<T>(4.0);
        let eps2 = eps * eps;
        Ok(StoppingConfig {
            eps,
            barrier_delta: T::one() / (six * eps),
            barrier_gamma: T::one() / (six * eps2),
            barrier_n: T::one() / (four * eps),
            barrier_p: T::one() / (four * eps2),
            eps_limit: limit,
        })
    }
}

/// First-passage summary of one ε over a filled decomposition.
#[derive(Debug, Clone)]
pub struct StoppingTimes<T: Real> {
    /// Barrier configuration the passage was computed under.
    pub config: StoppingConfig<T>,
    /// First grid-point index at which any barrier is breached, one per
    /// path; paths that never breach carry the final index.
    pub indices: Vec<u32>,
    /// Whether each path genuinely breached a barrier (distinguishes a
    /// breach at the final point from no breach at all).
    pub stopped: Vec<bool>,
    /// Number of evaluation-range paths that breached.
    pub stop_count: usize,
    /// Number of evaluation-range paths.
    pub n_eval: usize,
    /// Largest breach overshoot beyond each barrier `[Δ, Γ, N, P]` on the
    /// evaluation range.
    pub overshoot: [T; 4],
    /// Largest single-step increment of each process `[Δ, Γ, N, P]` on
    /// the evaluation range; bounds the overshoot by construction.
    pub max_step: [T; 4],
}

impl<T: Real> StoppingTimes<T> {
    /// Fraction of evaluation paths that breached a barrier.
    pub fn stop_frac(&self) -> T {
        from_count::<T>(self.stop_count) / from_count::<T>(self.n_eval)
    }
}

/// Locates the first barrier breach on every path of `kw` for position
/// size `eps`.
pub fn stopping_times<T: Real>(kw: &KWPaths<T>, eps: T) -> Result<StoppingTimes<T>> {
    let config = StoppingConfig::new(eps, kw.n0, kw.p0)?;
    let n_points = kw.grid.n_points();
    let mut indices = Vec::with_capacity(kw.n_paths);
    let mut stopped = Vec::with_capacity(kw.n_paths);
    let mut stop_count = 0usize;
    let mut overshoot = [T::zero(); 4];
    let mut max_step = [T::zero(); 4];
    let barriers = [
        config.barrier_delta,
        config.barrier_gamma,
        config.barrier_n,
        config.barrier_p,
    ];
    for p in 0..kw.n_paths {
        let rows = [kw.delta_row(p), kw.gamma_row(p), kw.n_row(p), kw.p_row(p)];
        let mut hit: Option<usize> = None;
        for i in 0..n_points {
            if config.breached(rows[0][i], rows[1][i], rows[2][i], rows[3][i]) {
                hit = Some(i);
                break;
            }
        }
        let idx = hit.unwrap_or(n_points - 1);
        indices.push(idx as u32);
        stopped.push(hit.is_some());
        if p >= kw.eval_start {
            if let Some(i) = hit {
                stop_count += 1;
                for q in 0..4 {
                    let over = rows[q][i].abs() - barriers[q];
                    if over > overshoot[q] {
                        overshoot[q] = over;
                    }
                }
            }
            for q in 0..4 {
                for w in rows[q].windows(2) {
                    let step = (w[1] - w[0]).abs();
                    if step > max_step[q] {
                        max_step[q] = step;
                    }
                }
            }
        }
    }
    Ok(StoppingTimes {
        config,
        indices,
        stopped,
        stop_count,
        n_eval: kw.n_eval(),
        overshoot,
        max_step,
    })
}

/// Largest tolerated fraction of positivity-violating paths in the
/// primal mean.
pub(crate) const VIOLATION_LIMIT: f64 = 0.01;

/// One path's stopped process levels plus the terminal payoff, the inputs
/// of both bound integrands.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathAtStop<T: Real> {
    /// First hedge at the stopping index.
    pub delta_tau: T,
    /// Second hedge at the stopping index.
    pub gamma_tau: T,
    /// First residual at the stopping index.
    pub n_tau: T,
    /// Second residual at the stopping index.
    pub p_tau: T,
    /// Terminal income closure `m(T) = Δ(T) + N(T)` (unstopped).
    pub m_t: T,
}

/// Control-variate-adjusted primal integrand for one path, or `None` when
/// the candidate wealth argument is not positive (a violation).
pub(crate) fn primal_sample<T: Real>(eps: T, v: &PathAtStop<T>) -> Option<T> {
    let eps2 = eps * eps;
    let eps3 = eps2 * eps;
    let arg = T::one() + eps * v.delta_tau + eps2 * v.gamma_tau - eps * v.m_t;
    if arg <= T::zero() {
        return None;
    }
    let cv = eps * v.delta_tau + eps2 * v.gamma_tau + eps3 * v.n_tau * v.gamma_tau;
    Some(arg.ln() - cv)
}

/// Dual density and control-variate-adjusted dual integrand for one path.
pub(crate) fn dual_sample<T: Real>(eps: T, v: &PathAtStop<T>) -> (T, T) {
    let eps2 = eps * eps;
    let eps3 = eps2 * eps;
    let eps4 = eps2 * eps2;
    let density = T::one() + eps * v.n_tau + eps2 * v.p_tau;
    let w = -eps * v.m_t - eps2 * v.n_tau * v.n_tau - eps3 * v.p_tau * v.n_tau - density.ln()
        + eps * v.n_tau
        + eps2 * v.p_tau
        + eps4 * v.p_tau * v.gamma_tau;
    (density, w)
}

/// Converts a violation count into a fraction, failing when it exceeds the
/// tolerated share of the evaluation ensemble.
pub(crate) fn check_violations<T: Real>(violations: usize, n_eval: usize, eps: T) -> Result<T> {
    let frac = from_count::<T>(violations) / from_count::<T>(n_eval);
    if frac > lit::<T>(VIOLATION_LIMIT) {
        return Err(Error::TooManyViolations {
            frac: frac.to_f64().unwrap_or(f64::NAN),
            eps: eps.to_f64().unwrap_or(f64::NAN),
            limit: VIOLATION_LIMIT,
        });
    }
    Ok(frac)
}

/// Primal lower bound with its Monte Carlo error and the excluded-path
/// fraction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PrimalBound<T: Real> {
    /// Control-variate-adjusted mean of the admissible candidate's log
    /// wealth.
    pub u_low: T,
    /// Standard error of the mean.
    pub se_low: T,
    /// Fraction of evaluation paths excluded for a non-positive argument.
    pub violation_frac: T,
}

fn values_at_stop<T: Real>(kw: &KWPaths<T>, st: &StoppingTimes<T>, p: usize) -> PathAtStop<T> {
    let idx = st.indices[p] as usize;
    PathAtStop {
        delta_tau: kw.delta_row(p)[idx],
        gamma_tau: kw.gamma_row(p)[idx],
        n_tau: kw.n_row(p)[idx],
        p_tau: kw.p_row(p)[idx],
        m_t: kw.terminal_income(p),
    }
}

fn primal_with_stopping<T: Real>(
    kw: &KWPaths<T>,
    st: &StoppingTimes<T>,
) -> Result<PrimalBound<T>> {
    let eps = st.config.eps;
    let mut acc = MeanVar::<T>::new();
    let mut violations = 0usize;
    for p in kw.eval_start..kw.n_paths {
        match primal_sample(eps, &values_at_stop(kw, st, p)) {
            Some(v) => acc.push(v),
            None => violations += 1,
        }
    }
    let violation_frac = check_violations(violations, kw.n_eval(), eps)?;
    Ok(PrimalBound {
        u_low: acc.mean(),
        se_low: acc.se(),
        violation_frac,
    })
}

/// Evaluates the admissible candidate's expected log wealth at `eps`.
///
/// The `bundle` argument pins the ensemble the decomposition was filled
/// from; the integrand itself is a functional of the decomposition paths.
pub fn primal_lower_bound<T: Real>(
    bundle: &PathBundle<T>,
    kw: &KWPaths<T>,
    eps: T,
) -> Result<PrimalBound<T>> {
    assert_eq!(
        bundle.n_paths, kw.n_paths,
        "decomposition and ensemble must cover the same paths"
    );
    let st = stopping_times(kw, eps)?;
    primal_with_stopping(kw, &st)
}

/// Dual upper bound with its Monte Carlo error and the smallest density
/// encountered.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualBound<T: Real> {
    /// Control-variate-adjusted dual objective.
    pub u_up: T,
    /// Standard error of the mean.
    pub se_up: T,
    /// Minimum over evaluation paths of `1 + εN^τ + ε²P^τ`.
    pub min_density: T,
}

fn dual_with_stopping<T: Real>(kw: &KWPaths<T>, st: &StoppingTimes<T>) -> Result<DualBound<T>> {
    let eps = st.config.eps;
    let mut acc = MeanVar::<T>::new();
    let mut min_density = T::infinity();
    for p in kw.eval_start..kw.n_paths {
        let (density, w) = dual_sample(eps, &values_at_stop(kw, st, p));
        if density < min_density {
            min_density = density;
        }
        if density <= T::zero() {
            return Err(Error::NonPositiveDensity {
                path: p,
                eps: eps.to_f64().unwrap_or(f64::NAN),
                value: density.to_f64().unwrap_or(f64::NAN),
            });
        }
        acc.push(w);
    }
    Ok(DualBound {
        u_up: acc.mean(),
        se_up: acc.se(),
        min_density,
    })
}

/// Evaluates the change-of-measure upper bound at `eps`.
///
/// The `bundle` argument pins the ensemble the decomposition was filled
/// from; the integrand itself is a functional of the decomposition paths.
pub fn dual_upper_bound<T: Real>(
    bundle: &PathBundle<T>,
    kw: &KWPaths<T>,
    eps: T,
) -> Result<DualBound<T>> {
    assert_eq!(
        bundle.n_paths, kw.n_paths,
        "decomposition and ensemble must cover the same paths"
    );
    let st = stopping_times(kw, eps)?;
    dual_with_stopping(kw, &st)
}

/// One ε of the certification table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundsRow<T: Real> {
    /// Position size.
    pub eps: T,
    /// Primal lower bound.
    pub u_low: T,
    /// Standard error of `u_low`.
    pub se_low: T,
    /// Dual upper bound.
    pub u_up: T,
    /// Standard error of `u_up`.
    pub se_up: T,
    /// Quartic approximation at the same moments.
    pub u_hat: T,
    /// `(u_hat − u_low)/ε⁴`, signed.
    pub ratio_low: T,
    /// `(u_up − u_hat)/ε⁴`, signed.
    pub ratio_up: T,
    /// Fraction of evaluation paths breaching a barrier.
    pub stop_frac: T,
    /// Fraction of evaluation paths excluded from the primal mean.
    pub primal_violation_frac: T,
}

impl<T: Real> BoundsRow<T> {
    /// Combines the two bound evaluations with the quartic value into one
    /// table row; the ratio definitions live here and nowhere else.
    pub(crate) fn assemble(
        eps: T,
        u_hat: T,
        primal: &PrimalBound<T>,
        dual: &DualBound<T>,
        stop_frac: T,
    ) -> Self {
        let eps4 = eps * eps * eps * eps;
        BoundsRow {
            eps,
            u_low: primal.u_low,
            se_low: primal.se_low,
            u_up: dual.u_up,
            se_up: dual.se_up,
            u_hat,
            ratio_low: (u_hat - primal.u_low) / eps4,
            ratio_up: (dual.u_up - u_hat) / eps4,
            stop_frac,
            primal_violation_frac: primal.violation_frac,
        }
    }
}

/// Certification table over an ε grid, common random numbers throughout.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport<T: Real> {
    /// One row per ε, in grid order.
    pub rows: Vec<BoundsRow<T>>,
}

/// Evaluates both bounds and the quartic approximation for every ε of the
/// grid on one shared ensemble.
pub fn bounds_report<T: Real>(
    bundle: &PathBundle<T>,
    kw: &KWPaths<T>,
    moments: &Moments<T>,
    eps_grid: &[T],
) -> Result<BoundsReport<T>> {
    assert_eq!(
        bundle.n_paths, kw.n_paths,
        "decomposition and ensemble must cover the same paths"
    );
    let u_hats = value_expansion(moments, eps_grid);
    let mut rows = Vec::with_capacity(eps_grid.len());
    for (i, eps) in eps_grid.iter().copied().enumerate() {
        let st = stopping_times(kw, eps)?;
        let primal = primal_with_stopping(kw, &st)?;
        let dual = dual_with_stopping(kw, &st)?;
        rows.push(BoundsRow::assemble(
            eps,
            u_hats[i],
            &primal,
            &dual,
            st.stop_frac(),
        ));
    }
    Ok(BoundsReport { rows })
}

/// Outcome of the empirical decay checks on a certification table.
///
/// The binding sequences are the scaled optimality gap
/// `(u_up − u_low)/ε⁴` and the lower-side error `|u_hat − u_low|/ε⁴`.
/// The upper-side error is reported but not binding: on rows where
/// stopping is still active, its sign mixes stopped-path contributions
/// with Monte Carlo noise of size `se_up/ε⁴`, so a strict row-to-row
/// comparison of its magnitude is a coin flip at realistic path counts,
/// while the gap aggregates both sides into a decay-robust quantity.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary<T: Real> {
    /// |ratio_low| decreases along the grid (up to the noise floor).
    pub ratio_low_decreasing: bool,
    /// |ratio_up| decreases along the grid (up to the noise floor).
    /// Informational: not part of [`pass`](Self::pass).
    pub ratio_up_decreasing: bool,
    /// The optimality gap `(u_up − u_low)/ε⁴` decreases along the grid.
    pub gap_decreasing: bool,
    /// The binding sequences end at ≤ 50% of their starting value (or
    /// at the noise floor).
    pub final_within_half: bool,
    /// `u_low − 4·se_low ≤ u_up + 4·se_up` on every row.
    pub sandwich_ok: bool,
    /// Scaled optimality gaps, one per row.
    pub gap_ratios: Vec<T>,
    /// Conjunction of the binding checks: lower-side decay, gap decay,
    /// terminal halving, and the sandwich.
    pub pass: bool,
}

/// Magnitudes below this are treated as "already converged" by the decay
/// checks: they sit at the Monte Carlo noise floor and carry no order
/// information.
const RATIO_FLOOR: f64 = 1e-12;

/// Fewest ε values on which a decay pattern is considered evidence.
const MIN_GRID_POINTS: usize = 3;

fn decreasing_with_floor<T: Real>(seq: &[T], floor: T) -> bool {
    seq.windows(2).all(|w| w[1] < w[0] || w[1] <= floor)
}

fn final_half<T: Real>(seq: &[T], floor: T) -> bool {
    let first = seq[0];
    let last = seq[seq.len() - 1];
    last <= (lit::<T>(0.5) * first).max(floor)
}

/// Checks the o(ε⁴) decay pattern and the duality sandwich on a
/// certification table ordered from largest to smallest ε. Needs at
/// least three grid points
/// ([`GridTooSmall`](crate::Error::GridTooSmall)); the grid is expected
/// to be geometric so that ratio comparisons across adjacent rows are
/// meaningful.
pub fn residual_analysis<T: Real>(report: &BoundsReport<T>) -> Result<ResidualSummary<T>> {
    if report.rows.len() < MIN_GRID_POINTS {
        return Err(Error::GridTooSmall {
            len: report.rows.len(),
            min: MIN_GRID_POINTS,
        });
    }
    assert!(
        report
            .rows
            .windows(2)
            .all(|w| w[1].eps < w[0].eps && w[1].eps > T::zero()),
        "rows must be ordered from largest to smallest positive ε"
    );
    let floor = lit::<T>(RATIO_FLOOR);
    let low: Vec<T> = report.rows.iter().map(|r| r.ratio_low.abs()).collect();
    let up: Vec<T> = report.rows.iter().map(|r| r.ratio_up.abs()).collect();
    let gap: Vec<T> = report
        .rows
        .iter()
        .map(|r| {
            let eps4 = r.eps * r.eps * r.eps * r.eps;
            (r.u_up - r.u_low) / eps4
        })
        .collect();
    let ratio_low_decreasing = decreasing_with_floor(&low, floor);
    let ratio_up_decreasing = decreasing_with_floor(&up, floor);
    let gap_decreasing = decreasing_with_floor(&gap, floor);
    let final_within_half = final_half(&low, floor) && final_half(&gap, floor);
    let four = lit::<T>(4.0);
    let sandwich_ok = report
        .rows
        .iter()
        .all(|r| r.u_low - four * r.se_low <= r.u_up + four * r.se_up);
    let pass = ratio_low_decreasing && gap_decreasing && final_within_half && sandwich_ok;
    Ok(ResidualSummary {
        ratio_low_decreasing,
        ratio_up_decreasing,
        gap_decreasing,
        final_within_half,
        sandwich_ok,
        gap_ratios: gap,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kw::closed_form::closed_form_projection;
    use crate::kw::compute_moments;
    use crate::kw::ProjectionBackend;
    use crate::model::{derive_numeraire, MarketSpec, NumericsConfig};
    use crate::paths::{accumulate_endowment, simulate_paths};

    /// Positions of the four processes in overshoot/step-size arrays.
    const PROC_N: usize = 2;
    const PROC_P: usize = 3;

    fn default_setup(
        n_paths: usize,
        dt: f64,
        t_max: f64,
    ) -> (MarketSpec<f64>, PathBundle<f64>, KWPaths<f64>) {
        let market = MarketSpec::defaults();
        let mut numerics = NumericsConfig::defaults();
        numerics.n_paths = n_paths;
        numerics.dt = dt;
        let num = derive_numeraire(&market);
        let mut bundle = simulate_paths(&market, &num, &numerics, t_max).unwrap();
        accumulate_endowment(&market, &mut bundle);
        let kw = closed_form_projection(&market, &num, &bundle).unwrap();
        (market, bundle, kw)
    }

    #[test]
    fn admissible_limit_matches_hand_values() {
        // Defaults: 1/(4·0.0625) = 4 and 1/(2·sqrt(0.01355)) ≈ 4.3, so the
        // unit cap binds.
        assert_eq!(eps_limit(0.0625, 0.013549107142857144), 1.0);
        // A large initial closure tightens the cap.
        assert!((eps_limit::<f64>(15.0, 0.0135) - 1.0 / 60.0).abs() < 1e-15);
        // Degenerate inputs leave only the unit cap.
        assert_eq!(eps_limit(0.0, 0.0), 1.0);
    }

    #[test]
    fn oversized_position_is_rejected_by_every_operation() {
        let (_, bundle, kw) = default_setup(32, 0.02, 0.3);
        assert!(matches!(
            stopping_times(&kw, 1.0).unwrap_err(),
            Error::EpsTooLarge { .. }
        ));
        assert!(matches!(
            primal_lower_bound(&bundle, &kw, 1.5).unwrap_err(),
            Error::EpsTooLarge { .. }
        ));
        assert!(matches!(
            dual_upper_bound(&bundle, &kw, 1.0).unwrap_err(),
            Error::EpsTooLarge { .. }
        ));
    }

    #[test]
    fn zero_endowment_gives_zero_bounds_and_no_stopping() {
        let mut market = MarketSpec::defaults();
        market.z0 = 0.0;
        market.theta = 0.0;
        market.b = 0.0;
        let mut numerics = NumericsConfig::defaults();
        numerics.n_paths = 64;
        numerics.dt = 0.02;
        let num = derive_numeraire(&market);
        let mut bundle = simulate_paths(&market, &num, &numerics, 0.5).unwrap();
        accumulate_endowment(&market, &mut bundle);
        let kw = closed_form_projection(&market, &num, &bundle).unwrap();
        let st = stopping_times(&kw, 0.5).unwrap();
        assert_eq!(st.stop_count, 0);
        assert!(st.stopped.iter().all(|s| !s));
        let p = primal_lower_bound(&bundle, &kw, 0.5).unwrap();
        assert_eq!(p.u_low, 0.0);
        assert_eq!(p.violation_frac, 0.0);
        let d = dual_upper_bound(&bundle, &kw, 0.5).unwrap();
        assert_eq!(d.u_up, 0.0);
        assert_eq!(d.min_density, 1.0);
    }

    #[test]
    fn stop_fraction_is_monotone_in_the_position_size() {
        let (_, _, kw) = default_setup(2000, 0.02, 9.66);
        let fracs: Vec<f64> = [0.9, 0.6, 0.3]
            .iter()
            .map(|e| stopping_times(&kw, *e).unwrap().stop_frac())
            .collect();
        assert!(
            fracs.windows(2).all(|w| w[1] <= w[0]),
            "stop fractions should shrink with ε: {fracs:?}"
        );
        assert!(
            fracs[0] > 0.0,
            "ε = 0.9 puts the |N| barrier at 0.28, low enough to be hit"
        );
    }

    #[test]
    fn breaches_respect_barriers_and_overshoot_is_bounded() {
        let (_, bundle, kw) = default_setup(2000, 0.02, 9.66);
        let eps = 0.9;
        let st = stopping_times(&kw, eps).unwrap();
        let barriers = [
            st.config.barrier_delta,
            st.config.barrier_gamma,
            st.config.barrier_n,
            st.config.barrier_p,
        ];
        let mut saw_stop = false;
        for p in 0..kw.n_paths {
            let idx = st.indices[p] as usize;
            let rows = [kw.delta_row(p), kw.gamma_row(p), kw.n_row(p), kw.p_row(p)];
            if st.stopped[p] {
                saw_stop = true;
                assert!(
                    (0..4).any(|q| rows[q][idx].abs() >= barriers[q]),
                    "stopping index must sit on a breach"
                );
                for i in 0..idx {
                    assert!(
                        (0..4).all(|q| rows[q][i].abs() < barriers[q]),
                        "no breach may precede the stopping index"
                    );
                }
            }
        }
        assert!(saw_stop, "this configuration should produce breaches");
        for q in 0..4 {
            assert!(
                st.overshoot[q] <= st.max_step[q] + 1e-15,
                "overshoot {} exceeds the largest one-step move {}",
                st.overshoot[q],
                st.max_step[q]
            );
        }
        // The barriers keep the dual density above one half (up to the
        // scaled overshoot).
        let d = dual_upper_bound(&bundle, &kw, eps).unwrap();
        let slack = eps * st.overshoot[PROC_N] + eps * eps * st.overshoot[PROC_P];
        assert!(
            d.min_density >= 0.5 - slack - 1e-12,
            "min density {} with overshoot slack {}",
            d.min_density,
            slack
        );
    }

    #[test]
    fn sandwich_holds_and_the_gap_decays_at_small_scale() {
        let (_, bundle, kw) = default_setup(4000, 0.02, 9.66);
        let moments = compute_moments(&kw, &bundle);
        let grid = [0.2, 0.1, 0.05];
        let report = bounds_report(&bundle, &kw, &moments, &grid).unwrap();
        for row in &report.rows {
            println!(
                "eps={} u_low={} u_up={} u_hat={} rl={} ru={} stop={} viol={}",
                row.eps,
                row.u_low,
                row.u_up,
                row.u_hat,
                row.ratio_low,
                row.ratio_up,
                row.stop_frac,
                row.primal_violation_frac
            );
            assert!(
                row.u_low - 4.0 * row.se_low <= row.u_up + 4.0 * row.se_up,
                "sandwich fails at ε = {}: [{} − 4·{}, {} + 4·{}]",
                row.eps,
                row.u_low,
                row.se_low,
                row.u_up,
                row.se_up
            );
            assert!(
                row.stop_frac <= 2e-3,
                "stopping should be a tail event at ε ≤ 0.2, got {}",
                row.stop_frac
            );
            assert_eq!(row.primal_violation_frac, 0.0);
        }
        // Barriers scale like 1/ε, so on common paths the breach set can
        // only shrink as ε falls.
        assert!(report
            .rows
            .windows(2)
            .all(|w| w[1].stop_frac <= w[0].stop_frac));
        let summary = residual_analysis(&report).unwrap();
        assert!(
            summary.gap_decreasing,
            "gap ratios should fall: {:?}",
            summary.gap_ratios
        );
        assert!(summary.sandwich_ok);
    }

    fn synthetic_report(perturb: fn(f64, f64) -> (f64, f64)) -> BoundsReport<f64> {
        let grid = [0.2, 0.1, 0.05, 0.025];
        let rows = grid
            .iter()
            .map(|&eps| {
                let u_hat = -0.0625 * eps - 0.00678 * eps * eps;
                let (u_low, u_up) = perturb(u_hat, eps);
                let eps4 = eps.powi(4);
                BoundsRow {
                    eps,
                    u_low,
                    se_low: 1e-9,
                    u_up,
                    se_up: 1e-9,
                    u_hat,
                    ratio_low: (u_hat - u_low) / eps4,
                    ratio_up: (u_up - u_hat) / eps4,
                    stop_frac: 0.0,
                    primal_violation_frac: 0.0,
                }
            })
            .collect();
        BoundsReport { rows }
    }

    #[test]
    fn perfect_quartic_inputs_pass_with_zero_ratios() {
        let report = synthetic_report(|u, _| (u, u));
        let summary = residual_analysis(&report).unwrap();
        assert!(summary.pass);
        assert!(summary.gap_ratios.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn fifth_order_error_passes_third_order_error_fails() {
        let fifth = synthetic_report(|u, e| (u - e.powi(5), u + e.powi(5)));
        let summary = residual_analysis(&fifth).unwrap();
        assert!(summary.pass, "ε⁵ residuals decay like ε: {summary:?}");
        let third = synthetic_report(|u, e| (u - e.powi(3), u + e.powi(5)));
        let summary = residual_analysis(&third).unwrap();
        assert!(
            !summary.ratio_low_decreasing && !summary.pass,
            "ε³ residuals grow like 1/ε and must fail: {summary:?}"
        );
    }

    #[test]
    fn short_grids_are_rejected() {
        let mut report = synthetic_report(|u, _| (u, u));
        report.rows.truncate(2);
        assert!(matches!(
            residual_analysis(&report).unwrap_err(),
            Error::GridTooSmall { .. }
        ));
    }

    #[test]
    fn forced_primal_violations_abort_with_the_dedicated_error() {
        // Hand-built decomposition: terminal closure large enough that
        // 1 + εΔ − ε·m(T) is negative on a third of the paths. The breach
        // happens only at the final grid point, so the stopped hedge
        // cannot offset it.
        let (_, bundle, _) = default_setup(12, 0.1, 0.2);
        let grid = bundle.grid;
        let n_points = grid.n_points();
        let mut kw = KWPaths::zeroed(grid, 12, 0, ProjectionBackend::ClosedForm);
        kw.n0 = 0.01;
        kw.p0 = 0.0001;
        let last = n_points - 1;
        for p in 0..12 {
            let m_t = if p % 3 == 0 { 30.0 } else { 0.5 };
            kw.n_mart[p * n_points + last] = m_t;
        }
        let err = primal_lower_bound(&bundle, &kw, 0.5).unwrap_err();
        assert!(matches!(err, Error::TooManyViolations { .. }), "{err:?}");
    }

    #[test]
    fn crafted_negative_density_is_reported() {
        let (_, bundle, _) = default_setup(8, 0.1, 0.2);
        let grid = bundle.grid;
        let n_points = grid.n_points();
        let mut kw = KWPaths::zeroed(grid, 8, 0, ProjectionBackend::ClosedForm);
        kw.n0 = 0.01;
        kw.p0 = 0.0001;
        // One path drops N far negative only at the terminal point: the
        // barrier check sees the breach at the last index, where the
        // stopped value is already below −1/ε.
        kw.n_mart[n_points - 1] = -9.0;
        let err = dual_upper_bound(&bundle, &kw, 0.5).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDensity { .. }), "{err:?}");
    }
}
