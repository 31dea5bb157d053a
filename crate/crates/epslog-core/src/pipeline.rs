//! Single-pass streaming estimation at production scale.
//!
//! Materializing an ensemble stores five `path × time` arrays; at the
//! reference scale (2·10⁵ paths on a ≈1900-step grid) that is about
//! 3 GB per array, far beyond the element budget. The entry points here
//! re-run every per-path recursion on a regenerated ensemble
//! ([`GenScan`]) instead: memory stays bounded by one chunk of
//! accumulator state regardless of path count, and each path's
//! arithmetic is bit-for-bit the arithmetic of the materialized route,
//! because both share the same generator, the same projection sweep,
//! and the same per-path bound kernels.
//!
//! * [`stream_closed_form`] produces, in one pass over the ensemble:
//!   moment estimates, orthogonality diagnostics, the terminal-wealth
//!   admissibility fractions of the expansion table, and (optionally)
//!   the full primal/dual certification over an ε grid — every quantity
//!   on common random numbers.
//! * [`stream_regression`] fits the regression projection on the first
//!   half of the ensemble, then evaluates it on the held-out half
//!   alongside the closed-form recursion on the same paths, producing
//!   paired moment estimates and a relative hedge-rate error — the
//!   inputs of a cross-backend comparison free of independent-sampling
//!   noise.
//!
//! # Numerical notes
//!
//! First-passage detection, bound integrands, violation accounting, and
//! overshoot tracking reuse the kernels of [`crate::bounds`] verbatim,
//! so a streamed certification row equals its materialized counterpart
//! up to the associativity of the chunk merge — exactly, when the
//! ensemble fits in one 4096-path chunk. Chunks are always merged in
//! ascending index order ([`fold_paths`]), which makes every streamed
//! number independent of the thread count, bit for bit. The per-ε
//! first-passage state is one flag and five numbers for the path
//! currently being swept; nothing per-path survives the sweep.

use crate::bounds::{
    check_violations, dual_sample, eps_limit, primal_sample, BoundsReport, BoundsRow, DualBound,
    PathAtStop, PrimalBound, StoppingConfig,
};
use crate::error::{Error, Result};
use crate::expansion::{certainty_equivalent, value_expansion, ExpansionReport, ExpansionRow};
use crate::kw::closed_form::{ClosedFormCoeffs, KwSweep, StepBias};
use crate::kw::moments::{MeanVar, MomentAccum, PairedMeanVar};
use crate::kw::regression::{fit_regression, FeatureTables, PathEval, PathScratch};
use crate::kw::{Moments, OrthogonalityReport, ProjectionBackend, RegressionBasis};
use crate::model::{
    derive_numeraire, horizon_truncation, validate_spec, MarketSpec, NumericsConfig,
};
use crate::paths::{fold_paths, GenScan, PathScan, SimConstants, TimeGrid};
use crate::scalar::{from_count, Real};

/// First-passage summary of one ε from a streamed pass — the streaming
/// counterpart of [`StoppingTimes`](crate::bounds::StoppingTimes)
/// without the per-path index vectors, which a streamed run never
/// holds.
#[derive(Debug, Clone, Copy)]
pub struct StopSummary<T: Real> {
    /// Barrier configuration the passage was computed under.
    pub config: StoppingConfig<T>,
    /// Number of evaluation paths that breached a barrier.
    pub stop_count: usize,
    /// Number of evaluation paths.
    pub n_eval: usize,
    /// Largest breach overshoot beyond each barrier `[Δ, Γ, N, P]`.
    pub overshoot: [T; 4],
}

impl<T: Real> StopSummary<T> {
    /// Fraction of evaluation paths that breached a barrier.
    pub fn stop_frac(&self) -> T {
        from_count::<T>(self.stop_count) / from_count::<T>(self.n_eval)
    }
}

/// Everything one streamed closed-form pass estimates.
#[derive(Debug, Clone)]
pub struct ClosedFormStream<T: Real> {
    /// The simulation grid (horizon from the truncation rule).
    pub grid: TimeGrid<T>,
    /// Position sizes the per-ε quantities were evaluated at.
    pub eps_grid: Vec<T>,
    /// Streamed moment estimates, evaluation range = all paths.
    pub moments: Moments<T>,
    /// Streamed orthogonality diagnostics with exact compensators.
    pub orthogonality: OrthogonalityReport<T>,
    /// Certification table; empty when bounds were not requested.
    pub bounds: BoundsReport<T>,
    /// Per-ε first-passage summaries, parallel to `bounds.rows`.
    pub stops: Vec<StopSummary<T>>,
    /// Largest single-step increment of `[Δ, Γ, N, P]` over all paths;
    /// bounds every barrier overshoot by construction.
    pub max_step: [T; 4],
    /// Per-ε fraction of paths with non-positive approximate terminal
    /// wealth `1 + εΔ(T) + ε²Γ(T) − ε·m(T)`, parallel to `eps_grid`.
    pub wealth_violation_frac: Vec<T>,
    /// Non-fatal validation diagnostics.
    pub warnings: Vec<String>,
}

impl<T: Real> ClosedFormStream<T> {
    /// Expansion table assembled from the streamed moments and
    /// admissibility fractions; row for row what the materialized
    /// expansion report produces on the same ensemble.
    pub fn expansion(&self) -> ExpansionReport<T> {
        expansion_rows(&self.moments, &self.eps_grid, &self.wealth_violation_frac)
    }
}

/// Everything one streamed fit/evaluate regression pass estimates.
#[derive(Debug, Clone)]
pub struct RegressionStream<T: Real> {
    /// The simulation grid (horizon from the truncation rule).
    pub grid: TimeGrid<T>,
    /// Position sizes the admissibility fractions were evaluated at.
    pub eps_grid: Vec<T>,
    /// Regression-backend moments on the held-out half.
    pub moments: Moments<T>,
    /// Closed-form moments on the *same* held-out paths, for paired
    /// backend comparisons.
    pub reference_moments: Moments<T>,
    /// Orthogonality diagnostics of the fitted residuals (no
    /// compensator: raw and compensated statistics coincide).
    pub orthogonality: OrthogonalityReport<T>,
    /// Relative L² distance of the fitted first hedge rate from the
    /// closed form, aggregated over the evaluation paths and all steps:
    /// `sqrt(Σ(θ̂−θ)² / Σθ²)`.
    pub theta_rel_l2: T,
    /// Per-ε fraction of evaluation paths with non-positive approximate
    /// terminal wealth under the fitted decomposition.
    pub wealth_violation_frac: Vec<T>,
    /// Number of paths the fit consumed; evaluation used the rest.
    pub n_fit: usize,
    /// Non-fatal validation diagnostics.
    pub warnings: Vec<String>,
}

impl<T: Real> RegressionStream<T> {
    /// Expansion table assembled from the fitted moments and
    /// admissibility fractions.
    pub fn expansion(&self) -> ExpansionReport<T> {
        expansion_rows(&self.moments, &self.eps_grid, &self.wealth_violation_frac)
    }
}

/// Builds an expansion table from streamed ingredients (the admissibility
/// fractions are the one row entry that needs path data).
fn expansion_rows<T: Real>(m: &Moments<T>, eps_grid: &[T], wealth: &[T]) -> ExpansionReport<T> {
    let u_hat = value_expansion(m, eps_grid);
    let (ce_hat, ce_exact) = certainty_equivalent(m, eps_grid, None);
    let rows = eps_grid
        .iter()
        .enumerate()
        .map(|(i, e)| ExpansionRow {
            eps: *e,
            u_hat: u_hat[i],
            ce_hat: ce_hat[i],
            ce_exact: ce_exact[i],
            violation_frac: wealth[i],
        })
        .collect();
    ExpansionReport { rows }
}

/// Per-ε bound accumulators inside one chunk.
#[derive(Debug, Clone)]
struct EpsAcc<T: Real> {
    primal: MeanVar<T>,
    dual: MeanVar<T>,
    violations: usize,
    stops: usize,
    overshoot: [T; 4],
    min_density: T,
    /// First path (by index) with a non-positive dual density.
    neg_density: Option<(usize, T)>,
}

impl<T: Real> EpsAcc<T> {
    fn new() -> Self {
        EpsAcc {
            primal: MeanVar::new(),
            dual: MeanVar::new(),
            violations: 0,
            stops: 0,
            overshoot: [T::zero(); 4],
            min_density: T::infinity(),
            neg_density: None,
        }
    }

    fn merge(&mut self, other: &EpsAcc<T>) {
        self.primal.merge(&other.primal);
        self.dual.merge(&other.dual);
        self.violations += other.violations;
        self.stops += other.stops;
        for q in 0..4 {
            if other.overshoot[q] > self.overshoot[q] {
                self.overshoot[q] = other.overshoot[q];
            }
        }
        if other.min_density < self.min_density {
            self.min_density = other.min_density;
        }
        if self.neg_density.is_none() {
            self.neg_density = other.neg_density;
        }
    }
}

/// Per-path, per-ε first-passage state while a path is being swept.
#[derive(Debug, Clone, Copy)]
struct FirstPassage<T: Real> {
    hit: bool,
    at: PathAtStop<T>,
}

/// Chunk accumulator of the closed-form pass.
struct CfAcc<T: Real> {
    moments: MomentAccum<T>,
    raw_n: PairedMeanVar<T>,
    comp_n: PairedMeanVar<T>,
    raw_p: PairedMeanVar<T>,
    comp_p: PairedMeanVar<T>,
    max_step: [T; 4],
    wealth: Vec<usize>,
    bounds: Vec<EpsAcc<T>>,
    passage: Vec<FirstPassage<T>>,
}

/// Appends one warning per position size outside the admissible
/// interval `(0, ε^L)`. Expansion-only runs keep going — the quartic
/// polynomial evaluates anywhere — but past the threshold its error
/// guarantee no longer applies, and the admissibility fractions in the
/// report are the quantitative follow-up.
fn warn_inadmissible<T: Real>(eps_grid: &[T], limit: T, warnings: &mut Vec<String>) {
    for &e in eps_grid {
        if !(e > T::zero() && e < limit) {
            warnings.push(format!(
                "position size eps = {} lies outside the admissible interval (0, {}); \
                 the quartic expansion extrapolates beyond its guarantee there",
                e.to_f64().unwrap_or(f64::NAN),
                limit.to_f64().unwrap_or(f64::NAN),
            ));
        }
    }
}

/// Runs the closed-form projection over a regenerated ensemble and
/// estimates everything downstream of it in a single pass.
///
/// `eps_grid` drives both the admissibility fractions (always computed)
/// and, when `with_bounds` is set, the stopped primal/dual certification
/// with its first-passage summaries. Bound evaluation requires every ε
/// to sit below the admissible threshold and fails upfront with
/// [`Error::EpsTooLarge`] otherwise; with `with_bounds` off, any
/// positive sizes are accepted (the expansion table is a polynomial
/// evaluation). Standard errors of the bounds are plain i.i.d.-path
/// estimates; moment estimates honor the configured antithetic pairing.
pub fn stream_closed_form<T: Real>(
    market: &MarketSpec<T>,
    numerics: &NumericsConfig<T>,
    eps_grid: &[T],
    with_bounds: bool,
) -> Result<ClosedFormStream<T>> {
    let validated = validate_spec(market, numerics)?;
    let num = derive_numeraire(market);
    let co = ClosedFormCoeffs::new(market, &num)?;
    let t_max = horizon_truncation(market, numerics.dt, numerics.horizon_tol)?;
    let grid = TimeGrid::new(numerics.dt, t_max);
    let cons = SimConstants::new(market, &num, grid);
    let bias = StepBias::new(market, &co, grid.dt);
    let mut warnings = validated.warnings;

    // Bound runs require every size below the admissible threshold (the
    // stopping barriers are meaningless past it); expansion-only runs
    // merely extrapolate, so an out-of-range size warns instead.
    let configs: Vec<StoppingConfig<T>> = if with_bounds {
        eps_grid
            .iter()
            .map(|&e| StoppingConfig::new(e, co.n0, co.p0))
            .collect::<Result<_>>()?
    } else {
        warn_inadmissible(eps_grid, eps_limit(co.n0, co.p0), &mut warnings);
        Vec::new()
    };
    // A breach at the initial point would stop every path there. Sizes
    // below the admissible threshold provably cannot trigger it (the
    // |N| and |P| barriers then sit strictly above n0 and p0), but the
    // check costs one comparison per ε and keeps the first-passage rule
    // total.
    let origin_hit: Vec<bool> = configs
        .iter()
        .map(|c| c.breached(T::zero(), T::zero(), co.n0, co.p0))
        .collect();
    let origin = PathAtStop {
        delta_tau: T::zero(),
        gamma_tau: T::zero(),
        n_tau: co.n0,
        p_tau: co.p0,
        m_t: T::zero(),
    };

    let n_paths = numerics.n_paths;
    let scan = GenScan::new(&cons, n_paths, numerics.seed, numerics.antithetic);
    let paired = numerics.antithetic;
    let n_eps = eps_grid.len();
    let exp_rt = &cons.exp_rt;

    let make = || CfAcc {
        moments: MomentAccum::new(paired),
        raw_n: PairedMeanVar::new(paired),
        comp_n: PairedMeanVar::new(paired),
        raw_p: PairedMeanVar::new(paired),
        comp_p: PairedMeanVar::new(paired),
        max_step: [T::zero(); 4],
        wealth: vec![0; n_eps],
        bounds: vec![EpsAcc::new(); configs.len()],
        passage: vec![
            FirstPassage {
                hit: false,
                at: origin,
            };
            configs.len()
        ],
    };

    let kernel = |p: usize, scan: &GenScan<T>, acc: &mut CfAcc<T>| {
        let CfAcc {
            moments,
            raw_n,
            comp_n,
            raw_p,
            comp_p,
            max_step,
            wealth,
            bounds,
            passage,
        } = acc;
        for (st, hit0) in passage.iter_mut().zip(&origin_hit) {
            st.hit = *hit0;
            st.at = origin;
        }
        let mut sweep = KwSweep::new(&co, exp_rt);
        let mut s_raw_n = T::zero();
        let mut s_comp_n = T::zero();
        let mut s_raw_p = T::zero();
        let mut s_comp_p = T::zero();
        scan.scan(p, |i, left, dw1, _right| {
            let d0 = sweep.delta;
            let g0 = sweep.gamma;
            let n0 = sweep.n;
            let p0 = sweep.p;
            sweep.step(left, dw1, _right);
            let incs = [
                (sweep.delta - d0).abs(),
                (sweep.gamma - g0).abs(),
                (sweep.n - n0).abs(),
                (sweep.p - p0).abs(),
            ];
            for q in 0..4 {
                if incs[q] > max_step[q] {
                    max_step[q] = incs[q];
                }
            }
            let dn = (sweep.n - n0) * dw1;
            let dp = (sweep.p - p0) * dw1;
            s_raw_n += dn;
            s_raw_p += dp;
            let a = exp_rt[i] * left.s0;
            s_comp_n += dn - bias.comp_n(a, left.z);
            s_comp_p += dp - bias.comp_p(a, left.z, n0);
            for (j, st) in passage.iter_mut().enumerate() {
                if !st.hit && configs[j].breached(sweep.delta, sweep.gamma, sweep.n, sweep.p) {
                    st.hit = true;
                    st.at = PathAtStop {
                        delta_tau: sweep.delta,
                        gamma_tau: sweep.gamma,
                        n_tau: sweep.n,
                        p_tau: sweep.p,
                        m_t: T::zero(),
                    };
                    let e = &mut bounds[j];
                    let overs = [
                        sweep.delta.abs() - configs[j].barrier_delta,
                        sweep.gamma.abs() - configs[j].barrier_gamma,
                        sweep.n.abs() - configs[j].barrier_n,
                        sweep.p.abs() - configs[j].barrier_p,
                    ];
                    for q in 0..4 {
                        if overs[q] > e.overshoot[q] {
                            e.overshoot[q] = overs[q];
                        }
                    }
                }
            }
        });
        let m_t = sweep.n + sweep.delta;
        moments.push(m_t, sweep.n, sweep.gamma);
        raw_n.push(s_raw_n);
        comp_n.push(s_comp_n);
        raw_p.push(s_raw_p);
        comp_p.push(s_comp_p);
        for (j, &epsj) in eps_grid.iter().enumerate() {
            let eps2 = epsj * epsj;
            let x = epsj * sweep.delta + eps2 * sweep.gamma;
            if T::one() + x - epsj * m_t <= T::zero() {
                wealth[j] += 1;
            }
        }
        for (j, st) in passage.iter_mut().enumerate() {
            let e = &mut bounds[j];
            if st.hit {
                e.stops += 1;
            } else {
                st.at = PathAtStop {
                    delta_tau: sweep.delta,
                    gamma_tau: sweep.gamma,
                    n_tau: sweep.n,
                    p_tau: sweep.p,
                    m_t: T::zero(),
                };
            }
            st.at.m_t = m_t;
            let epsj = configs[j].eps;
            match primal_sample(epsj, &st.at) {
                Some(v) => e.primal.push(v),
                None => e.violations += 1,
            }
            let (density, w) = dual_sample(epsj, &st.at);
            if density < e.min_density {
                e.min_density = density;
            }
            if density <= T::zero() {
                if e.neg_density.is_none() {
                    e.neg_density = Some((p, density));
                }
            } else {
                e.dual.push(w);
            }
        }
    };

    let merge = |total: &mut CfAcc<T>, mut chunk: CfAcc<T>| {
        chunk.moments.finish();
        total.moments.merge(&chunk.moments);
        chunk.raw_n.finish();
        total.raw_n.merge(&chunk.raw_n);
        chunk.comp_n.finish();
        total.comp_n.merge(&chunk.comp_n);
        chunk.raw_p.finish();
        total.raw_p.merge(&chunk.raw_p);
        chunk.comp_p.finish();
        total.comp_p.merge(&chunk.comp_p);
        for q in 0..4 {
            if chunk.max_step[q] > total.max_step[q] {
                total.max_step[q] = chunk.max_step[q];
            }
        }
        for (tw, cw) in total.wealth.iter_mut().zip(&chunk.wealth) {
            *tw += *cw;
        }
        for (te, ce) in total.bounds.iter_mut().zip(&chunk.bounds) {
            te.merge(ce);
        }
    };

    let total = fold_paths(&scan, 0..n_paths, numerics.parallel, make, kernel, merge);
    let n_eval = n_paths;

    let moments = total
        .moments
        .into_moments(co.n0, co.p0, ProjectionBackend::ClosedForm, numerics.seed);
    let orthogonality = OrthogonalityReport {
        n_paths: n_eval,
        raw_n: total.raw_n.stats().mean(),
        raw_n_se: total.raw_n.stats().se(),
        compensated_n: total.comp_n.stats().mean(),
        compensated_n_se: total.comp_n.stats().se(),
        raw_p: total.raw_p.stats().mean(),
        raw_p_se: total.raw_p.stats().se(),
        compensated_p: total.comp_p.stats().mean(),
        compensated_p_se: total.comp_p.stats().se(),
    };

    let u_hat = value_expansion(&moments, eps_grid);
    let mut rows = Vec::with_capacity(configs.len());
    let mut stops = Vec::with_capacity(configs.len());
    for (j, cfg) in configs.iter().enumerate() {
        let acc = &total.bounds[j];
        let violation_frac = check_violations(acc.violations, n_eval, cfg.eps)?;
        if let Some((path, value)) = acc.neg_density {
            return Err(Error::NonPositiveDensity {
                path,
                eps: cfg.eps.to_f64().unwrap_or(f64::NAN),
                value: value.to_f64().unwrap_or(f64::NAN),
            });
        }
        let primal = PrimalBound {
            u_low: acc.primal.mean(),
            se_low: acc.primal.se(),
            violation_frac,
        };
        let dual = DualBound {
            u_up: acc.dual.mean(),
            se_up: acc.dual.se(),
            min_density: acc.min_density,
        };
        let mut overshoot = acc.overshoot;
        if origin_hit[j] {
            let levels = [T::zero(), T::zero(), co.n0.abs(), co.p0.abs()];
            let barriers = [
                cfg.barrier_delta,
                cfg.barrier_gamma,
                cfg.barrier_n,
                cfg.barrier_p,
            ];
            for q in 0..4 {
                let over = levels[q] - barriers[q];
                if over > overshoot[q] {
                    overshoot[q] = over;
                }
            }
        }
        let stop_frac = from_count::<T>(acc.stops) / from_count::<T>(n_eval);
        rows.push(BoundsRow::assemble(
            cfg.eps, u_hat[j], &primal, &dual, stop_frac,
        ));
        stops.push(StopSummary {
            config: *cfg,
            stop_count: acc.stops,
            n_eval,
            overshoot,
        });
    }

    let wealth_violation_frac = total
        .wealth
        .iter()
        .map(|&c| from_count::<T>(c) / from_count::<T>(n_eval))
        .collect();

    Ok(ClosedFormStream {
        grid,
        eps_grid: eps_grid.to_vec(),
        moments,
        orthogonality,
        bounds: BoundsReport { rows },
        stops,
        max_step: total.max_step,
        wealth_violation_frac,
        warnings,
    })
}

/// Chunk accumulator of the regression evaluation pass.
struct RegAcc<T: Real> {
    reg_moments: MomentAccum<T>,
    ref_moments: MomentAccum<T>,
    raw_n: PairedMeanVar<T>,
    raw_p: PairedMeanVar<T>,
    sq_diff: T,
    sq_ref: T,
    wealth: Vec<usize>,
    scratch: PathScratch<T>,
    eval: PathEval<T>,
    first_error: Option<Error>,
}

/// Fits the regression projection on the first half of a regenerated
/// ensemble and evaluates it on the held-out half, next to the
/// closed-form recursion on the identical paths.
///
/// The result pairs regression and closed-form moment estimates path by
/// path (their difference has only the projection error and in-sample
/// noise of the fit, no independent-sampling noise) and aggregates the
/// relative L² distance between the fitted and exact first hedge rates.
/// `eps_grid` is only consumed by the terminal-wealth admissibility
/// fractions; bounds for the regression backend come from the
/// materialized route at moderate scale.
pub fn stream_regression<T: Real>(
    market: &MarketSpec<T>,
    numerics: &NumericsConfig<T>,
    basis: &RegressionBasis<T>,
    eps_grid: &[T],
) -> Result<RegressionStream<T>> {
    let validated = validate_spec(market, numerics)?;
    let num = derive_numeraire(market);
    let co = ClosedFormCoeffs::new(market, &num)?;
    let t_max = horizon_truncation(market, numerics.dt, numerics.horizon_tol)?;
    let grid = TimeGrid::new(numerics.dt, t_max);
    let cons = SimConstants::new(market, &num, grid);
    let mut warnings = validated.warnings;
    warn_inadmissible(eps_grid, eps_limit(co.n0, co.p0), &mut warnings);

    let n_paths = numerics.n_paths;
    let fit_end = n_paths / 2;
    assert!(
        !numerics.antithetic || fit_end % 2 == 0,
        "antithetic pairing needs a pair-aligned evaluation range"
    );
    let scan = GenScan::new(&cons, n_paths, numerics.seed, numerics.antithetic);
    let model = fit_regression(market, basis, &scan, 0..fit_end, numerics.parallel)?;
    let tables = FeatureTables::new(market, grid);
    let m_features = basis.n_features();
    let paired = numerics.antithetic;
    let n_eps = eps_grid.len();
    let exp_rt = &cons.exp_rt;
    let n_steps = grid.n_steps;
    let last = grid.n_points() - 1;

    let make = || RegAcc {
        reg_moments: MomentAccum::new(paired),
        ref_moments: MomentAccum::new(paired),
        raw_n: PairedMeanVar::new(paired),
        raw_p: PairedMeanVar::new(paired),
        sq_diff: T::zero(),
        sq_ref: T::zero(),
        wealth: vec![0; n_eps],
        scratch: PathScratch::new(grid, m_features),
        eval: PathEval::new(grid),
        first_error: None,
    };

    let kernel = |p: usize, scan: &GenScan<T>, acc: &mut RegAcc<T>| {
        if acc.first_error.is_some() {
            return;
        }
        if let Err(e) = acc.scratch.fill(scan, p, basis, &tables) {
            acc.first_error = Some(e);
            return;
        }
        model.evaluate_path(&acc.scratch, &mut acc.eval);
        let RegAcc {
            reg_moments,
            ref_moments,
            raw_n,
            raw_p,
            sq_diff,
            sq_ref,
            wealth,
            scratch,
            eval,
            ..
        } = acc;
        let mut sweep = KwSweep::new(&co, exp_rt);
        scan.scan(p, |i, left, dw1, right| {
            sweep.step(left, dw1, right);
            let d = eval.theta_delta[i] - sweep.theta_delta;
            *sq_diff += d * d;
            *sq_ref += sweep.theta_delta * sweep.theta_delta;
        });
        let m_hat = eval.n[last] + eval.delta[last];
        reg_moments.push(m_hat, eval.n[last], eval.gamma[last]);
        let m_ref = sweep.n + sweep.delta;
        ref_moments.push(m_ref, sweep.n, sweep.gamma);
        let mut sn = T::zero();
        let mut sp = T::zero();
        for i in 0..n_steps {
            sn += (eval.n[i + 1] - eval.n[i]) * scratch.dw[i];
            sp += (eval.p[i + 1] - eval.p[i]) * scratch.dw[i];
        }
        raw_n.push(sn);
        raw_p.push(sp);
        for (j, &epsj) in eps_grid.iter().enumerate() {
            let eps2 = epsj * epsj;
            let x = epsj * eval.delta[last] + eps2 * eval.gamma[last];
            if T::one() + x - epsj * m_hat <= T::zero() {
                wealth[j] += 1;
            }
        }
    };

    let merge = |total: &mut RegAcc<T>, mut chunk: RegAcc<T>| {
        chunk.reg_moments.finish();
        total.reg_moments.merge(&chunk.reg_moments);
        chunk.ref_moments.finish();
        total.ref_moments.merge(&chunk.ref_moments);
        chunk.raw_n.finish();
        total.raw_n.merge(&chunk.raw_n);
        chunk.raw_p.finish();
        total.raw_p.merge(&chunk.raw_p);
        total.sq_diff += chunk.sq_diff;
        total.sq_ref += chunk.sq_ref;
        for (tw, cw) in total.wealth.iter_mut().zip(&chunk.wealth) {
            *tw += *cw;
        }
        if total.first_error.is_none() {
            total.first_error = chunk.first_error;
        }
    };

    let total = fold_paths(
        &scan,
        fit_end..n_paths,
        numerics.parallel,
        make,
        kernel,
        merge,
    );
    if let Some(e) = total.first_error {
        return Err(e);
    }
    let n_eval = n_paths - fit_end;

    let (n0_hat, p0_hat) = model.initial_levels_with(market, basis);
    let moments =
        total
            .reg_moments
            .into_moments(n0_hat, p0_hat, ProjectionBackend::Regression, numerics.seed);
    let reference_moments =
        total
            .ref_moments
            .into_moments(co.n0, co.p0, ProjectionBackend::ClosedForm, numerics.seed);
    let orthogonality = OrthogonalityReport {
        n_paths: n_eval,
        raw_n: total.raw_n.stats().mean(),
        raw_n_se: total.raw_n.stats().se(),
        compensated_n: total.raw_n.stats().mean(),
        compensated_n_se: total.raw_n.stats().se(),
        raw_p: total.raw_p.stats().mean(),
        raw_p_se: total.raw_p.stats().se(),
        compensated_p: total.raw_p.stats().mean(),
        compensated_p_se: total.raw_p.stats().se(),
    };
    let theta_rel_l2 = if total.sq_ref > T::zero() {
        (total.sq_diff / total.sq_ref).sqrt()
    } else {
        total.sq_diff.sqrt()
    };
    let wealth_violation_frac = total
        .wealth
        .iter()
        .map(|&c| from_count::<T>(c) / from_count::<T>(n_eval))
        .collect();

    Ok(RegressionStream {
        grid,
        eps_grid: eps_grid.to_vec(),
        moments,
        reference_moments,
        orthogonality,
        theta_rel_l2,
        wealth_violation_frac,
        n_fit: fit_end,
        warnings,
    })
}
