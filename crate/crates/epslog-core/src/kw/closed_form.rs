//! Closed-form hedge decomposition for the mean-reverting factor market.
//!
//! Write `λ = a/σ` for the traded market price of risk, `K = r + k`,
//! `η = kθ̄ − λbρ`, `h = η/r`, and `A(t) = e^{−rt}S₀(t)` for the
//! discounted numéraire level. The conditional closure of the discounted
//! income integral and of its squared residual are affine in the factor:
//!
//! ```text
//!     m(t)   = f(t) + A(t) (Z(t) + h) / K
//!     θ^Δ(t) = A(t) (c1 + c2 Z(t)),   c1 = (bρ − λh)/K,   c2 = −λ/K
//!     q(t)   = N(t)² + C_K A(t)²,     C_K = b²(1−ρ²) / (K² (2r − λ²))
//!     θ^Γ(t) = −2 λ C_K A(t)²
//! ```
//!
//! `C_K` aggregates the expected future quadratic variation of the
//! residual `N` per unit of `A(t)²`; the defining integral converges only
//! when `2r > λ²`, which [`ClosedFormCoeffs::new`] enforces.
//!
//! # Numerical notes
//!
//! The per-path recursion ([`KwSweep`]) consumes exactly the
//! `(left, ΔW¹, right)` triples that a path scan emits and is shared
//! verbatim between the materialized driver here and the streaming
//! pipeline, so the two produce bit-identical arrays. Hedge rates are
//! evaluated at the left endpoint of each step (Itô sums); the level
//! identities `m = Δ + N` and `q = Γ + P` then hold exactly at every grid
//! point by construction.
//!
//! [`StepBias`] provides the one-step conditional means
//! `E[ΔN·ΔW¹ | state]` and `E[ΔP·ΔW¹ | state]` implied by the exact
//! factor/numéraire stepping and the trapezoid income rule. They are
//! `O(dt²)` per step and reduce to lognormal–Gaussian moments; the
//! orthogonality diagnostics subtract them so that the compensated
//! statistics are martingale-difference sums with exactly zero mean at any
//! step size.

use super::{KWPaths, ProjectionBackend};
use crate::error::{Error, Result};
use crate::model::{MarketSpec, NumeraireSpec};
use crate::paths::{BundleScan, PathBundle, PathScan, SimConstants, StateView};
use crate::scalar::{lit, Real};

/// Closed-form projection coefficients (see the module docs for formulas).
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormCoeffs<T: Real> {
    /// Traded market price of risk `λ = a/σ`.
    pub mpr: T,
    /// `1 / (r + k)`.
    pub inv_rpk: T,
    /// `h = η/r`.
    pub eta_over_r: T,
    /// Constant part of the first hedge rate: `(bρ − λh)/K`.
    pub c1: T,
    /// Factor loading of the first hedge rate: `−λ/K`.
    pub c2: T,
    /// Residual quadratic-variation aggregate `C_K`.
    pub c_k: T,
    /// Second hedge rate per unit `A²`: `−2λC_K`.
    pub theta_gamma_coef: T,
    /// Initial income closure `m(0) = (z0 + h)/K`.
    pub n0: T,
    /// Initial squared-residual closure `q(0) = n0² + C_K`.
    pub p0: T,
}

impl<T: Real> ClosedFormCoeffs<T> {
    /// Derives the coefficients, rejecting parameter sets where the
    /// residual variance integral diverges (`2r ≤ λ²`).
    pub fn new(market: &MarketSpec<T>, num: &NumeraireSpec<T>) -> Result<Self> {
        let two = lit::<T>(2.0);
        let mpr = num.mpr;
        let two_r = two * market.r;
        let mpr_sq = mpr * mpr;
        if two_r <= mpr_sq {
            return Err(Error::IntegrabilityViolation {
                two_r: two_r.to_f64().unwrap_or(f64::NAN),
                mpr_sq: mpr_sq.to_f64().unwrap_or(f64::NAN),
            });
        }
        let inv_rpk = T::one() / (market.r + market.k);
        let eta_over_r = num.eta / market.r;
        let c1 = (market.b * market.rho - mpr * eta_over_r) * inv_rpk;
        let c2 = -mpr * inv_rpk;
        let one_minus_rho_sq = (T::one() - market.rho) * (T::one() + market.rho);
        let c_k = market.b * market.b * one_minus_rho_sq * inv_rpk * inv_rpk / (two_r - mpr_sq);
        let theta_gamma_coef = -two * mpr * c_k;
        let n0 = (market.z0 + eta_over_r) * inv_rpk;
        let p0 = n0 * n0 + c_k;
        Ok(ClosedFormCoeffs {
            mpr,
            inv_rpk,
            eta_over_r,
            c1,
            c2,
            c_k,
            theta_gamma_coef,
            n0,
            p0,
        })
    }

    /// First hedge rate `θ^Δ` at discounted numéraire level `a` and factor
    /// value `z`.
    pub fn theta_delta(&self, a: T, z: T) -> T {
        a * (self.c1 + self.c2 * z)
    }

    /// Second hedge rate `θ^Γ` at discounted numéraire level `a`.
    pub fn theta_gamma(&self, a: T) -> T {
        self.theta_gamma_coef * a * a
    }
}

/// Per-path recursion evaluating the projected processes step by step.
///
/// State after `i` calls to [`KwSweep::step`]: the levels `Δ, Γ, N, P` at
/// grid point `i` and the hedge rates at the left endpoint of the step
/// just consumed. Every consumer of the closed-form backend (materializer,
/// moments, bounds pipeline) runs this exact arithmetic.
#[derive(Debug, Clone)]
pub(crate) struct KwSweep<'a, T: Real> {
    co: &'a ClosedFormCoeffs<T>,
    /// Discount table `e^{−r t_i}` per grid point.
    exp_rt: &'a [T],
    /// Current grid index.
    i: usize,
    /// Hedgeable income component `Δ(t_i)`.
    pub delta: T,
    /// Hedgeable squared-residual component `Γ(t_i)`.
    pub gamma: T,
    /// Orthogonal income residual `N(t_i)`.
    pub n: T,
    /// Orthogonal squared residual `P(t_i)`.
    pub p: T,
    /// `θ^Δ` at the left endpoint of the last consumed step.
    pub theta_delta: T,
    /// `θ^Γ` at the left endpoint of the last consumed step.
    pub theta_gamma: T,
}

impl<'a, T: Real> KwSweep<'a, T> {
    /// Starts a fresh path at grid point 0.
    pub fn new(co: &'a ClosedFormCoeffs<T>, exp_rt: &'a [T]) -> Self {
        KwSweep {
            co,
            exp_rt,
            i: 0,
            delta: T::zero(),
            gamma: T::zero(),
            n: co.n0,
            p: co.p0,
            theta_delta: T::zero(),
            theta_gamma: T::zero(),
        }
    }

    /// Advances one step using both endpoint states and the traded shock.
    pub fn step(&mut self, left: StateView<T>, dw1: T, right: StateView<T>) {
        let co = self.co;
        let a_left = self.exp_rt[self.i] * left.s0;
        self.theta_delta = co.theta_delta(a_left, left.z);
        self.theta_gamma = co.theta_gamma(a_left);
        self.delta += self.theta_delta * dw1;
        self.gamma += self.theta_gamma * dw1;
        self.i += 1;
        let a_right = self.exp_rt[self.i] * right.s0;
        let m = right.f + a_right * (right.z + co.eta_over_r) * co.inv_rpk;
        self.n = m - self.delta;
        let q = self.n * self.n + co.c_k * a_right * a_right;
        self.p = q - self.gamma;
    }
}

/// One-step conditional-mean corrections for the orthogonality statistics.
///
/// With left-endpoint hedge rates, `E[ΔN_i ΔW¹_i | ℱ_i]` and
/// `E[ΔP_i ΔW¹_i | ℱ_i]` are not zero but `O(dt²)` per step. For the exact
/// one-step law used by the simulator (exact factor and numéraire
/// transitions, trapezoid income increment) they are closed-form functions
/// of the left state. Writing `δ = dt`, `a₁ = −λ√δ`, `c = e^{−rδ−λ²δ/2}`,
/// `z̄` for the one-step factor conditional mean, `v` for its shock scale,
/// and `G = A'(z' + h)`, the income-closure increment decomposes as
///
/// ```text
///     Δm = c₀ + α G + γ A',   c₀ = (δ/2)Az − A(z+h)/K,
///     α = δ/2 + 1/K,          γ = −h δ/2,
/// ```
///
/// and every needed product moment of `(G, A', ΔW¹)` is a
/// lognormal–Gaussian moment. The corrections are exact conditional means,
/// so compensated diagnostics are unbiased at any step size, not just
/// asymptotically.
#[derive(Debug, Clone, Copy)]
pub struct StepBias<T: Real> {
    dt: T,
    sqrt_dt: T,
    /// Numéraire log-shock loading `a₁ = −λ√δ`.
    a1: T,
    /// Deterministic numéraire step factor `c = e^{−rδ−λ²δ/2}`.
    c: T,
    /// Factor mean-reversion step factor `e^{−kδ}`.
    dk: T,
    /// Traded component of the factor shock scale, `v·ρ`.
    vr: T,
    /// Orthogonal component of the factor shock scale, `v·√(1−ρ²)`.
    w_perp: T,
    /// `E[e^{a₁ξ}] = e^{a₁²/2}`.
    e1: T,
    /// `E[e^{2a₁ξ}] = e^{2a₁²}`.
    e2: T,
    /// Income-closure weight on `G`: `δ/2 + 1/K`.
    alpha: T,
    /// Income-closure weight on `A'`: `−hδ/2`.
    gamma_w: T,
    /// `e^{(λ²−2r)δ} − 1`, the exact relative one-step drift of `A²`.
    expm1_q: T,
    theta_bar: T,
    h: T,
    inv_rpk: T,
    half_dt: T,
    co: ClosedFormCoeffs<T>,
}

impl<T: Real> StepBias<T> {
    /// Precomputes the step constants for grid spacing `dt`.
    pub fn new(market: &MarketSpec<T>, co: &ClosedFormCoeffs<T>, dt: T) -> Self {
        let two = lit::<T>(2.0);
        let half = lit::<T>(0.5);
        let mpr = co.mpr;
        let sqrt_dt = dt.sqrt();
        let a1 = -mpr * sqrt_dt;
        let c = (-(market.r + half * mpr * mpr) * dt).exp();
        let dk = (-market.k * dt).exp();
        let v = market.b * (((T::one() - (-two * market.k * dt).exp()) / (two * market.k)).sqrt());
        StepBias {
            dt,
            sqrt_dt,
            a1,
            c,
            dk,
            vr: v * market.rho,
            w_perp: v * ((T::one() - market.rho) * (T::one() + market.rho)).sqrt(),
            e1: (half * a1 * a1).exp(),
            e2: (two * a1 * a1).exp(),
            alpha: half * dt + co.inv_rpk,
            gamma_w: -co.eta_over_r * half * dt,
            expm1_q: ((mpr * mpr - two * market.r) * dt).exp_m1(),
            theta_bar: market.theta,
            h: co.eta_over_r,
            inv_rpk: co.inv_rpk,
            half_dt: half * dt,
            co: *co,
        }
    }

    /// Moments of `(G, A')` against `ΔW¹` powers from left state `(a, z)`;
    /// returns `(E[ΔmΔw], E[ΔmΔw²], E[Δm²Δw])`.
    fn dm_moments(&self, a: T, z: T) -> (T, T, T) {
        let two = lit::<T>(2.0);
        let three = lit::<T>(3.0);
        let four = lit::<T>(4.0);
        let six = lit::<T>(6.0);
        let eight = lit::<T>(8.0);
        let a1 = self.a1;
        let a1_sq = a1 * a1;
        let zbar = self.theta_bar + (z - self.theta_bar) * self.dk;
        let zh = zbar + self.h;
        let ac = a * self.c;
        let ac2 = ac * ac;
        let ea1 = ac * self.sqrt_dt * a1 * self.e1;
        let ea2w = ac * self.dt * (T::one() + a1_sq) * self.e1;
        let eaa = ac2 * self.sqrt_dt * two * a1 * self.e2;
        let eg1 = ac * self.sqrt_dt * self.e1 * (a1 * zh + self.vr * (T::one() + a1_sq));
        let eg2w =
            ac * self.dt * self.e1 * ((T::one() + a1_sq) * zh + self.vr * (three * a1 + a1 * a1_sq));
        let ega = ac2 * self.sqrt_dt * self.e2 * (two * a1 * zh + self.vr * (T::one() + four * a1_sq));
        let egg = ac2
            * self.sqrt_dt
            * self.e2
            * (two * a1 * (zh * zh + self.w_perp * self.w_perp)
                + two * self.vr * zh * (T::one() + four * a1_sq)
                + self.vr * self.vr * (six * a1 + eight * a1 * a1_sq));
        let c0 = a * (self.half_dt * z - (z + self.h) * self.inv_rpk);
        let emw = self.alpha * eg1 + self.gamma_w * ea1;
        let emw2 = c0 * self.dt + self.alpha * eg2w + self.gamma_w * ea2w;
        let em2w = self.alpha * self.alpha * egg
            + self.gamma_w * self.gamma_w * eaa
            + two * c0 * self.alpha * eg1
            + two * c0 * self.gamma_w * ea1
            + two * self.alpha * self.gamma_w * ega;
        (emw, emw2, em2w)
    }

    /// `E[ΔN ΔW¹ | state]` at left state `(a, z)`.
    pub fn comp_n(&self, a: T, z: T) -> T {
        let (emw, _, _) = self.dm_moments(a, z);
        emw - self.co.theta_delta(a, z) * self.dt
    }

    /// `E[ΔP ΔW¹ | state]` at left state `(a, z)` with residual level
    /// `n_left`.
    pub fn comp_p(&self, a: T, z: T, n_left: T) -> T {
        let two = lit::<T>(2.0);
        let (emw, emw2, em2w) = self.dm_moments(a, z);
        let theta_delta = self.co.theta_delta(a, z);
        let beta_n = emw - theta_delta * self.dt;
        let gamma_n = em2w - two * theta_delta * emw2;
        let theta_gamma = self.co.theta_gamma(a);
        two * n_left * beta_n + gamma_n + theta_gamma * self.dt * self.expm1_q
    }
}

/// Evaluates the closed-form decomposition on every path of a materialized
/// bundle. The bundle's income column must already be accumulated.
pub fn closed_form_projection<T: Real>(
    market: &MarketSpec<T>,
    num: &NumeraireSpec<T>,
    bundle: &PathBundle<T>,
) -> Result<KWPaths<T>> {
    let co = ClosedFormCoeffs::new(market, num)?;
    let cons = SimConstants::new(market, num, bundle.grid);
    let mut out = KWPaths::zeroed(
        bundle.grid,
        bundle.n_paths,
        0,
        ProjectionBackend::ClosedForm,
    );
    out.n0 = co.n0;
    out.p0 = co.p0;
    let npts = bundle.grid.n_points();
    let nstp = bundle.grid.n_steps;
    let scan = BundleScan::new(bundle);
    for p in 0..bundle.n_paths {
        let base_pt = p * npts;
        let base_st = p * nstp;
        let d_row = &mut out.delta[base_pt..base_pt + npts];
        let n_row = &mut out.n_mart[base_pt..base_pt + npts];
        let g_row = &mut out.gamma[base_pt..base_pt + npts];
        let p_row = &mut out.p_mart[base_pt..base_pt + npts];
        let td_row = &mut out.theta_delta[base_st..base_st + nstp];
        let tg_row = &mut out.theta_gamma[base_st..base_st + nstp];
        let mut sw = KwSweep::new(&co, &cons.exp_rt);
        d_row[0] = sw.delta;
        n_row[0] = sw.n;
        g_row[0] = sw.gamma;
        p_row[0] = sw.p;
        scan.scan(p, |i, left, dw1, right| {
            sw.step(left, dw1, right);
            td_row[i] = sw.theta_delta;
            tg_row[i] = sw.theta_gamma;
            d_row[i + 1] = sw.delta;
            n_row[i + 1] = sw.n;
            g_row[i + 1] = sw.gamma;
            p_row[i + 1] = sw.p;
        });
    }
    Ok(out)
}
