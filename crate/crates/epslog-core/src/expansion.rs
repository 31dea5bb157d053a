//! Polynomial expansions in the position size.
//!
//! Everything here is pure arithmetic on previously estimated inputs: the
//! quartic expansion of the relative value,
//!
//! ```text
//!     û(ε) = −a₁ε − (a₂/2)ε² − (a₃/3)ε³ − (a₄/4 + g)ε⁴,
//! ```
//!
//! the quadratic per-path approximation of optimal terminal wealth,
//!
//! ```text
//!     x̂(T) = ε·Δ(T) + ε²·Γ(T),
//! ```
//!
//! and the quartic certainty equivalent ĉ(ε), whose coefficients are the
//! degree-4 truncation of `e^{û(ε)} − 1` written directly in the moments:
//!
//! ```text
//!     ĉ(ε) = −A₁ε − ((A₂−A₁²)/2)ε² − (A₃/3 − A₁A₂/2 + A₁³/6)ε³
//!            − (A₄/4 + G − A₁A₃/3 − A₂²/8 + A₁²A₂/4 − A₁⁴/24)ε⁴.
//! ```
//!
//! # Numerical notes
//!
//! All three maps are polynomials evaluated by Horner's rule; each
//! coefficient is linear in the moment it carries, so perturbing one
//! moment moves exactly one value coefficient. Both expansions vanish
//! identically at `ε = 0`. For degenerate moments shaped like a
//! deterministic terminal income (`A₂ = A₁²`, `A₃ = A₁³`, `A₄ = A₁⁴`,
//! `G = 0`) the ε², ε³, ε⁴ coefficients of ĉ cancel exactly and the
//! certainty equivalent collapses to its linear term — the situation a
//! perfectly replicable income produces.
//!
//! Admissibility of the approximate wealth is measured empirically:
//! [`wealth_approximation`] reports the fraction of evaluation paths on
//! which `1 + x̂(T) − ε·F(T)` fails to stay positive. Whether a given ε
//! lies inside the range where the expansion is certified is the bounds
//! layer's concern; these polynomials evaluate anywhere.

use serde::Serialize;

use crate::kw::{KWPaths, Moments};
use crate::scalar::{from_count, lit, Real};

/// Coefficients `[u₁, u₂, u₃, u₄]` of the quartic value expansion
/// `û(ε) = u₁ε + u₂ε² + u₃ε³ + u₄ε⁴`.
pub fn value_coefficients<T: Real>(m: &Moments<T>) -> [T; 4] {
    let half = lit::<T>(0.5);
    let third = T::one() / lit::<T>(3.0);
    let quarter = lit::<T>(0.25);
    [
        -m.a1,
        -half * m.a2,
        -third * m.a3,
        -(quarter * m.a4 + m.g),
    ]
}

/// Coefficients `[c₁, c₂, c₃, c₄]` of the quartic certainty equivalent
/// `ĉ(ε) = c₁ε + c₂ε² + c₃ε³ + c₄ε⁴`.
pub fn ce_coefficients<T: Real>(m: &Moments<T>) -> [T; 4] {
    let half = lit::<T>(0.5);
    let third = T::one() / lit::<T>(3.0);
    let quarter = lit::<T>(0.25);
    let (a1, a2, a3, a4, g) = (m.a1, m.a2, m.a3, m.a4, m.g);
    let c2 = -half * (a2 - a1 * a1);
    let c3 = -(third * a3 - half * a1 * a2 + a1 * a1 * a1 / lit::<T>(6.0));
    let c4 = -(quarter * a4 + g - third * a1 * a3 - a2 * a2 / lit::<T>(8.0)
        + quarter * a1 * a1 * a2
        - a1 * a1 * a1 * a1 / lit::<T>(24.0));
    [-a1, c2, c3, c4]
}

/// Evaluates a quartic with zero constant term by Horner's rule.
fn horner4<T: Real>(c: &[T; 4], eps: T) -> T {
    eps * (c[0] + eps * (c[1] + eps * (c[2] + eps * c[3])))
}

/// Quartic value approximation at each ε of the grid.
pub fn value_expansion<T: Real>(m: &Moments<T>, eps_grid: &[T]) -> Vec<T> {
    let c = value_coefficients(m);
    eps_grid.iter().map(|e| horner4(&c, *e)).collect()
}

/// Quartic certainty equivalent at each ε, plus the exact map
/// `e^u − 1` applied to `u_estimates` when supplied (and to the quartic
/// approximation itself otherwise).
pub fn certainty_equivalent<T: Real>(
    m: &Moments<T>,
    eps_grid: &[T],
    u_estimates: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    if let Some(u) = u_estimates {
        assert_eq!(
            u.len(),
            eps_grid.len(),
            "one value estimate per grid point required"
        );
    }
    let c = ce_coefficients(m);
    let uc = value_coefficients(m);
    let ce_hat: Vec<T> = eps_grid.iter().map(|e| horner4(&c, *e)).collect();
    let ce_exact: Vec<T> = eps_grid
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let u = match u_estimates {
                Some(us) => us[i],
                None => horner4(&uc, *e),
            };
            u.exp() - T::one()
        })
        .collect();
    (ce_hat, ce_exact)
}

/// Per-path wealth approximation and its admissibility tally.
#[derive(Debug, Clone)]
pub struct WealthApprox<T: Real> {
    /// `x̂(T) = ε·Δ(T) + ε²·Γ(T)`, one entry per path (all paths).
    pub x_hat: Vec<T>,
    /// Fraction of evaluation paths with `1 + x̂(T) − ε·F(T) ≤ 0`.
    pub violation_frac: T,
}

/// Builds the terminal wealth approximation at one ε from a filled
/// decomposition. The violation count runs over the evaluation range
/// only (out-of-sample paths for the regression backend, everything for
/// the closed form); `x_hat` is returned for every path.
pub fn wealth_approximation<T: Real>(kw: &KWPaths<T>, eps: T) -> WealthApprox<T> {
    let last = kw.grid.n_points() - 1;
    let eps2 = eps * eps;
    let mut x_hat = Vec::with_capacity(kw.n_paths);
    let mut violations = 0usize;
    for p in 0..kw.n_paths {
        let x = eps * kw.delta_row(p)[last] + eps2 * kw.gamma_row(p)[last];
        x_hat.push(x);
        if p >= kw.eval_start {
            let f_t = kw.terminal_income(p);
            if T::one() + x - eps * f_t <= T::zero() {
                violations += 1;
            }
        }
    }
    let violation_frac = from_count::<T>(violations) / from_count::<T>(kw.n_eval());
    WealthApprox {
        x_hat,
        violation_frac,
    }
}

/// One evaluated grid point of the combined report.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionRow<T: Real> {
    /// Position size.
    pub eps: T,
    /// Quartic value approximation.
    pub u_hat: T,
    /// Quartic certainty equivalent.
    pub ce_hat: T,
    /// `e^u − 1` at the value estimate used for this row.
    pub ce_exact: T,
    /// Fraction of evaluation paths failing terminal admissibility.
    pub violation_frac: T,
}

/// Value, certainty-equivalent, and admissibility summaries over an ε
/// grid.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport<T: Real> {
    /// One row per ε, in the order given.
    pub rows: Vec<ExpansionRow<T>>,
}

/// Evaluates all expansions on one grid. `ce_exact` uses the quartic
/// value approximation as its argument.
pub fn expansion_report<T: Real>(
    m: &Moments<T>,
    kw: &KWPaths<T>,
    eps_grid: &[T],
) -> ExpansionReport<T> {
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
            violation_frac: wealth_approximation(kw, *e).violation_frac,
        })
        .collect();
    ExpansionReport { rows }
}
