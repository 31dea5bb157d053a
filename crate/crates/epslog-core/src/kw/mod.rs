//! Hedgeable/orthogonal decompositions of the income functionals.
//!
//! Two nested projections drive everything downstream. Write `F` for the
//! discounted income integral and `m(t) = E[F | ℱ_t]` for its conditional
//! closure on the simulated horizon. The first projection splits `m` along
//! the traded Brownian motion,
//!
//! ```text
//!     m(t) = Δ(t) + N(t),      Δ(t) = ∫ θ^Δ(s) dW¹(s),
//! ```
//!
//! leaving a residual martingale `N` (started at `N(0) = m(0)`) orthogonal
//! to `W¹`. The second projection repeats the split for the conditional
//! closure `q(t)` of the squared residual `N(T)²`,
//!
//! ```text
//!     q(t) = Γ(t) + P(t),      Γ(t) = ∫ θ^Γ(s) dW¹(s),
//! ```
//!
//! with `P` again orthogonal to `W¹`. The integrands `θ^Δ`, `θ^Γ` are the
//! hedge-rate corrections of the expansion, `N(T)`, `P(T)` feed its
//! moments, and the starting levels `m(0)`, `q(0)` are the first two
//! certainty-style constants (`n0`, `p0`).
//!
//! Backends:
//!
//! * [`closed_form_projection`] evaluates the projections from explicit
//!   formulas available for the mean-reverting factor model.
//! * [`regression_projection`] recovers them nonparametrically by
//!   least-squares projection on a feature basis, fit and evaluated on
//!   disjoint path halves.
//! * [`solve_psi_ode`] solves the stationary PDE characterization of the
//!   hedge profile on a factor grid, as an independent cross-check.
//!
//! Both path backends emit the same [`KWPaths`] layout so the expansion and
//! bound layers are backend-agnostic.

use crate::paths::TimeGrid;
use crate::scalar::Real;

pub mod closed_form;
pub mod moments;
pub mod psi_ode;
pub mod regression;

pub use closed_form::{closed_form_projection, ClosedFormCoeffs};
pub use moments::{compute_moments, orthogonality_diagnostics, Moments, OrthogonalityReport};
pub use psi_ode::solve_psi_ode;
pub use regression::{regression_projection, FeatureArgs, RegressionBasis};

/// Which machinery produced a set of projected paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionBackend {
    /// Explicit formulas for the mean-reverting factor model.
    ClosedForm,
    /// Per-step least-squares projection on a feature basis.
    Regression,
}

impl ProjectionBackend {
    /// Stable lower-case label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ProjectionBackend::ClosedForm => "closed-form",
            ProjectionBackend::Regression => "regression",
        }
    }
}

/// Projected decomposition of a path ensemble, row-major `path × time`.
///
/// Level arrays (`delta`, `n_mart`, `gamma`, `p_mart`) have `n_steps + 1`
/// entries per path and start at `Δ(0) = Γ(0) = 0`, `N(0) = n0`,
/// `P(0) = p0`. Integrand arrays (`theta_delta`, `theta_gamma`) have
/// `n_steps` entries per path, holding the left-endpoint hedge rates so
/// that e.g. `Δ(t_{i+1}) − Δ(t_i) = θ^Δ(t_i) ΔW¹_i`.
#[derive(Debug, Clone)]
pub struct KWPaths<T: Real> {
    /// Time grid shared with the generating ensemble.
    pub grid: TimeGrid<T>,
    /// Number of paths.
    pub n_paths: usize,
    /// First path index of the evaluation range. Paths `0..eval_start`
    /// were used to fit the projection (regression backend) and are
    /// excluded from moment estimates; the closed-form backend uses 0.
    pub eval_start: usize,
    /// Which backend produced the arrays.
    pub backend: ProjectionBackend,
    /// Initial level `m(0)` of the conditional income closure.
    pub n0: T,
    /// Initial level `q(0)` of the squared-residual closure.
    pub p0: T,
    /// Hedgeable component `Δ(t)` of the income closure.
    pub delta: Vec<T>,
    /// Orthogonal residual `N(t) = m(t) − Δ(t)`, so `N(0) = m(0) = n0`.
    pub n_mart: Vec<T>,
    /// Hedgeable component `Γ(t)` of the squared-residual closure.
    pub gamma: Vec<T>,
    /// Orthogonal residual `P(t)` with `P(0) = p0` and
    /// `q(t) = P(t) + Γ(t)`.
    pub p_mart: Vec<T>,
    /// Left-endpoint hedge rate `θ^Δ(t_i)` per step.
    pub theta_delta: Vec<T>,
    /// Left-endpoint hedge rate `θ^Γ(t_i)` per step.
    pub theta_gamma: Vec<T>,
}

impl<T: Real> KWPaths<T> {
    /// Allocates zeroed arrays for `n_paths` paths on `grid`.
    pub(crate) fn zeroed(
        grid: TimeGrid<T>,
        n_paths: usize,
        eval_start: usize,
        backend: ProjectionBackend,
    ) -> Self {
        let pts = n_paths * grid.n_points();
        let stp = n_paths * grid.n_steps;
        KWPaths {
            grid,
            n_paths,
            eval_start,
            backend,
            n0: T::zero(),
            p0: T::zero(),
            delta: vec![T::zero(); pts],
            n_mart: vec![T::zero(); pts],
            gamma: vec![T::zero(); pts],
            p_mart: vec![T::zero(); pts],
            theta_delta: vec![T::zero(); stp],
            theta_gamma: vec![T::zero(); stp],
        }
    }

    /// Number of evaluation paths (`n_paths − eval_start`).
    pub fn n_eval(&self) -> usize {
        self.n_paths - self.eval_start
    }

    /// `Δ` levels of path `p`.
    pub fn delta_row(&self, p: usize) -> &[T] {
        let n = self.grid.n_points();
        &self.delta[p * n..(p + 1) * n]
    }

    /// `N` levels of path `p`.
    pub fn n_row(&self, p: usize) -> &[T] {
        let n = self.grid.n_points();
        &self.n_mart[p * n..(p + 1) * n]
    }

    /// `Γ` levels of path `p`.
    pub fn gamma_row(&self, p: usize) -> &[T] {
        let n = self.grid.n_points();
        &self.gamma[p * n..(p + 1) * n]
    }

    /// `P` levels of path `p`.
    pub fn p_row(&self, p: usize) -> &[T] {
        let n = self.grid.n_points();
        &self.p_mart[p * n..(p + 1) * n]
    }

    /// `θ^Δ` rates of path `p`.
    pub fn theta_delta_row(&self, p: usize) -> &[T] {
        let n = self.grid.n_steps;
        &self.theta_delta[p * n..(p + 1) * n]
    }

    /// `θ^Γ` rates of path `p`.
    pub fn theta_gamma_row(&self, p: usize) -> &[T] {
        let n = self.grid.n_steps;
        &self.theta_gamma[p * n..(p + 1) * n]
    }

    /// Terminal value of the income closure on path `p`
    /// (`m(T) = N(T) + Δ(T)`).
    pub fn terminal_income(&self, p: usize) -> T {
        let last = self.grid.n_points() - 1;
        self.n_row(p)[last] + self.delta_row(p)[last]
    }
}
