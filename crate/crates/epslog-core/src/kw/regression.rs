//! Nonparametric projection backend: per-step least squares on a feature
//! basis.
//!
//! The decomposition is recovered in four nested stages, each a separate
//! per-time-step linear regression over the fitting paths:
//!
//! 1. tail values `F(T) − F(tᵢ)` on features `φ(tᵢ)` → income closure
//!    `m̂(tᵢ) = F(tᵢ) + fit`;
//! 2. closure increments `Δm̂ᵢ` on shock-scaled features `φ(tᵢ)ΔW¹ᵢ` →
//!    hedge rate `θ̂^Δ(tᵢ)`, residual `N̂`;
//! 3. squared-residual tails `N̂(T)² − N̂(tᵢ)²` on `φ(tᵢ)` → squared
//!    closure `q̂`;
//! 4. increments `Δq̂ᵢ` on `φ(tᵢ)ΔW¹ᵢ` → second hedge rate `θ̂^Γ(tᵢ)`,
//!    residual `P̂`.
//!
//! Downstream stages consume upstream *fitted* outputs, so the recovered
//! objects satisfy the same level identities (`m̂ = Δ̂ + N̂`,
//! `q̂ = Γ̂ + P̂`) as the closed-form backend, exactly and by construction.
//!
//! # Numerical notes
//!
//! Each per-step solve runs on the standardized normal equations: columns
//! are rescaled by their root-mean-square (from the Gram diagonal), a
//! relative Tikhonov weight `ridge` is added, and coefficients are mapped
//! back. This makes fits invariant under feature rescaling and tames the
//! exactly collinear columns that constant features produce at `t = 0`
//! (every path starts at the same state). Zero-variance columns are
//! dropped outright. With `ridge = 0` a rank-deficient step reports
//! [`SingularDesignMatrix`](crate::Error::SingularDesignMatrix); a
//! non-finite feature value reports
//! [`BasisRangeOverflow`](crate::Error::BasisRangeOverflow).
//!
//! Fitting streams over the paths in fixed-size chunks and merges
//! per-chunk Gram matrices in chunk order, so results are identical for
//! any thread count and for materialized versus regenerated ensembles.

use std::ops::Range;
use std::sync::Arc;

use super::{KWPaths, ProjectionBackend};
use crate::error::{Error, Result};
use crate::model::MarketSpec;
use crate::paths::{fold_paths, BundleScan, PathBundle, PathScan, TimeGrid};
use crate::scalar::{from_count, lit, Real};

/// State handed to a feature function at one grid point.
#[derive(Debug, Clone, Copy)]
pub struct FeatureArgs<T: Real> {
    /// Grid time.
    pub t: T,
    /// Factor value.
    pub z: T,
    /// Numeraire level `S₀(t)`.
    pub s0: T,
    /// Deterministic discount `e^{−rt}`.
    pub disc: T,
}

/// Feature basis with a relative ridge weight.
#[derive(Clone)]
pub struct RegressionBasis<T: Real> {
    features: Vec<Arc<dyn Fn(&FeatureArgs<T>) -> T + Send + Sync>>,
    /// Relative Tikhonov weight added to the standardized normal
    /// equations (dimensionless; `1e-8` by default).
    pub ridge: T,
}

impl<T: Real> std::fmt::Debug for RegressionBasis<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegressionBasis")
            .field("n_features", &self.features.len())
            .field("ridge", &self.ridge)
            .finish()
    }
}

impl<T: Real> RegressionBasis<T> {
    /// Default relative ridge weight.
    pub fn default_ridge() -> T {
        lit::<T>(1e-8)
    }

    /// Builds a basis from feature functions.
    pub fn new(features: Vec<Arc<dyn Fn(&FeatureArgs<T>) -> T + Send + Sync>>) -> Self {
        assert!(!features.is_empty(), "basis needs at least one feature");
        RegressionBasis {
            features,
            ridge: Self::default_ridge(),
        }
    }

    /// The default basis: quadratic monomials in the discounted numéraire
    /// level `A = e^{−rt}S₀` and its factor-weighted companion `Az`,
    /// plus a constant — `{1, A, Az, A², A²z, (Az)²}`. It spans the
    /// closed-form hedge rates and tail profiles of the mean-reverting
    /// factor market.
    pub fn quadratic() -> Self {
        let f: Vec<Arc<dyn Fn(&FeatureArgs<T>) -> T + Send + Sync>> = vec![
            Arc::new(|_: &FeatureArgs<T>| T::one()),
            Arc::new(|a: &FeatureArgs<T>| a.disc * a.s0),
            Arc::new(|a: &FeatureArgs<T>| a.disc * a.s0 * a.z),
            Arc::new(|a: &FeatureArgs<T>| {
                let b1 = a.disc * a.s0;
                b1 * b1
            }),
            Arc::new(|a: &FeatureArgs<T>| {
                let b1 = a.disc * a.s0;
                b1 * b1 * a.z
            }),
            Arc::new(|a: &FeatureArgs<T>| {
                let b2 = a.disc * a.s0 * a.z;
                b2 * b2
            }),
        ];
        Self::new(f)
    }

    /// Minimal two-feature basis `{A, Az}` that spans the closed-form
    /// first hedge rate exactly.
    pub fn linear_pair() -> Self {
        let f: Vec<Arc<dyn Fn(&FeatureArgs<T>) -> T + Send + Sync>> = vec![
            Arc::new(|a: &FeatureArgs<T>| a.disc * a.s0),
            Arc::new(|a: &FeatureArgs<T>| a.disc * a.s0 * a.z),
        ];
        Self::new(f)
    }

    /// Returns this basis with a different ridge weight.
    pub fn with_ridge(mut self, ridge: T) -> Self {
        self.ridge = ridge;
        self
    }

    /// Number of features.
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Evaluates all features into `out`.
    pub fn eval(&self, args: &FeatureArgs<T>, out: &mut [T]) {
        for (slot, feat) in out.iter_mut().zip(&self.features) {
            *slot = feat(args);
        }
    }
}

/// Per-step normal equations `(X'X, X'y)` accumulated across paths.
#[derive(Debug, Clone)]
pub(crate) struct StepGram<T: Real> {
    m: usize,
    /// Upper triangle of `X'X`, row-major full storage.
    xtx: Vec<T>,
    xty: Vec<T>,
    n: u64,
}

impl<T: Real> StepGram<T> {
    pub fn new(m: usize) -> Self {
        StepGram {
            m,
            xtx: vec![T::zero(); m * m],
            xty: vec![T::zero(); m],
            n: 0,
        }
    }

    /// Adds one sample row.
    pub fn add(&mut self, phi: &[T], y: T) {
        self.n += 1;
        for i in 0..self.m {
            let pi = phi[i];
            self.xty[i] += pi * y;
            let row = i * self.m;
            for j in i..self.m {
                self.xtx[row + j] += pi * phi[j];
            }
        }
    }

    pub fn merge(&mut self, other: &StepGram<T>) {
        debug_assert_eq!(self.m, other.m);
        self.n += other.n;
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += *b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += *b;
        }
    }

    /// Solves the standardized, ridge-regularized system; returns raw
    /// coefficients. `step` labels the error position.
    pub fn solve(&self, ridge: T, step: usize) -> Result<Vec<T>> {
        let m = self.m;
        let n_t = T::from_u64(self.n).expect("count representable");
        // Column scales from the Gram diagonal; zero-variance columns are
        // dropped (scale factor 0 decouples them and zeroes the output).
        let mut d = vec![T::zero(); m];
        for j in 0..m {
            let ms = self.xtx[j * m + j] / n_t;
            if ms > T::zero() {
                d[j] = T::one() / ms.sqrt();
            }
        }
        // Standardized symmetric matrix (full storage) and right side.
        let mut a = vec![T::zero(); m * m];
        let mut b = vec![T::zero(); m];
        let reg = ridge * n_t;
        for i in 0..m {
            for j in i..m {
                let v = d[i] * d[j] * self.xtx[i * m + j];
                a[i * m + j] = v;
                a[j * m + i] = v;
            }
            if d[i] == T::zero() {
                a[i * m + i] = T::one();
            } else {
                a[i * m + i] += reg;
            }
            b[i] = d[i] * self.xty[i];
        }
        // Cholesky with a relative pivot floor: standardized diagonals are
        // of size n, so duplicated columns collapse the pivot to roundoff
        // and are flagged unless the ridge lifts them.
        let floor = n_t * from_count::<T>(m.max(1)) * T::EPS * lit::<T>(64.0);
        for i in 0..m {
            for j in 0..=i {
                let mut s = a[i * m + j];
                for t in 0..j {
                    s -= a[i * m + t] * a[j * m + t];
                }
                if i == j {
                    if !(s > floor) || !s.is_finite() {
                        return Err(Error::SingularDesignMatrix { step });
                    }
                    a[i * m + i] = s.sqrt();
                } else {
                    a[i * m + j] = s / a[j * m + j];
                }
            }
        }
        // Forward/back substitution.
        let mut x = b;
        for i in 0..m {
            let mut s = x[i];
            for t in 0..i {
                s -= a[i * m + t] * x[t];
            }
            x[i] = s / a[i * m + i];
        }
        for i in (0..m).rev() {
            let mut s = x[i];
            for t in i + 1..m {
                s -= a[t * m + i] * x[t];
            }
            x[i] = s / a[i * m + i];
        }
        for j in 0..m {
            x[j] *= d[j];
        }
        Ok(x)
    }
}

/// Per-step coefficient tables of a fitted projection.
#[derive(Debug, Clone)]
pub struct RegressionModel<T: Real> {
    /// Shared grid.
    pub grid: TimeGrid<T>,
    /// Number of features.
    pub n_features: usize,
    /// Stage-1 tail coefficients, one row per grid point `0..n_steps`.
    pub beta_m: Vec<T>,
    /// Stage-2 hedge-rate coefficients, one row per step.
    pub gamma_d: Vec<T>,
    /// Stage-3 squared-tail coefficients, one row per grid point
    /// `0..n_steps`.
    pub beta_q: Vec<T>,
    /// Stage-4 hedge-rate coefficients, one row per step.
    pub gamma_g: Vec<T>,
}

impl<T: Real> RegressionModel<T> {
    fn row(table: &[T], m: usize, i: usize) -> &[T] {
        &table[i * m..(i + 1) * m]
    }

    fn dot(row: &[T], phi: &[T]) -> T {
        row.iter().zip(phi).map(|(a, b)| *a * *b).sum()
    }
}

/// Time and discount tables plus reusable per-path buffers for feature
/// evaluation.
#[derive(Debug, Clone)]
pub(crate) struct FeatureTables<T: Real> {
    pub times: Vec<T>,
    pub disc: Vec<T>,
}

impl<T: Real> FeatureTables<T> {
    pub fn new(market: &MarketSpec<T>, grid: TimeGrid<T>) -> Self {
        let times: Vec<T> = (0..grid.n_points()).map(|i| grid.time(i)).collect();
        let disc = times.iter().map(|t| (-(market.r * *t)).exp()).collect();
        FeatureTables { times, disc }
    }
}

/// Reusable per-path scratch: features at every grid point, income levels,
/// and traded increments.
#[derive(Debug, Clone)]
pub(crate) struct PathScratch<T: Real> {
    pub phis: Vec<T>,
    pub f: Vec<T>,
    pub dw: Vec<T>,
}

impl<T: Real> PathScratch<T> {
    pub fn new(grid: TimeGrid<T>, m: usize) -> Self {
        PathScratch {
            phis: vec![T::zero(); grid.n_points() * m],
            f: vec![T::zero(); grid.n_points()],
            dw: vec![T::zero(); grid.n_steps],
        }
    }

    pub fn phi(&self, m: usize, i: usize) -> &[T] {
        &self.phis[i * m..(i + 1) * m]
    }

    /// Fills the buffers by scanning path `p`, checking feature values for
    /// finiteness.
    pub fn fill<S: PathScan<T>>(
        &mut self,
        src: &S,
        p: usize,
        basis: &RegressionBasis<T>,
        tables: &FeatureTables<T>,
    ) -> Result<()> {
        let m = basis.n_features();
        let mut bad: Option<(usize, usize)> = None;
        {
            let phis = &mut self.phis;
            let f = &mut self.f;
            let dw = &mut self.dw;
            let mut write = |i: usize, z: T, s0: T, fi: T| {
                let args = FeatureArgs {
                    t: tables.times[i],
                    z,
                    s0,
                    disc: tables.disc[i],
                };
                let out = &mut phis[i * m..(i + 1) * m];
                basis.eval(&args, out);
                if bad.is_none() {
                    if let Some(j) = out.iter().position(|v| !v.is_finite()) {
                        bad = Some((j, i));
                    }
                }
                f[i] = fi;
            };
            src.scan(p, |i, left, dw1, right| {
                if i == 0 {
                    write(0, left.z, left.s0, left.f);
                }
                write(i + 1, right.z, right.s0, right.f);
                dw[i] = dw1;
            });
        }
        if let Some((feature, step)) = bad {
            return Err(Error::BasisRangeOverflow { feature, step });
        }
        Ok(())
    }
}

/// One stage of per-step Gram accumulation over a path range; `target`
/// receives the filled scratch and emits `(design_row_scale, y)` per step
/// via a sample callback.
fn accumulate_stage<T, S, FY>(
    src: &S,
    range: Range<usize>,
    parallel: bool,
    basis: &RegressionBasis<T>,
    tables: &FeatureTables<T>,
    n_rows: usize,
    scale_by_dw: bool,
    target: FY,
) -> Result<Vec<StepGram<T>>>
where
    T: Real,
    S: PathScan<T>,
    FY: Fn(&PathScratch<T>, usize, &mut [T]) + Sync,
{
    let m = basis.n_features();
    let grid = src.grid();
    struct Acc<T: Real> {
        grams: Vec<StepGram<T>>,
        scratch: PathScratch<T>,
        ys: Vec<T>,
        row: Vec<T>,
        err: Option<Error>,
    }
    let make = || Acc {
        grams: (0..n_rows).map(|_| StepGram::new(m)).collect(),
        scratch: PathScratch::new(grid, m),
        ys: vec![T::zero(); n_rows],
        row: vec![T::zero(); m],
        err: None,
    };
    let kernel = |p: usize, s: &S, acc: &mut Acc<T>| {
        if acc.err.is_some() {
            return;
        }
        if let Err(e) = acc.scratch.fill(s, p, basis, tables) {
            acc.err = Some(e);
            return;
        }
        target(&acc.scratch, m, &mut acc.ys);
        for i in 0..n_rows {
            let phi = acc.scratch.phi(m, i);
            if scale_by_dw {
                let dw = acc.scratch.dw[i];
                for (slot, v) in acc.row.iter_mut().zip(phi) {
                    *slot = *v * dw;
                }
                acc.grams[i].add(&acc.row, acc.ys[i]);
            } else {
                acc.grams[i].add(phi, acc.ys[i]);
            }
        }
    };
    let merge = |a: &mut Acc<T>, b: Acc<T>| {
        if a.err.is_none() {
            if let Some(e) = b.err {
                a.err = Some(e);
            } else {
                for (ga, gb) in a.grams.iter_mut().zip(&b.grams) {
                    ga.merge(gb);
                }
            }
        }
    };
    let acc = fold_paths(src, range, parallel, make, kernel, merge);
    match acc.err {
        Some(e) => Err(e),
        None => Ok(acc.grams),
    }
}

fn solve_stage<T: Real>(grams: Vec<StepGram<T>>, ridge: T) -> Result<Vec<T>> {
    let m = grams.first().map_or(0, |g| g.m);
    let mut table = vec![T::zero(); grams.len() * m];
    for (i, gram) in grams.iter().enumerate() {
        let beta = gram.solve(ridge, i)?;
        table[i * m..(i + 1) * m].copy_from_slice(&beta);
    }
    Ok(table)
}

/// Evaluates fitted closure levels `m̂` into `out` (length `n_points`).
fn eval_m<T: Real>(model: &RegressionModel<T>, m: usize, sc: &PathScratch<T>, out: &mut [T]) {
    let n_steps = model.grid.n_steps;
    for i in 0..n_steps {
        let beta = RegressionModel::row(&model.beta_m, m, i);
        out[i] = sc.f[i] + RegressionModel::dot(beta, sc.phi(m, i));
    }
    out[n_steps] = sc.f[n_steps];
}

/// Evaluates residual levels `N̂` into `out` given `m̂` already in `out`.
fn eval_n_from_m<T: Real>(model: &RegressionModel<T>, m: usize, sc: &PathScratch<T>, out: &mut [T]) {
    let n_steps = model.grid.n_steps;
    let mut delta = T::zero();
    out[0] -= delta;
    for i in 0..n_steps {
        let gamma = RegressionModel::row(&model.gamma_d, m, i);
        let theta = RegressionModel::dot(gamma, sc.phi(m, i));
        delta += theta * sc.dw[i];
        out[i + 1] -= delta;
    }
}

/// Fits the four stages on `fit_range` of `src`.
pub fn fit_regression<T, S>(
    market: &MarketSpec<T>,
    basis: &RegressionBasis<T>,
    src: &S,
    fit_range: Range<usize>,
    parallel: bool,
) -> Result<RegressionModel<T>>
where
    T: Real,
    S: PathScan<T>,
{
    let grid = src.grid();
    let m = basis.n_features();
    let n_steps = grid.n_steps;
    let tables = FeatureTables::new(market, grid);

    // Stage 1: income tails on plain features.
    let grams = accumulate_stage(
        src,
        fit_range.clone(),
        parallel,
        basis,
        &tables,
        n_steps,
        false,
        |sc, _m, ys| {
            let f_t = sc.f[n_steps];
            for (i, y) in ys.iter_mut().enumerate() {
                *y = f_t - sc.f[i];
            }
        },
    )?;
    let beta_m = solve_stage(grams, basis.ridge)?;
    let mut model = RegressionModel {
        grid,
        n_features: m,
        beta_m,
        gamma_d: Vec::new(),
        beta_q: Vec::new(),
        gamma_g: Vec::new(),
    };

    // Stage 2: closure increments on shock-scaled features.
    let stage2_model = model.clone();
    let grams = accumulate_stage(
        src,
        fit_range.clone(),
        parallel,
        basis,
        &tables,
        n_steps,
        true,
        move |sc, m, ys| {
            // ys used as scratch for m̂ levels first (length n_steps ≥ ...):
            // compute increments directly instead to keep ys sized n_steps.
            let md = &stage2_model;
            let mut prev = sc.f[0]
                + RegressionModel::dot(RegressionModel::row(&md.beta_m, m, 0), sc.phi(m, 0));
            for i in 0..n_steps {
                let next = if i + 1 < n_steps {
                    sc.f[i + 1]
                        + RegressionModel::dot(
                            RegressionModel::row(&md.beta_m, m, i + 1),
                            sc.phi(m, i + 1),
                        )
                } else {
                    sc.f[n_steps]
                };
                ys[i] = next - prev;
                prev = next;
            }
        },
    )?;
    model.gamma_d = solve_stage(grams, basis.ridge)?;

    // Stage 3: squared-residual tails on plain features.
    let stage3_model = model.clone();
    let grams = accumulate_stage(
        src,
        fit_range.clone(),
        parallel,
        basis,
        &tables,
        n_steps,
        false,
        move |sc, m, ys| {
            let md = &stage3_model;
            let mut levels = vec![T::zero(); n_steps + 1];
            eval_m(md, m, sc, &mut levels);
            eval_n_from_m(md, m, sc, &mut levels);
            let tail = levels[n_steps] * levels[n_steps];
            for (i, y) in ys.iter_mut().enumerate() {
                *y = tail - levels[i] * levels[i];
            }
        },
    )?;
    model.beta_q = solve_stage(grams, basis.ridge)?;

    // Stage 4: squared-closure increments on shock-scaled features.
    let stage4_model = model.clone();
    let grams = accumulate_stage(
        src,
        fit_range,
        parallel,
        basis,
        &tables,
        n_steps,
        true,
        move |sc, m, ys| {
            let md = &stage4_model;
            let mut levels = vec![T::zero(); n_steps + 1];
            eval_m(md, m, sc, &mut levels);
            eval_n_from_m(md, m, sc, &mut levels);
            let mut prev = levels[0] * levels[0]
                + RegressionModel::dot(RegressionModel::row(&md.beta_q, m, 0), sc.phi(m, 0));
            for i in 0..n_steps {
                let n_next = levels[i + 1] * levels[i + 1];
                let next = if i + 1 < n_steps {
                    n_next
                        + RegressionModel::dot(
                            RegressionModel::row(&md.beta_q, m, i + 1),
                            sc.phi(m, i + 1),
                        )
                } else {
                    n_next
                };
                ys[i] = next - prev;
                prev = next;
            }
        },
    )?;
    model.gamma_g = solve_stage(grams, basis.ridge)?;
    Ok(model)
}

/// One path's fitted decomposition, written into reusable buffers.
#[derive(Debug, Clone)]
pub(crate) struct PathEval<T: Real> {
    pub theta_delta: Vec<T>,
    pub theta_gamma: Vec<T>,
    pub delta: Vec<T>,
    pub n: Vec<T>,
    pub gamma: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Real> PathEval<T> {
    pub fn new(grid: TimeGrid<T>) -> Self {
        let pts = grid.n_points();
        PathEval {
            theta_delta: vec![T::zero(); grid.n_steps],
            theta_gamma: vec![T::zero(); grid.n_steps],
            delta: vec![T::zero(); pts],
            n: vec![T::zero(); pts],
            gamma: vec![T::zero(); pts],
            p: vec![T::zero(); pts],
        }
    }
}

impl<T: Real> RegressionModel<T> {
    /// Applies the fitted tables to one path's scratch data.
    pub(crate) fn evaluate_path(&self, sc: &PathScratch<T>, out: &mut PathEval<T>) {
        let m = self.n_features;
        let n_steps = self.grid.n_steps;
        // m̂ then N̂ in `out.n`, hedge levels alongside.
        eval_m(self, m, sc, &mut out.n);
        let mut delta = T::zero();
        out.delta[0] = delta;
        for i in 0..n_steps {
            let theta = Self::dot(Self::row(&self.gamma_d, m, i), sc.phi(m, i));
            out.theta_delta[i] = theta;
            delta += theta * sc.dw[i];
            out.delta[i + 1] = delta;
            out.n[i + 1] -= delta;
        }
        let mut gamma = T::zero();
        out.gamma[0] = gamma;
        for i in 0..n_steps {
            let theta = Self::dot(Self::row(&self.gamma_g, m, i), sc.phi(m, i));
            out.theta_gamma[i] = theta;
            gamma += theta * sc.dw[i];
            out.gamma[i + 1] = gamma;
        }
        for i in 0..=n_steps {
            let n_sq = out.n[i] * out.n[i];
            let q = if i < n_steps {
                n_sq + Self::dot(Self::row(&self.beta_q, m, i), sc.phi(m, i))
            } else {
                n_sq
            };
            out.p[i] = q - out.gamma[i];
        }
    }

    /// Fitted initial levels `(m̂(0) = n̂0, q̂(0) = p̂0)` using `basis` for
    /// the feature values at the shared initial state.
    pub fn initial_levels_with(&self, market: &MarketSpec<T>, basis: &RegressionBasis<T>) -> (T, T) {
        let m = self.n_features;
        let args = FeatureArgs {
            t: T::zero(),
            z: market.z0,
            s0: T::one(),
            disc: T::one(),
        };
        let mut phi = vec![T::zero(); m];
        basis.eval(&args, &mut phi);
        // f(0) = 0, so m̂(0) is the fitted tail; N̂(0) = m̂(0).
        let n0 = Self::dot(Self::row(&self.beta_m, m, 0), &phi);
        let p0 = n0 * n0 + Self::dot(Self::row(&self.beta_q, m, 0), &phi);
        (n0, p0)
    }
}

/// Fits the projection on the first half of the bundle's paths and
/// evaluates it on every path; `eval_start` marks the held-out half.
pub fn regression_projection<T: Real>(
    market: &MarketSpec<T>,
    basis: &RegressionBasis<T>,
    bundle: &PathBundle<T>,
) -> Result<KWPaths<T>> {
    let scan = BundleScan::new(bundle);
    let fit_end = bundle.n_paths / 2;
    let model = fit_regression(market, basis, &scan, 0..fit_end, true)?;
    let grid = bundle.grid;
    let tables = FeatureTables::new(market, grid);
    let mut out = KWPaths::zeroed(grid, bundle.n_paths, fit_end, ProjectionBackend::Regression);
    let (n0, p0) = model.initial_levels_with(market, basis);
    out.n0 = n0;
    out.p0 = p0;
    let npts = grid.n_points();
    let nstp = grid.n_steps;
    let mut scratch = PathScratch::new(grid, basis.n_features());
    let mut eval = PathEval::new(grid);
    for p in 0..bundle.n_paths {
        scratch.fill(&scan, p, basis, &tables)?;
        model.evaluate_path(&scratch, &mut eval);
        out.delta[p * npts..(p + 1) * npts].copy_from_slice(&eval.delta);
        out.n_mart[p * npts..(p + 1) * npts].copy_from_slice(&eval.n);
        out.gamma[p * npts..(p + 1) * npts].copy_from_slice(&eval.gamma);
        out.p_mart[p * npts..(p + 1) * npts].copy_from_slice(&eval.p);
        out.theta_delta[p * nstp..(p + 1) * nstp].copy_from_slice(&eval.theta_delta);
        out.theta_gamma[p * nstp..(p + 1) * nstp].copy_from_slice(&eval.theta_gamma);
    }
    Ok(out)
}
