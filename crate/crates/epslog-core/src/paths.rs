//! Seeded path ensembles of the market state
//! `(W¹, W², Z, S₀, F)` on a uniform time grid.
//!
//! Scheme
//! ------
//! * The factor driver is reconstructed from the two independent Brownian
//!   motions as `ΔB = ρ·ΔW¹ + √(1−ρ²)·ΔW²`.
//! * `Z` uses the exact Ornstein–Uhlenbeck transition
//!   `z' = θ + (z − θ)·e^{−k·dt} + b·√((1 − e^{−2k·dt})/(2k))·ξ` with
//!   `ξ = ΔB/√dt`, eliminating drift discretization error entirely.
//! * `S₀` is evaluated as `exp(−mpr·W¹(t_i) − ½·mpr²·t_i)` from the running
//!   sum of `ΔW¹`, so the exponential-martingale identity holds bit-for-bit
//!   on every path, not just up to rounding of compounded products.
//! * The cumulative income `F(t) = ∫₀ᵗ e^{−rs}·S₀(s)·Z(s) ds` uses the
//!   trapezoid rule; its `O(dt²)` quadrature error is negligible next to the
//!   `O(n⁻¹ᐟ²)` statistical error.
//!
//! Reproducibility
//! ---------------
//! Every path owns an independent counter-based random stream derived from
//! `(seed, stream_index)`, so the ensemble is identical whether paths are
//! generated serially or on a thread pool, and any single path can be
//! regenerated in isolation. Gaussian draws are made in `f64` and converted,
//! keeping the stream identical across scalar types. With antithetic pairing
//! enabled, paths `2p` and `2p+1` read the same stream `p` and the odd path
//! negates every draw.
//!
//! Streaming versus materializing
//! ------------------------------
//! [`simulate_paths`] materializes a [`PathBundle`] and is capped by the
//! configured allocation budget; the estimators that need the full default
//! ensemble instead stream paths through [`sweep_ensemble`], which holds
//! only per-chunk accumulator state. Chunk boundaries are fixed (4096 paths)
//! and chunk results are merged in index order, so aggregates are
//! byte-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MarketSpec, NumeraireSpec, NumericsConfig};
use crate::scalar::{from_count, lit, Real};

/// Number of paths per work unit in [`sweep_ensemble`]. Fixed (rather than
/// derived from the thread count) so that chunked reductions associate
/// identically in serial and parallel runs.
pub const CHUNK_PATHS: usize = 4096;

/// Uniform time grid `t_i = i·dt`, `i = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid<T: Real> {
    /// Step size (> 0).
    pub dt: T,
    /// Number of steps; the grid has `n_steps + 1` points ending at `t_max`.
    pub n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    /// Builds the grid covering `[0, t_max]`; `t_max` must be (close to) a
    /// multiple of `dt`, as produced by
    /// [`horizon_truncation`](crate::model::horizon_truncation).
    pub fn new(dt: T, t_max: T) -> Self {
        let steps = (t_max / dt)
            .round()
            .to_usize()
            .expect("step count fits in usize")
            .max(1);
        TimeGrid { dt, n_steps: steps }
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    /// Final time `t_{n_steps}`.
    pub fn t_max(&self) -> T {
        from_count::<T>(self.n_steps) * self.dt
    }

    /// Time at grid index `i`, computed as `i·dt` (not by accumulation).
    pub fn time(&self, i: usize) -> T {
        from_count::<T>(i) * self.dt
    }
}

/// Precomputed per-run constants and lookup tables used by every path.
#[derive(Debug, Clone)]
pub struct SimConstants<T: Real> {
    /// The grid all tables are indexed by.
    pub grid: TimeGrid<T>,
    /// √dt, scaling Gaussian draws into Brownian increments.
    pub sqrt_dt: T,
    /// dt/2, the trapezoid half-step.
    pub half_dt: T,
    /// Market price of risk `mpr = a/σ`.
    pub mpr: T,
    /// ½·mpr².
    pub half_mpr_sq: T,
    /// Factor–asset correlation ρ.
    pub rho: T,
    /// √(1−ρ²).
    pub rho_perp: T,
    /// Long-run factor mean θ.
    pub theta_mean: T,
    /// Initial factor value.
    pub z0: T,
    /// One-step decay `e^{−k·dt}` of the exact factor transition.
    pub ou_decay: T,
    /// One-step noise scale `b·√((1 − e^{−2k·dt})/(2k))`.
    pub ou_vol: T,
    /// `times[i] = i·dt`.
    pub times: Vec<T>,
    /// `exp_rt[i] = e^{−r·t_i}`, the income discount factors.
    pub exp_rt: Vec<T>,
}

impl<T: Real> SimConstants<T> {
    /// Precomputes all per-run constants for `market` on `grid`.
    pub fn new(market: &MarketSpec<T>, num: &NumeraireSpec<T>, grid: TimeGrid<T>) -> Self {
        let one = T::one();
        let two = lit::<T>(2.0);
        let half = lit::<T>(0.5);
        let decay = (-market.k * grid.dt).exp();
        let ou_vol = market.b * ((one - decay * decay) / (two * market.k)).sqrt();
        let times: Vec<T> = (0..grid.n_points()).map(|i| grid.time(i)).collect();
        let exp_rt: Vec<T> = times.iter().map(|&t| (-market.r * t).exp()).collect();
        SimConstants {
            grid,
            sqrt_dt: grid.dt.sqrt(),
            half_dt: half * grid.dt,
            mpr: num.mpr,
            half_mpr_sq: half * num.mpr * num.mpr,
            rho: market.rho,
            rho_perp: (one - market.rho * market.rho).max(T::zero()).sqrt(),
            theta_mean: market.theta,
            z0: market.z0,
            ou_decay: decay,
            ou_vol,
            times,
            exp_rt,
        }
    }
}

/// Random stream for one path: stream `index` of the ChaCha12 keyed by
/// `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Brownian increments produced by one call to [`PathGen::advance`].
#[derive(Debug, Clone, Copy)]
pub struct StepIncrement<T: Real> {
    /// ΔW¹ over the step.
    pub dw1: T,
    /// ΔW² over the step.
    pub dw2: T,
}

/// Single-path state machine producing `(ΔW¹, ΔW², Z, S₀, F)` step by step.
///
/// Construct with [`PathGen::new`], read the time-`t_i` state through the
/// accessors, then call [`advance`](Self::advance) to move to `t_{i+1}`.
pub struct PathGen<'a, T: Real> {
    cons: &'a SimConstants<T>,
    rng: ChaCha12Rng,
    /// Negate all draws (odd member of an antithetic pair).
    flip: bool,
    /// Current grid index.
    i: usize,
    z: T,
    cum_w1: T,
    s0: T,
    f: T,
    /// Discounted income integrand `e^{−r·t_i}·s0·z` at the current point.
    g: T,
}

impl<'a, T: Real> PathGen<'a, T> {
    /// Starts path `path_idx` of the ensemble `(seed, antithetic)` at `t = 0`.
    pub fn new(cons: &'a SimConstants<T>, seed: u64, path_idx: usize, antithetic: bool) -> Self {
        let (stream, flip) = if antithetic {
            ((path_idx / 2) as u64, path_idx % 2 == 1)
        } else {
            (path_idx as u64, false)
        };
        PathGen {
            cons,
            rng: path_rng(seed, stream),
            flip,
            i: 0,
            z: cons.z0,
            cum_w1: T::zero(),
            s0: T::one(),
            f: T::zero(),
            g: cons.exp_rt[0] * cons.z0,
        }
    }

    /// Current grid index `i` (the path sits at `t_i`).
    pub fn step_index(&self) -> usize {
        self.i
    }

    /// Factor value `Z(t_i)`.
    pub fn z(&self) -> T {
        self.z
    }

    /// Numeraire discount `S₀(t_i)`.
    pub fn s0(&self) -> T {
        self.s0
    }

    /// Cumulative income `F(t_i)`.
    pub fn f(&self) -> T {
        self.f
    }

    /// Running Brownian level `W¹(t_i)`.
    pub fn cum_w1(&self) -> T {
        self.cum_w1
    }

    /// Advances one step and returns the Brownian increments consumed.
    pub fn advance(&mut self) -> StepIncrement<T> {
        let cons = self.cons;
        let mut xi1: T = lit(self.rng.sample::<f64, _>(StandardNormal));
        let mut xi2: T = lit(self.rng.sample::<f64, _>(StandardNormal));
        if self.flip {
            xi1 = -xi1;
            xi2 = -xi2;
        }
        let dw1 = cons.sqrt_dt * xi1;
        let dw2 = cons.sqrt_dt * xi2;

        self.i += 1;
        self.cum_w1 += dw1;
        let xi_b = cons.rho * xi1 + cons.rho_perp * xi2;
        self.z = cons.theta_mean + (self.z - cons.theta_mean) * cons.ou_decay + cons.ou_vol * xi_b;
        self.s0 = (-(cons.mpr * self.cum_w1 + cons.half_mpr_sq * cons.times[self.i])).exp();
        let g_new = cons.exp_rt[self.i] * self.s0 * self.z;
        self.f += cons.half_dt * (self.g + g_new);
        self.g = g_new;

        StepIncrement { dw1, dw2 }
    }
}

/// Ensemble traversal plan: how many paths, how they are seeded and paired,
/// and whether chunks run on the thread pool.
#[derive(Debug, Clone, Copy)]
pub struct EnsemblePlan {
    /// Number of paths.
    pub n_paths: usize,
    /// Master seed.
    pub seed: u64,
    /// Antithetic pairing of consecutive paths.
    pub antithetic: bool,
    /// Process chunks on the rayon pool (identical output either way).
    pub parallel: bool,
}

impl EnsemblePlan {
    /// Extracts the traversal plan from a numerics configuration.
    pub fn from_numerics<T: Real>(numerics: &NumericsConfig<T>) -> Self {
        EnsemblePlan {
            n_paths: numerics.n_paths,
            seed: numerics.seed,
            antithetic: numerics.antithetic,
            parallel: numerics.parallel,
        }
    }
}

/// Streams every path of the ensemble through `kernel`, folding per-chunk
/// accumulators and merging them in chunk order.
///
/// `make` produces an empty accumulator, `kernel` consumes one path (the
/// generator is positioned at `t = 0`), and `merge` combines two
/// accumulators left-to-right. Chunk partitioning is fixed by
/// [`CHUNK_PATHS`], and merge order is ascending chunk index in both the
/// serial and parallel branches, so results are byte-identical across thread
/// counts.
pub fn sweep_ensemble<T, A, MK, K, MG>(
    cons: &SimConstants<T>,
    plan: &EnsemblePlan,
    make: MK,
    kernel: K,
    merge: MG,
) -> A
where
    T: Real,
    A: Send,
    MK: Fn() -> A + Sync,
    K: Fn(usize, PathGen<'_, T>, &mut A) + Sync,
    MG: Fn(&mut A, A) + Sync,
{
    let n_chunks = plan.n_paths.div_ceil(CHUNK_PATHS);
    let run_chunk = |c: usize| {
        let lo = c * CHUNK_PATHS;
        let hi = ((c + 1) * CHUNK_PATHS).min(plan.n_paths);
        let mut acc = make();
        for p in lo..hi {
            let gen = PathGen::new(cons, plan.seed, p, plan.antithetic);
            kernel(p, gen, &mut acc);
        }
        acc
    };

    let chunk_accs: Vec<A> = if plan.parallel {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    } else {
        (0..n_chunks).map(run_chunk).collect()
    };

    let mut total = make();
    for acc in chunk_accs {
        merge(&mut total, acc);
    }
    total
}

/// Market state at one grid point, as seen by a path scan.
#[derive(Debug, Clone, Copy)]
pub struct StateView<T: Real> {
    /// Factor value.
    pub z: T,
    /// Numeraire discount.
    pub s0: T,
    /// Cumulative income.
    pub f: T,
}

/// Uniform access to a path ensemble for step-by-step kernels.
///
/// `scan` walks one path and calls `step(i, left, dw1, right)` for every
/// step `i`, handing the kernel the state at both endpoints together with
/// the `ΔW¹` increment between them. The two implementations are
/// [`BundleScan`] (reads a materialized [`PathBundle`]) and [`GenScan`]
/// (regenerates each path from its random stream); a kernel written against
/// this trait produces bit-identical results on either source.
pub trait PathScan<T: Real>: Sync {
    /// Number of paths in the ensemble.
    fn n_paths(&self) -> usize;
    /// The shared grid.
    fn grid(&self) -> TimeGrid<T>;
    /// Walks path `p` through `step(i, left_state, dw1_i, right_state)`.
    fn scan(&self, p: usize, step: impl FnMut(usize, StateView<T>, T, StateView<T>));
}

/// [`PathScan`] over a materialized bundle (income column must be filled).
pub struct BundleScan<'a, T: Real> {
    bundle: &'a PathBundle<T>,
}

impl<'a, T: Real> BundleScan<'a, T> {
    /// Wraps a bundle whose `f` column has been accumulated.
    pub fn new(bundle: &'a PathBundle<T>) -> Self {
        BundleScan { bundle }
    }
}

impl<T: Real> PathScan<T> for BundleScan<'_, T> {
    fn n_paths(&self) -> usize {
        self.bundle.n_paths
    }

    fn grid(&self) -> TimeGrid<T> {
        self.bundle.grid
    }

    fn scan(&self, p: usize, mut step: impl FnMut(usize, StateView<T>, T, StateView<T>)) {
        let b = self.bundle;
        let (z, s0, f, w1) = (b.z_row(p), b.s0_row(p), b.f_row(p), b.w1_row(p));
        for i in 0..b.grid.n_steps {
            let left = StateView {
                z: z[i],
                s0: s0[i],
                f: f[i],
            };
            let right = StateView {
                z: z[i + 1],
                s0: s0[i + 1],
                f: f[i + 1],
            };
            step(i, left, w1[i], right);
        }
    }
}

/// [`PathScan`] that regenerates each path from its seeded stream on every
/// scan; memory use is O(1) per path regardless of ensemble size.
pub struct GenScan<'a, T: Real> {
    cons: &'a SimConstants<T>,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
}

impl<'a, T: Real> GenScan<'a, T> {
    /// Creates a regenerating scan over `n_paths` paths of `(seed,
    /// antithetic)`.
    pub fn new(cons: &'a SimConstants<T>, n_paths: usize, seed: u64, antithetic: bool) -> Self {
        GenScan {
            cons,
            n_paths,
            seed,
            antithetic,
        }
    }
}

impl<T: Real> PathScan<T> for GenScan<'_, T> {
    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn grid(&self) -> TimeGrid<T> {
        self.cons.grid
    }

    fn scan(&self, p: usize, mut step: impl FnMut(usize, StateView<T>, T, StateView<T>)) {
        let mut gen = PathGen::new(self.cons, self.seed, p, self.antithetic);
        for i in 0..self.cons.grid.n_steps {
            let left = StateView {
                z: gen.z(),
                s0: gen.s0(),
                f: gen.f(),
            };
            let inc = gen.advance();
            let right = StateView {
                z: gen.z(),
                s0: gen.s0(),
                f: gen.f(),
            };
            step(i, left, inc.dw1, right);
        }
    }
}

/// Runs `kernel` over every path of `scan` in fixed-size chunks, merging
/// per-chunk accumulators in index order (same contract as
/// [`sweep_ensemble`], but driven by a [`PathScan`] so it works on bundles
/// and regenerated ensembles alike). `range` selects a contiguous path
/// subset, e.g. a fit or evaluation half.
pub fn fold_paths<T, S, A, MK, K, MG>(
    scan: &S,
    range: std::ops::Range<usize>,
    parallel: bool,
    make: MK,
    kernel: K,
    merge: MG,
) -> A
where
    T: Real,
    S: PathScan<T>,
    A: Send,
    MK: Fn() -> A + Sync,
    K: Fn(usize, &S, &mut A) + Sync,
    MG: Fn(&mut A, A) + Sync,
{
    let len = range.end.saturating_sub(range.start);
    let n_chunks = len.div_ceil(CHUNK_PATHS);
    let run_chunk = |c: usize| {
        let lo = range.start + c * CHUNK_PATHS;
        let hi = (lo + CHUNK_PATHS).min(range.end);
        let mut acc = make();
        for p in lo..hi {
            kernel(p, scan, &mut acc);
        }
        acc
    };
    let chunk_accs: Vec<A> = if parallel {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    } else {
        (0..n_chunks).map(run_chunk).collect()
    };
    let mut total = make();
    for acc in chunk_accs {
        merge(&mut total, acc);
    }
    total
}

/// Materialized ensemble: row-major `path × time` arrays of increments and
/// state levels, plus the grid and seed that generated them.
#[derive(Debug, Clone)]
pub struct PathBundle<T: Real> {
    /// The shared time grid.
    pub grid: TimeGrid<T>,
    /// Seed the ensemble was drawn from.
    pub seed: u64,
    /// Whether consecutive paths are antithetic partners.
    pub antithetic: bool,
    /// Number of paths.
    pub n_paths: usize,
    /// ΔW¹ increments, `n_paths × n_steps`.
    pub w1: Vec<T>,
    /// ΔW² increments, `n_paths × n_steps`.
    pub w2: Vec<T>,
    /// Factor levels, `n_paths × (n_steps + 1)`.
    pub z: Vec<T>,
    /// Numeraire discount levels, `n_paths × (n_steps + 1)`.
    pub s0: Vec<T>,
    /// Cumulative income levels, `n_paths × (n_steps + 1)`; zero until
    /// [`accumulate_endowment`] fills them.
    pub f: Vec<T>,
}

impl<T: Real> PathBundle<T> {
    /// Increment row (length `n_steps`) of path `p` in `field` (`w1`/`w2`).
    fn increment_row(field: &[T], n_steps: usize, p: usize) -> &[T] {
        &field[p * n_steps..(p + 1) * n_steps]
    }

    /// ΔW¹ increments of path `p`.
    pub fn w1_row(&self, p: usize) -> &[T] {
        Self::increment_row(&self.w1, self.grid.n_steps, p)
    }

    /// ΔW² increments of path `p`.
    pub fn w2_row(&self, p: usize) -> &[T] {
        Self::increment_row(&self.w2, self.grid.n_steps, p)
    }

    /// Factor levels of path `p` (length `n_steps + 1`).
    pub fn z_row(&self, p: usize) -> &[T] {
        &self.z[p * self.grid.n_points()..(p + 1) * self.grid.n_points()]
    }

    /// Discount levels of path `p`.
    pub fn s0_row(&self, p: usize) -> &[T] {
        &self.s0[p * self.grid.n_points()..(p + 1) * self.grid.n_points()]
    }

    /// Cumulative income of path `p`.
    pub fn f_row(&self, p: usize) -> &[T] {
        &self.f[p * self.grid.n_points()..(p + 1) * self.grid.n_points()]
    }
}

/// Simulates and materializes the ensemble on `[0, t_max]`.
///
/// Fills `w1, w2, z, s0`; the income column is written separately by
/// [`accumulate_endowment`] so quadrature variants can be compared on a
/// frozen ensemble. Errors with [`Error::AllocationTooLarge`] when
/// `n_paths·(n_steps+1)` exceeds the configured per-field budget — the
/// streaming estimators in [`crate::pipeline`] have no such limit.
pub fn simulate_paths<T: Real>(
    market: &MarketSpec<T>,
    num: &NumeraireSpec<T>,
    numerics: &NumericsConfig<T>,
    t_max: T,
) -> Result<PathBundle<T>> {
    let grid = TimeGrid::new(numerics.dt, t_max);
    let requested = numerics
        .n_paths
        .checked_mul(grid.n_points())
        .unwrap_or(usize::MAX);
    if requested > numerics.alloc_budget {
        return Err(Error::AllocationTooLarge {
            requested,
            budget: numerics.alloc_budget,
        });
    }

    let cons = SimConstants::new(market, num, grid);
    let n = numerics.n_paths;
    let (ns, np) = (grid.n_steps, grid.n_points());
    let mut bundle = PathBundle {
        grid,
        seed: numerics.seed,
        antithetic: numerics.antithetic,
        n_paths: n,
        w1: vec![T::zero(); n * ns],
        w2: vec![T::zero(); n * ns],
        z: vec![T::zero(); n * np],
        s0: vec![T::zero(); n * np],
        f: vec![T::zero(); n * np],
    };

    let fill_path = |p: usize, w1: &mut [T], w2: &mut [T], z: &mut [T], s0: &mut [T]| {
        let mut gen = PathGen::new(&cons, numerics.seed, p, numerics.antithetic);
        z[0] = gen.z();
        s0[0] = gen.s0();
        for i in 0..ns {
            let inc = gen.advance();
            w1[i] = inc.dw1;
            w2[i] = inc.dw2;
            z[i + 1] = gen.z();
            s0[i + 1] = gen.s0();
        }
    };

    if numerics.parallel {
        bundle
            .w1
            .par_chunks_mut(ns)
            .zip(bundle.w2.par_chunks_mut(ns))
            .zip(bundle.z.par_chunks_mut(np))
            .zip(bundle.s0.par_chunks_mut(np))
            .enumerate()
            .for_each(|(p, (((w1, w2), z), s0))| fill_path(p, w1, w2, z, s0));
    } else {
        bundle
            .w1
            .chunks_mut(ns)
            .zip(bundle.w2.chunks_mut(ns))
            .zip(bundle.z.chunks_mut(np))
            .zip(bundle.s0.chunks_mut(np))
            .enumerate()
            .for_each(|(p, (((w1, w2), z), s0))| fill_path(p, w1, w2, z, s0));
    }

    Ok(bundle)
}

/// Fills the cumulative-income column of a simulated bundle by the trapezoid
/// rule on `e^{−r·t}·S₀·Z`, matching the arithmetic of the streaming
/// generator bit-for-bit.
pub fn accumulate_endowment<T: Real>(market: &MarketSpec<T>, bundle: &mut PathBundle<T>) {
    let np = bundle.grid.n_points();
    let exp_rt: Vec<T> = (0..np)
        .map(|i| (-market.r * bundle.grid.time(i)).exp())
        .collect();
    let half_dt = lit::<T>(0.5) * bundle.grid.dt;
    for p in 0..bundle.n_paths {
        let z = &bundle.z[p * np..(p + 1) * np];
        let s0 = &bundle.s0[p * np..(p + 1) * np];
        let f = &mut bundle.f[p * np..(p + 1) * np];
        let mut acc = T::zero();
        let mut g_prev = exp_rt[0] * s0[0] * z[0];
        f[0] = T::zero();
        for i in 1..np {
            let g = exp_rt[i] * s0[i] * z[i];
            acc += half_dt * (g_prev + g);
            f[i] = acc;
            g_prev = g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_numeraire;

    fn defaults() -> (MarketSpec<f64>, NumericsConfig<f64>) {
        (MarketSpec::defaults(), NumericsConfig::defaults())
    }

    fn small_bundle(
        market: &MarketSpec<f64>,
        numerics: &NumericsConfig<f64>,
        t_max: f64,
    ) -> PathBundle<f64> {
        let num = derive_numeraire(market);
        let mut bundle = simulate_paths(market, &num, numerics, t_max).expect("simulation fits");
        accumulate_endowment(market, &mut bundle);
        bundle
    }

    #[test]
    fn grid_times_are_uniform_and_end_at_t_max() {
        let grid = TimeGrid::new(0.25_f64, 2.0);
        assert_eq!(grid.n_steps, 8);
        assert_eq!(grid.n_points(), 9);
        assert_eq!(grid.t_max(), 2.0);
        for i in 0..grid.n_points() {
            assert_eq!(grid.time(i), 0.25 * i as f64);
        }
    }

    #[test]
    fn zero_factor_vol_gives_the_deterministic_relaxation() {
        let (mut market, mut numerics) = defaults();
        market.b = 0.0;
        market.theta = 0.4;
        market.z0 = 1.0;
        numerics.n_paths = 3;
        numerics.dt = 0.01;
        let bundle = small_bundle(&market, &numerics, 1.0);
        for p in 0..bundle.n_paths {
            let z = bundle.z_row(p);
            for (i, &zi) in z.iter().enumerate() {
                let t = bundle.grid.time(i);
                let expected = market.theta + (market.z0 - market.theta) * (-market.k * t).exp();
                assert!(
                    (zi - expected).abs() < 1e-12,
                    "path {p}, t = {t}: z = {zi}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn zero_factor_everywhere_gives_zero_income() {
        let (mut market, mut numerics) = defaults();
        market.b = 0.0;
        market.theta = 0.0;
        market.z0 = 0.0;
        numerics.n_paths = 2;
        let bundle = small_bundle(&market, &numerics, 0.5);
        assert!(bundle.f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_reproduces_the_ensemble_bitwise() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 8;
        numerics.dt = 0.01;
        let b1 = small_bundle(&market, &numerics, 0.3);
        let b2 = small_bundle(&market, &numerics, 0.3);
        assert_eq!(b1.f, b2.f);
        assert_eq!(b1.z, b2.z);
        let mut other_seed = numerics;
        other_seed.seed = 1;
        let b3 = small_bundle(&market, &other_seed, 0.3);
        assert_ne!(b1.f, b3.f);
    }

    #[test]
    fn antithetic_partner_negates_the_increments() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 4;
        numerics.antithetic = true;
        numerics.dt = 0.01;
        let bundle = small_bundle(&market, &numerics, 0.2);
        for pair in 0..2 {
            let even = bundle.w1_row(2 * pair);
            let odd = bundle.w1_row(2 * pair + 1);
            for (a, b) in even.iter().zip(odd) {
                assert_eq!(*a, -*b);
            }
            let even2 = bundle.w2_row(2 * pair);
            let odd2 = bundle.w2_row(2 * pair + 1);
            for (a, b) in even2.iter().zip(odd2) {
                assert_eq!(*a, -*b);
            }
        }
    }

    #[test]
    fn antithetic_streams_align_with_unpaired_indexing() {
        // Pair p of the antithetic ensemble reads stream p, i.e. exactly the
        // draws of unpaired path p; the even partner must reproduce it.
        let (market, _) = defaults();
        let num = derive_numeraire(&market);
        let grid = TimeGrid::new(0.02, 0.2);
        let cons = SimConstants::new(&market, &num, grid);
        let mut paired = PathGen::new(&cons, 7, 4, true); // pair index 2
        let mut unpaired = PathGen::new(&cons, 7, 2, false); // stream 2
        for _ in 0..grid.n_steps {
            let a = paired.advance();
            let b = unpaired.advance();
            assert_eq!(a.dw1, b.dw1);
            assert_eq!(a.dw2, b.dw2);
        }
        assert_eq!(paired.f(), unpaired.f());
    }

    #[test]
    fn parallel_and_serial_materialization_agree_bitwise() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 16;
        numerics.dt = 0.01;
        numerics.parallel = true;
        let par = small_bundle(&market, &numerics, 0.3);
        numerics.parallel = false;
        let ser = small_bundle(&market, &numerics, 0.3);
        assert_eq!(par.w1, ser.w1);
        assert_eq!(par.w2, ser.w2);
        assert_eq!(par.z, ser.z);
        assert_eq!(par.s0, ser.s0);
        assert_eq!(par.f, ser.f);
    }

    #[test]
    fn discount_satisfies_the_log_identity_bitwise() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 3;
        numerics.dt = 0.01;
        let num = derive_numeraire(&market);
        let bundle = small_bundle(&market, &numerics, 0.4);
        let half_mpr_sq = 0.5 * num.mpr * num.mpr;
        for p in 0..bundle.n_paths {
            let w1 = bundle.w1_row(p);
            let s0 = bundle.s0_row(p);
            let mut cum = 0.0_f64;
            assert_eq!(s0[0], 1.0);
            for i in 1..bundle.grid.n_points() {
                cum += w1[i - 1];
                let expected = (-(num.mpr * cum + half_mpr_sq * bundle.grid.time(i))).exp();
                assert_eq!(
                    s0[i].to_bits(),
                    expected.to_bits(),
                    "path {p}, index {i}: s0 deviates from the log identity"
                );
            }
        }
    }

    #[test]
    fn bundle_income_matches_the_streaming_generator_bitwise() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 5;
        numerics.dt = 0.02;
        let num = derive_numeraire(&market);
        let bundle = small_bundle(&market, &numerics, 0.5);
        let cons = SimConstants::new(&market, &num, bundle.grid);
        for p in 0..bundle.n_paths {
            let mut gen = PathGen::new(&cons, numerics.seed, p, numerics.antithetic);
            for _ in 0..bundle.grid.n_steps {
                gen.advance();
            }
            let f_row = bundle.f_row(p);
            assert_eq!(gen.f().to_bits(), f_row[bundle.grid.n_steps].to_bits());
        }
    }

    #[test]
    fn trapezoid_income_converges_at_second_order() {
        // Deterministic integrand (a = 0 kills the discount noise, b = 0
        // kills the factor noise): the quadrature error against the exact
        // integral must shrink by ≈ 4× per halving of dt.
        let (mut market, mut numerics) = defaults();
        market.a = 0.0;
        market.b = 0.0;
        market.theta = 0.3;
        market.z0 = 0.9;
        numerics.n_paths = 2;
        let t_max = 2.0;
        let exact = market.theta * (1.0 - (-market.r * t_max).exp()) / market.r
            + (market.z0 - market.theta) * (1.0 - (-(market.r + market.k) * t_max).exp())
                / (market.r + market.k);
        let mut errs = Vec::new();
        for dt in [0.02, 0.01, 0.005] {
            numerics.dt = dt;
            let bundle = small_bundle(&market, &numerics, t_max);
            let f_t = bundle.f_row(0)[bundle.grid.n_steps];
            errs.push((f_t - exact).abs());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!((3.5..4.5).contains(&r1), "first halving ratio {r1}");
        assert!((3.5..4.5).contains(&r2), "second halving ratio {r2}");
    }

    #[test]
    fn oversized_ensembles_are_rejected() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 100;
        numerics.alloc_budget = 50;
        let num = derive_numeraire(&market);
        let err = simulate_paths(&market, &num, &numerics, 1.0).unwrap_err();
        assert_eq!(err.code(), "paths/AllocationTooLarge");
    }

    #[test]
    fn discount_is_a_martingale_at_moderate_scale() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 20_000;
        numerics.parallel = true;
        let num = derive_numeraire(&market);
        let t_max = crate::model::horizon_truncation(&market, numerics.dt, 1e-2).unwrap();
        let grid = TimeGrid::new(numerics.dt, t_max);
        let cons = SimConstants::new(&market, &num, grid);
        let plan = EnsemblePlan::from_numerics(&numerics);
        let (sum, sum_sq) = sweep_ensemble(
            &cons,
            &plan,
            || (0.0_f64, 0.0_f64),
            |_, mut gen, acc| {
                for _ in 0..grid.n_steps {
                    gen.advance();
                }
                acc.0 += gen.s0();
                acc.1 += gen.s0() * gen.s0();
            },
            |a, b| {
                a.0 += b.0;
                a.1 += b.1;
            },
        );
        let n = numerics.n_paths as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - 1.0).abs() <= 4.0 * se,
            "mean s0(T) = {mean}, se = {se}"
        );
    }

    #[test]
    fn sweep_is_thread_count_invariant_bitwise() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 10_000;
        let num = derive_numeraire(&market);
        let grid = TimeGrid::new(0.01, 0.5);
        let cons = SimConstants::new(&market, &num, grid);
        let run = |parallel: bool| {
            let plan = EnsemblePlan {
                n_paths: numerics.n_paths,
                seed: numerics.seed,
                antithetic: false,
                parallel,
            };
            sweep_ensemble(
                &cons,
                &plan,
                || 0.0_f64,
                |_, mut gen, acc| {
                    for _ in 0..grid.n_steps {
                        gen.advance();
                    }
                    *acc += gen.f();
                },
                |a, b| *a += b,
            )
        };
        assert_eq!(run(true).to_bits(), run(false).to_bits());
    }

    #[test]
    fn bundle_scan_and_gen_scan_are_bitwise_identical() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 64;
        let num = derive_numeraire(&market);
        let mut bundle = simulate_paths(&market, &num, &numerics, 0.4).unwrap();
        accumulate_endowment(&market, &mut bundle);
        let cons = SimConstants::new(&market, &num, bundle.grid);
        let from_bundle = BundleScan::new(&bundle);
        let from_gen = GenScan::new(&cons, numerics.n_paths, numerics.seed, false);
        for p in [0, 1, 17, 63] {
            let mut a = Vec::new();
            let mut b = Vec::new();
            from_bundle.scan(p, |i, l, dw1, r| a.push((i, l.z, l.s0, l.f, dw1, r.z, r.s0, r.f)));
            from_gen.scan(p, |i, l, dw1, r| b.push((i, l.z, l.s0, l.f, dw1, r.z, r.s0, r.f)));
            assert_eq!(a.len(), b.len(), "scan lengths differ on path {p}");
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.0, y.0);
                for k in 1..8 {
                    let to_bits = |t: &(usize, f64, f64, f64, f64, f64, f64, f64), k: usize| {
                        [t.1, t.2, t.3, t.4, t.5, t.6, t.7][k - 1].to_bits()
                    };
                    assert_eq!(
                        to_bits(x, k),
                        to_bits(y, k),
                        "field {k} differs at step {} of path {p}",
                        x.0
                    );
                }
            }
        }
    }

    #[test]
    fn fold_paths_respects_range_and_parallelism() {
        let (market, mut numerics) = defaults();
        numerics.n_paths = 9000;
        let num = derive_numeraire(&market);
        let grid = TimeGrid::new(0.01, 0.2);
        let cons = SimConstants::new(&market, &num, grid);
        let scan = GenScan::new(&cons, numerics.n_paths, numerics.seed, false);
        let sum_f = |parallel: bool, lo: usize, hi: usize| {
            fold_paths(
                &scan,
                lo..hi,
                parallel,
                || 0.0_f64,
                |p, s: &GenScan<'_, f64>, acc: &mut f64| {
                    let mut last = 0.0;
                    s.scan(p, |_, _, _, r| last = r.f);
                    *acc += last;
                },
                |a, b| *a += b,
            )
        };
        // Chunk merge order is fixed, so thread count cannot change the sum.
        assert_eq!(
            sum_f(true, 0, 9000).to_bits(),
            sum_f(false, 0, 9000).to_bits()
        );
        // Disjoint halves partition the full-range total exactly in exact
        // arithmetic; with a fixed merge order the split points only move
        // parentheses, so allow relative rounding slack.
        let whole = sum_f(false, 0, 9000);
        let halves = sum_f(false, 0, 4500) + sum_f(false, 4500, 9000);
        assert!(
            (whole - halves).abs() <= 1e-12 * whole.abs().max(1.0),
            "range splits should cover the ensemble: {whole} vs {halves}"
        );
    }

    #[test]
    fn f32_simulation_consumes_the_same_stream() {
        let market32 = MarketSpec::<f32>::defaults();
        let mut numerics32 = NumericsConfig::<f32>::defaults();
        numerics32.n_paths = 2;
        numerics32.dt = 0.01;
        let num32 = derive_numeraire(&market32);
        let b32 = simulate_paths(&market32, &num32, &numerics32, 0.1).unwrap();

        let (market, mut numerics) = defaults();
        numerics.n_paths = 2;
        numerics.dt = 0.01;
        let num = derive_numeraire(&market);
        let b64 = simulate_paths(&market, &num, &numerics, 0.1).unwrap();

        for (a, b) in b32.w1.iter().zip(&b64.w1) {
            assert!(
                (*a as f64 - b).abs() < 1e-7,
                "f32 and f64 runs should see the same draws: {a} vs {b}"
            );
        }
    }
}
