//! Terminal-moment estimators and orthogonality diagnostics.
//!
//! The expansion coefficients are plain Monte Carlo means of terminal
//! functionals of the projected paths:
//!
//! ```text
//!     a1 = E[m(T)],   a2 = E[N(T)²],   a3 = E[N(T)³],   a4 = E[N(T)⁴],
//!     g  = E[Γ(T)²/2 − N(T)² Γ(T)],
//! ```
//!
//! together with the starting levels `n0 = m(0)`, `p0 = q(0)` reported by
//! the projection backend.
//!
//! # Numerical notes
//!
//! Standard errors are delete-one jackknife estimates. For a plain sample
//! mean the jackknife collapses exactly to the classical `sd/√n`, which is
//! what [`MeanVar::se`] computes (the identity is unit-tested below rather
//! than re-derived at runtime). With antithetic pairing enabled, the two
//! halves of a pair are anticorrelated, so accumulators average each
//! adjacent pair first and the jackknife runs over pair means.
//!
//! The orthogonality diagnostics test that the residual increments are
//! uncorrelated with the traded shock: the statistics
//! `mean_p Σ_i ΔN_i ΔW¹_i` and `mean_p Σ_i ΔP_i ΔW¹_i` should vanish.
//! Left-endpoint hedge rates leave an `O(dt²)`-per-step conditional mean
//! in these products; for the closed-form backend the exact one-step
//! corrections ([`StepBias`](super::closed_form::StepBias)) are subtracted
//! so the compensated statistic is an exact martingale-difference sum. The
//! regression backend needs no correction: its fitted rates solve the
//! in-sample normal equations, which centers the statistic by
//! construction.

use super::closed_form::{ClosedFormCoeffs, StepBias};
use super::{KWPaths, ProjectionBackend};
use crate::error::Result;
use crate::model::{MarketSpec, NumeraireSpec};
use crate::paths::{PathBundle, SimConstants};
use crate::scalar::Real;
use serde::Serialize;

/// Streaming mean/variance accumulator (Welford's recurrence) with a
/// deterministic merge, so chunked reductions give the same result for any
/// thread count when merged in chunk order.
#[derive(Debug, Clone, Copy)]
pub struct MeanVar<T: Real> {
    n: u64,
    mean: T,
    m2: T,
}

impl<T: Real> Default for MeanVar<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> MeanVar<T> {
    /// Empty accumulator.
    pub fn new() -> Self {
        MeanVar {
            n: 0,
            mean: T::zero(),
            m2: T::zero(),
        }
    }

    /// Adds one observation.
    pub fn push(&mut self, x: T) {
        self.n += 1;
        let n_t = T::from_u64(self.n).expect("count representable");
        let delta = x - self.mean;
        self.mean += delta / n_t;
        self.m2 += delta * (x - self.mean);
    }

    /// Folds another accumulator in (parallel Welford combination).
    pub fn merge(&mut self, other: &MeanVar<T>) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n_a = T::from_u64(self.n).expect("count representable");
        let n_b = T::from_u64(other.n).expect("count representable");
        let total = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean += delta * n_b / total;
        self.m2 += other.m2 + delta * delta * n_a * n_b / total;
        self.n += other.n;
    }

    /// Number of observations.
    pub fn count(&self) -> u64 {
        self.n
    }

    /// Sample mean.
    pub fn mean(&self) -> T {
        self.mean
    }

    /// Unbiased sample variance (zero for fewer than two observations).
    pub fn var(&self) -> T {
        if self.n < 2 {
            T::zero()
        } else {
            self.m2 / T::from_u64(self.n - 1).expect("count representable")
        }
    }

    /// Jackknife standard error of the mean; for a sample mean this equals
    /// `sqrt(var/n)` identically.
    pub fn se(&self) -> T {
        if self.n < 2 {
            T::zero()
        } else {
            (self.var() / T::from_u64(self.n).expect("count representable")).sqrt()
        }
    }
}

/// [`MeanVar`] that optionally averages adjacent observations pairwise
/// before accumulating, for antithetic ensembles where paths `2p` and
/// `2p+1` share a random stream with negated draws.
#[derive(Debug, Clone, Copy)]
pub struct PairedMeanVar<T: Real> {
    inner: MeanVar<T>,
    pending: Option<T>,
    paired: bool,
}

impl<T: Real> PairedMeanVar<T> {
    /// Empty accumulator; `paired` selects pairwise averaging.
    pub fn new(paired: bool) -> Self {
        PairedMeanVar {
            inner: MeanVar::new(),
            pending: None,
            paired,
        }
    }

    /// Adds one observation in path order.
    pub fn push(&mut self, x: T) {
        if !self.paired {
            self.inner.push(x);
            return;
        }
        match self.pending.take() {
            None => self.pending = Some(x),
            Some(first) => {
                let half = T::one() / (T::one() + T::one());
                self.inner.push((first + x) * half);
            }
        }
    }

    /// Flushes a trailing unpaired observation (odd ensemble sizes leave
    /// the final path as a singleton).
    pub fn finish(&mut self) {
        if let Some(x) = self.pending.take() {
            self.inner.push(x);
        }
    }

    /// Folds another accumulator in. Both sides must be flush at pair
    /// boundaries, which chunked sweeps guarantee by using an even chunk
    /// size.
    pub fn merge(&mut self, other: &PairedMeanVar<T>) {
        assert!(
            self.pending.is_none() && other.pending.is_none(),
            "merge requires pair-aligned accumulators"
        );
        self.inner.merge(&other.inner);
    }

    /// The underlying mean/variance view.
    pub fn stats(&self) -> &MeanVar<T> {
        debug_assert!(self.pending.is_none(), "finish() before reading stats");
        &self.inner
    }
}

/// Estimated expansion moments with jackknife standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct Moments<T: Real> {
    /// Mean terminal income closure `E[m(T)]`.
    pub a1: T,
    /// Second residual moment `E[N(T)²]`.
    pub a2: T,
    /// Third residual moment `E[N(T)³]`.
    pub a3: T,
    /// Fourth residual moment `E[N(T)⁴]`.
    pub a4: T,
    /// Mixed correction `E[Γ(T)²/2 − N(T)²Γ(T)]`.
    pub g: T,
    /// Initial income closure `m(0)` from the backend.
    pub n0: T,
    /// Initial squared-residual closure `q(0)` from the backend.
    pub p0: T,
    /// Standard error of `a1`.
    pub se_a1: T,
    /// Standard error of `a2`.
    pub se_a2: T,
    /// Standard error of `a3`.
    pub se_a3: T,
    /// Standard error of `a4`.
    pub se_a4: T,
    /// Standard error of `g`.
    pub se_g: T,
    /// Backend label (`"closed-form"` or `"regression"`).
    pub backend: String,
    /// Seed of the generating ensemble.
    pub seed: u64,
}

/// Accumulates the five terminal functionals; shared by the materialized
/// estimator below and the streaming pipeline.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MomentAccum<T: Real> {
    a1: PairedMeanVar<T>,
    a2: PairedMeanVar<T>,
    a3: PairedMeanVar<T>,
    a4: PairedMeanVar<T>,
    g: PairedMeanVar<T>,
}

impl<T: Real> MomentAccum<T> {
    pub fn new(paired: bool) -> Self {
        MomentAccum {
            a1: PairedMeanVar::new(paired),
            a2: PairedMeanVar::new(paired),
            a3: PairedMeanVar::new(paired),
            a4: PairedMeanVar::new(paired),
            g: PairedMeanVar::new(paired),
        }
    }

    /// Feeds one path's terminal values `m(T), N(T), Γ(T)`.
    pub fn push(&mut self, m_t: T, n_t: T, gamma_t: T) {
        let half = T::one() / (T::one() + T::one());
        let n_sq = n_t * n_t;
        self.a1.push(m_t);
        self.a2.push(n_sq);
        self.a3.push(n_sq * n_t);
        self.a4.push(n_sq * n_sq);
        self.g.push(gamma_t * gamma_t * half - n_sq * gamma_t);
    }

    pub fn finish(&mut self) {
        self.a1.finish();
        self.a2.finish();
        self.a3.finish();
        self.a4.finish();
        self.g.finish();
    }

    pub fn merge(&mut self, other: &MomentAccum<T>) {
        self.a1.merge(&other.a1);
        self.a2.merge(&other.a2);
        self.a3.merge(&other.a3);
        self.a4.merge(&other.a4);
        self.g.merge(&other.g);
    }

    pub fn into_moments(
        mut self,
        n0: T,
        p0: T,
        backend: ProjectionBackend,
        seed: u64,
    ) -> Moments<T> {
        self.finish();
        Moments {
            a1: self.a1.stats().mean(),
            a2: self.a2.stats().mean(),
            a3: self.a3.stats().mean(),
            a4: self.a4.stats().mean(),
            g: self.g.stats().mean(),
            n0,
            p0,
            se_a1: self.a1.stats().se(),
            se_a2: self.a2.stats().se(),
            se_a3: self.a3.stats().se(),
            se_a4: self.a4.stats().se(),
            se_g: self.g.stats().se(),
            backend: backend.label().to_owned(),
            seed,
        }
    }
}

/// Estimates the expansion moments from projected paths, restricted to the
/// evaluation range of `kw` and honoring the bundle's antithetic pairing.
pub fn compute_moments<T: Real>(kw: &KWPaths<T>, bundle: &PathBundle<T>) -> Moments<T> {
    assert_eq!(kw.n_paths, bundle.n_paths, "bundle/projection mismatch");
    assert!(
        !bundle.antithetic || kw.eval_start % 2 == 0,
        "antithetic pairing needs a pair-aligned evaluation range"
    );
    let mut acc = MomentAccum::new(bundle.antithetic);
    let last = kw.grid.n_points() - 1;
    for p in kw.eval_start..kw.n_paths {
        acc.push(kw.terminal_income(p), kw.n_row(p)[last], kw.gamma_row(p)[last]);
    }
    acc.into_moments(kw.n0, kw.p0, kw.backend, bundle.seed)
}

/// Orthogonality statistics with raw and compensated versions.
#[derive(Debug, Clone, Copy)]
pub struct OrthogonalityReport<T: Real> {
    /// Number of evaluation paths underlying the statistics.
    pub n_paths: usize,
    /// Mean of `Σᵢ ΔNᵢ ΔW¹ᵢ` across paths.
    pub raw_n: T,
    /// Standard error of the raw `N` statistic.
    pub raw_n_se: T,
    /// Mean with the per-step conditional bias subtracted.
    pub compensated_n: T,
    /// Standard error of the compensated `N` statistic.
    pub compensated_n_se: T,
    /// Mean of `Σᵢ ΔPᵢ ΔW¹ᵢ` across paths.
    pub raw_p: T,
    /// Standard error of the raw `P` statistic.
    pub raw_p_se: T,
    /// Mean with the per-step conditional bias subtracted.
    pub compensated_p: T,
    /// Standard error of the compensated `P` statistic.
    pub compensated_p_se: T,
}

impl<T: Real> OrthogonalityReport<T> {
    /// Compensated `N` statistic in standard-error units.
    pub fn z_n(&self) -> T {
        self.compensated_n / self.compensated_n_se
    }

    /// Compensated `P` statistic in standard-error units.
    pub fn z_p(&self) -> T {
        self.compensated_p / self.compensated_p_se
    }
}

/// Computes the orthogonality diagnostics on the evaluation range of `kw`.
///
/// For the closed-form backend the compensator is the exact one-step
/// conditional mean; for the regression backend it is zero (see module
/// docs).
pub fn orthogonality_diagnostics<T: Real>(
    market: &MarketSpec<T>,
    num: &NumeraireSpec<T>,
    kw: &KWPaths<T>,
    bundle: &PathBundle<T>,
) -> Result<OrthogonalityReport<T>> {
    assert_eq!(kw.n_paths, bundle.n_paths, "bundle/projection mismatch");
    let bias = match kw.backend {
        ProjectionBackend::ClosedForm => {
            let co = ClosedFormCoeffs::new(market, num)?;
            Some(StepBias::new(market, &co, kw.grid.dt))
        }
        ProjectionBackend::Regression => None,
    };
    let cons = SimConstants::new(market, num, kw.grid);
    let paired = bundle.antithetic;
    let mut raw_n = PairedMeanVar::new(paired);
    let mut comp_n = PairedMeanVar::new(paired);
    let mut raw_p = PairedMeanVar::new(paired);
    let mut comp_p = PairedMeanVar::new(paired);
    for p in kw.eval_start..kw.n_paths {
        let (n_row, p_row) = (kw.n_row(p), kw.p_row(p));
        let (w1, z, s0) = (bundle.w1_row(p), bundle.z_row(p), bundle.s0_row(p));
        let mut sum_raw_n = T::zero();
        let mut sum_comp_n = T::zero();
        let mut sum_raw_p = T::zero();
        let mut sum_comp_p = T::zero();
        for i in 0..kw.grid.n_steps {
            let dn = (n_row[i + 1] - n_row[i]) * w1[i];
            let dp = (p_row[i + 1] - p_row[i]) * w1[i];
            sum_raw_n += dn;
            sum_raw_p += dp;
            if let Some(b) = &bias {
                let a = cons.exp_rt[i] * s0[i];
                sum_comp_n += dn - b.comp_n(a, z[i]);
                sum_comp_p += dp - b.comp_p(a, z[i], n_row[i]);
            } else {
                sum_comp_n += dn;
                sum_comp_p += dp;
            }
        }
        raw_n.push(sum_raw_n);
        comp_n.push(sum_comp_n);
        raw_p.push(sum_raw_p);
        comp_p.push(sum_comp_p);
    }
    for acc in [&mut raw_n, &mut comp_n, &mut raw_p, &mut comp_p] {
        acc.finish();
    }
    Ok(OrthogonalityReport {
        n_paths: kw.n_eval(),
        raw_n: raw_n.stats().mean(),
        raw_n_se: raw_n.stats().se(),
        compensated_n: comp_n.stats().mean(),
        compensated_n_se: comp_n.stats().se(),
        raw_p: raw_p.stats().mean(),
        raw_p_se: raw_p.stats().se(),
        compensated_p: comp_p.stats().mean(),
        compensated_p_se: comp_p.stats().se(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kw::closed_form::closed_form_projection;
    use crate::model::{derive_numeraire, MarketSpec, NumericsConfig};
    use crate::paths::{accumulate_endowment, path_rng, simulate_paths};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn jackknife_se_of_a_mean_is_sd_over_sqrt_n() {
        let xs = [0.3, -1.2, 2.5, 0.7, -0.4, 1.9, 0.0, -2.2];
        let n = xs.len();
        let mut acc = MeanVar::<f64>::new();
        for x in xs {
            acc.push(x);
        }
        // Explicit delete-one jackknife.
        let full_mean = xs.iter().sum::<f64>() / n as f64;
        let loo: Vec<f64> = (0..n)
            .map(|i| (full_mean * n as f64 - xs[i]) / (n as f64 - 1.0))
            .collect();
        let loo_mean = loo.iter().sum::<f64>() / n as f64;
        let jack = ((n as f64 - 1.0) / n as f64
            * loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)).sum::<f64>())
        .sqrt();
        assert!(
            (acc.se() - jack).abs() < 1e-14,
            "jackknife {jack} vs sd/sqrt(n) {}",
            acc.se()
        );
    }

    #[test]
    fn welford_merge_matches_streaming() {
        let mut rng = path_rng(9, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let mut whole = MeanVar::<f64>::new();
        for &x in &xs {
            whole.push(x);
        }
        let mut left = MeanVar::<f64>::new();
        let mut right = MeanVar::<f64>::new();
        for &x in &xs[..400] {
            left.push(x);
        }
        for &x in &xs[400..] {
            right.push(x);
        }
        left.merge(&right);
        assert!((left.mean() - whole.mean()).abs() < 1e-14);
        assert!((left.var() - whole.var()).abs() < 1e-12);
        assert_eq!(left.count(), whole.count());
    }

    #[test]
    fn paired_accumulator_averages_adjacent_values() {
        let mut paired = PairedMeanVar::<f64>::new(true);
        for x in [1.0, 3.0, -2.0, 6.0, 10.0] {
            paired.push(x);
        }
        paired.finish(); // trailing singleton: 10.0
        let mut expect = MeanVar::<f64>::new();
        for x in [2.0, 2.0, 10.0] {
            expect.push(x);
        }
        assert_eq!(paired.stats().count(), 3);
        assert!((paired.stats().mean() - expect.mean()).abs() < 1e-15);
        assert!((paired.stats().var() - expect.var()).abs() < 1e-15);
    }

    fn moments_at(
        market: &MarketSpec<f64>,
        n_paths: usize,
        dt: f64,
        t_max: f64,
        antithetic: bool,
    ) -> Moments<f64> {
        let mut numerics = NumericsConfig::defaults();
        numerics.n_paths = n_paths;
        numerics.dt = dt;
        numerics.antithetic = antithetic;
        let num = derive_numeraire(market);
        let mut bundle = simulate_paths(market, &num, &numerics, t_max).unwrap();
        accumulate_endowment(market, &mut bundle);
        let kw = closed_form_projection(market, &num, &bundle).unwrap();
        compute_moments(&kw, &bundle)
    }

    #[test]
    fn zero_endowment_gives_identically_zero_moments() {
        let mut market = MarketSpec::defaults();
        market.z0 = 0.0;
        market.theta = 0.0;
        market.b = 0.0;
        let m = moments_at(&market, 50, 0.01, 0.2, false);
        for (name, v) in [
            ("a1", m.a1),
            ("a2", m.a2),
            ("a3", m.a3),
            ("a4", m.a4),
            ("g", m.g),
            ("n0", m.n0),
            ("p0", m.p0),
            ("se_a1", m.se_a1),
        ] {
            assert_eq!(v, 0.0, "{name} should vanish with no income stream");
        }
    }

    #[test]
    fn sample_moments_respect_jensen_with_se_slack() {
        let market = MarketSpec::defaults();
        let m = moments_at(&market, 4000, 0.01, 9.67, false);
        assert!(
            m.a2 >= m.a1 * m.a1 - 4.0 * (m.se_a2 + 2.0 * m.a1.abs() * m.se_a1),
            "a2 = {} should dominate a1² = {}",
            m.a2,
            m.a1 * m.a1
        );
        assert!(
            m.a4 >= m.a2 * m.a2 - 4.0 * (m.se_a4 + 2.0 * m.a2 * m.se_a2),
            "a4 = {} should dominate a2² = {}",
            m.a4,
            m.a2 * m.a2
        );
        // p0 = E[N(T)²] in closed form, so the a2 estimate should agree.
        assert!(
            (m.a2 - m.p0).abs() <= 4.0 * m.se_a2 + 1e-3,
            "a2 = {} vs p0 = {}",
            m.a2,
            m.p0
        );
    }

    #[test]
    fn antithetic_pairing_shrinks_the_first_moment_se() {
        let market = MarketSpec::defaults();
        let plain = moments_at(&market, 4000, 0.02, 9.66, false);
        let paired = moments_at(&market, 4000, 0.02, 9.66, true);
        // The odd functional m(T) is strongly negatively correlated across
        // antithetic partners; its SE must drop markedly.
        assert!(
            paired.se_a1 < 0.8 * plain.se_a1,
            "antithetic se_a1 {} vs plain {}",
            paired.se_a1,
            plain.se_a1
        );
    }

    #[test]
    fn step_compensators_match_brute_force_one_step_means() {
        let market = MarketSpec::<f64>::defaults();
        let num = derive_numeraire(&market);
        let co = ClosedFormCoeffs::new(&market, &num).unwrap();
        let dt = 0.02;
        let bias = StepBias::new(&market, &co, dt);
        let (a, z, n_left) = (0.9, 0.25, 0.1);
        let theta_delta = co.theta_delta(a, z);
        let theta_gamma = co.theta_gamma(a);
        let (k, theta, b, rho, r) = (market.k, market.theta, market.b, market.rho, market.r);
        let mpr = num.mpr;
        let h = co.eta_over_r;
        let inv_rpk = co.inv_rpk;
        let dk = (-k * dt).exp();
        let vol = b * ((1.0 - (-2.0 * k * dt).exp()) / (2.0 * k)).sqrt();
        let rho_perp = (1.0 - rho * rho).sqrt();
        let mut rng = path_rng(4242, 0);
        let draws = 2_000_000;
        let mut acc_n = MeanVar::<f64>::new();
        let mut acc_p = MeanVar::<f64>::new();
        for _ in 0..draws {
            let xi1: f64 = rng.sample(StandardNormal);
            let xi2: f64 = rng.sample(StandardNormal);
            // Average the four sign combinations: antithetic in both shocks
            // removes the dominant odd-order noise from the estimate.
            let mut sum_n = 0.0;
            let mut sum_p = 0.0;
            for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let (x1, x2) = (s1 * xi1, s2 * xi2);
                let dw = dt.sqrt() * x1;
                let a_next = a * (-(r + 0.5 * mpr * mpr) * dt - mpr * dw).exp();
                let z_next = theta + (z - theta) * dk + vol * (rho * x1 + rho_perp * x2);
                let dm = 0.5 * dt * (a * z + a_next * z_next)
                    + (a_next * (z_next + h) - a * (z + h)) * inv_rpk;
                let dn = dm - theta_delta * dw;
                let d_nsq = 2.0 * n_left * dn + dn * dn;
                let d_ck = co.c_k * (a_next * a_next - a * a);
                let dp = d_nsq + d_ck - theta_gamma * dw;
                sum_n += dn * dw;
                sum_p += dp * dw;
            }
            acc_n.push(sum_n / 4.0);
            acc_p.push(sum_p / 4.0);
        }
        let comp_n = bias.comp_n(a, z);
        let comp_p = bias.comp_p(a, z, n_left);
        assert!(
            (acc_n.mean() - comp_n).abs() <= 4.0 * acc_n.se(),
            "comp_n {} vs MC {} (se {})",
            comp_n,
            acc_n.mean(),
            acc_n.se()
        );
        assert!(
            (acc_p.mean() - comp_p).abs() <= 4.0 * acc_p.se(),
            "comp_p {} vs MC {} (se {})",
            comp_p,
            acc_p.mean(),
            acc_p.se()
        );
    }

    #[test]
    fn compensated_diagnostics_are_centered_at_moderate_scale() {
        let market = MarketSpec::<f64>::defaults();
        let mut numerics = NumericsConfig::defaults();
        numerics.n_paths = 20_000;
        numerics.dt = 0.02;
        let num = derive_numeraire(&market);
        let mut bundle = simulate_paths(&market, &num, &numerics, 9.66).unwrap();
        accumulate_endowment(&market, &mut bundle);
        let kw = closed_form_projection(&market, &num, &bundle).unwrap();
        let rep = orthogonality_diagnostics(&market, &num, &kw, &bundle).unwrap();
        assert!(
            rep.z_n().abs() < 4.0,
            "compensated N statistic {} (se {})",
            rep.compensated_n,
            rep.compensated_n_se
        );
        assert!(
            rep.z_p().abs() < 4.0,
            "compensated P statistic {} (se {})",
            rep.compensated_p,
            rep.compensated_p_se
        );
        // The compensator itself must be materially nonzero: it shifts each
        // statistic by many of its own standard errors at this step size.
        assert!(
            ((rep.raw_n - rep.compensated_n) / rep.compensated_n_se).abs() > 1.0,
            "N compensator should be visible at dt = 0.02"
        );
    }

    #[test]
    fn moments_serialize_with_stable_field_names() {
        let m = Moments::<f64> {
            a1: 0.0625,
            a2: 0.0135,
            a3: 2.0e-3,
            a4: 6.3e-4,
            g: -2.0e-5,
            n0: 0.0625,
            p0: 0.01355,
            se_a1: 1e-4,
            se_a2: 1e-5,
            se_a3: 1e-6,
            se_a4: 1e-6,
            se_g: 1e-7,
            backend: "closed-form".into(),
            seed: 0,
        };
        let json = serde_json::to_string(&m).unwrap();
        for key in [
            "\"a1\"", "\"a2\"", "\"a3\"", "\"a4\"", "\"g\"", "\"n0\"", "\"p0\"", "\"se_a1\"",
            "\"se_g\"", "\"backend\"", "\"seed\"",
        ] {
            assert!(json.contains(key), "serialized moments missing {key}");
        }
    }
}
