//! Truncated multivariate normal sampling.
//!
//! Three exchangeable samplers over the same problem description: an exact
//! accept-reject sampler driven by minimax exponential tilting, a coordinate
//! Gibbs sampler for regions too improbable for rejection, and a naive
//! accept-reject sampler kept as an oracle for tests and benchmarks.

pub mod tilt;
pub mod univariate;

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::distributions::OpenClosed01;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use tilt::{solve_tilting, TiltingSolution};
use univariate::{ln_normal_prob, trunc_norm_icdf};

/// How the Gaussian's scale is described.
#[derive(Debug, Clone)]
pub enum GaussianScatter {
    Covariance(DMatrix<f64>),
    Precision(DMatrix<f64>),
}

/// A normal law restricted to an axis-aligned box. Bounds may be infinite;
/// each lower bound must be strictly below its upper bound.
#[derive(Debug, Clone)]
pub struct TruncatedGaussianSpec {
    pub mean: DVector<f64>,
    pub scatter: GaussianScatter,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl TruncatedGaussianSpec {
    pub fn with_covariance(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        Self {
            mean,
            scatter: GaussianScatter::Covariance(cov),
            lower,
            upper,
        }
    }

    pub fn with_precision(
        mean: DVector<f64>,
        precision: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        Self {
            mean,
            scatter: GaussianScatter::Precision(precision),
            lower,
            upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scatter_matrix(&self) -> &DMatrix<f64> {
        match &self.scatter {
            GaussianScatter::Covariance(m) | GaussianScatter::Precision(m) => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let m = self.scatter_matrix();
        if m.nrows() != d || m.ncols() != d || self.lower.len() != d || self.upper.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "truncated normal: mean has {} entries, scatter is {}x{}, bounds have {}/{}",
                d,
                m.nrows(),
                m.ncols(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for k in 0..d {
            if !(self.lower[k] < self.upper[k]) {
                return Err(Error::EmptyRegion { index: k });
            }
        }
        Ok(())
    }

    /// Covariance form, inverting a precision description if necessary.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match &self.scatter {
            GaussianScatter::Covariance(m) => Ok(m.clone()),
            GaussianScatter::Precision(m) => {
                let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite {
                    index: 0,
                    value: f64::NAN,
                })?;
                Ok(chol.inverse())
            }
        }
    }

    /// Precision form, inverting a covariance description if necessary.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        match &self.scatter {
            GaussianScatter::Precision(m) => Ok(m.clone()),
            GaussianScatter::Covariance(m) => {
                let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite {
                    index: 0,
                    value: f64::NAN,
                })?;
                Ok(chol.inverse())
            }
        }
    }
}

/// Draws from a truncated normal, one row per draw.
#[derive(Debug, Clone)]
pub struct TmvnDraws {
    pub draws: DMatrix<f64>,
    /// Accepted fraction of proposals; 1.0 for the Gibbs sampler.
    pub acceptance_rate: f64,
    /// Total proposals generated (Gibbs: total sweeps including burn-in).
    pub proposals: usize,
}

fn cholesky_lower(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(cov.clone())
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        })
}

/// One sequential proposal from the tilted law together with its log
/// likelihood ratio against the target.
fn tilted_proposal(sol: &TiltingSolution, rng: &mut ChaCha12Rng) -> (DVector<f64>, f64) {
    let d = sol.ls.len();
    let mut z = DVector::zeros(d);
    let mut log_ratio = 0.0;
    for k in 0..d {
        let mut shift = 0.0;
        for j in 0..k {
            shift += sol.c_strict[(k, j)] * z[j];
        }
        let lo = sol.ls[k] - shift - sol.mu[k];
        let hi = sol.us[k] - shift - sol.mu[k];
        let u: f64 = rng.sample(OpenClosed01);
        z[k] = sol.mu[k] + trunc_norm_icdf(lo, hi, u);
        log_ratio += ln_normal_prob(lo, hi) + 0.5 * sol.mu[k] * sol.mu[k] - sol.mu[k] * z[k];
    }
    (z, log_ratio)
}

/// Exact sampler: minimax-tilted sequential proposals with accept-reject.
pub fn sample_tilted(spec: &TruncatedGaussianSpec, n_draws: usize, seed: u64) -> Result<TmvnDraws> {
    spec.validate()?;
    let d = spec.dim();
    let cov = spec.covariance()?;
    let chol = cholesky_lower(&cov)?;
    let lower = &spec.lower - &spec.mean;
    let upper = &spec.upper - &spec.mean;
    let sol = solve_tilting(chol, &lower, &upper)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n_draws, d);
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    let budget = 1_000 + n_draws.saturating_mul(10_000);
    while accepted < n_draws {
        if proposals >= budget {
            return Err(Error::BudgetExhausted {
                budget,
                accepted,
                requested: n_draws,
            });
        }
        proposals += 1;
        let (z, log_ratio) = tilted_proposal(&sol, &mut rng);
        let u: f64 = rng.sample(OpenClosed01);
        if -u.ln() > sol.psi_star - log_ratio {
            let x = &sol.chol_l * z;
            for k in 0..d {
                draws[(accepted, k)] = spec.mean[k] + x[k];
            }
            accepted += 1;
        }
    }
    Ok(TmvnDraws {
        draws,
        acceptance_rate: accepted as f64 / proposals as f64,
        proposals,
    })
}

/// Coordinate Gibbs sampler. Each full-conditional is a univariate truncated
/// normal derived from the precision matrix, drawn by inverse CDF, so the
/// chain has no rejections and its cost is deterministic.
pub fn sample_gibbs(
    spec: &TruncatedGaussianSpec,
    n_draws: usize,
    burn_in: usize,
    seed: u64,
) -> Result<TmvnDraws> {
    spec.validate()?;
    let d = spec.dim();
    let prec = spec.precision()?;
    for k in 0..d {
        if !(prec[(k, k)] > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: k,
                value: prec[(k, k)],
            });
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = DVector::from_fn(d, |k, _| spec.mean[k].clamp(spec.lower[k], spec.upper[k]));
    let mut draws = DMatrix::zeros(n_draws, d);
    let sweeps = burn_in + n_draws;
    for sweep in 0..sweeps {
        for k in 0..d {
            let mut cross = 0.0;
            for j in 0..d {
                if j != k {
                    cross += prec[(k, j)] * (x[j] - spec.mean[j]);
                }
            }
            let cond_mean = spec.mean[k] - cross / prec[(k, k)];
            let cond_sd = prec[(k, k)].sqrt().recip();
            let a = (spec.lower[k] - cond_mean) / cond_sd;
            let b = (spec.upper[k] - cond_mean) / cond_sd;
            let u: f64 = rng.sample(OpenClosed01);
            x[k] = cond_mean + cond_sd * trunc_norm_icdf(a, b, u);
        }
        if sweep >= burn_in {
            for k in 0..d {
                draws[(sweep - burn_in, k)] = x[k];
            }
        }
    }
    Ok(TmvnDraws {
        draws,
        acceptance_rate: 1.0,
        proposals: sweeps,
    })
}

/// Untilted accept-reject from the unconstrained normal. Exact but with
/// acceptance equal to the region probability; kept as a test oracle.
pub fn sample_naive(
    spec: &TruncatedGaussianSpec,
    n_draws: usize,
    max_proposals: usize,
    seed: u64,
) -> Result<TmvnDraws> {
    spec.validate()?;
    let d = spec.dim();
    let cov = spec.covariance()?;
    let chol = cholesky_lower(&cov)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n_draws, d);
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    while accepted < n_draws {
        if proposals >= max_proposals {
            return Err(Error::BudgetExhausted {
                budget: max_proposals,
                accepted,
                requested: n_draws,
            });
        }
        proposals += 1;
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &spec.mean + &chol * z;
        let inside = (0..d).all(|k| x[k] >= spec.lower[k] && x[k] <= spec.upper[k]);
        if inside {
            for k in 0..d {
                draws[(accepted, k)] = x[k];
            }
            accepted += 1;
        }
    }
    Ok(TmvnDraws {
        draws,
        acceptance_rate: accepted as f64 / proposals as f64,
        proposals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn column_mean(m: &DMatrix<f64>, k: usize) -> f64 {
        m.column(k).iter().sum::<f64>() / m.nrows() as f64
    }

    fn column_sd(m: &DMatrix<f64>, k: usize) -> f64 {
        let mean = column_mean(m, k);
        let ss: f64 = m.column(k).iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (m.nrows() as f64 - 1.0)).sqrt()
    }

    fn demo_spec() -> TruncatedGaussianSpec {
        let cov = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.2, 0.5, 1.2, -0.3, 0.2, -0.3, 0.8],
        );
        TruncatedGaussianSpec::with_covariance(
            DVector::from_row_slice(&[0.3, -0.2, 0.1]),
            cov,
            DVector::from_row_slice(&[-0.5, -1.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.3, 2.0]),
        )
    }

    #[test]
    fn half_space_mean_matches_analytic_value() {
        // E[Z | Z > 0] = sqrt(2/pi).
        let spec = TruncatedGaussianSpec::with_covariance(
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, f64::INFINITY),
        );
        let n = 20_000;
        let out = sample_tilted(&spec, n, 11).unwrap();
        let mean = column_mean(&out.draws, 0);
        let se = column_sd(&out.draws, 0) / (n as f64).sqrt();
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mean - target).abs() < 3.0 * se,
            "mean {mean} vs {target} (se {se})"
        );
        // A one-dimensional region needs no rejection at all.
        assert_eq!(out.acceptance_rate, 1.0);
    }

    #[test]
    fn unbounded_region_accepts_everything() {
        let spec = TruncatedGaussianSpec::with_covariance(
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            DVector::from_element(3, f64::NEG_INFINITY),
            DVector::from_element(3, f64::INFINITY),
        );
        let out = sample_tilted(&spec, 500, 5).unwrap();
        assert_eq!(out.proposals, 500);
    }

    #[test]
    fn tilted_and_naive_agree_on_moments() {
        let spec = demo_spec();
        let n = 20_000;
        let tilted = sample_tilted(&spec, n, 101).unwrap();
        let naive = sample_naive(&spec, n, 50_000_000, 202).unwrap();
        for k in 0..3 {
            let mt = column_mean(&tilted.draws, k);
            let mn = column_mean(&naive.draws, k);
            let se = ((column_sd(&tilted.draws, k).powi(2)
                + column_sd(&naive.draws, k).powi(2))
                / n as f64)
                .sqrt();
            assert!(
                (mt - mn).abs() < 3.0 * se,
                "coordinate {k}: tilted {mt}, naive {mn}, se {se}"
            );
            let st = column_sd(&tilted.draws, k);
            let sn = column_sd(&naive.draws, k);
            // Variance standard error of sd is roughly sd / sqrt(2n).
            let sd_se = (st / (2.0 * n as f64).sqrt()) * 2.0;
            assert!(
                (st - sn).abs() < 3.0 * sd_se,
                "coordinate {k}: sd {st} vs {sn}"
            );
        }
    }

    /// Two-sample energy-distance z test using disjoint pairs so the terms
    /// are independent and the variance estimate is honest.
    fn energy_z(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let n = a.nrows().min(b.nrows());
        let d = a.ncols();
        let dist = |m1: &DMatrix<f64>, i: usize, m2: &DMatrix<f64>, j: usize| {
            (0..d)
                .map(|k| (m1[(i, k)] - m2[(j, k)]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut cross = Vec::with_capacity(n);
        for i in 0..n {
            cross.push(dist(a, i, b, i));
        }
        let mut within_a = Vec::with_capacity(n / 2);
        let mut within_b = Vec::with_capacity(n / 2);
        for i in 0..n / 2 {
            within_a.push(dist(a, 2 * i, a, 2 * i + 1));
            within_b.push(dist(b, 2 * i, b, 2 * i + 1));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
        };
        let stat = 2.0 * mean(&cross) - mean(&within_a) - mean(&within_b);
        let se = (4.0 * var(&cross) / n as f64
            + var(&within_a) / (n / 2) as f64
            + var(&within_b) / (n / 2) as f64)
            .sqrt();
        stat / se
    }

    #[test]
    fn tilted_and_naive_agree_in_distribution() {
        let spec = demo_spec();
        let n = 20_000;
        let tilted = sample_tilted(&spec, n, 7).unwrap();
        let naive = sample_naive(&spec, n, 50_000_000, 8).unwrap();
        let z = energy_z(&tilted.draws, &naive.draws);
        assert!(z.abs() < 2.576, "energy z = {z}");
    }

    #[test]
    fn gibbs_agrees_with_naive_on_moments() {
        let spec = demo_spec();
        let n = 20_000;
        let gibbs = sample_gibbs(&spec, n, 500, 31).unwrap();
        let naive = sample_naive(&spec, n, 50_000_000, 32).unwrap();
        for k in 0..3 {
            let mg = column_mean(&gibbs.draws, k);
            let mn = column_mean(&naive.draws, k);
            // Gibbs draws are autocorrelated; widen the s.e. accordingly.
            let se = ((9.0 * column_sd(&gibbs.draws, k).powi(2)
                + column_sd(&naive.draws, k).powi(2))
                / n as f64)
                .sqrt();
            assert!(
                (mg - mn).abs() < 3.0 * se,
                "coordinate {k}: gibbs {mg}, naive {mn}, se {se}"
            );
        }
    }

    #[test]
    fn tilting_beats_naive_acceptance_on_rare_regions() {
        // A corner region with probability around half a percent.
        let spec = TruncatedGaussianSpec::with_covariance(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]),
            DVector::from_row_slice(&[1.8, 1.8]),
            DVector::from_element(2, f64::INFINITY),
        );
        let tilted = sample_tilted(&spec, 2_000, 3).unwrap();
        let naive = sample_naive(&spec, 2_000, 50_000_000, 4).unwrap();
        assert!(
            tilted.acceptance_rate > 10.0 * naive.acceptance_rate,
            "tilted {} vs naive {}",
            tilted.acceptance_rate,
            naive.acceptance_rate
        );
    }

    #[test]
    fn deep_tail_matches_analytic_moments() {
        // Independent coordinates each truncated to [6, 7]: far beyond what
        // naive rejection could ever reach.
        let spec = TruncatedGaussianSpec::with_covariance(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_element(2, 6.0),
            DVector::from_element(2, 7.0),
        );
        let n = 20_000;
        let out = sample_tilted(&spec, n, 9).unwrap();
        let logw = ln_normal_prob(6.0, 7.0);
        let target = ((univariate::norm_logpdf(6.0) - logw).exp())
            - ((univariate::norm_logpdf(7.0) - logw).exp());
        for k in 0..2 {
            let mean = column_mean(&out.draws, k);
            let se = column_sd(&out.draws, k) / (n as f64).sqrt();
            assert!(
                (mean - target).abs() < 3.0 * se,
                "mean {mean} vs {target}"
            );
            assert!(out.draws.column(k).iter().all(|&v| (6.0..=7.0).contains(&v)));
        }
    }

    #[test]
    fn precision_and_covariance_descriptions_agree() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let prec = nalgebra::Cholesky::new(cov.clone()).unwrap().inverse();
        let mean = DVector::from_row_slice(&[0.1, -0.4]);
        let lower = DVector::from_row_slice(&[-1.0, -2.0]);
        let upper = DVector::from_row_slice(&[1.5, 0.5]);
        let a = TruncatedGaussianSpec::with_covariance(
            mean.clone(),
            cov,
            lower.clone(),
            upper.clone(),
        );
        let b = TruncatedGaussianSpec::with_precision(mean, prec, lower, upper);
        let da = sample_gibbs(&a, 200, 50, 77).unwrap();
        let db = sample_gibbs(&b, 200, 50, 77).unwrap();
        for i in 0..200 {
            for k in 0..2 {
                assert_relative_eq!(da.draws[(i, k)], db.draws[(i, k)], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn all_samplers_are_deterministic_in_the_seed() {
        let spec = demo_spec();
        let a = sample_tilted(&spec, 100, 13).unwrap();
        let b = sample_tilted(&spec, 100, 13).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = sample_gibbs(&spec, 100, 20, 13).unwrap();
        let d = sample_gibbs(&spec, 100, 20, 13).unwrap();
        assert_eq!(c.draws, d.draws);
        let e = sample_naive(&spec, 100, 1_000_000, 13).unwrap();
        let f = sample_naive(&spec, 100, 1_000_000, 13).unwrap();
        assert_eq!(e.draws, f.draws);
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let mut spec = demo_spec();
        spec.lower[1] = spec.upper[1];
        assert!(matches!(
            sample_tilted(&spec, 10, 1),
            Err(Error::EmptyRegion { index: 1 })
        ));
    }

    #[test]
    fn naive_budget_is_enforced() {
        let spec = TruncatedGaussianSpec::with_covariance(
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::from_element(1, 5.0),
            DVector::from_element(1, f64::INFINITY),
        );
        assert!(matches!(
            sample_naive(&spec, 100, 10_000, 1),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn draws_respect_bounds() {
        let spec = demo_spec();
        for draws in [
            sample_tilted(&spec, 2_000, 21).unwrap().draws,
            sample_gibbs(&spec, 2_000, 100, 22).unwrap().draws,
            sample_naive(&spec, 2_000, 10_000_000, 23).unwrap().draws,
        ] {
            for i in 0..draws.nrows() {
                for k in 0..3 {
                    assert!(draws[(i, k)] >= spec.lower[k] && draws[(i, k)] <= spec.upper[k]);
                }
            }
        }
    }
}
