//! Gibbs sampler under independent normal and inverse-Wishart priors.
//!
//! The coefficient block and the innovation covariance are a priori
//! independent, so neither full conditional is available jointly and the
//! posterior is explored by alternating the two exact conditional draws.

use super::{build_regression, PosteriorDraws};
use crate::error::{Error, Result};
use crate::var::ReducedParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, StandardNormal};

/// Independent priors: `vec(Theta) ~ N(beta_mean, beta_cov)` over the
/// stacked coefficients (intercept first, then lag blocks, per equation) and
/// `Sigma ~ IW(iw_dof, iw_scale)`.
#[derive(Debug, Clone)]
pub struct NiwPrior {
    pub beta_mean: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub iw_dof: f64,
    pub iw_scale: DMatrix<f64>,
}

impl NiwPrior {
    /// Weakly informative default: standard normal coefficients and an
    /// inverse-Wishart with the fewest degrees of freedom that still give a
    /// finite prior mean.
    pub fn default_loose(n: usize, p: usize) -> Self {
        let k = n * (n * p + 1);
        NiwPrior {
            beta_mean: DVector::zeros(k),
            beta_cov: DMatrix::identity(k, k),
            iw_dof: (n + 3) as f64,
            iw_scale: DMatrix::identity(n, n),
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let k = n * (n * p + 1);
        if self.beta_mean.len() != k || self.beta_cov.nrows() != k || self.beta_cov.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "coefficient prior sized for {} parameters, expected {k}",
                self.beta_mean.len()
            )));
        }
        if self.iw_scale.nrows() != n || self.iw_scale.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "inverse-Wishart scale is {}x{}, expected {n}x{n}",
                self.iw_scale.nrows(),
                self.iw_scale.ncols()
            )));
        }
        if self.iw_dof <= (n + 1) as f64 {
            return Err(Error::InvalidPrior(format!(
                "inverse-Wishart degrees of freedom {} must exceed n + 1 = {}",
                self.iw_dof,
                n + 1
            )));
        }
        Ok(())
    }
}

/// Draw `Sigma ~ IW(dof, scale)` by inverting a Bartlett-decomposed Wishart
/// draw; the result is SPD by construction.
pub(crate) fn draw_inverse_wishart(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut ChaCha12Rng,
) -> Result<DMatrix<f64>> {
    let n = scale.nrows();
    let l = nalgebra::Cholesky::new(scale.clone())
        .ok_or(Error::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        })?
        .l();
    let mut bartlett = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(dof - i as f64).map_err(|_| Error::InvalidPrior(
            format!("Wishart degrees of freedom {dof} too small for dimension {n}"),
        ))?;
        bartlett[(i, i)] = rng.sample::<f64, _>(chi).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // Sigma = L Phi^{-T} Phi^{-1} L' where Phi is the Bartlett factor:
    // equivalently G = Phi^{-1} L' and Sigma = G' G.
    let g = bartlett
        .solve_lower_triangular(&l.transpose())
        .ok_or(Error::SingularDiagonal { index: 0 })?;
    Ok(g.transpose() * g)
}

/// Posterior sampler alternating the coefficient and covariance conditionals.
/// Returns reduced-form draws; convert with `reduced_to_structural` when a
/// forecast system is needed.
pub fn gibbs_niw(
    data: &DMatrix<f64>,
    p: usize,
    prior: &NiwPrior,
    n_draws: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    let t = data.nrows();
    let n = data.ncols();
    if n == 0 || p == 0 {
        return Err(Error::DimensionMismatch(
            "need at least one variable and one lag".into(),
        ));
    }
    prior.validate(n, p)?;
    if t <= n * p + 1 {
        return Err(Error::InsufficientData(format!(
            "{t} observations cannot identify a VAR({p}) in {n} variables"
        )));
    }
    let (x, y) = build_regression(data, p);
    let t_eff = x.nrows();
    let k = x.ncols();
    let xtx = x.transpose() * &x;

    let v0_chol =
        nalgebra::Cholesky::new(prior.beta_cov.clone()).ok_or(Error::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        })?;
    let v0_inv = v0_chol.inverse();
    let v0_inv_m0 = &v0_inv * &prior.beta_mean;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Start the chain at the prior mean of Sigma.
    let mut sigma = &prior.iw_scale / (prior.iw_dof - (n + 1) as f64);
    let mut draws = Vec::with_capacity(n_draws);
    for sweep in 0..burn_in + n_draws {
        // Coefficients given Sigma: Gaussian with precision
        // V0^{-1} + Sigma^{-1} (x) X'X.
        let sigma_inv = nalgebra::Cholesky::new(sigma.clone())
            .ok_or(Error::NotPositiveDefinite {
                index: 0,
                value: f64::NAN,
            })?
            .inverse();
        let mut key = v0_inv.clone();
        for bi in 0..n {
            for bj in 0..n {
                let w = sigma_inv[(bi, bj)];
                for r in 0..k {
                    for c in 0..k {
                        key[(bi * k + r, bj * k + c)] += w * xtx[(r, c)];
                    }
                }
            }
        }
        let rhs_mat = x.transpose() * &y * &sigma_inv;
        let mut rhs = v0_inv_m0.clone();
        for eq in 0..n {
            for r in 0..k {
                rhs[eq * k + r] += rhs_mat[(r, eq)];
            }
        }
        let key_chol = nalgebra::Cholesky::new(key).ok_or(Error::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        })?;
        let mean = key_chol.solve(&rhs);
        let z = DVector::from_fn(n * k, |_, _| rng.sample::<f64, _>(StandardNormal));
        // beta = mean + L^{-T} z gives the right covariance K^{-1}.
        let beta = &mean
            + key_chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or(Error::SingularDiagonal { index: 0 })?;

        // Covariance given coefficients: inverse-Wishart on the residuals.
        let theta = DMatrix::from_fn(k, n, |r, eq| beta[eq * k + r]);
        let resid = &y - &x * &theta;
        let s_post = &prior.iw_scale + resid.transpose() * &resid;
        sigma = draw_inverse_wishart(&s_post, prior.iw_dof + t_eff as f64, &mut rng)?;

        if sweep >= burn_in {
            let b = DVector::from_fn(n, |eq, _| theta[(0, eq)]);
            let b_lags = (1..=p)
                .map(|lag| {
                    DMatrix::from_fn(n, n, |eq, j| theta[(1 + (lag - 1) * n + j, eq)])
                })
                .collect();
            draws.push(ReducedParams {
                n,
                p,
                b,
                b_lags,
                sigma: sigma.clone(),
            });
        }
    }
    Ok(PosteriorDraws::Reduced {
        draws,
        burn_in,
        thin: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::testsim::{simulate_reduced, stable_two_var};
    use approx::assert_relative_eq;

    #[test]
    fn inverse_wishart_matches_analytic_mean() {
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.5]);
        let dof = 8.0;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n_draws = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n_draws {
            let s = draw_inverse_wishart(&scale, dof, &mut rng).unwrap();
            acc += &s;
            sq += s.component_mul(&s);
        }
        let mean = acc / n_draws as f64;
        let target = &scale / (dof - 3.0);
        for i in 0..2 {
            for j in 0..2 {
                let var = sq[(i, j)] / n_draws as f64 - mean[(i, j)] * mean[(i, j)];
                let se = (var / n_draws as f64).sqrt();
                assert!(
                    (mean[(i, j)] - target[(i, j)]).abs() < 4.0 * se,
                    "entry ({i},{j}): {} vs {}",
                    mean[(i, j)],
                    target[(i, j)]
                );
            }
        }
    }

    #[test]
    fn posterior_concentrates_on_the_data_generating_process() {
        let truth = stable_two_var();
        let data = simulate_reduced(&truth, 300, 42);
        let prior = NiwPrior::default_loose(2, 2);
        let out = gibbs_niw(&data, 2, &prior, 2_000, 500, 7).unwrap();
        let draws = match &out {
            PosteriorDraws::Reduced { draws, .. } => draws,
            _ => unreachable!(),
        };
        // Every first-lag coefficient within three posterior sds of truth.
        for i in 0..2 {
            for j in 0..2 {
                let vals: Vec<f64> = draws.iter().map(|d| d.b_lags[0][(i, j)]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (vals.len() as f64 - 1.0))
                    .sqrt();
                let truth_val = truth.b_lags[0][(i, j)];
                assert!(
                    (mean - truth_val).abs() < 3.0 * sd,
                    "B1[{i},{j}]: posterior {mean} +- {sd}, truth {truth_val}"
                );
            }
        }
        // Innovation covariance in the right neighborhood too.
        let sig_mean = draws.iter().fold(DMatrix::zeros(2, 2), |acc, d| acc + &d.sigma)
            / draws.len() as f64;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    sig_mean[(i, j)],
                    truth.sigma[(i, j)],
                    epsilon = 0.12,
                    max_relative = 0.5
                );
            }
        }
    }

    #[test]
    fn split_half_means_are_stable() {
        let truth = stable_two_var();
        let data = simulate_reduced(&truth, 200, 11);
        let prior = NiwPrior::default_loose(2, 2);
        let out = gibbs_niw(&data, 2, &prior, 3_000, 500, 19).unwrap();
        let draws = match &out {
            PosteriorDraws::Reduced { draws, .. } => draws,
            _ => unreachable!(),
        };
        let half = draws.len() / 2;
        for i in 0..2 {
            for j in 0..2 {
                let vals: Vec<f64> = draws.iter().map(|d| d.b_lags[0][(i, j)]).collect();
                let m1 = vals[..half].iter().sum::<f64>() / half as f64;
                let m2 = vals[half..].iter().sum::<f64>() / (vals.len() - half) as f64;
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (vals.len() as f64 - 1.0))
                    .sqrt();
                let se = sd / (half as f64).sqrt();
                assert!(
                    (m1 - m2).abs() < 4.0 * se,
                    "B1[{i},{j}] halves {m1} vs {m2} (se {se})"
                );
            }
        }
    }

    #[test]
    fn dogmatic_prior_pins_coefficients() {
        let truth = stable_two_var();
        let data = simulate_reduced(&truth, 120, 5);
        let k = 2 * (2 * 2 + 1);
        let mut target = DVector::zeros(k);
        for (i, v) in target.iter_mut().enumerate() {
            *v = 0.01 * (i as f64 + 1.0);
        }
        let prior = NiwPrior {
            beta_mean: target.clone(),
            beta_cov: DMatrix::identity(k, k) * 1e-10,
            iw_dof: 5.0,
            iw_scale: DMatrix::identity(2, 2),
        };
        let out = gibbs_niw(&data, 2, &prior, 50, 50, 3).unwrap();
        let draws = match &out {
            PosteriorDraws::Reduced { draws, .. } => draws,
            _ => unreachable!(),
        };
        for d in draws {
            // Stacking order: intercept then lag blocks, per equation.
            for eq in 0..2 {
                assert_relative_eq!(d.b[eq], target[eq * 5], epsilon = 1e-3);
                for lag in 0..2 {
                    for j in 0..2 {
                        assert_relative_eq!(
                            d.b_lags[lag][(eq, j)],
                            target[eq * 5 + 1 + lag * 2 + j],
                            epsilon = 1e-3
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_chain() {
        let truth = stable_two_var();
        let data = simulate_reduced(&truth, 80, 2);
        let prior = NiwPrior::default_loose(2, 2);
        let a = gibbs_niw(&data, 2, &prior, 20, 10, 99).unwrap();
        let b = gibbs_niw(&data, 2, &prior, 20, 10, 99).unwrap();
        match (a, b) {
            (
                PosteriorDraws::Reduced { draws: da, .. },
                PosteriorDraws::Reduced { draws: db, .. },
            ) => {
                for (x, y) in da.iter().zip(db.iter()) {
                    assert_eq!(x.sigma, y.sigma);
                    assert_eq!(x.b, y.b);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn too_short_samples_are_rejected() {
        let data = DMatrix::zeros(5, 2);
        let prior = NiwPrior::default_loose(2, 2);
        assert!(matches!(
            gibbs_niw(&data, 2, &prior, 10, 0, 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn structural_conversion_round_trips() {
        let truth = stable_two_var();
        let data = simulate_reduced(&truth, 150, 8);
        let prior = NiwPrior::default_loose(2, 2);
        let out = gibbs_niw(&data, 2, &prior, 5, 20, 123).unwrap();
        let structural = out.into_structural().unwrap();
        assert_eq!(structural.len(), 5);
        for s in &structural {
            s.validate().unwrap();
            // The conversion whitens the shocks: A0 Sigma A0' = I.
            let back = s.to_reduced().unwrap();
            let eye = &s.a0 * &back.sigma * s.a0.transpose();
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(eye[(i, j)], want, epsilon = 1e-8);
                }
            }
        }
    }
}
