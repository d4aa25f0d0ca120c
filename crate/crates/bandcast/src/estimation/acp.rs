//! Equation-by-equation conjugate estimation with asymmetric Minnesota
//! shrinkage.
//!
//! With a unit-lower-triangular contemporaneous matrix and diagonal shock
//! variances, the VAR factors into `n` independent regressions
//!
//! ```text
//! y_it = w_it' alpha_i + z_it' beta_i + eps_it,   eps_it ~ N(0, sigma_i^2),
//! ```
//!
//! where `w_it` holds the negated contemporaneous values of the preceding
//! variables and `z_it = (1, y'_{t-1}, ..., y'_{t-p})`. A normal-inverse-gamma
//! prior per equation keeps the posterior, the posterior simulator, and the
//! marginal likelihood all in closed form, so shrinkage hyperparameters can
//! be chosen by direct marginal-likelihood maximization.

use super::{ar_residual_variance, build_regression, PosteriorDraws};
use crate::error::{Error, Result};
use crate::var::SvarParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Gamma, StandardNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Shrinkage configuration shared by all equations.
#[derive(Debug, Clone)]
pub struct AcpPrior {
    /// Own-lag shrinkage intensity.
    pub kappa1: f64,
    /// Cross-lag shrinkage intensity.
    pub kappa2: f64,
    /// Inverse-gamma shape input; equation i uses shape (v0 + i - n) / 2.
    pub v0: f64,
    /// Residual variances of univariate AR(p) fits, one per variable.
    pub s_sq: DVector<f64>,
    /// Prior variance of each intercept (relative to the shock variance).
    pub intercept_var: f64,
}

impl AcpPrior {
    /// Standard configuration: `v0 = n + 2`, AR(p) residual variances from
    /// the data, intercept variance 100.
    pub fn from_data(data: &DMatrix<f64>, p: usize, kappa1: f64, kappa2: f64) -> Result<Self> {
        let n = data.ncols();
        let mut s_sq = DVector::zeros(n);
        for j in 0..n {
            s_sq[j] = ar_residual_variance(&DVector::from(data.column(j).clone_owned()), p)?;
        }
        let prior = AcpPrior {
            kappa1,
            kappa2,
            v0: (n + 2) as f64,
            s_sq,
            intercept_var: 100.0,
        };
        prior.validate(n)?;
        Ok(prior)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.kappa1 > 0.0) || !(self.kappa2 > 0.0) || !(self.intercept_var > 0.0) {
            return Err(Error::InvalidPrior(
                "shrinkage intensities and intercept variance must be positive".into(),
            ));
        }
        if self.s_sq.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} residual variances for {n} variables",
                self.s_sq.len()
            )));
        }
        if self.s_sq.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidPrior(
                "residual variances must be strictly positive".into(),
            ));
        }
        // The smallest per-equation inverse-gamma shape must stay positive.
        if self.v0 + 1.0 - n as f64 <= 0.0 {
            return Err(Error::InvalidPrior(format!(
                "v0 = {} gives a non-positive shape for the first equation",
                self.v0
            )));
        }
        Ok(())
    }

    /// Inverse-gamma shape for 0-based equation `i` of `n`.
    fn ig_shape(&self, i: usize, n: usize) -> f64 {
        (self.v0 + (i + 1) as f64 - n as f64) / 2.0
    }

    /// Inverse-gamma rate for 0-based equation `i`.
    fn ig_rate(&self, i: usize) -> f64 {
        self.s_sq[i] / 2.0
    }
}

/// Prior variance of one lag-polynomial coefficient of equation `equation`.
/// Index 0 is the intercept; index `1 + (l-1) n + j` is the coefficient on
/// the `l`-th lag of variable `j`.
pub fn minnesota_variance(
    prior: &AcpPrior,
    p: usize,
    equation: usize,
    coef: usize,
) -> Result<f64> {
    let n = prior.s_sq.len();
    let len = 1 + n * p;
    if equation >= n {
        return Err(Error::IndexOutOfRange {
            index: equation,
            len: n,
        });
    }
    if coef >= len {
        return Err(Error::IndexOutOfRange { index: coef, len });
    }
    if coef == 0 {
        return Ok(prior.intercept_var);
    }
    let lag = (coef - 1) / n + 1;
    let var = (coef - 1) % n;
    let l_sq = (lag * lag) as f64;
    if var == equation {
        Ok(prior.kappa1 / (l_sq * prior.s_sq[equation]))
    } else {
        Ok(prior.kappa2 / (l_sq * prior.s_sq[var]))
    }
}

/// Exact normal-inverse-gamma posterior for one equation, plus its marginal
/// likelihood contribution.
#[derive(Debug, Clone)]
pub struct EquationPosterior {
    /// Posterior coefficient mean, contemporaneous terms first.
    pub coef_mean: DVector<f64>,
    /// Lower Cholesky factor of the posterior precision (up to sigma^2).
    pub precision_chol: DMatrix<f64>,
    /// Prior mean and diagonal prior variance, kept for density evaluation.
    pub prior_mean: DVector<f64>,
    pub prior_var: DVector<f64>,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub shape: f64,
    pub rate: f64,
    pub log_ml: f64,
}

/// Full posterior: one conjugate update per equation.
#[derive(Debug, Clone)]
pub struct AcpPosterior {
    pub n: usize,
    pub p: usize,
    pub equations: Vec<EquationPosterior>,
}

impl AcpPosterior {
    /// Log marginal likelihood of the whole system; the triangular
    /// factorization makes it the exact sum of the per-equation terms.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.equations.iter().map(|e| e.log_ml).sum()
    }
}

/// Regressors and response for one equation: `[w | z]` columns.
fn equation_design(
    x_lags: &DMatrix<f64>,
    y_all: &DMatrix<f64>,
    equation: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let t_eff = x_lags.nrows();
    let k_z = x_lags.ncols();
    let d = equation + k_z;
    let mut x = DMatrix::zeros(t_eff, d);
    for t in 0..t_eff {
        for j in 0..equation {
            x[(t, j)] = -y_all[(t, j)];
        }
        for c in 0..k_z {
            x[(t, equation + c)] = x_lags[(t, c)];
        }
    }
    (x, DVector::from(y_all.column(equation).clone_owned()))
}

/// Prior mean and diagonal variance for one equation's stacked
/// `[alpha_i; beta_i]` coefficients.
fn equation_prior(
    prior: &AcpPrior,
    p: usize,
    equation: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = prior.s_sq.len();
    let k_z = 1 + n * p;
    let d = equation + k_z;
    let mut mean = DVector::zeros(d);
    let mut var = DVector::zeros(d);
    for j in 0..equation {
        var[j] = 1.0 / prior.s_sq[j];
    }
    for c in 0..k_z {
        var[equation + c] = minnesota_variance(prior, p, equation, c)?;
    }
    if p >= 1 {
        // Random-walk-style center: unit coefficient on the first own lag.
        mean[equation + 1 + equation] = 1.0;
    }
    Ok((mean, var))
}

/// Conjugate posterior update for every equation.
pub fn acp_posterior(data: &DMatrix<f64>, p: usize, prior: &AcpPrior) -> Result<AcpPosterior> {
    let n = data.ncols();
    if n == 0 || p == 0 {
        return Err(Error::DimensionMismatch(
            "need at least one variable and one lag".into(),
        ));
    }
    prior.validate(n)?;
    let (x_lags, y_all) = build_regression(data, p);
    let t_eff = x_lags.nrows() as f64;

    let mut equations = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = equation_design(&x_lags, &y_all, i);
        let (m0, v0) = equation_prior(prior, p, i)?;
        let d = x.ncols();

        let mut key = x.transpose() * &x;
        let mut rhs = x.transpose() * &y;
        let mut ln_det_v_inv = 0.0;
        let mut prior_quad = 0.0;
        for j in 0..d {
            key[(j, j)] += 1.0 / v0[j];
            rhs[j] += m0[j] / v0[j];
            ln_det_v_inv -= v0[j].ln();
            prior_quad += m0[j] * m0[j] / v0[j];
        }
        let chol = nalgebra::Cholesky::new(key).ok_or(Error::NotPositiveDefinite {
            index: i,
            value: f64::NAN,
        })?;
        let coef_mean = chol.solve(&rhs);
        let ln_det_k: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

        let shape0 = prior.ig_shape(i, n);
        let rate0 = prior.ig_rate(i);
        let shape = shape0 + 0.5 * t_eff;
        // rhs currently holds K m_hat, so the fitted quadratic is m_hat' K m_hat.
        let fitted_quad = coef_mean.dot(&rhs);
        let rate = rate0 + 0.5 * (y.norm_squared() + prior_quad - fitted_quad);
        if !(rate > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: i,
                value: rate,
            });
        }

        let log_ml = -0.5 * t_eff * LN_2PI + 0.5 * (ln_det_v_inv - ln_det_k)
            + libm::lgamma(shape)
            - libm::lgamma(shape0)
            + shape0 * rate0.ln()
            - shape * rate.ln();

        equations.push(EquationPosterior {
            coef_mean,
            precision_chol: chol.l(),
            prior_mean: m0,
            prior_var: v0,
            prior_shape: shape0,
            prior_rate: rate0,
            shape,
            rate,
            log_ml,
        });
    }
    Ok(AcpPosterior { n, p, equations })
}

/// Closed-form log marginal likelihood of the data under the prior.
pub fn acp_log_marginal_likelihood(
    data: &DMatrix<f64>,
    p: usize,
    prior: &AcpPrior,
) -> Result<f64> {
    Ok(acp_posterior(data, p, prior)?.log_marginal_likelihood())
}

/// Maximize the marginal likelihood over `(kappa1, kappa2)` in
/// `[1e-6, 10]^2` with a coarse log-spaced grid followed by local
/// refinement. Deterministic.
pub fn optimize_shrinkage(
    data: &DMatrix<f64>,
    p: usize,
    template: &AcpPrior,
) -> Result<(f64, f64, f64)> {
    optimize_shrinkage_with_rounds(data, p, template, 3)
}

const KAPPA_MIN: f64 = 1e-6;
const KAPPA_MAX: f64 = 10.0;

fn optimize_shrinkage_with_rounds(
    data: &DMatrix<f64>,
    p: usize,
    template: &AcpPrior,
    rounds: usize,
) -> Result<(f64, f64, f64)> {
    let eval = |k1: f64, k2: f64| -> Result<f64> {
        let prior = AcpPrior {
            kappa1: k1,
            kappa2: k2,
            ..template.clone()
        };
        acp_log_marginal_likelihood(data, p, &prior)
    };

    let log_min = KAPPA_MIN.ln();
    let log_max = KAPPA_MAX.ln();
    let coarse = 15;
    let mut best = (f64::NEG_INFINITY, KAPPA_MIN, KAPPA_MIN);
    for a in 0..coarse {
        let k1 = (log_min + (log_max - log_min) * a as f64 / (coarse - 1) as f64).exp();
        for b in 0..coarse {
            let k2 = (log_min + (log_max - log_min) * b as f64 / (coarse - 1) as f64).exp();
            let ml = eval(k1, k2)?;
            if ml > best.0 {
                best = (ml, k1, k2);
            }
        }
    }

    // Shrinking log-space neighborhood search around the incumbent.
    let mut span = (log_max - log_min) / (coarse - 1) as f64;
    for _ in 0..rounds {
        let (c1, c2) = (best.1.ln(), best.2.ln());
        let fine = 7;
        for a in 0..fine {
            let l1 = (c1 - span + 2.0 * span * a as f64 / (fine - 1) as f64)
                .clamp(log_min, log_max);
            for b in 0..fine {
                let l2 = (c2 - span + 2.0 * span * b as f64 / (fine - 1) as f64)
                    .clamp(log_min, log_max);
                let ml = eval(l1.exp(), l2.exp())?;
                if ml > best.0 {
                    best = (ml, l1.exp(), l2.exp());
                }
            }
        }
        span /= 3.0;
    }
    Ok((best.1, best.2, best.0))
}

/// Independent exact posterior draws assembled into structural parameter
/// sets: unit-lower-triangular contemporaneous matrix, diagonal shock
/// standard deviations.
pub fn acp_draw_params(
    posterior: &AcpPosterior,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    let n = posterior.n;
    let p = posterior.p;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let mut a0 = DMatrix::identity(n, n);
        let mut a = DVector::zeros(n);
        let mut a_lags = vec![DMatrix::zeros(n, n); p];
        let mut scale = DVector::zeros(n);
        for (i, eq) in posterior.equations.iter().enumerate() {
            let gamma = Gamma::new(eq.shape, 1.0).map_err(|_| Error::InvalidPrior(
                format!("non-positive posterior shape for equation {i}"),
            ))?;
            let sigma_sq = eq.rate / rng.sample::<f64, _>(gamma);
            let sigma = sigma_sq.sqrt();
            let d = eq.coef_mean.len();
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dev = eq
                .precision_chol
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or(Error::SingularDiagonal { index: i })?;
            let theta = &eq.coef_mean + sigma * dev;

            for j in 0..i {
                a0[(i, j)] = theta[j];
            }
            a[i] = theta[i];
            for lag in 0..p {
                for j in 0..n {
                    a_lags[lag][(i, j)] = theta[i + 1 + lag * n + j];
                }
            }
            scale[i] = sigma;
        }
        let params = SvarParams {
            n,
            p,
            a0,
            a,
            a_lags,
            shock_scale: Some(scale),
        };
        params.validate()?;
        draws.push(params);
    }
    Ok(PosteriorDraws::Structural {
        draws,
        burn_in: 0,
        thin: 1,
    })
}
