//! Bayesian estimation backends for the VAR.
//!
//! Two options with different tradeoffs: a Gibbs sampler under independent
//! normal and inverse-Wishart priors (general but iterative), and an
//! equation-by-equation conjugate prior with Minnesota-style shrinkage whose
//! posterior and marginal likelihood are available in closed form.

pub mod acp;
pub mod niw;

use crate::error::{Error, Result};
use crate::var::{ReducedParams, SvarParams};
use nalgebra::{DMatrix, DVector};

/// Default Gibbs retention settings; callers may override.
pub const DEFAULT_BURN_IN: usize = 10_000;
pub const DEFAULT_DRAWS: usize = 25_000;

/// Retained posterior parameter draws from either backend.
#[derive(Debug, Clone)]
pub enum PosteriorDraws {
    Reduced {
        draws: Vec<ReducedParams>,
        burn_in: usize,
        thin: usize,
    },
    Structural {
        draws: Vec<SvarParams>,
        burn_in: usize,
        thin: usize,
    },
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        match self {
            PosteriorDraws::Reduced { draws, .. } => draws.len(),
            PosteriorDraws::Structural { draws, .. } => draws.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Structural parameter sets ready for forecast-system assembly.
    pub fn into_structural(self) -> Result<Vec<SvarParams>> {
        match self {
            PosteriorDraws::Structural { draws, .. } => Ok(draws),
            PosteriorDraws::Reduced { draws, .. } => draws
                .into_iter()
                .map(|r| crate::var::reduced_to_structural(&r))
                .collect(),
        }
    }
}

/// Stacked regression form of a VAR(p): responses `Y` (one row per period
/// from `p` onward) and regressors `X` with rows `(1, y'_{t-1}, ..., y'_{t-p})`.
pub(crate) fn build_regression(data: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = data.nrows();
    let n = data.ncols();
    let t_eff = t.saturating_sub(p);
    let k = 1 + n * p;
    let mut x = DMatrix::zeros(t_eff, k);
    let mut y = DMatrix::zeros(t_eff, n);
    for row in 0..t_eff {
        let time = p + row;
        x[(row, 0)] = 1.0;
        for lag in 1..=p {
            for j in 0..n {
                x[(row, 1 + (lag - 1) * n + j)] = data[(time - lag, j)];
            }
        }
        for j in 0..n {
            y[(row, j)] = data[(time, j)];
        }
    }
    (x, y)
}

/// Residual sample variance of a univariate AR(p) with intercept, fit by
/// least squares. Used to calibrate shrinkage scales.
pub(crate) fn ar_residual_variance(series: &DVector<f64>, p: usize) -> Result<f64> {
    let t = series.len();
    let k = p + 1;
    if t < p + k + 1 {
        return Err(Error::InsufficientData(format!(
            "AR({p}) residual variance needs at least {} observations, got {t}",
            p + k + 1
        )));
    }
    let t_eff = t - p;
    let mut x = DMatrix::zeros(t_eff, k);
    let mut y = DVector::zeros(t_eff);
    for row in 0..t_eff {
        x[(row, 0)] = 1.0;
        for lag in 1..=p {
            x[(row, lag)] = series[p + row - lag];
        }
        y[row] = series[p + row];
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let coef = nalgebra::Cholesky::new(xtx)
        .ok_or_else(|| Error::InsufficientData("collinear AR regressors".into()))?
        .solve(&xty);
    let resid = y - x * coef;
    let dof = t_eff.saturating_sub(k).max(1) as f64;
    let var = resid.norm_squared() / dof;
    if var > 0.0 {
        Ok(var)
    } else {
        Err(Error::InsufficientData(
            "AR residual variance is zero; series may be constant".into(),
        ))
    }
}
