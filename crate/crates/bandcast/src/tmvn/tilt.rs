//! Minimax exponential tilting for exact truncated-normal sampling.
//!
//! For `X ~ N(0, Sigma)` restricted to `l <= X <= u`, write `X = L z` with
//! `L` the lower Cholesky factor. After scaling rows by `diag(L)` the region
//! becomes sequential: `ls_k - (C z)_k <= z_k <= us_k - (C z)_k` with `C`
//! strictly lower triangular. The proposal draws each `z_k` from a unit
//! normal tilted to mean `mu_k` and truncated to those sequential bounds.
//!
//! The tilting vector solves a saddle-point problem: minimize over `mu` the
//! maximum over `x` of
//!
//! ```text
//! psi(x, mu) = sum_k [ ln P(lt_k < Z < ut_k) + mu_k^2 / 2 - x_k mu_k ],
//! lt_k = ls_k - mu_k - (C x)_k,   ut_k = us_k - mu_k - (C x)_k,
//! ```
//!
//! whose stationarity system is solved here by damped Newton. The optimum
//! `psi*` bounds every proposal's log likelihood ratio, so accepting a draw
//! with probability `exp(p - psi*)` yields exact samples, with acceptance
//! rate `P(region) * exp(-psi*) >= P(region)`: tilting never rejects more
//! than untilted proposals would.

use crate::error::{Error, Result};
use crate::tmvn::univariate::{ln_normal_prob, norm_logpdf};
use nalgebra::{DMatrix, DVector};

const MAX_NEWTON_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-8;
/// Regions whose acceptance bound falls below this are reported as
/// numerically improbable rather than sampled.
const LOG_PROB_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Solved tilting problem, ready for proposal generation.
#[derive(Debug, Clone)]
pub struct TiltingSolution {
    /// Unscaled lower Cholesky factor of the covariance.
    pub chol_l: DMatrix<f64>,
    /// Row-scaled factor minus the identity: strictly lower triangular.
    pub c_strict: DMatrix<f64>,
    /// Bounds divided by `diag(L)`.
    pub ls: DVector<f64>,
    pub us: DVector<f64>,
    /// Tilting means; the last entry is pinned to zero.
    pub mu: DVector<f64>,
    /// Saddle value: log of the acceptance bound.
    pub psi_star: f64,
    pub newton_iters: usize,
}

struct Workspace<'a> {
    c: &'a DMatrix<f64>,
    ls: &'a DVector<f64>,
    us: &'a DVector<f64>,
}

impl Workspace<'_> {
    fn dim(&self) -> usize {
        self.ls.len()
    }

    /// Split the stacked unknowns `(x_0..x_{d-2}, mu_0..mu_{d-2})` into full
    /// `d`-vectors with the last coordinate pinned to zero.
    fn unpack(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let mut x = DVector::zeros(d);
        let mut mu = DVector::zeros(d);
        for k in 0..d - 1 {
            x[k] = y[k];
            mu[k] = y[d - 1 + k];
        }
        (x, mu)
    }

    /// Truncation bounds seen by each sequential coordinate at `(x, mu)`.
    fn shifted_bounds(&self, x: &DVector<f64>, mu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let cx = self.c * x;
        let lt = DVector::from_fn(self.dim(), |k, _| self.ls[k] - mu[k] - cx[k]);
        let ut = DVector::from_fn(self.dim(), |k, _| self.us[k] - mu[k] - cx[k]);
        (lt, ut)
    }

    fn psi(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let (lt, ut) = self.shifted_bounds(x, mu);
        let mut total = 0.0;
        for k in 0..self.dim() {
            total += ln_normal_prob(lt[k], ut[k]) + 0.5 * mu[k] * mu[k] - x[k] * mu[k];
        }
        total
    }

    /// Gradient of the stationarity system and the normalized interval
    /// densities needed for the Jacobian.
    fn gradient(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let (x, mu) = self.unpack(y);
        let (lt, ut) = self.shifted_bounds(&x, &mu);
        let mut pl = DVector::zeros(d);
        let mut pu = DVector::zeros(d);
        for k in 0..d {
            let w = ln_normal_prob(lt[k], ut[k]);
            if lt[k].is_finite() {
                pl[k] = (norm_logpdf(lt[k]) - w).exp();
            }
            if ut[k].is_finite() {
                pu[k] = (norm_logpdf(ut[k]) - w).exp();
            }
        }
        let p = &pl - &pu;
        let ctp = self.c.transpose() * &p;
        let mut g = DVector::zeros(2 * (d - 1));
        for k in 0..d - 1 {
            g[k] = ctp[k] - mu[k];
            g[d - 1 + k] = mu[k] - x[k] + p[k];
        }
        // Derivative of p_k w.r.t. the common shift, with tail limits zeroed.
        let dp = DVector::from_fn(d, |k, _| {
            let tl = if lt[k].is_finite() { lt[k] * pl[k] } else { 0.0 };
            let tu = if ut[k].is_finite() { ut[k] * pu[k] } else { 0.0 };
            tl - tu - p[k] * p[k]
        });
        (g, p, dp)
    }

    fn jacobian(&self, dp: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let m = d - 1;
        // Lambda C with Lambda = diag(dp).
        let mut lc = self.c.clone();
        for k in 0..d {
            let s = dp[k];
            for j in 0..d {
                lc[(k, j)] *= s;
            }
        }
        let ctlc = self.c.transpose() * &lc;
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                jac[(i, j)] = ctlc[(i, j)];
                // d g_x / d mu = (C' Lambda) - I.
                jac[(i, m + j)] = lc[(j, i)] - if i == j { 1.0 } else { 0.0 };
                // d g_mu / d x: transpose of the block above.
                jac[(m + i, j)] = lc[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
            jac[(m + i, m + i)] = 1.0 + dp[i];
        }
        jac
    }
}

/// Solve for the tilting parameters given the covariance factor and bounds
/// expressed around a zero mean.
pub fn solve_tilting(
    chol_l: DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<TiltingSolution> {
    let d = chol_l.nrows();
    let mut ls = DVector::zeros(d);
    let mut us = DVector::zeros(d);
    let mut c_strict = DMatrix::zeros(d, d);
    for k in 0..d {
        let dk = chol_l[(k, k)];
        if !(dk > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: k,
                value: dk,
            });
        }
        ls[k] = lower[k] / dk;
        us[k] = upper[k] / dk;
        for j in 0..k {
            c_strict[(k, j)] = chol_l[(k, j)] / dk;
        }
    }

    let ws = Workspace {
        c: &c_strict,
        ls: &ls,
        us: &us,
    };

    if d == 1 {
        let psi_star = ln_normal_prob(ls[0], us[0]);
        if psi_star < LOG_PROB_FLOOR {
            return Err(Error::RegionTooImprobable {
                log_bound: psi_star,
            });
        }
        return Ok(TiltingSolution {
            chol_l,
            c_strict,
            ls,
            us,
            mu: DVector::zeros(1),
            psi_star,
            newton_iters: 0,
        });
    }

    let mut y = DVector::zeros(2 * (d - 1));
    let (mut g, _, mut dp) = ws.gradient(&y);
    let mut gnorm = g.norm();
    let mut iters = 0;
    while gnorm > GRAD_TOL {
        if iters >= MAX_NEWTON_ITERS {
            return Err(Error::TiltingDiverged {
                iters,
                grad_norm: gnorm,
            });
        }
        iters += 1;
        let jac = ws.jacobian(&dp);
        let delta = match jac.lu().solve(&(-&g)) {
            Some(s) => s,
            None => {
                return Err(Error::TiltingDiverged {
                    iters,
                    grad_norm: gnorm,
                })
            }
        };
        // Damped step: halve until the residual norm decreases.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let y_try = &y + alpha * &delta;
            let (g_try, _, dp_try) = ws.gradient(&y_try);
            let gn_try = g_try.norm();
            if gn_try.is_finite() && gn_try < gnorm {
                y = y_try;
                g = g_try;
                dp = dp_try;
                gnorm = gn_try;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return Err(Error::TiltingDiverged {
                iters,
                grad_norm: gnorm,
            });
        }
    }

    let (x, mu) = ws.unpack(&y);
    let psi_star = ws.psi(&x, &mu);
    if !psi_star.is_finite() || psi_star < LOG_PROB_FLOOR {
        return Err(Error::RegionTooImprobable {
            log_bound: psi_star,
        });
    }
    Ok(TiltingSolution {
        chol_l,
        c_strict,
        ls,
        us,
        mu,
        psi_star,
        newton_iters: iters,
    })
}
