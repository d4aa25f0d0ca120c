//! Structural VAR parameters and the stacked forecast system.
//!
//! A structural VAR(p) with unit-variance shocks,
//!
//! ```text
//! A0 y_t = a + A_1 y_{t-1} + ... + A_p y_{t-p} + eps_t,   eps_t ~ N(0, I_n),
//! ```
//!
//! stacked over forecast horizons t = T+1 .. T+h, gives one banded linear
//! system `H y = c + eps` with `eps ~ N(0, I_nh)`. `H` carries `A0` on its
//! block diagonal and `-A_j` on the j-th block subdiagonal, so the whole
//! forecast distribution is `y ~ N(H^{-1} c, (H'H)^{-1})` with a banded
//! precision `H'H`. Every sampler in this crate works off that structure.
//!
//! Coordinates are variable-major within horizon: flat index
//! `k = variable + n * (horizon - 1)`.

use crate::band::{BandCholesky, BandMatrix};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::OnceLock;

/// Structural parameterization: `A0 y_t = a + sum_j A_j y_{t-j} + eps_t`.
///
/// `shock_scale`, when present, holds the standard deviation of each
/// equation's shock; `build_forecast_system` rescales rows so the stacked
/// system always has unit shocks.
#[derive(Debug, Clone)]
pub struct SvarParams {
    pub n: usize,
    pub p: usize,
    pub a0: DMatrix<f64>,
    pub a: DVector<f64>,
    pub a_lags: Vec<DMatrix<f64>>,
    pub shock_scale: Option<DVector<f64>>,
}

/// Reduced-form parameterization: `y_t = b + sum_j B_j y_{t-j} + u_t`,
/// `u_t ~ N(0, Sigma)`.
#[derive(Debug, Clone)]
pub struct ReducedParams {
    pub n: usize,
    pub p: usize,
    pub b: DVector<f64>,
    pub b_lags: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
}

impl SvarParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.a0.nrows() != n || self.a0.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A0 is {}x{}, expected {n}x{n}",
                self.a0.nrows(),
                self.a0.ncols()
            )));
        }
        if self.a.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "intercept has length {}, expected {n}",
                self.a.len()
            )));
        }
        if self.a_lags.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "{} lag matrices for lag order {}",
                self.a_lags.len(),
                self.p
            )));
        }
        for (j, aj) in self.a_lags.iter().enumerate() {
            if aj.nrows() != n || aj.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "A{} is {}x{}, expected {n}x{n}",
                    j + 1,
                    aj.nrows(),
                    aj.ncols()
                )));
            }
        }
        if let Some(s) = &self.shock_scale {
            if s.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "shock scale has length {}, expected {n}",
                    s.len()
                )));
            }
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::SingularShockLoading);
            }
        }
        Ok(())
    }

    /// Map back to the reduced form: `B_j = A0^{-1} A_j`, `b = A0^{-1} a`,
    /// `Sigma = A0^{-1} D A0^{-1}'` with `D = diag(shock_scale^2)` (or I).
    pub fn to_reduced(&self) -> Result<ReducedParams> {
        self.validate()?;
        let a0_inv = self
            .a0
            .clone()
            .try_inverse()
            .ok_or(Error::SingularShockLoading)?;
        let b = &a0_inv * &self.a;
        let b_lags = self.a_lags.iter().map(|aj| &a0_inv * aj).collect();
        let d = match &self.shock_scale {
            Some(s) => DMatrix::from_diagonal(&s.map(|v| v * v)),
            None => DMatrix::identity(self.n, self.n),
        };
        let sigma = &a0_inv * d * a0_inv.transpose();
        Ok(ReducedParams {
            n: self.n,
            p: self.p,
            b,
            b_lags,
            sigma,
        })
    }
}

/// Convert a reduced-form draw to the structural form with unit shocks:
/// `A0 = chol(Sigma)^{-1}` (inverse of the lower Cholesky factor), then
/// `a = A0 b` and `A_j = A0 B_j`.
pub fn reduced_to_structural(r: &ReducedParams) -> Result<SvarParams> {
    let n = r.n;
    if r.sigma.nrows() != n || r.sigma.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Sigma is {}x{}, expected {n}x{n}",
            r.sigma.nrows(),
            r.sigma.ncols()
        )));
    }
    let chol = nalgebra::Cholesky::new(r.sigma.clone()).ok_or(Error::NotPositiveDefinite {
        index: 0,
        value: f64::NAN,
    })?;
    // Lower triangular inverse via back-substitution on the identity.
    let l = chol.l();
    let a0 = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::SingularShockLoading)?;
    let a = &a0 * &r.b;
    let a_lags = r.b_lags.iter().map(|bj| &a0 * bj).collect();
    let out = SvarParams {
        n,
        p: r.p,
        a0,
        a,
        a_lags,
        shock_scale: None,
    };
    out.validate()?;
    Ok(out)
}

/// The stacked forecast system `H y = c + eps`, `eps ~ N(0, I_nh)`.
///
/// Factorizations of the banded precision `H'H` are computed once on demand
/// and shared; the struct is immutable after construction.
#[derive(Debug)]
pub struct ForecastSystem {
    n: usize,
    p: usize,
    h: usize,
    h_mat: BandMatrix,
    c: DVector<f64>,
    gram: OnceLock<BandMatrix>,
    gram_chol: OnceLock<Option<BandCholesky>>,
}

/// Build the stacked system for `horizon` steps ahead.
///
/// `history` holds at least `p` observations in ascending time order with the
/// last entry being the final observed period; only the last `p` are used.
pub fn build_forecast_system(
    params: &SvarParams,
    history: &[DVector<f64>],
    horizon: usize,
) -> Result<ForecastSystem> {
    params.validate()?;
    let n = params.n;
    let p = params.p;
    if horizon == 0 {
        return Err(Error::DimensionMismatch(
            "forecast horizon must be at least 1".into(),
        ));
    }
    if history.len() < p {
        return Err(Error::InsufficientHistory {
            got: history.len(),
            need: p,
        });
    }
    for (t, y) in history.iter().enumerate() {
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "history row {t} has length {}, expected {n}",
                y.len()
            )));
        }
    }

    let nh = n * horizon;
    let lower = n * p + n.saturating_sub(1);
    let upper = n.saturating_sub(1);
    let mut h_mat = BandMatrix::zeros(nh, lower, upper);
    let mut c = DVector::zeros(nh);

    let last = history.len(); // history[last - 1] is the final observation
    for t0 in 0..horizon {
        let r0 = t0 * n;
        // Diagonal block: A0.
        for a in 0..n {
            for b in 0..n {
                let v = params.a0[(a, b)];
                if v != 0.0 {
                    h_mat.set(r0 + a, r0 + b, v);
                }
            }
        }
        // Subdiagonal blocks: -A_j for lags that point inside the forecast
        // window.
        for j in 1..=p.min(t0) {
            let c0 = (t0 - j) * n;
            let aj = &params.a_lags[j - 1];
            for a in 0..n {
                for b in 0..n {
                    let v = aj[(a, b)];
                    if v != 0.0 {
                        h_mat.set(r0 + a, c0 + b, -v);
                    }
                }
            }
        }
        // Constant block: a plus the lag terms that reach back into history.
        let t = t0 + 1;
        let mut block = params.a.clone();
        for j in t..=p {
            // y_{T + t - j}: t - j <= 0 here, so this is an observed row.
            let idx = (last as isize - 1 + t as isize - j as isize) as usize;
            block += &params.a_lags[j - 1] * &history[idx];
        }
        for a in 0..n {
            c[r0 + a] = block[a];
        }
    }

    // Fold non-unit shock scales into the system: dividing each equation row
    // by its shock standard deviation leaves eps ~ N(0, I).
    if let Some(scale) = &params.shock_scale {
        for t0 in 0..horizon {
            let r0 = t0 * n;
            for e in 0..n {
                let r = r0 + e;
                let s = scale[e];
                let (lo, hi) = h_mat.row_range(r);
                for col in lo..=hi {
                    let v = h_mat.get(r, col);
                    if v != 0.0 {
                        h_mat.set(r, col, v / s);
                    }
                }
                c[r] /= s;
            }
        }
    }

    Ok(ForecastSystem {
        n,
        p,
        h: horizon,
        h_mat,
        c,
        gram: OnceLock::new(),
        gram_chol: OnceLock::new(),
    })
}

impl ForecastSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn horizon(&self) -> usize {
        self.h
    }

    pub fn nh(&self) -> usize {
        self.n * self.h
    }

    pub fn h_mat(&self) -> &BandMatrix {
        &self.h_mat
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Flat coordinate of `variable` at forecast step `horizon` (1-based).
    pub fn coord(&self, variable: usize, horizon: usize) -> usize {
        debug_assert!(variable < self.n && horizon >= 1 && horizon <= self.h);
        variable + self.n * (horizon - 1)
    }

    /// Banded precision `H'H`, trimmed to its tight bandwidth.
    pub fn gram(&self) -> &BandMatrix {
        self.gram.get_or_init(|| self.h_mat.gram().trim_bandwidth())
    }

    /// Cholesky factor of `H'H`.
    pub fn gram_chol(&self) -> Result<&BandCholesky> {
        let cached = self
            .gram_chol
            .get_or_init(|| self.gram().cholesky().ok());
        match cached {
            Some(c) => Ok(c),
            // Rare failure path: recompute to surface the original error.
            None => Err(self.gram().cholesky().err().unwrap_or(
                Error::NotPositiveDefinite {
                    index: 0,
                    value: f64::NAN,
                },
            )),
        }
    }

    /// `H^{-1} v`, computed as `(H'H)^{-1} H' v` so the one SPD factorization
    /// serves all solves with `H`.
    pub fn apply_hinv(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let hv = self.h_mat.matvec_t(v);
        self.gram_chol()?.solve(&hv)
    }

    /// `H'^{-1} v = H (H'H)^{-1} v`.
    pub fn apply_hinv_t(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.gram_chol()?.solve(v)?;
        Ok(self.h_mat.matvec(&w))
    }

    /// Unconditional forecast distribution: mean `H^{-1} c` and banded
    /// precision `H'H`.
    pub fn unconditional_moments(&self) -> Result<(DVector<f64>, BandMatrix)> {
        let mean = self.apply_hinv(&self.c)?;
        Ok((mean, self.gram().clone()))
    }

    /// `log |det H|`, from the banded factorization of `H'H`.
    pub fn log_abs_det_h(&self) -> Result<f64> {
        Ok(0.5 * self.gram_chol()?.log_det())
    }

    /// Shocks implied by a path: `eps = H y - c`.
    pub fn shocks_of(&self, y: &DVector<f64>) -> DVector<f64> {
        self.h_mat.matvec(y) - &self.c
    }
}
