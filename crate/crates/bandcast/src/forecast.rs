//! Forecast simulation for the stacked banded system `H y = c + eps`.
//!
//! Draws come in five flavors: unconditional, exact pins on future
//! coordinates, general Gaussian restrictions `R y ~ N(r, Omega)`, interval
//! restrictions on future coordinates, and restrictions on structural shocks
//! (including scenarios that hold designated shocks at their standard-normal
//! law). Every sampler works off the banded precision `H'H`; dense algebra
//! enters only through the restriction rows themselves.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::band::{BandCholesky, BandMatrix, SelectionMatrix};
use crate::error::{Error, Result};
use crate::estimation::PosteriorDraws;
use crate::tmvn::{self, TruncatedGaussianSpec};
use crate::var::{build_forecast_system, ForecastSystem};

/// Burn-in used when the tilted sampler fails to converge and the interval
/// stage falls back to coordinate-wise Gibbs.
const GIBBS_FALLBACK_BURN_IN: usize = 1_000;

/// Stage-1 sampler for the selected block of an interval restriction. The
/// default tilted accept-reject falls back to Gibbs only when the tilting
/// solver diverges; the explicit variants exist so the benchmark harness can
/// time each stage-1 method under identical stage-2 work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IntervalSampler {
    TiltedWithGibbsFallback,
    Gibbs { burn_in: usize },
    Naive { max_proposals: usize },
}

/// Exact pins: selected future coordinates fixed to `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityConstraint {
    pub rows: SelectionMatrix,
    pub values: DVector<f64>,
}

/// Gaussian restriction `R y ~ N(mean, cov)` on linear combinations of the
/// stacked forecast vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConstraint {
    pub rows: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Interval restriction: selected coordinates confined to `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityConstraint {
    pub rows: SelectionMatrix,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Restriction `W eps ~ N(mean, cov)` on the stacked structural shocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockRestriction {
    pub rows: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Bundle of restrictions applied jointly to one forecast run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    pub equality: Option<EqualityConstraint>,
    pub gaussian: Option<GaussianConstraint>,
    pub inequality: Option<InequalityConstraint>,
    pub shocks: Option<ShockRestriction>,
    /// Shock coordinates forced to keep their standard-normal law while the
    /// remaining shocks absorb the observable restrictions.
    pub scenario_nondriving: Option<SelectionMatrix>,
}

impl ConstraintSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.equality.is_none()
            && self.gaussian.is_none()
            && self.inequality.is_none()
            && self.shocks.is_none()
            && self.scenario_nondriving.is_none()
    }

    /// Structural checks against a stacked dimension `nh`: shapes, distinct
    /// selection coordinates, ordered bounds, symmetric PSD covariances, and
    /// disjointness of the pinned and interval coordinate sets.
    pub fn validate(&self, nh: usize) -> Result<()> {
        if let Some(eq) = &self.equality {
            check_selection(&eq.rows, nh)?;
            if eq.values.len() != eq.rows.n_rows() {
                return Err(Error::DimensionMismatch(format!(
                    "equality has {} rows but {} values",
                    eq.rows.n_rows(),
                    eq.values.len()
                )));
            }
        }
        if let Some(g) = &self.gaussian {
            check_gaussian_rows(&g.rows, &g.mean, &g.cov, nh)?;
        }
        if let Some(iq) = &self.inequality {
            check_selection(&iq.rows, nh)?;
            check_bounds(&iq.rows, &iq.lower, &iq.upper)?;
        }
        if let Some(sh) = &self.shocks {
            check_gaussian_rows(&sh.rows, &sh.mean, &sh.cov, nh)?;
        }
        if let Some(w) = &self.scenario_nondriving {
            check_selection(w, nh)?;
        }
        if let (Some(eq), Some(iq)) = (&self.equality, &self.inequality) {
            for &c in iq.rows.rows() {
                if eq.rows.rows().contains(&c) {
                    return Err(Error::OverlappingConstraints { coord: c });
                }
            }
        }
        Ok(())
    }
}

fn check_selection(sel: &SelectionMatrix, nh: usize) -> Result<()> {
    if sel.n_cols() != nh {
        return Err(Error::DimensionMismatch(format!(
            "selection over {} coordinates does not match system dimension {}",
            sel.n_cols(),
            nh
        )));
    }
    if !sel.is_injective() {
        let mut seen = vec![false; nh];
        for &c in sel.rows() {
            if seen[c] {
                return Err(Error::OverlappingConstraints { coord: c });
            }
            seen[c] = true;
        }
    }
    Ok(())
}

fn check_bounds(sel: &SelectionMatrix, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<()> {
    if lower.len() != sel.n_rows() || upper.len() != sel.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} interval rows but {} lower and {} upper bounds",
            sel.n_rows(),
            lower.len(),
            upper.len()
        )));
    }
    for i in 0..lower.len() {
        if !(lower[i] < upper[i]) {
            return Err(Error::EmptyRegion { index: i });
        }
    }
    Ok(())
}

fn check_gaussian_rows(
    rows: &DMatrix<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    nh: usize,
) -> Result<()> {
    if rows.nrows() > 0 && rows.ncols() != nh {
        return Err(Error::DimensionMismatch(format!(
            "restriction rows have {} columns, system dimension is {}",
            rows.ncols(),
            nh
        )));
    }
    if mean.len() != rows.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} restriction rows but {} target values",
            rows.nrows(),
            mean.len()
        )));
    }
    check_symmetric_psd(cov, rows.nrows())
}

/// Symmetric within `1e-10` of scale and eigenvalues above `-1e-10` of scale.
fn check_symmetric_psd(m: &DMatrix<f64>, expect_dim: usize) -> Result<()> {
    if m.nrows() != expect_dim || m.ncols() != expect_dim {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, expected {expect_dim}x{expect_dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    if expect_dim == 0 {
        return Ok(());
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { max_asym: asym });
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let lmax = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l))
        .max(1.0);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -1e-10 * lmax {
            return Err(Error::NotPositiveDefinite { index: i, value: l });
        }
    }
    Ok(())
}

/// Factor of `I + shift` where `shift = basis * m * basis'` has low rank.
/// The action `u -> u + basis * mixer * basis' u` applies a square root of
/// `I + shift` to a standard-normal vector.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    /// Orthonormal columns spanning the restricted shock directions.
    pub basis: DMatrix<f64>,
    /// `C - I` where `C C' = I_k + M` on the restricted subspace.
    pub mixer: DMatrix<f64>,
    /// Number of restricted directions kept by the rank cut.
    pub rank: usize,
    /// Eigenvalues clipped to zero while factoring.
    pub clipped: usize,
}

impl CovarianceFactor {
    fn identity(dim: usize) -> Self {
        Self {
            basis: DMatrix::zeros(dim, 0),
            mixer: DMatrix::zeros(0, 0),
            rank: 0,
            clipped: 0,
        }
    }

    /// `u + basis * mixer * (basis' u)`.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        if self.rank == 0 {
            return u.clone();
        }
        let proj = self.basis.tr_mul(u);
        u + &self.basis * (&self.mixer * proj)
    }
}

/// Mean and shock-distribution adjustment implied by a Gaussian restriction.
///
/// The restricted shocks are `eps ~ N(shift_mean, I + shift_cov)` and the
/// forecast solves `H y = c + eps`, so the forecast mean is `mu_y` and the
/// forecast covariance is `H^{-1}(I + shift_cov)H^{-T}`.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub mu_y: DVector<f64>,
    pub shift_mean: DVector<f64>,
    pub shift_cov: DMatrix<f64>,
    pub factor: CovarianceFactor,
}

impl ConditionalMoments {
    /// Dense forecast covariance `H^{-1}(I + shift_cov)H^{-T}`. Intended for
    /// oracles and small systems; cost is one pair of banded solves per
    /// column.
    pub fn covariance(&self, f: &ForecastSystem) -> Result<DMatrix<f64>> {
        let nh = f.nh();
        let mut out = DMatrix::zeros(nh, nh);
        for j in 0..nh {
            let mut e = DVector::zeros(nh);
            e[j] = 1.0;
            let v = f.apply_hinv_t(&e)?;
            let w = &v + &self.shift_cov * &v;
            out.set_column(j, &f.apply_hinv(&w)?);
        }
        Ok((out.clone() + out.transpose()) * 0.5)
    }
}

/// A batch of simulated forecast paths, one per row, with the flat coordinate
/// layout `variable + n * (horizon - 1)` recorded in `labels`.
#[derive(Debug, Clone)]
pub struct ForecastDraws {
    pub draws: DMatrix<f64>,
    /// `(variable, horizon)` of each column; horizons start at 1.
    pub labels: Vec<(usize, usize)>,
    /// Seed that produced each row, one entry per draw.
    pub per_draw_seed: Vec<u64>,
}

impl ForecastDraws {
    fn new(n_vars: usize, draws: DMatrix<f64>, per_draw_seed: Vec<u64>) -> Self {
        let labels = (0..draws.ncols())
            .map(|j| (j % n_vars, j / n_vars + 1))
            .collect();
        Self {
            draws,
            labels,
            per_draw_seed,
        }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.draws.nrows() as f64;
        DVector::from_fn(self.draws.ncols(), |j, _| self.draws.column(j).sum() / n)
    }

    /// Per-coordinate unbiased sample variance.
    pub fn variance(&self) -> DVector<f64> {
        let n = self.draws.nrows() as f64;
        let mu = self.mean();
        DVector::from_fn(self.draws.ncols(), |j, _| {
            self.draws
                .column(j)
                .iter()
                .map(|v| (v - mu[j]).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        })
    }
}

fn standard_normals(rng: &mut ChaCha12Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Mixes a run seed with a parameter-draw index; index 0 keeps the seed so a
/// single-parameter run matches the direct sampler call.
fn derive_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Unconditional forecast paths: solve `H y = c + u` with `u ~ N(0, I)`
/// through the cached factorization of `H'H`.
pub fn draw_unconditional(f: &ForecastSystem, n_draws: usize, seed: u64) -> Result<ForecastDraws> {
    let nh = f.nh();
    let chol = f.gram_chol()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n_draws, nh);
    for i in 0..n_draws {
        let u = standard_normals(&mut rng, nh);
        let rhs = f.h_mat().matvec_t(&(f.c() + &u));
        let y = chol.solve(&rhs)?;
        draws.row_mut(i).copy_from(&y.transpose());
    }
    Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]))
}

/// Rows of `R H^{-1}`, one transposed banded solve per restriction row.
fn rows_times_hinv(f: &ForecastSystem, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(r.nrows(), r.ncols());
    for i in 0..r.nrows() {
        let ri: DVector<f64> = r.row(i).transpose();
        let ai = f.apply_hinv_t(&ri)?;
        a.row_mut(i).copy_from(&ai.transpose());
    }
    Ok(a)
}

/// Moments of the forecast distribution under `R y ~ N(r, Omega)`.
///
/// Writes the restriction on the shocks through `A = R H^{-1}`, picks the
/// smallest mean shift `A^+ (r - A c)` and the smallest symmetric covariance
/// adjustment solving `A (I + shift) A' = Omega`, both via a rank-revealing
/// singular value decomposition of `A` (cut at `max_dim * eps * sigma_max`).
pub fn conditional_moments_linear(
    f: &ForecastSystem,
    r_mat: &DMatrix<f64>,
    r_vec: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<ConditionalMoments> {
    let nh = f.nh();
    let rows = r_mat.nrows();
    if rows > nh {
        return Err(Error::InconsistentSystem { rows, dim: nh });
    }
    if rows > 0 && r_mat.ncols() != nh {
        return Err(Error::DimensionMismatch(format!(
            "restriction rows have {} columns, system dimension is {}",
            r_mat.ncols(),
            nh
        )));
    }
    if r_vec.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{rows} restriction rows but {} target values",
            r_vec.len()
        )));
    }
    check_symmetric_psd(omega, rows)?;
    if rows == 0 {
        return Ok(ConditionalMoments {
            mu_y: f.apply_hinv(f.c())?,
            shift_mean: DVector::zeros(nh),
            shift_cov: DMatrix::zeros(nh, nh),
            factor: CovarianceFactor::identity(nh),
        });
    }

    let a = rows_times_hinv(f, r_mat)?;
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().expect("svd with u requested");
    let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
    let smax = svd.singular_values.amax();
    let tol = rows.max(nh) as f64 * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < rows {
        return Err(Error::RankDeficient { rank, rows });
    }
    let k = rank;
    let u_k = u.columns(0, k).into_owned();
    let v_k = v_t.rows(0, k).transpose().into_owned();
    let s_k = svd.singular_values.rows(0, k).into_owned();

    // Mean shift: pseudoinverse applied to the target gap.
    let gap = r_vec - &a * f.c();
    let mut w = u_k.tr_mul(&gap);
    for i in 0..k {
        w[i] /= s_k[i];
    }
    let shift_mean = &v_k * w;

    // Covariance adjustment on the restricted subspace:
    // M = S^{-1} U' Omega U S^{-1} - I_k, then factor I_k + M.
    let b = u_k.tr_mul(omega) * &u_k;
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] = b[(i, j)] / (s_k[i] * s_k[j]) - if i == j { 1.0 } else { 0.0 };
        }
    }
    let ik_plus_m = {
        let mut t = m.clone();
        for i in 0..k {
            t[(i, i)] += 1.0;
        }
        (t.clone() + t.transpose()) * 0.5
    };
    let eig = SymmetricEigen::new(ik_plus_m);
    let lmax = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l))
        .max(1.0);
    let mut clipped = 0usize;
    let mut lam = eig.eigenvalues.clone();
    for i in 0..k {
        if lam[i] < -1e-10 * lmax {
            return Err(Error::IndefiniteShockCov {
                eigenvalue: lam[i],
            });
        }
        if lam[i] < 0.0 {
            clipped += 1;
        }
        lam[i] = lam[i].max(0.0).sqrt();
    }
    // C = Q sqrt(Lambda) Q', symmetric square root of I_k + M.
    let q = &eig.eigenvectors;
    let mut c_root = DMatrix::zeros(k, k);
    for (j, col) in q.column_iter().enumerate() {
        let scaled = col * lam[j];
        c_root += scaled * col.transpose();
    }
    let mut mixer = c_root;
    for i in 0..k {
        mixer[(i, i)] -= 1.0;
    }

    let shift_cov = &v_k * &m * v_k.transpose();
    let mu_y = f.apply_hinv(&(f.c() + &shift_mean))?;
    Ok(ConditionalMoments {
        mu_y,
        shift_mean,
        shift_cov,
        factor: CovarianceFactor {
            basis: v_k,
            mixer,
            rank: k,
            clipped,
        },
    })
}

/// Forecast paths under a Gaussian restriction: draw the adjusted shocks
/// `eps = shift_mean + F u` with `F F' = I + shift_cov`, then solve
/// `H y = c + eps`.
pub fn draw_conditional_linear(
    f: &ForecastSystem,
    moments: &ConditionalMoments,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    let nh = f.nh();
    if moments.mu_y.len() != nh || moments.shift_mean.len() != nh {
        return Err(Error::DimensionMismatch(format!(
            "moments of dimension {} against system dimension {nh}",
            moments.mu_y.len()
        )));
    }
    let chol = f.gram_chol()?;
    let shifted_c = f.c() + &moments.shift_mean;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n_draws, nh);
    for i in 0..n_draws {
        let u = standard_normals(&mut rng, nh);
        let eps = moments.factor.apply(&u);
        let rhs = f.h_mat().matvec_t(&(&shifted_c + eps));
        let y = chol.solve(&rhs)?;
        draws.row_mut(i).copy_from(&y.transpose());
    }
    Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]))
}

/// Exact conditional law of the free coordinates given pinned ones.
///
/// With pinned block `o` and free block `u`, the free coordinates are
/// `N(mean, precision^{-1})` where `precision` is the principal submatrix of
/// `H'H` on the free block; the precision stays banded, which is what makes
/// the pinned-coordinate sampler cheap.
#[derive(Debug, Clone)]
pub struct EqualityMoments {
    /// Ascending free-coordinate indices into the stacked vector.
    pub free_coords: Vec<usize>,
    /// Conditional mean over the free coordinates.
    pub mean: DVector<f64>,
    /// Banded conditional precision over the free coordinates.
    pub precision: BandMatrix,
}

pub fn equality_conditional_moments(
    f: &ForecastSystem,
    rows: &SelectionMatrix,
    values: &DVector<f64>,
) -> Result<EqualityMoments> {
    let nh = f.nh();
    check_selection(rows, nh)?;
    if values.len() != rows.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} pinned coordinates but {} values",
            rows.n_rows(),
            values.len()
        )));
    }
    let free_coords = rows.complement_rows();
    if free_coords.is_empty() {
        return Ok(EqualityMoments {
            free_coords,
            mean: DVector::zeros(0),
            precision: BandMatrix::zeros(0, 0, 0),
        });
    }
    let k_u = f.gram().principal_submatrix(&free_coords)?;
    let s_u = SelectionMatrix::new(nh, free_coords.clone())?;
    // K_u mu_u = selected rows of H'c - (H'H) * pinned path.
    let htc = f.h_mat().matvec_t(f.c());
    let pinned = rows.embed(values);
    let rhs = s_u.select(&(htc - f.gram().matvec(&pinned)));
    let mean = k_u.cholesky()?.solve(&rhs)?;
    Ok(EqualityMoments {
        free_coords,
        mean,
        precision: k_u,
    })
}

/// Forecast paths with selected coordinates pinned exactly: free coordinates
/// come from the banded conditional precision, pinned ones are copied in.
/// An empty pin set reproduces `draw_unconditional` draw for draw.
pub fn draw_conditional_equality(
    f: &ForecastSystem,
    rows: &SelectionMatrix,
    values: &DVector<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    if rows.n_rows() == 0 {
        return draw_unconditional(f, n_draws, seed);
    }
    let nh = f.nh();
    let m = equality_conditional_moments(f, rows, values)?;
    let pinned = rows.embed(values);
    let mut draws = DMatrix::zeros(n_draws, nh);
    if m.free_coords.is_empty() {
        for i in 0..n_draws {
            draws.row_mut(i).copy_from(&pinned.transpose());
        }
        return Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]));
    }
    let chol_u = m.precision.cholesky()?;
    let s_u = SelectionMatrix::new(nh, m.free_coords.clone())?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in 0..n_draws {
        let z = standard_normals(&mut rng, m.free_coords.len());
        let free = &m.mean + chol_u.solve_transposed(&z)?;
        let y = s_u.embed(&free) + &pinned;
        draws.row_mut(i).copy_from(&y.transpose());
    }
    Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]))
}

/// Draws from `N(mean, K^{-1})` truncated to a box on selected coordinates.
///
/// Stage 1 samples the selected block from its marginal, a dense truncated
/// Gaussian of the block's size (tilted accept-reject, Gibbs fallback when
/// the tilting solver diverges). Stage 2 draws the remaining coordinates from
/// their banded conditional precision given the block.
#[allow(clippy::too_many_arguments)]
fn truncated_precision_draws(
    k: &BandMatrix,
    chol: &BandCholesky,
    mean: &DVector<f64>,
    sel: &SelectionMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    n_draws: usize,
    seed: u64,
    sampler: IntervalSampler,
) -> Result<DMatrix<f64>> {
    let dim = k.dim();
    let s = sel.n_rows();
    debug_assert!(s > 0, "caller handles the unconstrained case");

    // Marginal covariance of the selected block: selected rows and columns
    // of K^{-1}, one banded solve per selected coordinate.
    let mut sigma_oo = DMatrix::zeros(s, s);
    for j in 0..s {
        let mut e = DVector::zeros(dim);
        e[sel.rows()[j]] = 1.0;
        let col = chol.solve(&e)?;
        for i in 0..s {
            sigma_oo[(i, j)] = col[sel.rows()[i]];
        }
    }
    let sigma_oo = (sigma_oo.clone() + sigma_oo.transpose()) * 0.5;
    let mu_o = sel.select(mean);
    let spec = TruncatedGaussianSpec::with_covariance(
        mu_o.clone(),
        sigma_oo,
        lower.clone(),
        upper.clone(),
    );
    let stage1 = match sampler {
        IntervalSampler::TiltedWithGibbsFallback => {
            match tmvn::sample_tilted(&spec, n_draws, seed) {
                Ok(d) => d,
                Err(Error::TiltingDiverged { .. }) => {
                    tmvn::sample_gibbs(&spec, n_draws, GIBBS_FALLBACK_BURN_IN, seed)?
                }
                Err(e) => return Err(e),
            }
        }
        IntervalSampler::Gibbs { burn_in } => tmvn::sample_gibbs(&spec, n_draws, burn_in, seed)?,
        IntervalSampler::Naive { max_proposals } => {
            tmvn::sample_naive(&spec, n_draws, max_proposals, seed)?
        }
    };

    let mut out = DMatrix::zeros(n_draws, dim);
    if s == dim {
        for i in 0..n_draws {
            let yo: DVector<f64> = stage1.draws.row(i).transpose();
            out.row_mut(i).copy_from(&sel.embed(&yo).transpose());
        }
        return Ok(out);
    }

    let free = sel.complement_rows();
    let k_uu = k.principal_submatrix(&free)?;
    let chol_uu = k_uu.cholesky()?;
    let s_u = SelectionMatrix::new(dim, free)?;
    // Stream 1 keeps the conditional noise independent of the stage-1 stream.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1);
    for i in 0..n_draws {
        let yo: DVector<f64> = stage1.draws.row(i).transpose();
        let delta_o = &yo - &mu_o;
        let w = k.matvec(&sel.embed(&delta_o));
        let rhs = -s_u.select(&w);
        let cond = chol_uu.solve(&rhs)?;
        let z = standard_normals(&mut rng, s_u.n_rows());
        let delta_u = cond + chol_uu.solve_transposed(&z)?;
        let y = mean + sel.embed(&delta_o) + s_u.embed(&delta_u);
        out.row_mut(i).copy_from(&y.transpose());
    }
    Ok(out)
}

/// Forecast paths with selected coordinates confined to intervals. Exact
/// draws from the truncated forecast law via the marginal-conditional
/// decomposition around the banded precision `H'H`.
pub fn draw_conditional_inequality(
    f: &ForecastSystem,
    rows: &SelectionMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    draw_conditional_inequality_with(
        f,
        rows,
        lower,
        upper,
        n_draws,
        seed,
        IntervalSampler::TiltedWithGibbsFallback,
    )
}

pub(crate) fn draw_conditional_inequality_with(
    f: &ForecastSystem,
    rows: &SelectionMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    n_draws: usize,
    seed: u64,
    sampler: IntervalSampler,
) -> Result<ForecastDraws> {
    check_selection(rows, f.nh())?;
    check_bounds(rows, lower, upper)?;
    if rows.n_rows() == 0 {
        return draw_unconditional(f, n_draws, seed);
    }
    let cbar = f.apply_hinv(f.c())?;
    let draws = truncated_precision_draws(
        f.gram(),
        f.gram_chol()?,
        &cbar,
        rows,
        lower,
        upper,
        n_draws,
        seed,
        sampler,
    )?;
    Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]))
}

/// Forecast paths with some coordinates pinned exactly and others confined
/// to intervals. The pinned block is conditioned out first (the conditional
/// precision of the free block stays banded), then the interval block is
/// handled by the marginal-conditional decomposition on the reduced system.
/// This is the exact joint law; pinned and interval coordinates must be
/// disjoint.
#[allow(clippy::too_many_arguments)]
pub fn draw_conditional_equality_inequality(
    f: &ForecastSystem,
    eq_rows: &SelectionMatrix,
    eq_values: &DVector<f64>,
    ineq_rows: &SelectionMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    let nh = f.nh();
    check_selection(ineq_rows, nh)?;
    check_bounds(ineq_rows, lower, upper)?;
    if eq_rows.n_rows() == 0 {
        return draw_conditional_inequality(f, ineq_rows, lower, upper, n_draws, seed);
    }
    if ineq_rows.n_rows() == 0 {
        return draw_conditional_equality(f, eq_rows, eq_values, n_draws, seed);
    }
    for &c in ineq_rows.rows() {
        if eq_rows.rows().contains(&c) {
            return Err(Error::OverlappingConstraints { coord: c });
        }
    }
    let m = equality_conditional_moments(f, eq_rows, eq_values)?;
    let pinned = eq_rows.embed(eq_values);
    let s_u = SelectionMatrix::new(nh, m.free_coords.clone())?;
    // Interval coordinates re-addressed inside the free block.
    let positions: Vec<usize> = ineq_rows
        .rows()
        .iter()
        .map(|&c| {
            m.free_coords
                .binary_search(&c)
                .map_err(|_| Error::OverlappingConstraints { coord: c })
        })
        .collect::<Result<_>>()?;
    let sel_red = SelectionMatrix::new(m.free_coords.len(), positions)?;
    let chol_u = m.precision.cholesky()?;
    let reduced = truncated_precision_draws(
        &m.precision,
        &chol_u,
        &m.mean,
        &sel_red,
        lower,
        upper,
        n_draws,
        seed,
        IntervalSampler::TiltedWithGibbsFallback,
    )?;
    let mut draws = DMatrix::zeros(n_draws, nh);
    for i in 0..n_draws {
        let free: DVector<f64> = reduced.row(i).transpose();
        let y = s_u.embed(&free) + &pinned;
        draws.row_mut(i).copy_from(&y.transpose());
    }
    Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]))
}

/// Forecast paths under a Gaussian restriction combined with interval
/// restrictions. The sampler draws from `N(mu_y, (H'H)^{-1})` truncated to
/// the box, which is the joint law exactly when the Gaussian covariance is
/// the variance-preserving choice `R (H'H)^{-1} R'`; any other covariance is
/// rejected. Gaussian rows and interval rows must touch disjoint coordinates.
pub fn draw_conditional_combined(
    f: &ForecastSystem,
    gaussian: &GaussianConstraint,
    inequality: &InequalityConstraint,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    let nh = f.nh();
    check_gaussian_rows(&gaussian.rows, &gaussian.mean, &gaussian.cov, nh)?;
    if inequality.rows.n_rows() == 0 {
        let m = conditional_moments_linear(f, &gaussian.rows, &gaussian.mean, &gaussian.cov)?;
        return draw_conditional_linear(f, &m, n_draws, seed);
    }
    check_selection(&inequality.rows, nh)?;
    check_bounds(&inequality.rows, &inequality.lower, &inequality.upper)?;
    if gaussian.rows.nrows() == 0 {
        return draw_conditional_inequality(
            f,
            &inequality.rows,
            &inequality.lower,
            &inequality.upper,
            n_draws,
            seed,
        );
    }
    // The truncated-precision route is exact only when the restriction keeps
    // the unconditional forecast covariance.
    let a = rows_times_hinv(f, &gaussian.rows)?;
    let preserving = &a * a.transpose();
    let gap = (&gaussian.cov - &preserving).amax();
    if gap > 1e-8 * (1.0 + preserving.amax()) {
        return Err(Error::UnsupportedCombination(
            "interval restrictions combine only with the variance-preserving Gaussian covariance"
                .into(),
        ));
    }
    for &c in inequality.rows.rows() {
        if gaussian.rows.column(c).iter().any(|&v| v != 0.0) {
            return Err(Error::OverlappingConstraints { coord: c });
        }
    }
    let m = conditional_moments_linear(f, &gaussian.rows, &gaussian.mean, &gaussian.cov)?;
    let draws = truncated_precision_draws(
        f.gram(),
        f.gram_chol()?,
        &m.mu_y,
        &inequality.rows,
        &inequality.lower,
        &inequality.upper,
        n_draws,
        seed,
        IntervalSampler::TiltedWithGibbsFallback,
    )?;
    Ok(ForecastDraws::new(f.n(), draws, vec![seed; n_draws]))
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let smax = sv.amax();
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Rewrites a restriction `W eps ~ N(w_mean, psi)` on the stacked structural
/// shocks as the observable restriction `(W H) y ~ N(W c + w_mean, psi)`,
/// ready for `conditional_moments_linear`.
pub fn shocks_to_observable_restrictions(
    f: &ForecastSystem,
    w_rows: &DMatrix<f64>,
    w_mean: &DVector<f64>,
    psi: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let nh = f.nh();
    check_gaussian_rows(w_rows, w_mean, psi, nh)?;
    let rows = w_rows.nrows();
    let rank = matrix_rank(w_rows);
    if rank < rows {
        return Err(Error::RankDeficient { rank, rows });
    }
    let mut r_mat = DMatrix::zeros(rows, nh);
    for i in 0..rows {
        let wi: DVector<f64> = w_rows.row(i).transpose();
        r_mat.row_mut(i).copy_from(&f.h_mat().matvec_t(&wi).transpose());
    }
    let r_vec = w_rows * f.c() + w_mean;
    Ok((r_mat, r_vec, psi.clone()))
}

/// Stacks observable restrictions with the requirement that designated
/// shocks keep their standard-normal law: rows `[R_obs; W H]`, targets
/// `[r_obs; W c]`, block-diagonal covariance `[Omega_obs, 0; 0, I]`.
pub fn build_structural_scenario(
    f: &ForecastSystem,
    obs_rows: &DMatrix<f64>,
    obs_mean: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
    nondriving: &SelectionMatrix,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let nh = f.nh();
    check_gaussian_rows(obs_rows, obs_mean, obs_cov, nh)?;
    check_selection(nondriving, nh)?;
    let m = obs_rows.nrows();
    let w = nondriving.n_rows();
    let mut r_mat = DMatrix::zeros(m + w, nh);
    for i in 0..m {
        r_mat.row_mut(i).copy_from(&obs_rows.row(i));
    }
    for (j, &shock) in nondriving.rows().iter().enumerate() {
        let (lo, hi) = f.h_mat().row_range(shock);
        for col in lo..=hi {
            r_mat[(m + j, col)] = f.h_mat().get(shock, col);
        }
    }
    let mut r_vec = DVector::zeros(m + w);
    r_vec.rows_mut(0, m).copy_from(obs_mean);
    r_vec
        .rows_mut(m, w)
        .copy_from(&nondriving.select(f.c()));
    let mut omega = DMatrix::zeros(m + w, m + w);
    omega.view_mut((0, 0), (m, m)).copy_from(obs_cov);
    for j in 0..w {
        omega[(m + j, m + j)] = 1.0;
    }
    let rank = matrix_rank(&r_mat);
    if rank < m + w {
        return Err(Error::RankDeficient { rank, rows: m + w });
    }
    Ok((r_mat, r_vec, omega))
}

fn stack_gaussian(
    top: (DMatrix<f64>, DVector<f64>, DMatrix<f64>),
    bottom: (DMatrix<f64>, DVector<f64>, DMatrix<f64>),
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rt, vt, ot) = top;
    let (rb, vb, ob) = bottom;
    let (mt, mb) = (rt.nrows(), rb.nrows());
    let ncols = rt.ncols().max(rb.ncols());
    let mut rows = DMatrix::zeros(mt + mb, ncols);
    if mt > 0 {
        rows.view_mut((0, 0), (mt, rt.ncols())).copy_from(&rt);
    }
    if mb > 0 {
        rows.view_mut((mt, 0), (mb, rb.ncols())).copy_from(&rb);
    }
    let mut mean = DVector::zeros(mt + mb);
    mean.rows_mut(0, mt).copy_from(&vt);
    mean.rows_mut(mt, mb).copy_from(&vb);
    let mut cov = DMatrix::zeros(mt + mb, mt + mb);
    cov.view_mut((0, 0), (mt, mt)).copy_from(&ot);
    cov.view_mut((mt, mt), (mb, mb)).copy_from(&ob);
    (rows, mean, cov)
}

/// Routes one ForecastSystem through the sampler matching a ConstraintSet.
///
/// Pins alone use the banded pinned-coordinate sampler; intervals alone use
/// the marginal-conditional sampler; pins plus intervals use the exact
/// reduced-system law. Shock restrictions and scenario blocks are rewritten
/// as Gaussian rows; Gaussian rows plus intervals go through the combined
/// sampler, which demands the variance-preserving covariance. Pins are
/// folded into the Gaussian block (zero-covariance rows) when both are
/// present without intervals; pins, Gaussian rows, and intervals together
/// have no exact sampler here and are rejected.
fn dispatch_constraints(
    f: &ForecastSystem,
    cs: &ConstraintSet,
    n_draws: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    let nh = f.nh();
    cs.validate(nh)?;
    let mut equality = cs.equality.clone();
    let mut general: Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = cs
        .gaussian
        .as_ref()
        .map(|g| (g.rows.clone(), g.mean.clone(), g.cov.clone()));
    if let Some(sh) = &cs.shocks {
        let mapped = shocks_to_observable_restrictions(f, &sh.rows, &sh.mean, &sh.cov)?;
        general = Some(match general.take() {
            None => mapped,
            Some(g) => stack_gaussian(g, mapped),
        });
    }
    if let Some(w) = &cs.scenario_nondriving {
        // Observable part of the scenario: pinned rows first, then any
        // Gaussian rows already assembled.
        let mut obs = general
            .take()
            .unwrap_or_else(|| (DMatrix::zeros(0, nh), DVector::zeros(0), DMatrix::zeros(0, 0)));
        if let Some(eq) = equality.take() {
            let m = eq.rows.n_rows();
            obs = stack_gaussian(
                (eq.rows.to_dense(), eq.values, DMatrix::zeros(m, m)),
                obs,
            );
        }
        general = Some(build_structural_scenario(f, &obs.0, &obs.1, &obs.2, w)?);
    } else if equality.is_some() && general.is_some() {
        if cs.inequality.is_some() {
            return Err(Error::UnsupportedCombination(
                "exact pins, Gaussian rows, and interval restrictions cannot be combined in one run"
                    .into(),
            ));
        }
        let eq = equality.take().expect("checked above");
        let g = general.take().expect("checked above");
        let m = eq.rows.n_rows();
        general = Some(stack_gaussian(
            (eq.rows.to_dense(), eq.values, DMatrix::zeros(m, m)),
            g,
        ));
    }
    match (&equality, &general, &cs.inequality) {
        (None, None, None) => draw_unconditional(f, n_draws, seed),
        (Some(eq), None, None) => draw_conditional_equality(f, &eq.rows, &eq.values, n_draws, seed),
        (None, Some((r, v, o)), None) => {
            let m = conditional_moments_linear(f, r, v, o)?;
            draw_conditional_linear(f, &m, n_draws, seed)
        }
        (None, None, Some(iq)) => {
            draw_conditional_inequality(f, &iq.rows, &iq.lower, &iq.upper, n_draws, seed)
        }
        (Some(eq), None, Some(iq)) => draw_conditional_equality_inequality(
            f, &eq.rows, &eq.values, &iq.rows, &iq.lower, &iq.upper, n_draws, seed,
        ),
        (None, Some((r, v, o)), Some(iq)) => {
            let g = GaussianConstraint {
                rows: r.clone(),
                mean: v.clone(),
                cov: o.clone(),
            };
            draw_conditional_combined(f, &g, iq, n_draws, seed)
        }
        (Some(_), Some(_), _) => Err(Error::UnsupportedCombination(
            "exact pins were not folded into the Gaussian block".into(),
        )),
    }
}

/// Forecast simulation pooled over posterior parameter draws: builds the
/// stacked system per parameter draw, dispatches to the constraint-matching
/// sampler with a per-draw derived seed, and concatenates blocks in draw
/// order. Parameter draws run in parallel; a failure aborts the run and
/// reports the offending draw index.
pub fn forecast_over_draws(
    posterior: &PosteriorDraws,
    history: &[DVector<f64>],
    constraints: &ConstraintSet,
    horizon: usize,
    n_forecast_per_param: usize,
    seed: u64,
) -> Result<ForecastDraws> {
    let params = posterior.clone().into_structural()?;
    if params.is_empty() {
        return Err(Error::InsufficientData(
            "posterior contains no parameter draws".into(),
        ));
    }
    let blocks: Vec<(u64, ForecastDraws)> = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let s = derive_seed(seed, i);
            let run = build_forecast_system(p, history, horizon)
                .and_then(|f| dispatch_constraints(&f, constraints, n_forecast_per_param, s))
                .map_err(|e| Error::DrawFailed {
                    index: i,
                    source: Box::new(e),
                })?;
            Ok((s, run))
        })
        .collect::<Result<Vec<_>>>()?;
    let nh = blocks[0].1.dim();
    let labels = blocks[0].1.labels.clone();
    let total = blocks.len() * n_forecast_per_param;
    let mut draws = DMatrix::zeros(total, nh);
    let mut per_draw_seed = Vec::with_capacity(total);
    for (bi, (s, block)) in blocks.iter().enumerate() {
        draws
            .view_mut((bi * n_forecast_per_param, 0), (n_forecast_per_param, nh))
            .copy_from(&block.draws);
        per_draw_seed.extend(std::iter::repeat_n(*s, n_forecast_per_param));
    }
    Ok(ForecastDraws {
        draws,
        labels,
        per_draw_seed,
    })
}
