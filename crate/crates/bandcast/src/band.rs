//! Banded matrices with diagonal-major storage, plus the factorizations and
//! solves the forecasting engine is built on.
//!
//! A `BandMatrix` stores every diagonal of the band contiguously, so a matrix
//! with lower bandwidth `a` and upper bandwidth `b` costs `(a + b + 1) * dim`
//! doubles regardless of sparsity inside the band. The Cholesky factor of a
//! symmetric positive definite band matrix keeps the bandwidth of its input:
//! no fill-in occurs outside the band, which is what makes precision-based
//! sampling cheap relative to dense covariance methods.
//!
//! Conventions:
//! - entry `(i, j)` is inside the band iff `-(lower_bw) <= j - i <= upper_bw`;
//! - `cholesky` returns the lower factor `L` with `A = L L'`;
//! - triangular solves accept a flag to solve with the transpose instead,
//!   so one factorization serves both `L x = b` and `L' x = b`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Banded square matrix in diagonal-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    dim: usize,
    lower_bw: usize,
    upper_bw: usize,
    /// Diagonal-major: entry (i, i + o) lives at `(o + lower_bw) * dim + i`.
    data: Vec<f64>,
}

impl BandMatrix {
    /// Zero matrix with the given bandwidths (clamped to `dim - 1`).
    pub fn zeros(dim: usize, lower_bw: usize, upper_bw: usize) -> Self {
        assert!(dim > 0, "band matrix dimension must be positive");
        let lower_bw = lower_bw.min(dim - 1);
        let upper_bw = upper_bw.min(dim - 1);
        BandMatrix {
            dim,
            lower_bw,
            upper_bw,
            data: vec![0.0; (lower_bw + upper_bw + 1) * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower_bw(&self) -> usize {
        self.lower_bw
    }

    pub fn upper_bw(&self) -> usize {
        self.upper_bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (j + self.lower_bw - i) * self.dim + i
    }

    /// Entry (i, j); zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.dim && j < self.dim);
        let o = j as isize - i as isize;
        if o < -(self.lower_bw as isize) || o > self.upper_bw as isize {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Write entry (i, j). Panics outside the band: widening the band is a
    /// structural change, not an assignment.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.dim && j < self.dim, "index out of range");
        let o = j as isize - i as isize;
        assert!(
            o >= -(self.lower_bw as isize) && o <= self.upper_bw as isize,
            "entry ({i}, {j}) lies outside the stored band"
        );
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Build from a dense matrix, verifying nothing lives outside the band.
    pub fn from_dense(m: &DMatrix<f64>, lower_bw: usize, upper_bw: usize) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "band matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dim = m.nrows();
        let mut out = BandMatrix::zeros(dim, lower_bw, upper_bw);
        for i in 0..dim {
            for j in 0..dim {
                let v = m[(i, j)];
                let o = j as isize - i as isize;
                if o < -(out.lower_bw as isize) || o > out.upper_bw as isize {
                    if v != 0.0 {
                        return Err(Error::DimensionMismatch(format!(
                            "nonzero entry ({i}, {j}) outside declared band"
                        )));
                    }
                } else {
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let (lo, hi) = self.row_range(i);
            for j in lo..=hi {
                m[(i, j)] = self.data[self.slot(i, j)];
            }
        }
        m
    }

    /// Column index range `(lo, hi)` of the band in row `i`, inclusive.
    #[inline]
    pub fn row_range(&self, i: usize) -> (usize, usize) {
        let lo = i.saturating_sub(self.lower_bw);
        let hi = (i + self.upper_bw).min(self.dim - 1);
        (lo, hi)
    }

    /// Row index range `(lo, hi)` of the band in column `j`, inclusive.
    #[inline]
    pub fn col_range(&self, j: usize) -> (usize, usize) {
        let lo = j.saturating_sub(self.upper_bw);
        let hi = (j + self.lower_bw).min(self.dim - 1);
        (lo, hi)
    }

    /// `A x`.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "matvec dimension mismatch");
        let mut y = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let (lo, hi) = self.row_range(i);
            let mut s = 0.0;
            let base = self.slot(i, lo);
            for (k, j) in (lo..=hi).enumerate() {
                s += self.data[base + k * self.dim] * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// `A' x`.
    pub fn matvec_t(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "matvec_t dimension mismatch");
        let mut y = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let (lo, hi) = self.row_range(i);
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let base = self.slot(i, lo);
            for (k, j) in (lo..=hi).enumerate() {
                y[j] += self.data[base + k * self.dim] * xi;
            }
        }
        y
    }

    /// Gram product `A' A`, symmetric with bandwidth `lower_bw + upper_bw`.
    pub fn gram(&self) -> BandMatrix {
        let bw = (self.lower_bw + self.upper_bw).min(self.dim - 1);
        let mut g = BandMatrix::zeros(self.dim, bw, bw);
        for i in 0..self.dim {
            let (ri_lo, ri_hi) = self.col_range(i);
            for j in i..=(i + bw).min(self.dim - 1) {
                let (rj_lo, rj_hi) = self.col_range(j);
                let lo = ri_lo.max(rj_lo);
                let hi = ri_hi.min(rj_hi);
                if lo > hi {
                    continue;
                }
                let mut s = 0.0;
                for r in lo..=hi {
                    s += self.data[self.slot(r, i)] * self.data[self.slot(r, j)];
                }
                g.set(i, j, s);
                if i != j {
                    g.set(j, i, s);
                }
            }
        }
        g
    }

    /// Drop outer diagonals that are identically zero. Gram products of
    /// block-structured matrices are declared wider than their true band;
    /// trimming restores the tight bandwidth before factorization.
    pub fn trim_bandwidth(&self) -> BandMatrix {
        let mut lb = self.lower_bw;
        while lb > 0 && self.diag_is_zero(-(lb as isize)) {
            lb -= 1;
        }
        let mut ub = self.upper_bw;
        while ub > 0 && self.diag_is_zero(ub as isize) {
            ub -= 1;
        }
        if lb == self.lower_bw && ub == self.upper_bw {
            return self.clone();
        }
        let mut out = BandMatrix::zeros(self.dim, lb, ub);
        for i in 0..self.dim {
            let (lo, hi) = out.row_range(i);
            for j in lo..=hi {
                out.set(i, j, self.data[self.slot(i, j)]);
            }
        }
        out
    }

    fn diag_is_zero(&self, o: isize) -> bool {
        let i_lo = if o < 0 { (-o) as usize } else { 0 };
        let i_hi = if o > 0 {
            self.dim - o as usize
        } else {
            self.dim
        };
        (i_lo..i_hi).all(|i| self.data[self.slot(i, (i as isize + o) as usize)] == 0.0)
    }

    /// Principal submatrix on strictly increasing indices. Because the index
    /// map is monotone, the result's bandwidth never exceeds the original's;
    /// the declared band is trimmed to the tight one.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Result<BandMatrix> {
        let m = idx.len();
        if m == 0 {
            return Err(Error::DimensionMismatch(
                "empty index set for principal submatrix".into(),
            ));
        }
        for w in idx.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::DimensionMismatch(
                    "principal submatrix indices must be strictly increasing".into(),
                ));
            }
        }
        if *idx.last().unwrap() >= self.dim {
            return Err(Error::DimensionMismatch(format!(
                "index {} out of range for dimension {}",
                idx.last().unwrap(),
                self.dim
            )));
        }
        let lb = self.lower_bw.min(m - 1);
        let ub = self.upper_bw.min(m - 1);
        let mut out = BandMatrix::zeros(m, lb, ub);
        for (a, &ia) in idx.iter().enumerate() {
            let (lo, hi) = out.row_range(a);
            for (b, &ib) in idx.iter().enumerate().take(hi + 1).skip(lo) {
                out.set(a, b, self.get(ia, ib));
            }
        }
        Ok(out.trim_bandwidth())
    }

    /// Max absolute asymmetry `|a_ij - a_ji|` over the band.
    fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        if self.lower_bw != self.upper_bw {
            return f64::INFINITY;
        }
        for i in 0..self.dim {
            let (lo, hi) = self.row_range(i);
            for j in lo.max(i + 1)..=hi {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Banded Cholesky factorization `A = L L'` of a symmetric positive
    /// definite matrix. The factor has the same lower bandwidth as `A` and no
    /// upper band. Pivots at or below `dim * eps * max_diag` are rejected.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let asym = self.max_asymmetry();
        if !(asym <= 1e-10 * self.scale().max(1.0)) {
            return Err(Error::NotSymmetric { max_asym: asym });
        }
        let n = self.dim;
        let bw = self.lower_bw;
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(self.get(i, i).abs()));
        let tol = n as f64 * f64::EPSILON * max_diag;
        let mut l = BandMatrix::zeros(n, bw, 0);
        for j in 0..n {
            let k_lo = j.saturating_sub(bw);
            let mut d = self.get(j, j);
            for k in k_lo..j {
                let v = l.data[l.slot(j, k)];
                d -= v * v;
            }
            if d <= tol {
                return Err(Error::NotPositiveDefinite { index: j, value: d });
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            let i_hi = (j + bw).min(n - 1);
            for i in (j + 1)..=i_hi {
                let mut s = self.get(i, j);
                let k_lo_i = i.saturating_sub(bw).max(k_lo);
                for k in k_lo_i..j {
                    s -= l.data[l.slot(i, k)] * l.data[l.slot(j, k)];
                }
                l.set(i, j, s / dj);
            }
        }
        Ok(BandCholesky { factor: l })
    }

    /// Solve `L x = b` (or `L' x = b` when `transposed`) for a banded lower
    /// triangular `L`. Fails on a zero diagonal entry.
    pub fn solve_triangular(&self, b: &DVector<f64>, transposed: bool) -> Result<DVector<f64>> {
        if self.upper_bw != 0 {
            return Err(Error::DimensionMismatch(
                "triangular solve requires a lower triangular band matrix".into(),
            ));
        }
        if b.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "solve rhs has length {} but matrix dimension is {}",
                b.len(),
                self.dim
            )));
        }
        let n = self.dim;
        let bw = self.lower_bw;
        let mut x = b.clone();
        if !transposed {
            for i in 0..n {
                let lo = i.saturating_sub(bw);
                let mut s = x[i];
                let base = self.slot(i, lo);
                for (k, j) in (lo..i).enumerate() {
                    s -= self.data[base + k * self.dim] * x[j];
                }
                let d = self.data[self.slot(i, i)];
                if d == 0.0 {
                    return Err(Error::SingularDiagonal { index: i });
                }
                x[i] = s / d;
            }
        } else {
            for i in (0..n).rev() {
                let hi = (i + bw).min(n - 1);
                let mut s = x[i];
                for j in (i + 1)..=hi {
                    s -= self.data[self.slot(j, i)] * x[j];
                }
                let d = self.data[self.slot(i, i)];
                if d == 0.0 {
                    return Err(Error::SingularDiagonal { index: i });
                }
                x[i] = s / d;
            }
        }
        Ok(x)
    }

    fn scale(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Lower Cholesky factor of a banded SPD matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    pub fn factor(&self) -> &BandMatrix {
        &self.factor
    }

    /// Solve `(L L') x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.factor.solve_triangular(b, false)?;
        self.factor.solve_triangular(&y, true)
    }

    /// Solve `L' x = b`; maps a standard normal vector to one with
    /// covariance `(L L')^{-1}`, the precision-sampling step.
    pub fn solve_transposed(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor.solve_triangular(b, true)
    }

    /// Log-determinant of the factored matrix `A = L L'`.
    pub fn log_det(&self) -> f64 {
        (0..self.factor.dim)
            .map(|i| self.factor.get(i, i).ln())
            .sum::<f64>()
            * 2.0
    }
}

/// Row-selection matrix: each row picks exactly one coordinate.
///
/// `select` gathers (`S x`), `embed` scatters (`S' y`), and `complement_rows`
/// lists the coordinates no row touches, in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    n_cols: usize,
    col_of_row: Vec<usize>,
}

impl SelectionMatrix {
    pub fn new(n_cols: usize, col_of_row: Vec<usize>) -> Result<Self> {
        for &c in &col_of_row {
            if c >= n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "selection column {c} out of range for dimension {n_cols}"
                )));
            }
        }
        Ok(SelectionMatrix { n_cols, col_of_row })
    }

    pub fn n_rows(&self) -> usize {
        self.col_of_row.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[usize] {
        &self.col_of_row
    }

    /// True when no two rows pick the same coordinate.
    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.n_cols];
        for &c in &self.col_of_row {
            if seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }

    /// `S x`: gather the selected coordinates.
    pub fn select(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n_cols, "selection dimension mismatch");
        DVector::from_iterator(
            self.col_of_row.len(),
            self.col_of_row.iter().map(|&c| x[c]),
        )
    }

    /// `S' y`: scatter into the full space (duplicate rows accumulate).
    pub fn embed(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.col_of_row.len(), "embed dimension mismatch");
        let mut x = DVector::zeros(self.n_cols);
        for (r, &c) in self.col_of_row.iter().enumerate() {
            x[c] += y[r];
        }
        x
    }

    /// Coordinates not selected by any row, ascending.
    pub fn complement_rows(&self) -> Vec<usize> {
        let mut selected = vec![false; self.n_cols];
        for &c in &self.col_of_row {
            selected[c] = true;
        }
        (0..self.n_cols).filter(|&c| !selected[c]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.col_of_row.len(), self.n_cols);
        for (r, &c) in self.col_of_row.iter().enumerate() {
            m[(r, c)] = 1.0;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Random symmetric positive definite band matrix built as B'B + d I.
    fn random_spd_band(dim: usize, bw: usize, rng: &mut StdRng) -> BandMatrix {
        let mut b = BandMatrix::zeros(dim, bw / 2, bw - bw / 2);
        for i in 0..dim {
            let (lo, hi) = b.row_range(i);
            for j in lo..=hi {
                b.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let mut g = b.gram();
        for i in 0..dim {
            g.set(i, i, g.get(i, i) + 0.5);
        }
        g.trim_bandwidth()
    }

    #[test]
    fn cholesky_of_two_by_two_matches_hand_computation() {
        let mut a = BandMatrix::zeros(2, 1, 1);
        a.set(0, 0, 4.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 3.0);
        let l = a.cholesky().unwrap();
        assert_relative_eq!(l.factor().get(0, 0), 2.0, max_relative = 1e-14);
        assert_relative_eq!(l.factor().get(1, 0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(l.factor().get(1, 1), 2.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn triangular_solve_matches_hand_computation() {
        let mut l = BandMatrix::zeros(2, 1, 0);
        l.set(0, 0, 2.0);
        l.set(1, 0, 1.0);
        l.set(1, 1, 2.0f64.sqrt());
        let b = DVector::from_vec(vec![2.0, 1.0 + 2.0f64.sqrt()]);
        let x = l.solve_triangular(&b, false).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn cholesky_agrees_with_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for &(dim, bw) in &[(1usize, 0usize), (5, 1), (12, 3), (40, 7), (60, 12)] {
            let a = random_spd_band(dim, bw, &mut rng);
            let l = a.cholesky().unwrap();
            let dense = nalgebra::Cholesky::new(a.to_dense()).expect("oracle cholesky");
            let oracle_l = dense.l();
            let ours = l.factor().to_dense();
            assert_relative_eq!(ours, oracle_l, epsilon = 1e-8 * dim as f64);
            // No fill-in: factor bandwidth equals input bandwidth.
            assert_eq!(l.factor().lower_bw(), a.lower_bw());
            assert_eq!(l.factor().upper_bw(), 0);
        }
    }

    #[test]
    fn solves_agree_with_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(8);
        for &(dim, bw) in &[(6usize, 2usize), (25, 5), (50, 9)] {
            let a = random_spd_band(dim, bw, &mut rng);
            let chol = a.cholesky().unwrap();
            let b = DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0));

            let x = chol.solve(&b).unwrap();
            let oracle = nalgebra::Cholesky::new(a.to_dense()).unwrap().solve(&b);
            assert_relative_eq!(x, oracle, epsilon = 1e-8);

            let y = chol.factor().solve_triangular(&b, false).unwrap();
            let ld = chol.factor().to_dense();
            let oy = ld.clone().solve_lower_triangular(&b).unwrap();
            assert_relative_eq!(y, oy, epsilon = 1e-10);

            let yt = chol.factor().solve_triangular(&b, true).unwrap();
            let oyt = ld.transpose().solve_upper_triangular(&b).unwrap();
            assert_relative_eq!(yt, oyt, epsilon = 1e-10);
        }
    }

    #[test]
    fn matvec_and_gram_agree_with_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        for &(dim, lb, ub) in &[(7usize, 2usize, 1usize), (20, 4, 3), (33, 6, 2)] {
            let mut a = BandMatrix::zeros(dim, lb, ub);
            for i in 0..dim {
                let (lo, hi) = a.row_range(i);
                for j in lo..=hi {
                    a.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
            let ad = a.to_dense();
            let x = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            assert_relative_eq!(a.matvec(&x), &ad * &x, epsilon = 1e-12);
            assert_relative_eq!(a.matvec_t(&x), ad.transpose() * &x, epsilon = 1e-12);
            let g = a.gram();
            assert_relative_eq!(g.to_dense(), ad.transpose() * &ad, epsilon = 1e-12);
            // Gram of a banded matrix stays banded at the summed widths.
            assert!(g.lower_bw() <= (lb + ub).min(dim - 1));
        }
    }

    #[test]
    fn log_det_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(10);
        let a = random_spd_band(15, 4, &mut rng);
        let chol = a.cholesky().unwrap();
        let oracle: f64 = nalgebra::Cholesky::new(a.to_dense())
            .unwrap()
            .l()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
            * 2.0;
        assert_relative_eq!(chol.log_det(), oracle, max_relative = 1e-10);
    }

    #[test]
    fn principal_submatrix_matches_dense_indexing() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = random_spd_band(20, 5, &mut rng);
        let idx = vec![0usize, 3, 4, 9, 15, 19];
        let sub = a.principal_submatrix(&idx).unwrap();
        let ad = a.to_dense();
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                assert_relative_eq!(sub.get(r, c), ad[(i, j)], epsilon = 1e-14);
            }
        }
        assert!(sub.lower_bw() <= a.lower_bw());
    }

    #[test]
    fn indefinite_matrix_is_rejected_with_pivot_index() {
        let mut a = BandMatrix::zeros(2, 1, 1);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 1.0);
        match a.cholesky() {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let mut a = BandMatrix::zeros(2, 1, 1);
        a.set(0, 0, 2.0);
        a.set(0, 1, 0.5);
        a.set(1, 0, 0.4);
        a.set(1, 1, 2.0);
        assert!(matches!(a.cholesky(), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn zero_diagonal_solve_reports_singularity() {
        let mut l = BandMatrix::zeros(2, 1, 0);
        l.set(0, 0, 1.0);
        l.set(1, 0, 1.0);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            l.solve_triangular(&b, false),
            Err(Error::SingularDiagonal { index: 1 })
        ));
    }

    #[test]
    fn mismatched_rhs_is_rejected() {
        let l = BandMatrix::zeros(3, 1, 0);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            l.solve_triangular(&b, false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn near_singular_spd_factors_while_violator_fails() {
        // Diagonal matrix with a tiny but admissible pivot factors fine.
        let mut ok = BandMatrix::zeros(3, 0, 0);
        ok.set(0, 0, 1.0);
        ok.set(1, 1, 1e-8);
        ok.set(2, 2, 1.0);
        assert!(ok.cholesky().is_ok());
        // A pivot below dim * eps * max_diag is rejected.
        let mut bad = BandMatrix::zeros(3, 0, 0);
        bad.set(0, 0, 1.0);
        bad.set(1, 1, 1e-18);
        bad.set(2, 2, 1.0);
        assert!(matches!(
            bad.cholesky(),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn selection_select_embed_complement() {
        let s = SelectionMatrix::new(6, vec![4, 1]).unwrap();
        let x = DVector::from_vec(vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
        let y = s.select(&x);
        assert_eq!(y.as_slice(), &[40.0, 10.0]);
        let e = s.embed(&y);
        assert_eq!(e.as_slice(), &[0.0, 10.0, 0.0, 0.0, 40.0, 0.0]);
        assert_eq!(s.complement_rows(), vec![0, 2, 3, 5]);
        assert!(s.is_injective());
        let dense = s.to_dense();
        assert_relative_eq!(dense * &x, y, epsilon = 0.0);

        let dup = SelectionMatrix::new(4, vec![2, 2]).unwrap();
        assert!(!dup.is_injective());
        assert!(SelectionMatrix::new(3, vec![3]).is_err());
    }

    #[test]
    fn trim_drops_structurally_zero_diagonals() {
        let mut a = BandMatrix::zeros(5, 3, 3);
        for i in 0..5 {
            a.set(i, i, 2.0);
        }
        a.set(1, 0, 1.0);
        a.set(0, 1, 1.0);
        let t = a.trim_bandwidth();
        assert_eq!(t.lower_bw(), 1);
        assert_eq!(t.upper_bw(), 1);
        assert_relative_eq!(t.to_dense(), a.to_dense(), epsilon = 0.0);
    }
}
