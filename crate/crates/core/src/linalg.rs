//! Small dense kernels behind every numeric predicate: submatrix assembly
//! from oracle queries, numerical rank, the 2×2 determinant separation test,
//! conditional covariances and symmetric inversion.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::oracle::CovarianceOracle;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols, "row slice has wrong length");
        DenseMatrix {
            rows,
            cols,
            data: values.to_vec(),
        }
    }

    /// Builds from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> Self {
        self.sub(&other.scaled(-1.0))
    }

    pub fn sub(&self, other: &DenseMatrix) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Copy with `(A + Aᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Principal or rectangular selection by index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankMethod {
    /// Elimination up to 32×32, singular values above.
    #[default]
    Auto,
    Elimination,
    SingularValue,
    /// Elimination that tracks how much cancellation produced each entry.
    Graded,
}

/// Tolerance policy for numerical rank decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankConfig {
    pub rel_tol: f64,
    pub method: RankMethod,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            rel_tol: 1e-8,
            method: RankMethod::Auto,
        }
    }
}

impl RankConfig {
    pub fn new(rel_tol: f64, method: RankMethod) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rel_tol must lie in (0, 1), got {rel_tol}"
            )));
        }
        Ok(RankConfig { rel_tol, method })
    }
}

const ELIMINATION_LIMIT: usize = 32;

/// Number of singular values (or surviving pivots) above `rel_tol` times the
/// largest one.
pub fn numerical_rank(m: &DenseMatrix, cfg: &RankConfig) -> usize {
    if m.rows == 0 || m.cols == 0 {
        return 0;
    }
    let use_elimination = match cfg.method {
        RankMethod::Graded => {
            let mags = DenseMatrix::from_fn(m.rows, m.cols, |i, j| m[(i, j)].abs());
            return graded_rank(m, &mags, cfg.rel_tol);
        }
        RankMethod::Elimination => true,
        RankMethod::SingularValue => false,
        RankMethod::Auto => m.rows.max(m.cols) <= ELIMINATION_LIMIT,
    };
    if use_elimination {
        elimination_rank(m, cfg.rel_tol)
    } else {
        singular_value_rank(m, cfg.rel_tol)
    }
}

fn elimination_rank(m: &DenseMatrix, rel_tol: f64) -> usize {
    let (rows, cols) = (m.rows, m.cols);
    let mut a = m.data.clone();
    let mut first_pivot = 0.0;
    let steps = rows.min(cols);
    for k in 0..steps {
        let (mut pi, mut pj, mut best) = (k, k, 0.0f64);
        for i in k..rows {
            for j in k..cols {
                let v = a[i * cols + j].abs();
                if v > best {
                    best = v;
                    pi = i;
                    pj = j;
                }
            }
        }
        if k == 0 {
            first_pivot = best;
        }
        if best == 0.0 || best <= rel_tol * first_pivot {
            return k;
        }
        if pi != k {
            for j in 0..cols {
                a.swap(k * cols + j, pi * cols + j);
            }
        }
        if pj != k {
            for i in 0..rows {
                a.swap(i * cols + k, i * cols + pj);
            }
        }
        let pivot = a[k * cols + k];
        for i in k + 1..rows {
            let f = a[i * cols + k] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in k + 1..cols {
                a[i * cols + j] -= f * a[k * cols + j];
            }
            a[i * cols + k] = 0.0;
        }
    }
    steps
}

/// Rank by full-pivot elimination where an entry counts as zero once it is
/// below `rel_tol` times the magnitude of the terms that produced it.
///
/// `mags[i][j]` bounds the size of whatever was summed into `values[i][j]`
/// (for raw entries, just `|values[i][j]|`). Decisions are therefore
/// independent of the overall scale of each entry, which keeps exact zeros
/// recognizable in matrices whose entries span many orders of magnitude.
pub fn graded_rank(values: &DenseMatrix, mags: &DenseMatrix, rel_tol: f64) -> usize {
    graded_rank_capped(values, mags, rel_tol, usize::MAX)
}

/// [`graded_rank`] that stops once the rank is known to exceed `cap`.
pub fn graded_rank_capped(values: &DenseMatrix, mags: &DenseMatrix, rel_tol: f64, cap: usize) -> usize {
    graded_pivots(values, mags, rel_tol, cap).len()
}

/// Pivot positions `(row, col)` chosen by [`graded_rank`], in elimination
/// order; they index a nonsingular minor of full rank. Stops after `cap + 1`.
pub fn graded_pivots(values: &DenseMatrix, mags: &DenseMatrix, rel_tol: f64, cap: usize) -> Vec<(usize, usize)> {
    graded_elimination(values, mags, rel_tol, cap)
        .into_iter()
        .map(|(i, j, _)| (i, j))
        .collect()
}

/// Pivots of [`graded_rank`] as `(row, col, |pivot| / magnitude)`.
pub fn graded_elimination(values: &DenseMatrix, mags: &DenseMatrix, rel_tol: f64, cap: usize) -> Vec<(usize, usize, f64)> {
    assert_eq!((values.rows, values.cols), (mags.rows, mags.cols));
    let (rows, cols) = (values.rows, values.cols);
    let mut a = values.data.clone();
    let mut g = mags.data.clone();
    let mut live_rows: Vec<usize> = (0..rows).collect();
    let mut live_cols: Vec<usize> = (0..cols).collect();
    let mut pivots = Vec::new();
    loop {
        // pivot on the best-determined entry, ties by size
        let mut best: Option<(usize, usize, f64, f64)> = None;
        for (ri, &i) in live_rows.iter().enumerate() {
            for (ci, &j) in live_cols.iter().enumerate() {
                let v = a[i * cols + j].abs();
                let r = v / g[i * cols + j];
                if v > rel_tol * g[i * cols + j] && v > 0.0 && best.is_none_or(|(_, _, br, bv)| (r, v) > (br, bv)) {
                    best = Some((ri, ci, r, v));
                }
            }
        }
        let Some((ri, ci, _, _)) = best else {
            return pivots;
        };
        if pivots.len() > cap {
            return pivots;
        }
        let (pi, pj) = (live_rows.swap_remove(ri), live_cols.swap_remove(ci));
        let p = a[pi * cols + pj];
        let gp = g[pi * cols + pj];
        pivots.push((pi, pj, p.abs() / gp));
        for &i in &live_rows {
            let l = a[i * cols + pj] / p;
            let gl = g[i * cols + pj];
            for &j in &live_cols {
                let u = a[pi * cols + j] / p;
                let idx = i * cols + j;
                a[idx] -= l * a[pi * cols + j];
                g[idx] += l.abs() * g[pi * cols + j] + u.abs() * gl + (l * u).abs() * gp;
            }
        }
    }
}

fn singular_value_rank(m: &DenseMatrix, rel_tol: f64) -> usize {
    let sv = m.to_nalgebra().singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Singular values of `m` in descending order.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.rows == 0 || m.cols == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.to_nalgebra().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `Σ_{rows, cols}` assembled from `|rows|·|cols|` oracle queries.
pub fn submatrix<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    rows: &[usize],
    cols: &[usize],
) -> Result<DenseMatrix> {
    let n = oracle.dim();
    if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= n) {
        return Err(Error::OutOfRange { index: bad, dim: n });
    }
    Ok(DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        oracle.query(rows[i], cols[j])
    }))
}

/// Decides `det [[a, b], [c, d]] = 0` for `det = a·d − b·c` relative to the
/// magnitude of the two products.
pub fn det2_is_zero(ad: f64, bc: f64, rel_tol: f64) -> bool {
    let det = ad - bc;
    det.abs() <= rel_tol * ad.abs().max(bc.abs())
}

/// True when `v` separates `u` and `w`, i.e. `det Σ_{uv,vw} = σ_uv σ_vw − σ_uw σ_vv` vanishes.
pub fn det2_separation_test<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    u: usize,
    v: usize,
    w: usize,
    cfg: &RankConfig,
) -> bool {
    let suv = oracle.query(u, v);
    let svw = oracle.query(v, w);
    let suw = oracle.query(u, w);
    let svv = oracle.query(v, v);
    det2_is_zero(suv * svw, suw * svv, cfg.rel_tol)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "cholesky needs a square matrix, got {}x{}",
                m.rows, m.cols
            )));
        }
        let n = m.rows;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` in place for the lower factor `L`.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// `M⁻¹ B` for a matrix right-hand side.
    pub fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows, self.n);
        let mut out = DenseMatrix::zeros(b.rows, b.cols);
        let mut col = vec![0.0; self.n];
        for j in 0..b.cols {
            for i in 0..self.n {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..self.n {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.solve(&DenseMatrix::identity(self.n)).symmetrized()
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn invert(m: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(Cholesky::factor(m)?.inverse())
}

/// Schur complement `Σ_{A,B} − Σ_{A,S} Σ_{S,S}⁻¹ Σ_{S,B}` from its blocks.
pub fn schur_from_blocks(
    s_ab: &DenseMatrix,
    s_as: &DenseMatrix,
    s_ss: &DenseMatrix,
    s_sb: &DenseMatrix,
) -> Result<DenseMatrix> {
    if s_ss.rows == 0 {
        return Ok(s_ab.clone());
    }
    let chol = Cholesky::factor(s_ss)?;
    let y = chol.solve(s_sb);
    Ok(s_ab.sub(&s_as.matmul(&y)))
}

/// `Σ_{C|S}`.
pub fn conditional_covariance<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    c: &[usize],
    cond: &[usize],
) -> Result<DenseMatrix> {
    let cc = submatrix(oracle, c, c)?;
    if cond.is_empty() {
        return Ok(cc);
    }
    let sc = submatrix(oracle, cond, c)?;
    let ss = submatrix(oracle, cond, cond)?;
    Ok(schur_from_blocks(&cc, &sc.transpose(), &ss, &sc)?.symmetrized())
}

/// `Σ_{A,B|S}`.
pub fn conditional_cross_covariance<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    a: &[usize],
    b: &[usize],
    cond: &[usize],
) -> Result<DenseMatrix> {
    let ab = submatrix(oracle, a, b)?;
    if cond.is_empty() {
        return Ok(ab);
    }
    let as_ = submatrix(oracle, a, cond)?;
    let ss = submatrix(oracle, cond, cond)?;
    let sb = submatrix(oracle, cond, b)?;
    schur_from_blocks(&ab, &as_, &ss, &sb)
}

fn concat(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// `rank(Σ_{A∪S, B∪S}) − |S|`.
pub fn conditional_rank<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    a: &[usize],
    b: &[usize],
    cond: &[usize],
    cfg: &RankConfig,
) -> Result<usize> {
    let m = submatrix(oracle, &concat(a, cond), &concat(b, cond))?;
    Ok(numerical_rank(&m, cfg).saturating_sub(cond.len()))
}

/// Rank of the partial-correlation matrix of `A` and `B` given `S`.
///
/// Entries are normalized by the conditional standard deviations, so singular
/// values live on the scale of correlations and `rel_tol` is read absolutely.
pub fn conditional_rank_schur<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    a: &[usize],
    b: &[usize],
    cond: &[usize],
    cfg: &RankConfig,
) -> Result<usize> {
    let cross = conditional_cross_covariance(oracle, a, b, cond)?;
    let var_a = conditional_variances(oracle, a, cond)?;
    let var_b = conditional_variances(oracle, b, cond)?;
    let normalized = DenseMatrix::from_fn(a.len(), b.len(), |i, j| {
        cross[(i, j)] / (var_a[i] * var_b[j]).sqrt()
    });
    let sv = singular_values(&normalized);
    Ok(sv.iter().filter(|&&s| s > cfg.rel_tol).count())
}

/// Diagonal of `Σ_{C|S}`.
pub fn conditional_variances<O: CovarianceOracle + ?Sized>(
    oracle: &O,
    c: &[usize],
    cond: &[usize],
) -> Result<Vec<f64>> {
    if cond.is_empty() {
        return Ok(c.iter().map(|&i| oracle.query(i, i)).collect());
    }
    let ss = submatrix(oracle, cond, cond)?;
    let chol = Cholesky::factor(&ss)?;
    let mut out = Vec::with_capacity(c.len());
    for &i in c {
        let col: Vec<f64> = cond.iter().map(|&s| oracle.query(s, i)).collect();
        let mut y = col.clone();
        chol.solve_in_place(&mut y);
        let q: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        out.push(oracle.query(i, i) - q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DenseOracle;
    use proptest::prelude::*;

    fn four_cycle_sigma() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            vec![7.0, -2.0, 1.0, -2.0],
            vec![-2.0, 7.0, -2.0, 1.0],
            vec![1.0, -2.0, 7.0, -2.0],
            vec![-2.0, 1.0, -2.0, 7.0],
        ])
    }

    fn four_cycle_oracle() -> DenseOracle {
        DenseOracle::new(four_cycle_sigma()).unwrap()
    }

    fn elim() -> RankConfig {
        RankConfig {
            method: RankMethod::Elimination,
            ..RankConfig::default()
        }
    }

    fn graded() -> RankConfig {
        RankConfig {
            method: RankMethod::Graded,
            ..RankConfig::default()
        }
    }

    fn svd() -> RankConfig {
        RankConfig {
            method: RankMethod::SingularValue,
            ..RankConfig::default()
        }
    }

    #[test]
    fn submatrix_examples() {
        let o = four_cycle_oracle();
        let m = submatrix(&o, &[0, 1, 2], &[0, 1, 2]).unwrap();
        let want = DenseMatrix::from_rows(&[
            vec![7.0, -2.0, 1.0],
            vec![-2.0, 7.0, -2.0],
            vec![1.0, -2.0, 7.0],
        ]);
        assert_eq!(m, want);
        assert_eq!(submatrix(&o, &[3], &[3]).unwrap().data(), &[7.0]);
        let (u, v, w) = (0, 1, 2);
        let m = submatrix(&o, &[u, v], &[v, w]).unwrap();
        assert_eq!(m.data(), &[-2.0, 1.0, 7.0, -2.0]);
        assert!(submatrix(&o, &[4], &[0]).is_err());
    }

    #[test]
    fn rank_examples_both_methods() {
        for cfg in [elim(), svd(), graded()] {
            assert_eq!(numerical_rank(&DenseMatrix::identity(3), &cfg), 3);
            let u = [1.0, 2.0, 3.0];
            let outer = DenseMatrix::from_fn(3, 3, |i, j| u[i] * u[j]);
            assert_eq!(numerical_rank(&outer, &cfg), 1);
            assert_eq!(numerical_rank(&DenseMatrix::zeros(2, 3), &cfg), 0);
            assert_eq!(numerical_rank(&DenseMatrix::zeros(0, 0), &cfg), 0);
            // rows {2,1,3}, cols {4,1,3} in 1-based labels
            let m = submatrix(&four_cycle_oracle(), &[1, 0, 2], &[3, 0, 2]).unwrap();
            assert_eq!(numerical_rank(&m, &cfg), 2);
        }
    }

    #[test]
    fn four_cycle_minor_is_singular_with_nonzero_two_minor() {
        let m = submatrix(&four_cycle_oracle(), &[1, 0, 2], &[3, 0, 2]).unwrap();
        let det3 = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
        assert_eq!(det3, 0.0);
        assert_ne!(m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)], 0.0);
    }

    #[test]
    fn det2_examples() {
        let cfg = RankConfig::default();
        let path = DenseOracle::new(DenseMatrix::from_rows(&[
            vec![1.0, 0.5, 0.2],
            vec![0.5, 1.0, 0.4],
            vec![0.2, 0.4, 1.0],
        ]))
        .unwrap();
        assert!(det2_separation_test(&path, 0, 1, 2, &cfg));
        assert!(!det2_separation_test(&path, 0, 1, 0, &cfg));
        assert!(!det2_separation_test(&path, 1, 0, 2, &cfg));
        // u=2, v=1, w=4 in 1-based labels: det = (-2)(-2) - 1*7 = -3
        assert!(!det2_separation_test(&four_cycle_oracle(), 1, 0, 3, &cfg));
    }

    #[test]
    fn conditional_covariance_examples() {
        let o = four_cycle_oracle();
        assert_eq!(
            conditional_covariance(&o, &[0, 1], &[]).unwrap(),
            submatrix(&o, &[0, 1], &[0, 1]).unwrap()
        );
        // independent route: 1 / K_22 with K from the closed form
        let k22 = 4.0 / 24.0;
        let c = conditional_covariance(&o, &[1], &[0, 2]).unwrap();
        assert!((c[(0, 0)] - 1.0 / k22).abs() < 1e-12);
        assert!((c[(0, 0)] - 6.0).abs() < 1e-12);
        let rho: f64 = 0.3;
        let edge = DenseOracle::new(DenseMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]))
            .unwrap();
        let c = conditional_covariance(&edge, &[0], &[1]).unwrap();
        assert!((c[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-15);
    }

    #[test]
    fn conditional_rank_examples() {
        let o = four_cycle_oracle();
        let cfg = RankConfig::default();
        assert_eq!(conditional_rank(&o, &[1], &[3], &[], &cfg).unwrap(), 1);
        assert_eq!(conditional_rank(&o, &[1], &[3], &[0, 2], &cfg).unwrap(), 0);
        assert_eq!(conditional_rank(&o, &[1], &[3], &[0], &cfg).unwrap(), 1);
        assert_eq!(conditional_rank_schur(&o, &[1], &[3], &[0, 2], &cfg).unwrap(), 0);
        assert_eq!(conditional_rank_schur(&o, &[1], &[3], &[0], &cfg).unwrap(), 1);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(
            invert(&DenseMatrix::identity(3)).unwrap(),
            DenseMatrix::identity(3)
        );
        let k = invert(&four_cycle_sigma()).unwrap();
        let want = DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.0, 1.0],
            vec![1.0, 4.0, 1.0, 0.0],
            vec![0.0, 1.0, 4.0, 1.0],
            vec![1.0, 0.0, 1.0, 4.0],
        ])
        .scaled(1.0 / 24.0);
        assert!(k.max_abs_diff(&want) < 1e-12);
        let k3 = invert(&four_cycle_sigma().select(&[0, 1, 2], &[0, 1, 2])).unwrap();
        let want3 = DenseMatrix::from_rows(&[
            vec![15.0, 4.0, -1.0],
            vec![4.0, 16.0, 4.0],
            vec![-1.0, 4.0, 15.0],
        ])
        .scaled(1.0 / 96.0);
        assert!(k3.max_abs_diff(&want3) < 1e-12);
        let not_pd = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            invert(&not_pd),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    fn random_pd(n: usize, seed: u64) -> DenseMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut m = g.matmul(&g.transpose());
        for i in 0..n {
            m[(i, i)] += 0.5;
        }
        m
    }

    fn low_rank(rows: usize, cols: usize, rank: usize, seed: u64) -> DenseMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = DenseMatrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0));
        let v = DenseMatrix::from_fn(rank, cols, |_, _| rng.random_range(-1.0..1.0));
        u.matmul(&v)
    }

    proptest! {
        #[test]
        fn elimination_and_svd_agree(rows in 1usize..40, cols in 1usize..40, r in 0usize..12, seed: u64) {
            let rank = r.min(rows).min(cols);
            let m = low_rank(rows, cols, rank, seed);
            prop_assert_eq!(numerical_rank(&m, &elim()), rank);
            prop_assert_eq!(numerical_rank(&m, &svd()), rank);
            prop_assert_eq!(numerical_rank(&m, &graded()), rank);
        }

        #[test]
        fn graded_rank_ignores_row_scales(rows in 1usize..20, cols in 1usize..20, r in 0usize..8, seed: u64, spread in 1i32..120) {
            let rank = r.min(rows).min(cols);
            let m = low_rank(rows, cols, rank, seed);
            let scaled = DenseMatrix::from_fn(rows, cols, |i, j| {
                m[(i, j)] * 10f64.powi(-((i as i32 * spread) / rows as i32)) * 10f64.powi(-((j as i32 * spread) / cols as i32))
            });
            prop_assert_eq!(numerical_rank(&scaled, &graded()), rank);
        }

        #[test]
        fn inverse_round_trip(n in 1usize..12, seed: u64) {
            let m = random_pd(n, seed);
            let inv = invert(&m).unwrap();
            let back = invert(&inv).unwrap();
            prop_assert!(back.max_abs_diff(&m) <= 1e-8 * m.max_abs());
            prop_assert!(m.matmul(&inv).max_abs_diff(&DenseMatrix::identity(n)) < 1e-9);
            prop_assert!(Cholesky::factor(&inv).is_ok());
        }

        #[test]
        fn guttman_routes_agree(extra in 0usize..5, seed: u64, sizes in (1usize..4, 1usize..4, 0usize..5)) {
            let (na, nb, ns) = sizes;
            let n = (na + nb + ns + extra).max(6);
            // sparse-ish random precision so some conditional ranks drop
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
            let mut k = DenseMatrix::identity(n);
            for i in 0..n {
                for j in 0..i {
                    if rng.random_bool(0.3) {
                        let v = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        k[(i, j)] = v;
                        k[(j, i)] = v;
                        k[(i, i)] += v.abs();
                        k[(j, j)] += v.abs();
                    }
                }
            }
            let sigma = invert(&k).unwrap();
            let o = DenseOracle::new(sigma).unwrap();
            let a: Vec<usize> = (0..na).collect();
            let b: Vec<usize> = (na..na + nb).collect();
            let s: Vec<usize> = (na + nb..na + nb + ns).collect();
            let cfg = RankConfig::default();
            let aug = conditional_rank(&o, &a, &b, &s, &cfg).unwrap();
            let schur = conditional_rank_schur(&o, &a, &b, &s, &cfg).unwrap();
            prop_assert_eq!(aug, schur);
        }
    }
}
