//! Sparse storage, pattern-reusing assembly and the sparse direct solver.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Compressed sparse row matrix with sorted column indices in every row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    /// Explicit zeros are kept in the pattern.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = fill[r];
            cols[slot] = c;
            vals[slot] = v;
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(c, v) in &scratch {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Position of entry `(i, j)` in the value array, if it is in the pattern.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `y = Aᵀ x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, i, v)));
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let (cols, vals) = self.row(i);
                xi * cols.iter().zip(vals).map(|(&c, &v)| v * y[c]).sum::<f64>()
            })
            .sum()
    }

    /// `A M` for a dense `M`.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            for i in 0..self.nrows {
                let (cols, vals) = self.row(i);
                out[(i, j)] = cols.iter().zip(vals).map(|(&c, &v)| v * col[c]).sum();
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[(i, c)] += v;
            }
        }
        out
    }
}

/// Column-compressed structure of a square CSR pattern together with the
/// fill-reducing symbolic LU analysis. Reused across Newton iterations and
/// time steps whose matrices share one pattern.
pub struct LuPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    // csc value k is csr value `gather[k]`
    gather: Vec<usize>,
    symbolic: SymbolicLu<usize>,
}

impl LuPattern {
    pub fn analyze(m: &CsrMatrix) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Dimension { expected: m.nrows, got: m.ncols });
        }
        let n = m.nrows;
        let mut col_ptr = vec![0usize; n + 1];
        for &c in &m.col_idx {
            col_ptr[c + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut row_idx = vec![0usize; m.nnz()];
        let mut gather = vec![0usize; m.nnz()];
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                let c = m.col_idx[k];
                row_idx[fill[c]] = i;
                gather[fill[c]] = k;
                fill[c] += 1;
            }
        }
        let sym_ref = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = SymbolicLu::try_new(sym_ref).map_err(|e| Error::Solver(format!("symbolic LU: {e:?}")))?;
        Ok(Self { n, col_ptr, row_idx, gather, symbolic })
    }

    fn matches(&self, m: &CsrMatrix) -> bool {
        m.nrows == self.n && m.nnz() == self.gather.len()
    }
}

/// Sparse LU factorization with partial pivoting.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let pattern = LuPattern::analyze(m)?;
        Self::factor_with(&pattern, m)
    }

    /// Numeric factorization reusing a symbolic analysis of the same pattern.
    pub fn factor_with(pattern: &LuPattern, m: &CsrMatrix) -> Result<Self> {
        if !pattern.matches(m) {
            return Err(Error::Solver("matrix pattern differs from the analyzed pattern".into()));
        }
        let values: Vec<f64> = pattern.gather.iter().map(|&k| m.values[k]).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("matrix contains non-finite entries".into()));
        }
        let sym_ref =
            SymbolicSparseColMatRef::new_checked(pattern.n, pattern.n, &pattern.col_ptr, None, &pattern.row_idx);
        let mat = SparseColMatRef::new(sym_ref, &values);
        let lu = Lu::try_new_with_symbolic(pattern.symbolic.clone(), mat)
            .map_err(|e| Error::Solver(format!("numeric LU: {e:?}")))?;
        Ok(Self { n: pattern.n, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        let n = self.n;
        let mat = faer::MatMut::from_column_major_slice_mut(x, n, 1);
        self.lu.solve_in_place(mat);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("singular matrix: solution is not finite".into()));
        }
        Ok(())
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dense LU solve for the small reduced systems. Returns `None` when the
/// matrix is numerically singular.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Reciprocal condition estimate `σ_min / σ_max` of a small dense matrix.
pub fn dense_rcond(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (0, 1, 1.0), (2, 0, -1.0)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let m = sample();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.nnz(), 6);
    }

    #[test]
    fn products_match_dense() {
        let m = sample();
        let d = m.to_dense();
        let x = [1.0, -2.0, 0.5];
        let y = m.mul_vec(&x);
        let yd = &d * DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
        }
        let yt = m.transpose_mul_vec(&x);
        let ytd = d.transpose() * DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((yt[i] - ytd[i]).abs() < 1e-14);
        }
        assert_eq!(m.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn lu_solves_and_reuses_pattern() {
        let m = sample();
        let pattern = LuPattern::analyze(&m).unwrap();
        let lu = SparseLu::factor_with(&pattern, &m).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b).unwrap();
        let r = m.mul_vec(&x);
        for i in 0..3 {
            assert!((r[i] - b[i]).abs() < 1e-13);
        }
        let mut m2 = m.clone();
        for v in m2.values_mut() {
            *v *= 2.0;
        }
        let x2 = SparseLu::factor_with(&pattern, &m2).unwrap().solve(&b).unwrap();
        for i in 0..3 {
            assert!((2.0 * x2[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let res = SparseLu::factor(&m).and_then(|lu| lu.solve(&[1.0, 0.0]));
        assert!(res.is_err());
    }
}
