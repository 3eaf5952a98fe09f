//! Compressed sparse row matrices.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Zero-valued matrix with the given per-row column sets.
    pub fn from_pattern(ncols: usize, rows: Vec<Vec<usize>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < ncols));
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![T::zero(); col_idx.len()];
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for &(i, j, _) in triplets {
            rows[i].push(j);
        }
        let mut m = Self::from_pattern(ncols, rows);
        for &(i, j, v) in triplets {
            m.add(i, j, v);
        }
        m
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let rows = (0..d.len()).map(|i| vec![i]).collect();
        let mut m = Self::from_pattern(d.len(), rows);
        m.values.copy_from_slice(d);
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::one(); n])
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    #[inline]
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// `(columns, values)` of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    #[inline]
    fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    /// Adds `v` at `(i, j)`; the entry must be in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    /// Entry `(i, j)`, zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.find(i, j).map_or(T::zero(), |k| self.values[k])
    }

    pub fn set_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = T::zero());
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            for &j in self.row(i).0 {
                rows[j].push(i);
            }
        }
        let mut t = Self::from_pattern(self.nrows, rows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.add(j, i, v);
            }
        }
        t
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.nrows).map(|i| self.row(i).1.iter().copied().sum()).collect()
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] += v;
            }
        }
        d
    }

    /// Zeroes row `i` except the diagonal, which is set to `diag`.
    pub fn set_identity_row(&mut self, i: usize, diag: T) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        for k in r {
            self.values[k] = if self.col_idx[k] == i { diag } else { T::zero() };
        }
    }

    /// Zeroes every entry of row `i`.
    pub fn zero_row(&mut self, i: usize) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.values[r].iter_mut().for_each(|v| *v = T::zero());
    }

    /// Zeroes every entry in the columns flagged by `mask`.
    pub fn zero_columns(&mut self, mask: &[bool]) {
        for k in 0..self.values.len() {
            if mask[self.col_idx[k]] {
                self.values[k] = T::zero();
            }
        }
    }

    /// `A diag(d) B` for `A: m x n`, `B: n x p`.
    pub fn mul_diag_mul(a: &Self, d: &[T], b: &Self) -> Self {
        assert_eq!(a.ncols, d.len());
        assert_eq!(b.nrows, d.len());
        let p = b.ncols;
        let mut marker = vec![usize::MAX; p];
        let mut acc = vec![T::zero(); p];
        let mut row_ptr = Vec::with_capacity(a.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut touched = Vec::new();
        for i in 0..a.nrows {
            touched.clear();
            let (acols, avals) = a.row(i);
            for (&k, &av) in acols.iter().zip(avals) {
                let s = av * d[k];
                let (bcols, bvals) = b.row(k);
                for (&j, &bv) in bcols.iter().zip(bvals) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = T::zero();
                        touched.push(j);
                    }
                    acc[j] += s * bv;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: a.nrows,
            ncols: p,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `alpha A + beta B` on the union pattern.
    pub fn add_scaled(a: &Self, alpha: T, b: &Self, beta: T) -> Self {
        assert_eq!((a.nrows, a.ncols), (b.nrows, b.ncols));
        let rows = (0..a.nrows)
            .map(|i| a.row(i).0.iter().chain(b.row(i).0).copied().collect())
            .collect();
        let mut c = Self::from_pattern(a.ncols, rows);
        for i in 0..a.nrows {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                c.add(i, j, alpha * v);
            }
            let (cols, vals) = b.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                c.add(i, j, beta * v);
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_transpose() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 2, 2.0), (1, 0, -1.0), (0, 0, 4.0)]);
        assert_eq!(m.get(0, 2), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![7.0, -1.0]);
        let t = m.transpose();
        assert_eq!(t.to_dense(), vec![vec![4.0, -1.0], vec![0.0, 0.0], vec![3.0, 0.0]]);
    }

    #[test]
    fn triple_product_matches_dense() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]);
        let b = a.transpose();
        let d = [2.0, 0.5, -1.0];
        let c = CsrMatrix::mul_diag_mul(&a, &d, &b);
        // [1 0 2; 0 3 0] diag(2, .5, -1) [1 0; 0 3; 2 0]
        assert_eq!(c.to_dense(), vec![vec![2.0 - 4.0, 0.0], vec![0.0, 4.5]]);
    }
}
