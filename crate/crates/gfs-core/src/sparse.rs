//! Compressed sparse row matrices.
//!
//! Adjacency structure is the only sparse data in the pipeline: block-diagonal
//! batch adjacency and its degree-normalized form. Everything else is dense.

use ndarray::Array2;

use crate::scalar::Scalar;

/// Sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a CSR matrix from (row, col, value) triplets.
    ///
    /// Triplets may arrive in any order; duplicates are summed. Panics if an
    /// index is out of bounds.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut per_row: Vec<Vec<(usize, T)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    let slot = values.len() - 1;
                    values[slot] += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored entries of one row as (col, value) pairs.
    pub fn row_iter(&self, row: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[row]..self.indptr[row + 1];
        self.indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c, v))
    }

    /// Dense product `self · rhs`.
    pub fn mul_dense(&self, rhs: &Array2<T>) -> Array2<T> {
        assert_eq!(self.cols, rhs.nrows(), "sparse-dense shape mismatch");
        let mut out = Array2::zeros((self.rows, rhs.ncols()));
        for r in 0..self.rows {
            for (c, v) in self.row_iter(r) {
                for j in 0..rhs.ncols() {
                    out[[r, j]] += v * rhs[[c, j]];
                }
            }
        }
        out
    }

    /// Dense product `selfᵀ · rhs`, without materializing the transpose.
    pub fn transpose_mul_dense(&self, rhs: &Array2<T>) -> Array2<T> {
        assert_eq!(self.rows, rhs.nrows(), "sparse-dense shape mismatch");
        let mut out = Array2::zeros((self.cols, rhs.ncols()));
        for r in 0..self.rows {
            for (c, v) in self.row_iter(r) {
                for j in 0..rhs.ncols() {
                    out[[c, j]] += v * rhs[[r, j]];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row_iter(r) {
                out[[r, c]] = v;
            }
        }
        out
    }
}
