use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Compressed sparse row matrix; entries are unique and sorted by (row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from unordered triplets, rejecting out-of-range indices and
    /// duplicate (row, col) keys.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, T)>,
    ) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= rows {
                return Err(Error::IndexOutOfRange {
                    op: "sparse row",
                    index: r,
                    bound: rows,
                });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange {
                    op: "sparse col",
                    index: c,
                    bound: cols,
                });
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for w in entries.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let row_idx = entries.iter().map(|e| e.0).collect();
        let col_idx = entries.iter().map(|e| e.1).collect();
        let vals = entries.into_iter().map(|e| e.2).collect();
        Ok(Self {
            rows,
            cols,
            row_ptr,
            row_idx,
            col_idx,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, T::one())).collect())
            .expect("identity is well formed")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    #[inline]
    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    #[inline]
    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.vals
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nnz()).map(move |k| (self.row_idx[k], self.col_idx[k], self.vals[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> Option<T> {
        let range = self.row_range(r);
        self.col_idx[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| self.vals[range.start + k])
    }

    /// Same sparsity pattern with new values.
    pub fn with_values(&self, vals: Vec<T>) -> Result<Self> {
        if vals.len() != self.nnz() {
            return Err(Error::Shape {
                op: "with_values",
                left: (self.nnz(), 1),
                right: (vals.len(), 1),
            });
        }
        Ok(Self {
            vals,
            ..self.clone()
        })
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|r| self.vals[self.row_range(r)].iter().copied().sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.cols,
            self.rows,
            self.entries().map(|(r, c, v)| (c, r, v)).collect(),
        )
        .expect("transpose of a valid matrix is valid")
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            t.set(r, c, v);
        }
        t
    }

    /// `self · d` on plain values.
    pub fn mul_dense(&self, d: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != d.rows() {
            return Err(Error::Shape {
                op: "spmm",
                left: (self.rows, self.cols),
                right: d.shape(),
            });
        }
        let k = d.cols();
        let mut out = Tensor::zeros(self.rows, k);
        for r in 0..self.rows {
            for e in self.row_range(r) {
                let v = self.vals[e];
                let src = d.row(self.col_idx[e]);
                let dst = out.row_mut(r);
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }
}
