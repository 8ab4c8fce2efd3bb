//! Dense row-major f64 matrix with the handful of kernels the model needs.

use rayon::prelude::*;
use std::ops::{Index, IndexMut};

use crate::sparse::SparseMatrix;

/// Work threshold below which kernels stay single-threaded. The split is a
/// pure function of shape, so results are bit-identical at any thread count.
const PAR_FLOPS: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn scalar(v: f64) -> Self {
        Matrix::from_vec(1, 1, vec![v])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transposed(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Select a subset of rows (used to slice labeled nodes).
    pub fn select_rows(&self, ids: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(ids.len(), self.cols);
        for (k, &i) in ids.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    /// `self @ rhs`, parallelized over output rows above a size threshold.
    pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
        assert_eq!(a.cols, b.rows, "matmul inner dims");
        let mut out = Matrix::zeros(a.rows, b.cols);
        let work = a.rows * a.cols * b.cols;
        if work < PAR_FLOPS {
            for i in 0..a.rows {
                Self::matmul_row(a.row(i), b, out.row_mut(i));
            }
        } else {
            let b_ref = &*b;
            out.data
                .par_chunks_mut(b.cols)
                .enumerate()
                .for_each(|(i, out_row)| Self::matmul_row(a.row(i), b_ref, out_row));
        }
        out
    }

    fn matmul_row(a_row: &[f64], b: &Matrix, out_row: &mut [f64]) {
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }

    /// Sparse-dense product `adj @ x`.
    pub fn spmm(adj: &SparseMatrix, x: &Matrix) -> Matrix {
        assert_eq!(adj.cols(), x.rows, "spmm inner dims");
        let mut out = Matrix::zeros(adj.rows(), x.cols);
        let work = adj.nnz() * x.cols;
        let compute = |i: usize, out_row: &mut [f64]| {
            let (cols, vals) = adj.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let x_row = x.row(c);
                for (o, &xv) in out_row.iter_mut().zip(x_row) {
                    *o += v * xv;
                }
            }
        };
        if work < PAR_FLOPS {
            for i in 0..adj.rows() {
                compute(i, out.row_mut(i));
            }
        } else {
            out.data
                .par_chunks_mut(x.cols)
                .enumerate()
                .for_each(|(i, row)| compute(i, row));
        }
        out
    }

    /// `adj^T @ g` without materializing the transpose (sequential scatter).
    pub fn spmm_transpose(adj: &SparseMatrix, g: &Matrix) -> Matrix {
        assert_eq!(adj.rows(), g.rows, "spmm_transpose inner dims");
        let mut out = Matrix::zeros(adj.cols(), g.cols);
        for i in 0..adj.rows() {
            let (cols, vals) = adj.row(i);
            let g_row = g.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let out_row = out.row_mut(c);
                for (o, &gv) in out_row.iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i = Matrix::identity(2);
        let m = Matrix::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert_eq!(Matrix::matmul(&i, &m), m);
    }

    #[test]
    fn matmul_small_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]);
        let c = Matrix::matmul(&a, &b);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn spmm_transpose_matches_dense() {
        let adj = SparseMatrix::from_edges(3, 2, &[(0, 1), (1, 0), (2, 1)]).unwrap();
        let g = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let got = Matrix::spmm_transpose(&adj, &g);
        let expect = Matrix::matmul(&adj.to_dense().transposed(), &g);
        assert_eq!(got, expect);
    }
}
