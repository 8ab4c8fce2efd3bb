//! Compressed sparse row matrices for graph adjacencies.
//!
//! Canonical form: `row_offsets` has `rows + 1` monotone entries, column
//! indices are strictly increasing within each row, and every index is in
//! range. Construction routines sort and deduplicate so the invariant holds
//! for anything handed to the rest of the pipeline.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicate coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::ShapeMismatch {
                    op: "sparse from_triplets: index out of range",
                    lhs: (r, c),
                    rhs: (rows, cols),
                });
            }
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_offsets.push(0);
        let mut row = 0usize;
        let mut i = 0usize;
        while i < entries.len() {
            let (r, c, mut v) = entries[i];
            i += 1;
            while i < entries.len() && entries[i].0 == r && entries[i].1 == c {
                v += entries[i].2;
                i += 1;
            }
            while row < r {
                row_offsets.push(col_indices.len());
                row += 1;
            }
            col_indices.push(c);
            values.push(v);
        }
        while row < rows {
            row_offsets.push(col_indices.len());
            row += 1;
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Binary matrix from edge pairs; duplicates collapse to a single 1.0.
    pub fn from_edges(rows: usize, cols: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = edges.to_vec();
        for &(r, c) in &pairs {
            if r >= rows || c >= cols {
                return Err(Error::ShapeMismatch {
                    op: "sparse from_edges: index out of range",
                    lhs: (r, c),
                    rhs: (rows, cols),
                });
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; rows + 1];
        for &(r, _) in &pairs {
            row_offsets[r + 1] += 1;
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices: Vec<usize> = pairs.iter().map(|&(_, c)| c).collect();
        let values = vec![1.0; col_indices.len()];
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    /// Undirected edge list (u < v) of a symmetric binary matrix.
    pub fn upper_triangle_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz() / 2);
        for i in 0..self.rows {
            let (cols, _) = self.row(i);
            for &j in cols {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut row_offsets = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            row_offsets[c + 1] += 1;
        }
        for i in 0..self.cols {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = cursor[c];
                col_indices[slot] = r;
                values[slot] = v;
                cursor[c] += 1;
            }
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let t = self.transpose();
        self.row_offsets == t.row_offsets
            && self.col_indices == t.col_indices
            && self
                .values
                .iter()
                .zip(&t.values)
                .all(|(a, b)| (a - b).abs() < 1e-12)
    }

    /// Boolean product: an entry of the result is 1.0 wherever the product of
    /// the binarized inputs is nonzero. Used for meta-path composition.
    pub fn bool_multiply(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "sparse bool_multiply",
                lhs: (self.rows, self.cols),
                rhs: (other.rows, other.cols),
            });
        }
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        let mut seen = vec![false; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.rows {
            let (mids, _) = self.row(i);
            for &m in mids {
                let (cols, _) = other.row(m);
                for &c in cols {
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                }
            }
            touched.sort_unstable();
            col_indices.extend_from_slice(&touched);
            for &c in &touched {
                seen[c] = false;
            }
            touched.clear();
            row_offsets.push(col_indices.len());
        }
        let values = vec![1.0; col_indices.len()];
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Drop diagonal entries.
    pub fn without_diagonal(&self) -> SparseMatrix {
        let mut out_offsets = Vec::with_capacity(self.rows + 1);
        let mut out_cols = Vec::with_capacity(self.nnz());
        let mut out_vals = Vec::with_capacity(self.nnz());
        out_offsets.push(0);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c != i {
                    out_cols.push(c);
                    out_vals.push(v);
                }
            }
            out_offsets.push(out_cols.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_offsets: out_offsets,
            col_indices: out_cols,
            values: out_vals,
        }
    }

    /// Union with own transpose, binarized.
    pub fn symmetrized(&self) -> Result<SparseMatrix> {
        let t = self.transpose();
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(self.nnz() * 2);
        for i in 0..self.rows {
            let (cols, _) = self.row(i);
            for &c in cols {
                edges.push((i, c));
            }
            let (cols, _) = t.row(i);
            for &c in cols {
                edges.push((i, c));
            }
        }
        SparseMatrix::from_edges(self.rows, self.cols, &edges)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] = v;
            }
        }
        m
    }

    /// Validate canonical form: monotone offsets, in-range and strictly
    /// increasing column indices per row.
    pub fn check_canonical(&self) -> Result<()> {
        if self.row_offsets.len() != self.rows + 1
            || self.row_offsets[0] != 0
            || *self.row_offsets.last().unwrap() != self.col_indices.len()
        {
            return Err(Error::Config("csr: malformed row offsets".into()));
        }
        for i in 0..self.rows {
            if self.row_offsets[i] > self.row_offsets[i + 1] {
                return Err(Error::Config(format!("csr: row {i} offsets decrease")));
            }
            let (cols, _) = self.row(i);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Config(format!("csr: row {i} not strictly sorted")));
                }
            }
            if let Some(&last) = cols.last() {
                if last >= self.cols {
                    return Err(Error::Config(format!("csr: row {i} column out of range")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_edges_sorts_and_dedupes() {
        let m = SparseMatrix::from_edges(3, 3, &[(2, 1), (0, 2), (0, 1), (0, 1)]).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row(0), (&[1usize, 2][..], &[1.0, 1.0][..]));
        m.check_canonical().unwrap();
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(SparseMatrix::from_edges(2, 2, &[(0, 5)]).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let m = SparseMatrix::from_edges(3, 4, &[(0, 3), (1, 0), (2, 2)]).unwrap();
        let tt = m.transpose().transpose();
        assert_eq!(m, tt);
    }

    #[test]
    fn bool_multiply_matches_dense_product() {
        let a = SparseMatrix::from_edges(2, 3, &[(0, 0), (0, 2), (1, 1)]).unwrap();
        let b = SparseMatrix::from_edges(3, 2, &[(0, 1), (1, 0), (2, 1)]).unwrap();
        let c = a.bool_multiply(&b).unwrap();
        let dense = Matrix::matmul(&a.to_dense(), &b.to_dense());
        for i in 0..2 {
            for j in 0..2 {
                let expect = if dense[(i, j)] != 0.0 { 1.0 } else { 0.0 };
                assert_eq!(c.to_dense()[(i, j)], expect);
            }
        }
    }

    #[test]
    fn symmetrized_contains_both_directions() {
        let m = SparseMatrix::from_edges(3, 3, &[(0, 1)]).unwrap();
        let s = m.symmetrized().unwrap();
        assert!(s.is_symmetric());
        assert_eq!(s.nnz(), 2);
    }
}
