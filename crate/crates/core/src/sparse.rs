//! Compressed sparse row matrices and the handful of operations the
//! fitting pipeline needs: products against diagonal weights, stacking,
//! row selection/scaling and dense conversion.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("triplet index ({row}, {col}) outside {nrows}x{ncols}")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
}

/// Sparse matrix in CSR form. Column indices within a row are strictly
/// increasing and explicit zeros are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Triplet accumulator for incremental construction; duplicate entries sum.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn build(self, nrows: usize, ncols: usize) -> Result<CsrMatrix, SparseError> {
        CsrMatrix::from_triplets(nrows, ncols, &self.rows, &self.cols, &self.vals)
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Build from coordinate triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        rows: &[usize],
        cols: &[usize],
        vals: &[f64],
    ) -> Result<Self, SparseError> {
        if rows.len() != cols.len() || rows.len() != vals.len() {
            return Err(SparseError::ShapeMismatch(
                "triplet arrays must have equal length".into(),
            ));
        }
        for ((&r, &c), _) in rows.iter().zip(cols).zip(vals) {
            if r >= nrows || c >= ncols {
                return Err(SparseError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_unstable_by_key(|&k| (rows[k], cols[k]));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for &k in &order {
            let (r, c, v) = (rows[k], cols[k], vals[k]);
            // sorted by (row, col): if row r already has entries, the last
            // pushed entry belongs to row r
            if indptr[r + 1] > 0 && *indices.last().unwrap() == c {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        // prefix-sum row counts into offsets
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut b = TripletBuilder::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    b.push(i, j, m[(i, j)]);
                }
            }
        }
        b.build(m.nrows(), m.ncols()).expect("dense conversion")
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

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[i] = acc;
        }
        y
    }

    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "matvec_t dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts.clone();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let pos = next[c];
                indices[pos] = i;
                values[pos] = v;
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter_entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// Returns `diag(s) * self` (row i scaled by s[i]).
    pub fn scale_rows(&self, s: &[f64]) -> Self {
        assert_eq!(s.len(), self.nrows, "scale_rows length mismatch");
        let mut out = self.clone();
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out.values[p] *= s[i];
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(idx.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for &i in idx {
            let (cols, vals) = self.row(i);
            indices.extend_from_slice(cols);
            values.extend_from_slice(vals);
            indptr.push(indices.len());
        }
        Self {
            nrows: idx.len(),
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Horizontal concatenation; blocks must share a row count.
    pub fn hstack(blocks: &[&CsrMatrix]) -> Result<Self, SparseError> {
        if blocks.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let nrows = blocks[0].nrows;
        if blocks.iter().any(|b| b.nrows != nrows) {
            return Err(SparseError::ShapeMismatch(
                "hstack blocks must have equal row counts".into(),
            ));
        }
        let ncols: usize = blocks.iter().map(|b| b.ncols).sum();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..nrows {
            let mut offset = 0;
            for b in blocks {
                let (cols, vals) = b.row(i);
                indices.extend(cols.iter().map(|&c| c + offset));
                values.extend_from_slice(vals);
                offset += b.ncols;
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Block-diagonal stacking: each block occupies its own row and column range.
    pub fn block_diag(blocks: &[&CsrMatrix]) -> Self {
        let nrows: usize = blocks.iter().map(|b| b.nrows).sum();
        let ncols: usize = blocks.iter().map(|b| b.ncols).sum();
        let mut b = TripletBuilder::new();
        let (mut ro, mut co) = (0usize, 0usize);
        for m in blocks {
            for (i, j, v) in m.iter_entries() {
                b.push(ro + i, co + j, v);
            }
            ro += m.nrows;
            co += m.ncols;
        }
        b.build(nrows, ncols).expect("block_diag bounds")
    }

    /// Vertical concatenation; blocks must share a column count.
    pub fn vstack(blocks: &[&CsrMatrix]) -> Result<Self, SparseError> {
        if blocks.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let ncols = blocks[0].ncols;
        if blocks.iter().any(|b| b.ncols != ncols) {
            return Err(SparseError::ShapeMismatch(
                "vstack blocks must have equal column counts".into(),
            ));
        }
        let nrows: usize = blocks.iter().map(|b| b.nrows).sum();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for b in blocks {
            for i in 0..b.nrows {
                let (cols, vals) = b.row(i);
                indices.extend_from_slice(cols);
                values.extend_from_slice(vals);
                indptr.push(indices.len());
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Widen to `ncols` by appending implicit zero columns.
    pub fn pad_cols(&self, ncols: usize) -> Self {
        assert!(ncols >= self.ncols);
        let mut out = self.clone();
        out.ncols = ncols;
        out
    }

    /// Computes the symmetric product `self^T * diag(w) * self` (CSR).
    ///
    /// Row-by-row Gustavson accumulation: the result row j gathers every
    /// input row i that has a nonzero in column j.
    pub fn normal_product(&self, w: &[f64]) -> Self {
        assert_eq!(w.len(), self.nrows, "weight length mismatch");
        let at = self.transpose();
        let n = self.ncols;
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let mut indices: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut acc = vec![0.0f64; n];
        let mut mark = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        for j in 0..n {
            let (rows_j, vals_j) = at.row(j);
            for (&i, &aij) in rows_j.iter().zip(vals_j) {
                let scale = w[i] * aij;
                let (cols_i, vals_i) = self.row(i);
                for (&c, &v) in cols_i.iter().zip(vals_i) {
                    if mark[c] != j {
                        mark[c] = j;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += scale * v;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                indices.push(c);
                values.push(acc[c]);
            }
            touched.clear();
            indptr.push(indices.len());
        }
        Self {
            nrows: n,
            ncols: n,
            indptr,
            indices,
            values,
        }
    }

    /// Entry-wise sum of two matrices with identical shape.
    pub fn add(&self, other: &Self) -> Result<Self, SparseError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(SparseError::ShapeMismatch(format!(
                "add: {}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                if q >= cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                    indices.push(ca[p]);
                    values.push(va[p]);
                    p += 1;
                } else if p >= ca.len() || cb[q] < ca[p] {
                    indices.push(cb[q]);
                    values.push(vb[q]);
                    q += 1;
                } else {
                    indices.push(ca[p]);
                    values.push(va[p] + vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Dense product `self * m` for tall-thin dense factors (basis matrices).
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, m.nrows(), "mul_dense dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                for k in 0..m.ncols() {
                    out[(i, k)] += v * m[(c, k)];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 4, &[0, 0, 1, 2, 2], &[0, 2, 1, 0, 3], &[1.0, 2.0, 3.0, 4.0, 5.0])
            .unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[0, 0, 1], &[1, 1, 0], &[1.0, 2.5, -1.0]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), dmatrix![0.0, 3.5; -1.0, 0.0]);
    }

    #[test]
    fn triplets_reject_out_of_bounds() {
        let err = CsrMatrix::from_triplets(2, 2, &[2], &[0], &[1.0]).unwrap_err();
        assert!(matches!(err, SparseError::IndexOutOfBounds { row: 2, .. }));
    }

    #[test]
    fn matvec_against_dense() {
        let m = sample();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let dense = m.to_dense();
        let y = m.matvec(&x);
        let yd = dense * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_round_trip() {
        let m = sample();
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
    }

    #[test]
    fn normal_product_matches_dense() {
        let m = sample();
        let w = vec![2.0, 0.5, 1.5];
        let got = m.normal_product(&w).to_dense();
        let d = m.to_dense();
        let want = d.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&w)) * d;
        assert!((got - want).norm() < 1e-13);
    }

    #[test]
    fn stacking_and_selection() {
        let a = sample();
        let b = CsrMatrix::identity(3);
        let h = CsrMatrix::hstack(&[&a, &b]).unwrap();
        assert_eq!(h.ncols(), 7);
        assert_eq!(h.to_dense().columns(4, 3), CsrMatrix::identity(3).to_dense().columns(0, 3));

        let v = CsrMatrix::vstack(&[&b, &b]).unwrap();
        assert_eq!(v.nrows(), 6);

        let s = a.select_rows(&[2, 0]);
        assert_eq!(s.to_dense().row(0), a.to_dense().row(2));
        assert_eq!(s.to_dense().row(1), a.to_dense().row(0));
    }

    #[test]
    fn add_merges_patterns() {
        let a = sample();
        let b = CsrMatrix::from_triplets(3, 4, &[0, 1], &[1, 1], &[10.0, -3.0]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.to_dense(), a.to_dense() + b.to_dense());
    }

    #[test]
    fn block_diag_layout() {
        let a = CsrMatrix::identity(2);
        let b = sample();
        let d = CsrMatrix::block_diag(&[&a, &b]);
        assert_eq!(d.nrows(), 5);
        assert_eq!(d.ncols(), 6);
        assert_eq!(d.to_dense()[(0, 0)], 1.0);
        assert_eq!(d.to_dense()[(2, 2)], 1.0); // sample()(0,0) shifted by (2,2)
    }
}
