//! Compressed sparse row matrices and a small row-major dense type.
//!
//! The CSR invariants are: `row_ptr` has length `n_rows + 1`, is
//! nondecreasing, starts at 0 and ends at nnz; within each row the column
//! indices are strictly increasing; every stored value is finite and
//! nonzero. Construction from triplets sums duplicates and then drops
//! entries that cancelled to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are
    /// summed; entries that sum to exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::dims(
                    "from_triplets",
                    format!("indices within {n_rows}x{n_cols}"),
                    format!("({r}, {c})"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::invalid("value", format!("non-finite at ({r}, {c})")));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut i = 0;
        while i < sorted.len() {
            let (r, c, mut v) = sorted[i];
            i += 1;
            while i < sorted.len() && sorted[i].0 == r && sorted[i].1 == c {
                v += sorted[i].2;
                i += 1;
            }
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Iterate rows as (row_index, cols, vals).
    pub fn rows(&self) -> impl Iterator<Item = (usize, &[usize], &[f64])> {
        (0..self.n_rows).map(move |r| {
            let (c, v) = self.row(r);
            (r, c, v)
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::dims(
                "matvec",
                format!("{}", self.n_cols),
                format!("{}", x.len()),
            ));
        }
        let mut y = vec![0.0; self.n_rows];
        for (r, cols, vals) in self.rows() {
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// p-th powers of the row lp norms: out[j] = sum_k |a_jk|^p.
    pub fn row_lp_norms(&self, p: f64) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| {
                let (_, vals) = self.row(r);
                vals.iter().map(|v| v.abs().powf(p)).sum()
            })
            .collect()
    }

    /// Elementwise lp norm of the whole matrix: (sum |a_ij|^p)^{1/p}.
    pub fn elementwise_lp_norm(&self, p: f64) -> f64 {
        self.values
            .iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// A^T A as a dense d x d matrix, one pass over the nonzeros.
    pub fn gram(&self) -> DenseMatrix {
        let d = self.n_cols;
        let mut g = DenseMatrix::zeros(d, d);
        for (_, cols, vals) in self.rows() {
            for (&c1, &v1) in cols.iter().zip(vals) {
                for (&c2, &v2) in cols.iter().zip(vals) {
                    g.set(c1, c2, g.get(c1, c2) + v1 * v2);
                }
            }
        }
        g
    }

    /// [A b]: append one dense column on the right.
    pub fn augment_column(&self, b: &[f64]) -> Result<SparseMatrix> {
        if b.len() != self.n_rows {
            return Err(Error::dims(
                "augment_column",
                format!("{}", self.n_rows),
                format!("{}", b.len()),
            ));
        }
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + self.n_rows);
        let mut values = Vec::with_capacity(self.nnz() + self.n_rows);
        row_ptr.push(0);
        for (r, cols, vals) in self.rows() {
            col_idx.extend_from_slice(cols);
            values.extend_from_slice(vals);
            if b[r] != 0.0 {
                if !b[r].is_finite() {
                    return Err(Error::invalid("b", format!("non-finite at row {r}")));
                }
                col_idx.push(self.n_cols);
                values.push(b[r]);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols + 1,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Extract the scaled submatrix given by (row, scale) pairs; output row i
    /// is scale_i times input row rows[i].
    pub fn select_scaled_rows(&self, picks: &[(usize, f64)]) -> Result<SparseMatrix> {
        let mut row_ptr = Vec::with_capacity(picks.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &(r, w) in picks {
            if r >= self.n_rows {
                return Err(Error::dims(
                    "select_scaled_rows",
                    format!("row < {}", self.n_rows),
                    format!("{r}"),
                ));
            }
            let (cols, vals) = self.row(r);
            col_idx.extend_from_slice(cols);
            values.extend(vals.iter().map(|v| v * w));
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            n_rows: picks.len(),
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (r, cols, vals) in self.rows() {
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.n_rows() {
            for c in 0..m.n_cols() {
                let v = m.get(r, c);
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        SparseMatrix::from_triplets(m.n_rows(), m.n_cols(), &triplets)
            .expect("dense entries are in range")
    }

    /// Internal consistency check of the CSR invariants.
    pub fn check_invariants(&self) -> Result<()> {
        if self.row_ptr.len() != self.n_rows + 1
            || self.row_ptr[0] != 0
            || *self.row_ptr.last().unwrap() != self.values.len()
            || self.col_idx.len() != self.values.len()
        {
            return Err(Error::invalid("csr", "row_ptr/storage shape"));
        }
        for r in 0..self.n_rows {
            if self.row_ptr[r] > self.row_ptr[r + 1] {
                return Err(Error::invalid("csr", format!("row_ptr decreases at {r}")));
            }
            let (cols, vals) = self.row(r);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::invalid("csr", format!("unsorted columns in row {r}")));
                }
            }
            for (&c, &v) in cols.iter().zip(vals) {
                if c >= self.n_cols || !v.is_finite() || v == 0.0 {
                    return Err(Error::invalid("csr", format!("bad entry ({r}, {c})")));
                }
            }
        }
        Ok(())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput {
                what: "from_rows",
                reason: "no rows".into(),
            });
        }
        let n_cols = rows[0].len();
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::dims("from_rows", format!("{n_cols} cols"), "ragged"));
        }
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n_cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::dims(
                "matvec",
                format!("{}", self.n_cols),
                format!("{}", x.len()),
            ));
        }
        Ok((0..self.n_rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// self * other, sized (n_rows x other.n_cols).
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::dims(
                "matmul",
                format!("{} inner", self.n_cols),
                format!("{}", other.n_rows),
            ));
        }
        let mut out = DenseMatrix::zeros(self.n_rows, other.n_cols);
        for r in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.n_cols {
                    out.data[r * out.n_cols + c] += a * other.get(k, c);
                }
            }
        }
        Ok(out)
    }

    pub fn row_lp_norms(&self, p: f64) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).iter().map(|v| v.abs().powf(p)).sum())
            .collect()
    }

    pub fn elementwise_lp_norm(&self, p: f64) -> f64 {
        self.data
            .iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// A^T A, the d x d Gram matrix.
    pub fn gram(&self) -> DenseMatrix {
        let d = self.n_cols;
        let mut g = DenseMatrix::zeros(d, d);
        for r in 0..self.n_rows {
            let row = self.row(r);
            for i in 0..d {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    g.data[i * d + j] += row[i] * row[j];
                }
            }
        }
        g
    }

    pub fn to_na(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n_rows, self.n_cols, &self.data)
    }

    pub fn from_na(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.set(r, c, m[(r, c)]);
            }
        }
        out
    }
}

/// lp norm of a vector; p = infinity is not needed here, callers use
/// `max_abs` for the dual of p = 1.
pub fn lp_norm(xs: &[f64], p: f64) -> f64 {
    xs.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// p-th power of the lp norm, sum |x_i|^p.
pub fn lp_norm_pow(xs: &[f64], p: f64) -> f64 {
    xs.iter().map(|x| x.abs().powf(p)).sum::<f64>()
}

pub fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
