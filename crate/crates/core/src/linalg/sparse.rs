//! Compressed-row sparse matrices over `f64`.
//!
//! Every operator in this crate is real in the occupation-number basis: the
//! potentials are radial, so their Fourier transforms are real, and the
//! pair kernels are real. Duplicate entries are merged with compensated
//! summation in (row, col) order so assembly is reproducible.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::NeumaierSum;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
    hermitian: bool,
}

const PAR_ROWS: usize = 4096;

impl SparseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
            hermitian: rows == cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n);
        indptr.push(0);
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                indices.push(i);
                data.push(d);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: n,
            cols: n,
            indptr,
            indices,
            data,
            hermitian: true,
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        let mut k = 0;
        while k < triplets.len() {
            let (r, c, _) = triplets[k];
            debug_assert!(r < rows && c < cols, "triplet out of range");
            let mut acc = NeumaierSum::default();
            while k < triplets.len() && triplets[k].0 == r && triplets[k].1 == c {
                acc.add(triplets[k].2);
                k += 1;
            }
            let v = acc.value();
            if v != 0.0 {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            data,
            hermitian: false,
        }
    }

    /// Builds a matrix from per-row entry lists (already column-sorted or not).
    pub fn from_rows(rows: usize, cols: usize, row_entries: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(row_entries.len(), rows);
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut entries in row_entries {
            entries.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < entries.len() {
                let c = entries[k].0;
                let mut acc = NeumaierSum::default();
                while k < entries.len() && entries[k].0 == c {
                    acc.add(entries[k].1);
                    k += 1;
                }
                let v = acc.value();
                if v != 0.0 {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            data,
            hermitian: false,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(m.nrows(), m.ncols(), rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Hermiticity metadata; see [`Self::symmetry_defect`] for the check itself.
    pub fn hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn with_hermitian(mut self, flag: bool) -> Self {
        self.hermitian = flag;
        self
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&j) {
            Ok(k) => self.data[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn diagonal_entries(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.rows);
        let row_dot = |i: usize| -> f64 {
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.data[k] * x[self.indices[k]];
            }
            s
        };
        if self.rows >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row_dot(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let slot = next[j];
                indices[slot] = i;
                data[slot] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr: counts,
            indices,
            data,
            hermitian: self.hermitian,
        }
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &SparseOperator) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let compute_row = |i: usize| -> Vec<(usize, f64)> {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    acc.push((j, a * b));
                }
            }
            acc
        };
        let rows: Vec<Vec<(usize, f64)>> = if self.rows >= PAR_ROWS {
            (0..self.rows).into_par_iter().map(compute_row).collect()
        } else {
            (0..self.rows).map(compute_row).collect()
        };
        Self::from_rows(self.rows, other.cols, rows)
    }

    /// `self + alpha·other`.
    pub fn add_scaled(&self, other: &SparseOperator, alpha: f64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        let rows = (0..self.rows)
            .map(|i| {
                self.row(i)
                    .chain(other.row(i).map(|(j, v)| (j, alpha * v)))
                    .collect()
            })
            .collect();
        let out = Self::from_rows(self.rows, self.cols, rows);
        out.with_hermitian(self.hermitian && other.hermitian)
    }

    pub fn add(&self, other: &SparseOperator) -> Self {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &SparseOperator) -> Self {
        self.add_scaled(other, -1.0)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out.indices_drop_zeros()
    }

    fn indices_drop_zeros(self) -> Self {
        if self.data.iter().all(|&v| v != 0.0) {
            return self;
        }
        let hermitian = self.hermitian;
        let rows = (0..self.rows).map(|i| self.row(i).collect()).collect();
        Self::from_rows(self.rows, self.cols, rows).with_hermitian(hermitian)
    }

    /// Left-multiplies by a diagonal matrix.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.rows);
        let rows = (0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| (j, d[i] * v)).collect())
            .collect();
        Self::from_rows(self.rows, self.cols, rows)
    }

    /// Right-multiplies by a diagonal matrix.
    pub fn scale_cols(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.cols);
        let rows = (0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| (j, v * d[j])).collect())
            .collect();
        Self::from_rows(self.rows, self.cols, rows)
    }

    /// `[a, b] = ab − ba`.
    pub fn commutator(a: &SparseOperator, b: &SparseOperator) -> Self {
        a.matmul(b).sub(&b.matmul(a))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise deviation `max |self − other|`.
    pub fn max_abs_diff(&self, other: &SparseOperator) -> f64 {
        self.sub(other).max_abs()
    }

    /// `max |A − Aᵀ|`.
    pub fn symmetry_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.max_abs_diff(&self.transpose())
    }

    /// `max |A + Aᵀ|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.add(&self.transpose()).max_abs()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Coordinate-format text dump (1-based, matrix-market header).
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}
