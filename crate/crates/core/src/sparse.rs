//! Row-compressed complex Hermitian matrices.

use std::fmt::Write as _;

use faer::Mat;
use num_complex::Complex64 as c64;

/// Sparse square matrix stored as sorted `(column, value)` rows.
///
/// Both triangles are stored; [`SparseMatrix::hermiticity_defect`] measures
/// how far the pair is from being adjoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, c64)>>,
}

impl SparseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, rows: vec![Vec::new(); n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let rows = d.iter().enumerate().map(|(i, &v)| vec![(i, c64::new(v, 0.0))]).collect();
        Self { n: d.len(), rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, i: usize) -> &[(usize, c64)] {
        &self.rows[i]
    }

    /// Adds `v` to entry `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, v: c64) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |e| e.0) {
            Ok(k) => row[k].1 += v,
            Err(k) => row.insert(k, (j, v)),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |e| e.0).map_or(c64::new(0.0, 0.0), |k| row[k].1)
    }

    /// Adds `v` at `(i, j)` and `conj(v)` at `(j, i)`; diagonal entries once.
    pub fn add_hermitian_pair(&mut self, i: usize, j: usize, v: c64) {
        self.add(i, j, v);
        if i != j {
            self.add(j, i, v.conj());
        }
    }

    pub fn matvec(&self, x: &[c64]) -> Vec<c64> {
        let mut y = vec![c64::new(0.0, 0.0); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[c64], y: &mut [c64]) {
        for (yi, row) in y.iter_mut().zip(&self.rows) {
            *yi = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &SparseMatrix) -> SparseMatrix {
        let mut out = self.clone();
        for (i, row) in other.rows.iter().enumerate() {
            for &(j, v) in row {
                out.add(i, j, v * s);
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let rows = self.rows.iter().map(|r| r.iter().map(|&(j, v)| (j, v * s)).collect()).collect();
        SparseMatrix { n: self.n, rows }
    }

    /// Drops stored entries with modulus at most `tol`.
    pub fn pruned(mut self, tol: f64) -> Self {
        for r in &mut self.rows {
            r.retain(|e| e.1.norm() > tol);
        }
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().flatten().fold(0.0, |m, e| m.max(e.1.norm()))
    }

    /// `max |H_ij - conj(H_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                worst = worst.max((v - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// All stored entries have zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.rows.iter().flatten().all(|e| e.1.im == 0.0)
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `P^T H P` for the permutation `order[k] = old index at new position k`.
    pub fn permuted(&self, order: &[usize]) -> SparseMatrix {
        let mut inv = vec![0usize; self.n];
        for (k, &s) in order.iter().enumerate() {
            inv[s] = k;
        }
        let mut rows = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            let mut r: Vec<(usize, c64)> = row.iter().map(|&(j, v)| (inv[j], v)).collect();
            r.sort_by_key(|e| e.0);
            rows[inv[i]] = r;
        }
        SparseMatrix { n: self.n, rows }
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |e| i.abs_diff(e.0)))
            .max()
            .unwrap_or(0)
    }

    /// Coordinate-format text: one `row col re im` line per stored entry.
    pub fn to_triplets(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                let _ = writeln!(s, "{i} {j} {:e} {:e}", v.re, v.im);
            }
        }
        s
    }

    pub fn from_dense(m: &Mat<c64>, tol: f64) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)].norm() > tol {
                    out.rows[i].push((j, m[(i, j)]));
                }
            }
        }
        out
    }
}

pub fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
