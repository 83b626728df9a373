//! Dense Hermitian linear algebra on `faer` matrices.

use faer::{Mat, Side};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

/// Ascending eigenvalues of a Hermitian matrix (lower triangle is read).
pub fn eigenvalues(m: &Mat<c64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::Convergence { iterations: 0, residual: f64::NAN })
}

/// Ascending eigenvalues and orthonormal eigenvectors (columns).
pub fn eigh(m: &Mat<c64>) -> Result<(Vec<f64>, Mat<c64>)> {
    if m.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let e = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Convergence { iterations: 0, residual: f64::NAN })?;
    let s = e.S().column_vector();
    let vals: Vec<f64> = (0..m.nrows()).map(|i| s[i].re).collect();
    Ok((vals, e.U().to_owned()))
}

/// Inverse of a square matrix via partial-pivoting LU.
pub fn inverse(m: &Mat<c64>) -> Mat<c64> {
    use faer::linalg::solvers::DenseSolveCore;
    m.partial_piv_lu().inverse()
}

/// Spectral norm.
pub fn norm2(m: &Mat<c64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().map(|s| s[0]).unwrap_or(f64::NAN)
}

/// Smallest singular value.
pub fn min_singular(m: &Mat<c64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    m.singular_values().map(|s| *s.last().unwrap()).unwrap_or(f64::NAN)
}

/// `max |A_ij - conj(A_ji)|`.
pub fn hermiticity_defect(m: &Mat<c64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &Mat<c64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

/// Column `j` as a vector.
pub fn column(m: &Mat<c64>, j: usize) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// `(A + Aᴴ) / 2`.
pub fn hermitian_part(m: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

pub fn matvec(m: &Mat<c64>, x: &[c64]) -> Vec<c64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigh_of_pauli_y() {
        let m = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => c64::new(0.0, -1.0),
            (1, 0) => c64::new(0.0, 1.0),
            _ => c64::new(0.0, 0.0),
        });
        let (vals, vecs) = eigh(&m).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let v = column(&vecs, 1);
        let mv = matvec(&m, &v);
        assert!(mv.iter().zip(&v).all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn norms_of_diagonal() {
        let m = Mat::from_fn(3, 3, |i, j| if i == j { c64::new([2.0, -5.0, 0.5][i], 0.0) } else { c64::new(0.0, 0.0) });
        assert!((norm2(&m) - 5.0).abs() < 1e-14);
        assert!((min_singular(&m) - 0.5).abs() < 1e-14);
        let inv = inverse(&m);
        assert!((inv[(1, 1)].re + 0.2).abs() < 1e-15);
    }
}
