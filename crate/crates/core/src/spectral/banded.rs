//! Banded factorizations of nearest-neighbour operators after a
//! bandwidth-reducing site permutation.
//!
//! `LDLᴴ` without pivoting gives the inertia of `H - σ` (Sylvester's law),
//! i.e. the number of eigenvalues below `σ`. Linear solves use a banded LU
//! with partial pivoting.

use num_complex::Complex64 as c64;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Hermitian matrix in band storage, rows and columns permuted by `order`.
#[derive(Debug, Clone)]
pub struct BandedHermitian {
    n: usize,
    bw: usize,
    order: Vec<usize>,
    /// Lower band: entry `(i, j)` with `i - bw <= j <= i` at `i * (bw + 1) + (j + bw - i)`.
    lower: Vec<c64>,
    scale: f64,
}

impl BandedHermitian {
    /// `order[k]` is the original index placed at position `k`.
    pub fn new(m: &SparseMatrix, order: Vec<usize>) -> Self {
        let n = m.dim();
        let p = m.permuted(&order);
        let bw = p.bandwidth();
        let mut lower = vec![ZERO; n * (bw + 1)];
        for i in 0..n {
            for &(j, v) in p.row(i) {
                if j <= i {
                    lower[i * (bw + 1) + (j + bw - i)] = v;
                }
            }
        }
        Self { n, bw, order, lower, scale: m.max_abs().max(f64::MIN_POSITIVE) }
    }

    pub fn identity_order(m: &SparseMatrix) -> Self {
        Self::new(m, (0..m.dim()).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn at(&self, i: usize, j: usize) -> c64 {
        // caller guarantees |i - j| <= bw
        if j <= i {
            self.lower[i * (self.bw + 1) + (j + self.bw - i)]
        } else {
            self.lower[j * (self.bw + 1) + (i + self.bw - j)].conj()
        }
    }

    /// Number of eigenvalues strictly below `sigma`.
    ///
    /// Fails with a numerical error when a pivot is too small to trust; use
    /// [`BandedHermitian::count_below`] for the perturbed retry.
    pub fn try_count_below(&self, sigma: f64) -> Result<usize> {
        let (n, b) = (self.n, self.bw);
        let w = b + 1;
        let mut a = self.lower.clone();
        for i in 0..n {
            a[i * w + b] -= sigma;
        }
        // Without pivoting a small pivot means element growth and untrustworthy
        // inertia, so such shifts are rejected and retried nearby.
        let tiny = 1e-8 * (self.scale + sigma.abs());
        let mut negatives = 0;
        let mut col = vec![ZERO; b + 1];
        for k in 0..n {
            let d = a[k * w + b].re;
            // The last pivot is small whenever sigma is close to an eigenvalue;
            // it feeds no later elimination step, so only its sign matters.
            if !d.is_finite() || (d.abs() < tiny && k + 1 < n) {
                return Err(Error::Convergence { iterations: k, residual: d.abs() });
            }
            if d < 0.0 {
                negatives += 1;
            }
            let last = (k + b).min(n - 1);
            for (t, i) in (k + 1..=last).enumerate() {
                col[t] = a[i * w + (k + b - i)];
            }
            let m = last - k;
            for ti in 0..m {
                let i = k + 1 + ti;
                let li = col[ti] / d;
                if li == ZERO {
                    continue;
                }
                for tj in 0..=ti {
                    let j = k + 1 + tj;
                    a[i * w + (j + b - i)] -= li * col[tj].conj();
                }
                a[i * w + (k + b - i)] = li;
            }
        }
        Ok(negatives)
    }

    /// Number of eigenvalues strictly below `sigma`. If the factorization at
    /// `sigma` meets a small pivot, `sigma` is moved by at most about
    /// `1e-7 (max|H| + |sigma|)`, so only eigenvalues that close to `sigma`
    /// can be miscounted.
    pub fn count_below(&self, sigma: f64) -> Result<usize> {
        let unit = 1e-9 * (self.scale + sigma.abs());
        let mut last_err = None;
        for offset in [0.0, 1.0, -1.618, 2.718, -4.669, 7.389, -11.09, 19.0, -31.4, 57.2] {
            match self.try_count_below(sigma + offset * unit) {
                Ok(c) => return Ok(c),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// LU factorization of `H - z` for solves.
    pub fn factor_shifted(&self, z: c64) -> Result<BandLu> {
        BandLu::new(self, z)
    }

    /// `y = (H) x` in original ordering.
    pub fn matvec(&self, x: &[c64]) -> Vec<c64> {
        let n = self.n;
        let xp: Vec<c64> = self.order.iter().map(|&s| x[s]).collect();
        let mut yp = vec![ZERO; n];
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(n - 1);
            yp[i] = (lo..=hi).map(|j| self.at(i, j) * xp[j]).sum();
        }
        let mut y = vec![ZERO; n];
        for (k, &s) in self.order.iter().enumerate() {
            y[s] = yp[k];
        }
        y
    }
}

/// Banded LU with partial pivoting of `H - z`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    order: Vec<usize>,
    data: Vec<c64>,
    pivots: Vec<usize>,
    min_pivot: f64,
}

impl BandLu {
    fn new(h: &BandedHermitian, z: c64) -> Result<Self> {
        let n = h.n;
        let kl = h.bw;
        // columns i - kl ..= i + 2 kl (upper fill from pivoting)
        let width = 3 * kl + 1;
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        let mut data = vec![ZERO; n * width];
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + kl).min(n - 1);
            for j in lo..=hi {
                data[idx(i, j)] = h.at(i, j);
            }
            data[idx(i, i)] -= z;
        }
        let mut pivots = vec![0; n];
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let p = (k..=last)
                .max_by(|&a, &b| data[idx(a, k)].norm().total_cmp(&data[idx(b, k)].norm()))
                .expect("non-empty");
            pivots[k] = p;
            let right = (k + 2 * kl).min(n - 1);
            if p != k {
                for j in k..=right {
                    data.swap(idx(k, j), idx(p, j));
                }
            }
            let piv = data[idx(k, k)];
            min_pivot = min_pivot.min(piv.norm());
            if piv.norm() == 0.0 || !piv.norm().is_finite() {
                return Err(Error::Convergence { iterations: k, residual: 0.0 });
            }
            for i in k + 1..=last {
                let l = data[idx(i, k)] / piv;
                if l == ZERO {
                    continue;
                }
                data[idx(i, k)] = l;
                for j in k + 1..=right {
                    let u = data[idx(k, j)];
                    if u != ZERO {
                        data[idx(i, j)] -= l * u;
                    }
                }
            }
        }
        Ok(Self { n, kl, width, order: h.order.clone(), data, pivots, min_pivot })
    }

    /// Smallest pivot modulus met during elimination.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `(H - z) x = rhs` in the original ordering.
    pub fn solve(&self, rhs: &[c64]) -> Vec<c64> {
        let (n, kl, width) = (self.n, self.kl, self.width);
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        let mut x: Vec<c64> = self.order.iter().map(|&s| rhs[s]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != ZERO {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.data[idx(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let right = (k + 2 * kl).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=right {
                s -= self.data[idx(k, j)] * x[j];
            }
            x[k] = s / self.data[idx(k, k)];
        }
        let mut out = vec![ZERO; n];
        for (k, &s) in self.order.iter().enumerate() {
            out[s] = x[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dense::eigenvalues;

    fn ring(n: usize, phase: f64, diag: impl Fn(usize) -> f64) -> SparseMatrix {
        let mut m = SparseMatrix::zeros(n);
        for i in 0..n {
            m.add(i, i, c64::new(diag(i), 0.0));
            m.add_hermitian_pair(i, (i + 1) % n, c64::from_polar(-1.0, phase));
        }
        m
    }

    #[test]
    fn inertia_matches_dense_count() {
        let m = ring(37, 0.3, |i| ((i * 7) % 5) as f64 * 0.4);
        let order: Vec<usize> = {
            let mut v = Vec::new();
            let (mut lo, mut hi) = (0, 37);
            while lo < hi {
                v.push(lo);
                lo += 1;
                if lo < hi {
                    hi -= 1;
                    v.push(hi);
                }
            }
            v
        };
        let b = BandedHermitian::new(&m, order);
        assert!(b.bandwidth() <= 2);
        let ev = eigenvalues(&m.to_dense()).unwrap();
        for sigma in [-3.0, -1.1, 0.0, 0.37, 1.5, 2.9, 4.0] {
            let expected = ev.iter().filter(|&&e| e < sigma).count();
            assert_eq!(b.count_below(sigma).unwrap(), expected, "sigma {sigma}");
        }
    }

    #[test]
    fn lu_solve_residual() {
        let m = ring(25, 0.7, |i| (i % 3) as f64);
        let b = BandedHermitian::identity_order(&m);
        let z = c64::new(0.4, 0.0);
        let lu = b.factor_shifted(z).unwrap();
        let rhs: Vec<c64> = (0..25).map(|i| c64::new(1.0 / (1.0 + i as f64), (i % 2) as f64)).collect();
        let x = lu.solve(&rhs);
        let hx = m.matvec(&x);
        let r: f64 = hx.iter().zip(&x).zip(&rhs).map(|((h, x), b)| (h - z * x - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(r < 1e-12, "residual {r}");
    }
}
