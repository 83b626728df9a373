//! Eigenvalue computations: dense diagonalization, inertia-based spectrum
//! slicing and windowed shift-invert subspace iteration.

pub mod banded;
pub mod dense;
pub mod ensemble;
pub mod gap_track;
pub mod ids;

use faer::Mat;
use num_complex::Complex64 as c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::MagneticOperator;
use crate::sparse::{dot, norm, SparseMatrix};
use banded::BandedHermitian;

/// Largest dimension handled by dense diagonalization.
pub const DENSE_THRESHOLD: usize = 4096;
/// Relative eigen-residual tolerance `‖Hv - Ev‖ / (‖v‖ max|H|)`.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Full,
    Window { lo: f64, hi: f64 },
    Lowest { k: usize },
    Highest { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub dense_threshold: usize,
    /// Maximum number of eigenpairs returned by a windowed solve.
    pub window_capacity: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { dense_threshold: DENSE_THRESHOLD, window_capacity: 256, max_iterations: 500, tolerance: RESIDUAL_TOL }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<Mat<c64>>,
    pub window: Option<(f64, f64)>,
    pub residuals: Vec<f64>,
}

impl SpectralResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Eigenvalues (and eigenvectors) of an assembled operator.
pub fn solve(op: &MagneticOperator, mode: SolveMode) -> Result<SpectralResult> {
    solve_with(op, mode, &SolverOptions::default())
}

pub fn solve_with(op: &MagneticOperator, mode: SolveMode, opts: &SolverOptions) -> Result<SpectralResult> {
    match mode {
        SolveMode::Full => solve_dense(op.matrix(), opts),
        _ => Slicer::new(op).solve(mode, opts),
    }
}

/// Full dense diagonalization with residuals.
pub fn solve_dense(m: &SparseMatrix, opts: &SolverOptions) -> Result<SpectralResult> {
    let n = m.dim();
    if n > opts.dense_threshold {
        return Err(Error::Capacity(format!(
            "dense solve of dimension {n} exceeds the threshold {}; use a windowed solve",
            opts.dense_threshold
        )));
    }
    let (vals, vecs) = dense::eigh(&m.to_dense())?;
    let residuals = (0..n).map(|j| residual(m, &dense::column(&vecs, j), vals[j])).collect();
    Ok(SpectralResult { eigenvalues: vals, eigenvectors: Some(vecs), window: None, residuals })
}

/// Eigenvalues only, dense.
pub fn eigenvalues_dense(m: &SparseMatrix) -> Result<Vec<f64>> {
    if m.dim() > DENSE_THRESHOLD {
        return Err(Error::Capacity(format!(
            "dense solve of dimension {} exceeds the threshold {DENSE_THRESHOLD}",
            m.dim()
        )));
    }
    dense::eigenvalues(&m.to_dense())
}

fn residual(m: &SparseMatrix, v: &[c64], e: f64) -> f64 {
    let hv = m.matvec(v);
    let r: f64 = hv.iter().zip(v).map(|(a, b)| (a - b * e).norm_sqr()).sum::<f64>().sqrt();
    r / norm(v).max(f64::MIN_POSITIVE)
}

/// Gershgorin interval containing the spectrum.
pub fn gershgorin(m: &SparseMatrix) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.dim() {
        let mut c = 0.0;
        let mut r = 0.0;
        for &(j, v) in m.row(i) {
            if j == i {
                c = v.re;
            } else {
                r += v.norm();
            }
        }
        lo = lo.min(c - r);
        hi = hi.max(c + r);
    }
    if m.dim() == 0 {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Inertia-based spectrum slicing on a banded reordering of the operator.
#[derive(Debug, Clone)]
pub struct Slicer {
    matrix: SparseMatrix,
    banded: BandedHermitian,
}

impl Slicer {
    pub fn new(op: &MagneticOperator) -> Self {
        let order = op.geometry().band_ordering();
        Self::from_matrix(op.matrix().clone(), order)
    }

    pub fn from_matrix(matrix: SparseMatrix, order: Vec<usize>) -> Self {
        let banded = BandedHermitian::new(&matrix, order);
        Self { matrix, banded }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn banded(&self) -> &BandedHermitian {
        &self.banded
    }

    /// Number of eigenvalues strictly below `e`.
    pub fn count_below(&self, e: f64) -> Result<usize> {
        self.banded.count_below(e)
    }

    /// Number of eigenvalues in `[lo, hi)`.
    pub fn count_in(&self, lo: f64, hi: f64) -> Result<usize> {
        if hi <= lo {
            return Ok(0);
        }
        Ok(self.count_below(hi)?.saturating_sub(self.count_below(lo)?))
    }

    /// The `k`-th eigenvalue (0-based, ascending).
    ///
    /// Bisection on inertia brackets it to about `1e-7 max|H|` (the
    /// resolution of unpivoted inertia near clustered eigenvalues); tighter
    /// tolerances are met by a Rayleigh-Ritz solve on the bracket.
    pub fn kth_eigenvalue(&self, k: usize, tol: f64) -> Result<f64> {
        let n = self.matrix.dim();
        if k >= n {
            return Err(Error::Input(format!("eigenvalue index {k} out of range for dimension {n}")));
        }
        let (mut lo, mut hi) = gershgorin(&self.matrix);
        lo -= 1e-9 * (1.0 + lo.abs());
        hi += 1e-9 * (1.0 + hi.abs());
        let coarse = tol.max(1e-7 * self.banded.scale());
        // invariant: count_below(lo) <= k < count_below(hi)
        while hi - lo > coarse {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid)? > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let below = self.count_below(lo)?;
        let r = self.window(lo, hi, &SolverOptions::default())?;
        match r.eigenvalues.get(k.saturating_sub(below)) {
            Some(&e) => Ok(e),
            None => Ok(0.5 * (lo + hi)),
        }
    }

    /// Smallest eigenvalue strictly above `e`, by bisection to `tol`.
    pub fn next_above(&self, e: f64, tol: f64) -> Result<Option<f64>> {
        let below = self.count_below(e)?;
        // an eigenvalue exactly at e counts as "not below"
        if below >= self.matrix.dim() {
            return Ok(None);
        }
        self.kth_eigenvalue(below, tol).map(Some)
    }

    /// Largest eigenvalue strictly below `e`.
    pub fn next_below(&self, e: f64, tol: f64) -> Result<Option<f64>> {
        let below = self.count_below(e)?;
        if below == 0 {
            return Ok(None);
        }
        self.kth_eigenvalue(below - 1, tol).map(Some)
    }

    /// `dist(σ(H), e)` if it is at most `max_dist`, else `None`.
    pub fn distance_within(&self, e: f64, max_dist: f64, tol: f64) -> Result<Option<f64>> {
        if self.count_in(e - max_dist, e + max_dist)? == 0 {
            return Ok(None);
        }
        let (mut lo, mut hi) = (0.0, max_dist);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.count_in(e - mid, e + mid)? > 0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    }

    pub fn solve(&self, mode: SolveMode, opts: &SolverOptions) -> Result<SpectralResult> {
        match mode {
            SolveMode::Full => solve_dense(&self.matrix, opts),
            SolveMode::Window { lo, hi } => self.window(lo, hi, opts),
            SolveMode::Lowest { k } | SolveMode::Highest { k } => {
                let n = self.matrix.dim();
                if k == 0 {
                    return Ok(SpectralResult { eigenvalues: vec![], eigenvectors: None, window: None, residuals: vec![] });
                }
                if k > n {
                    return Err(Error::Input(format!("requested {k} eigenvalues of a dimension-{n} operator")));
                }
                let lowest = matches!(mode, SolveMode::Lowest { .. });
                match self.extremal(k, lowest, opts)? {
                    Some(r) => Ok(r),
                    None => self.extremal_by_window(k, lowest, opts),
                }
            }
        }
    }

    /// Shift-invert from just outside the spectrum; `None` if the inertia
    /// check finds a missed eigenvalue.
    fn extremal(&self, k: usize, lowest: bool, opts: &SolverOptions) -> Result<Option<SpectralResult>> {
        let n = self.matrix.dim();
        let (glo, ghi) = gershgorin(&self.matrix);
        let pad = 1e-6 * (1.0 + glo.abs().max(ghi.abs()));
        let (mut lo, mut hi) = (glo - pad, ghi + pad);
        let spread = hi - lo;
        let target = if lowest { 0 } else { n - 1 };
        // coarse bracket of the extreme eigenvalue; lo stays below it, hi above
        while hi - lo > 1e-4 * spread {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid)? > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let sigma = if lowest { lo } else { hi };
        let p = (k + k.max(8)).min(n);
        let r = self.shift_invert(
            sigma,
            p,
            |theta| {
                let mut idx: Vec<usize> = (0..theta.len()).collect();
                idx.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
                if lowest {
                    idx.truncate(k);
                } else {
                    idx.drain(..theta.len() - k);
                }
                idx
            },
            None,
            opts,
        )?;
        let delta = 1e-7 * self.banded.scale();
        let missed = if lowest {
            self.count_below(r.eigenvalues[k - 1] - delta)? >= k
        } else {
            n - self.count_below(r.eigenvalues[0] + delta)? >= k
        };
        Ok((!missed).then_some(r))
    }

    fn extremal_by_window(&self, k: usize, lowest: bool, opts: &SolverOptions) -> Result<SpectralResult> {
        let n = self.matrix.dim();
        let (glo, ghi) = gershgorin(&self.matrix);
        let pad = 1e-6 * (1.0 + glo.abs().max(ghi.abs()));
        let tol = 1e-10 * (1.0 + glo.abs().max(ghi.abs()));
        let (lo, hi) = if lowest {
            let ek = self.kth_eigenvalue(k - 1, tol)?;
            let next = if k < n { self.kth_eigenvalue(k, tol)? } else { ghi + pad };
            (glo - pad, 0.5 * (ek + next).max(ek + 0.5 * tol))
        } else {
            let ek = self.kth_eigenvalue(n - k, tol)?;
            let prev = if k < n { self.kth_eigenvalue(n - k - 1, tol)? } else { glo - pad };
            (0.5 * (ek + prev).min(ek - 0.5 * tol), ghi + pad)
        };
        let mut r = self.window(lo, hi, opts)?;
        truncate_extremal(&mut r, k, lowest);
        Ok(r)
    }

    /// All eigenpairs in `[lo, hi]` by shift-invert subspace iteration at the
    /// window midpoint; the eigenvalues nearest the midpoint are exactly the
    /// ones in the window.
    fn window(&self, lo: f64, hi: f64, opts: &SolverOptions) -> Result<SpectralResult> {
        if !(hi >= lo) {
            return Err(Error::Input(format!("empty window [{lo}, {hi}]")));
        }
        let n = self.matrix.dim();
        let k = self.count_in(lo, hi)?;
        let empty = || SpectralResult { eigenvalues: vec![], eigenvectors: None, window: Some((lo, hi)), residuals: vec![] };
        if k == 0 {
            return Ok(empty());
        }
        if k > opts.window_capacity {
            return Err(Error::Capacity(format!(
                "window [{lo}, {hi}] holds {k} eigenvalues, more than the cap {}",
                opts.window_capacity
            )));
        }
        let sigma = 0.5 * (lo + hi);
        let p = (k + k.max(8)).min(n);
        self.shift_invert(
            sigma,
            p,
            |theta| {
                // the k Ritz values nearest the shift
                let mut idx: Vec<usize> = (0..theta.len()).collect();
                idx.sort_by(|&a, &b| (theta[a] - sigma).abs().total_cmp(&(theta[b] - sigma).abs()));
                idx.truncate(k);
                idx
            },
            Some((lo, hi)),
            opts,
        )
    }

    /// Subspace iteration with `(H - σ)⁻¹` on `p` vectors until the Ritz
    /// pairs chosen by `pick` have residuals below the tolerance.
    fn shift_invert(
        &self,
        sigma: f64,
        p: usize,
        pick: impl Fn(&[f64]) -> Vec<usize>,
        window: Option<(f64, f64)>,
        opts: &SolverOptions,
    ) -> Result<SpectralResult> {
        let n = self.matrix.dim();
        let scale = self.banded.scale();
        let mut shift = sigma;
        let lu = loop {
            let lu = self.banded.factor_shifted(c64::new(shift, 0.0))?;
            if lu.min_pivot() > 1e-12 * scale {
                break lu;
            }
            shift += 1e-9 * scale.max(1.0);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut basis: Vec<Vec<c64>> = (0..p)
            .map(|_| (0..n).map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
            .collect();
        orthonormalize(&mut basis);
        let tol = opts.tolerance * scale;
        let mut best = f64::INFINITY;
        for iteration in 0..opts.max_iterations {
            let mut next: Vec<Vec<c64>> = basis.iter().map(|v| lu.solve(v)).collect();
            orthonormalize(&mut next);
            basis = next;
            let (theta, vectors, residuals) = self.rayleigh_ritz(&mut basis)?;
            let mut idx = pick(&theta);
            let worst = idx.iter().map(|&i| residuals[i]).fold(0.0, f64::max);
            best = best.min(worst / scale);
            if worst <= tol || p == n {
                idx.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
                let eigenvalues: Vec<f64> = idx.iter().map(|&i| theta[i]).collect();
                let mat = Mat::from_fn(n, idx.len(), |r, c| vectors[idx[c]][r]);
                let residuals = idx.iter().map(|&i| residuals[i]).collect();
                return Ok(SpectralResult { eigenvalues, eigenvectors: Some(mat), window, residuals });
            }
            if iteration + 1 == opts.max_iterations {
                break;
            }
        }
        Err(Error::Convergence { iterations: opts.max_iterations, residual: best })
    }

    /// Rayleigh-Ritz on an orthonormal basis; returns Ritz values, Ritz
    /// vectors and absolute residuals, and rotates `basis` onto the Ritz vectors.
    fn rayleigh_ritz(&self, basis: &mut Vec<Vec<c64>>) -> Result<(Vec<f64>, Vec<Vec<c64>>, Vec<f64>)> {
        let p = basis.len();
        let hb: Vec<Vec<c64>> = basis.iter().map(|v| self.matrix.matvec(v)).collect();
        let g = Mat::from_fn(p, p, |i, j| dot(&basis[i], &hb[j]));
        let g = dense::hermitian_part(&g);
        let (theta, w) = dense::eigh(&g)?;
        let n = self.matrix.dim();
        let combine = |src: &[Vec<c64>], c: usize| -> Vec<c64> {
            let mut out = vec![c64::new(0.0, 0.0); n];
            for (i, v) in src.iter().enumerate() {
                let wi = w[(i, c)];
                if wi != c64::new(0.0, 0.0) {
                    out.iter_mut().zip(v).for_each(|(o, x)| *o += wi * x);
                }
            }
            out
        };
        let vectors: Vec<Vec<c64>> = (0..p).map(|c| combine(basis, c)).collect();
        let hv: Vec<Vec<c64>> = (0..p).map(|c| combine(&hb, c)).collect();
        let residuals = (0..p)
            .map(|c| hv[c].iter().zip(&vectors[c]).map(|(a, b)| (a - b * theta[c]).norm_sqr()).sum::<f64>().sqrt())
            .collect();
        *basis = vectors.clone();
        Ok((theta, vectors, residuals))
    }
}

fn truncate_extremal(r: &mut SpectralResult, k: usize, lowest: bool) {
    let m = r.eigenvalues.len();
    if m <= k {
        return;
    }
    let range: Vec<usize> = if lowest { (0..k).collect() } else { (m - k..m).collect() };
    r.eigenvalues = range.iter().map(|&i| r.eigenvalues[i]).collect();
    r.residuals = range.iter().map(|&i| r.residuals[i]).collect();
    if let Some(v) = &r.eigenvectors {
        r.eigenvectors = Some(Mat::from_fn(v.nrows(), k, |i, c| v[(i, range[c])]));
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass; columns that
/// become numerically dependent are replaced by unit vectors.
pub(crate) fn orthonormalize(cols: &mut [Vec<c64>]) {
    let n = cols.first().map_or(0, Vec::len);
    for j in 0..cols.len() {
        for _pass in 0..2 {
            for i in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let c = dot(&head[i], &tail[0]);
                tail[0].iter_mut().zip(&head[i]).for_each(|(x, q)| *x -= c * q);
            }
        }
        let nv = norm(&cols[j]);
        if nv < 1e-300 {
            cols[j] = (0..n).map(|r| c64::new(if r == j % n { 1.0 } else { 0.0 }, 0.0)).collect();
            return orthonormalize(cols);
        }
        cols[j].iter_mut().for_each(|x| *x /= nv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LatticeGeometry;
    use crate::operator::{assemble_lattice, EdgeField, OperatorKind};

    fn hofstadter(l: usize) -> MagneticOperator {
        let g = LatticeGeometry::cube(2, l).unwrap();
        let b = 2.0 * std::f64::consts::PI / l as f64;
        assemble_lattice(OperatorKind::Hopping, &g, &EdgeField::landau(&g, b)).unwrap()
    }

    #[test]
    fn kth_eigenvalue_matches_dense() {
        let op = hofstadter(8);
        let full = solve(&op, SolveMode::Full).unwrap();
        let s = Slicer::new(&op);
        for k in [0, 5, 31, 63] {
            let e = s.kth_eigenvalue(k, 1e-12).unwrap();
            assert!((e - full.eigenvalues[k]).abs() < 1e-10, "k={k} {e} {}", full.eigenvalues[k]);
        }
    }

    #[test]
    fn lowest_and_highest_modes() {
        let op = hofstadter(8);
        let full = solve(&op, SolveMode::Full).unwrap();
        let lo = solve(&op, SolveMode::Lowest { k: 5 }).unwrap();
        let hi = solve(&op, SolveMode::Highest { k: 3 }).unwrap();
        assert_eq!(lo.len(), 5);
        assert_eq!(hi.len(), 3);
        for (a, b) in lo.eigenvalues.iter().zip(&full.eigenvalues[..5]) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in hi.eigenvalues.iter().zip(&full.eigenvalues[61..]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn capacity_error_on_crowded_window() {
        let op = hofstadter(8);
        let opts = SolverOptions { window_capacity: 4, ..Default::default() };
        let err = solve_with(&op, SolveMode::Window { lo: -5.0, hi: 5.0 }, &opts).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn dense_capacity_error() {
        let m = SparseMatrix::identity(10);
        let opts = SolverOptions { dense_threshold: 5, ..Default::default() };
        assert!(matches!(solve_dense(&m, &opts), Err(Error::Capacity(_))));
    }
}
