//! Feshbach reduction of `H(λ) = H0 + λH1 + λ²H2` onto the spectral
//! subspaces of `H0` above and below an internal gap, the expansion of the
//! reduced operator `Γ̃₊(E0)` in `λ`, and the ω-vector-field identity.
//!
//! Everything here is dense and meant for desk-scale boxes. `P` is the
//! projector below the gap and `Q` the one above it.

use faer::{Mat, Scale};
use num_complex::Complex64 as c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RandomModel;
use crate::operator::random_field;
use crate::disorder::DisorderRealization;
use crate::spectral::dense::{eigenvalues, eigh, hermiticity_defect, inverse, min_singular, norm2};

/// Largest dimension accepted by the dense reduction.
pub const DENSE_LIMIT: usize = 2048;
/// `1 + Γ̃₊` counts as singular below this smallest singular value.
pub const SINGULAR_TOL: f64 = 1e-10;

const ONE: c64 = c64 { re: 1.0, im: 0.0 };

fn mul(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    a * b
}

fn mul3(a: &Mat<c64>, b: &Mat<c64>, c: &Mat<c64>) -> Mat<c64> {
    &(a * b) * c
}

fn scaled(a: &Mat<c64>, s: f64) -> Mat<c64> {
    Scale(c64::new(s, 0.0)) * a
}

fn identity(n: usize) -> Mat<c64> {
    Mat::identity(n, n)
}

/// `S X S` for the square root `S` of the free resolvent above the gap.
fn sandwich(s: &Mat<c64>, x: &Mat<c64>) -> Mat<c64> {
    mul3(s, x, s)
}

/// Eigendecomposition of `H0` split at a threshold inside its gap.
#[derive(Debug, Clone)]
pub struct SpectralSplit {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    basis_minus: Mat<c64>,
    basis_plus: Mat<c64>,
}

impl SpectralSplit {
    pub fn new(h0: &Mat<c64>, threshold: f64) -> Result<Self> {
        let n = h0.nrows();
        if n == 0 || h0.ncols() != n {
            return Err(Error::Shape(format!("H0 is {}x{}", h0.nrows(), h0.ncols())));
        }
        let (vals, vecs) = eigh(h0)?;
        let k = vals.partition_point(|&e| e < threshold);
        if k == 0 || k == n {
            return Err(Error::Precondition(format!(
                "H0 has no spectrum on one side of the threshold {threshold}"
            )));
        }
        let basis_minus = Mat::from_fn(n, k, |i, j| vecs[(i, j)]);
        let basis_plus = Mat::from_fn(n, n - k, |i, j| vecs[(i, k + j)]);
        Ok(Self { lower: vals[..k].to_vec(), upper: vals[k..].to_vec(), basis_minus, basis_plus })
    }

    pub fn dim(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    /// `E-`, the top of the spectrum below the threshold.
    pub fn lower_edge(&self) -> f64 {
        *self.lower.last().expect("non-empty")
    }

    /// `E+`, the bottom of the spectrum above the threshold.
    pub fn upper_edge(&self) -> f64 {
        self.upper[0]
    }

    pub fn p_minus(&self) -> Mat<c64> {
        mul(&self.basis_minus, &self.basis_minus.adjoint().to_owned())
    }

    pub fn p_plus(&self) -> Mat<c64> {
        mul(&self.basis_plus, &self.basis_plus.adjoint().to_owned())
    }

    fn spectral(basis: &Mat<c64>, f: impl Fn(usize) -> c64) -> Mat<c64> {
        let n = basis.nrows();
        let scaled = Mat::from_fn(n, basis.ncols(), |i, j| basis[(i, j)] * f(j));
        mul(&scaled, &basis.adjoint().to_owned())
    }

    /// `R0⁺(E0)^{1/2}`, zero on the lower subspace.
    pub fn r0_plus_sqrt(&self, e0: f64) -> Mat<c64> {
        Self::spectral(&self.basis_plus, |j| c64::new((self.upper[j] - e0).powf(-0.5), 0.0))
    }

    /// `|R0⁻(E0)|^{1/2}`, zero on the upper subspace.
    pub fn r0_minus_abs_sqrt(&self, e0: f64) -> Mat<c64> {
        Self::spectral(&self.basis_minus, |j| c64::new((e0 - self.lower[j]).powf(-0.5), 0.0))
    }

    fn restrict(basis: &Mat<c64>, a: &Mat<c64>) -> Mat<c64> {
        mul3(&basis.adjoint().to_owned(), a, basis)
    }

    fn embed(basis: &Mat<c64>, x: &Mat<c64>) -> Mat<c64> {
        mul3(basis, x, &basis.adjoint().to_owned())
    }

    /// `R_-(E0)` from the square-root formula with `R0⁻(E0)^{1/2} = i|R0⁻|^{1/2}`.
    fn r_minus_sqrt_formula(&self, v: &Mat<c64>, e0: f64) -> Result<Mat<c64>> {
        let k = self.lower.len();
        let s: Vec<c64> = self.lower.iter().map(|&m| c64::new(0.0, (e0 - m).powf(-0.5))).collect();
        let vr = Self::restrict(&self.basis_minus, v);
        let t = Mat::from_fn(k, k, |i, j| if i == j { ONE } else { c64::new(0.0, 0.0) } + s[i] * vr[(i, j)] * s[j]);
        let smin = min_singular(&t);
        if !(smin > SINGULAR_TOL) {
            return Err(Error::Precondition(format!(
                "1 + R0^(1/2) V R0^(1/2) on the lower subspace is singular (smallest singular value {smin:.3e}); λ is too large"
            )));
        }
        let ti = inverse(&t);
        let red = Mat::from_fn(k, k, |i, j| s[i] * ti[(i, j)] * s[j]);
        Ok(Self::embed(&self.basis_minus, &red))
    }

    /// `P R_P(z) P` by direct inversion of `P(H - z)P` on the lower subspace.
    pub fn r_p_direct(&self, h: &Mat<c64>, z: c64) -> Mat<c64> {
        let k = self.lower.len();
        let mut a = Self::restrict(&self.basis_minus, h);
        for i in 0..k {
            a[(i, i)] -= z;
        }
        Self::embed(&self.basis_minus, &inverse(&a))
    }

    /// `𝒢(z)` from its defining inverse with a directly inverted `R_P(z)`.
    pub fn g_direct(&self, h: &Mat<c64>, v: &Mat<c64>, z: c64) -> Mat<c64> {
        let rp = self.r_p_direct(h, z);
        let inner = h - &mul3(v, &rp, v);
        let mut a = Self::restrict(&self.basis_plus, &inner);
        for i in 0..a.nrows() {
            a[(i, i)] -= z;
        }
        Self::embed(&self.basis_plus, &inverse(&a))
    }
}

/// `H0` split at a threshold together with an energy `E0` in the gap; the
/// λ- and ω-independent part of every reduction.
#[derive(Debug, Clone)]
pub struct FeshbachBase {
    pub h0: Mat<c64>,
    pub split: SpectralSplit,
    pub e0: f64,
    r0_plus_sqrt: Mat<c64>,
}

impl FeshbachBase {
    pub fn new(h0: &Mat<c64>, e0: f64, threshold: f64) -> Result<Self> {
        if h0.nrows() > DENSE_LIMIT {
            return Err(Error::Capacity(format!("dense reduction limited to {DENSE_LIMIT} sites, got {}", h0.nrows())));
        }
        let split = SpectralSplit::new(h0, threshold)?;
        let (lo, hi) = (split.lower_edge(), split.upper_edge());
        if !(e0 > lo && e0 < hi) {
            return Err(Error::Precondition(format!("E0 = {e0} is not inside the gap ({lo}, {hi}) of H0")));
        }
        let r0_plus_sqrt = split.r0_plus_sqrt(e0);
        Ok(Self { h0: h0.to_owned(), split, e0, r0_plus_sqrt })
    }

    pub fn delta_plus(&self) -> f64 {
        self.split.upper_edge() - self.e0
    }

    pub fn delta_minus(&self) -> f64 {
        self.e0 - self.split.lower_edge()
    }

    /// Left side of the bound fixing `λ0^(1)`:
    /// `λ δ-^{-1/2} (‖H1 R0⁻^{1/2}‖ + λ‖H2 R0⁻^{1/2}‖)`.
    pub fn lambda1_value(&self, h1: &Mat<c64>, h2: &Mat<c64>, lambda: f64) -> f64 {
        let r = self.split.r0_minus_abs_sqrt(self.e0);
        let a = norm2(&mul(h1, &r));
        let b = norm2(&mul(h2, &r));
        lambda.abs() * self.delta_minus().powf(-0.5) * (a + lambda.abs() * b)
    }

    fn perturbation(h1: &Mat<c64>, h2: &Mat<c64>, lambda: f64) -> Mat<c64> {
        &scaled(h1, lambda) + &scaled(h2, lambda * lambda)
    }

    /// `Γ̃₊(E0)` alone, for repeated evaluation over ω.
    pub fn gamma(&self, h1: &Mat<c64>, h2: &Mat<c64>, lambda: f64) -> Result<Mat<c64>> {
        let v = Self::perturbation(h1, h2, lambda);
        let r = self.split.r_minus_sqrt_formula(&v, self.e0)?;
        let inner = &v - &mul3(&v, &r, &v);
        Ok(sandwich(&self.r0_plus_sqrt, &inner))
    }

    pub fn reduce(&self, h1: &Mat<c64>, h2: &Mat<c64>, lambda: f64) -> Result<FeshbachDecomposition> {
        let n = self.h0.nrows();
        for (name, m) in [("H1", h1), ("H2", h2)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Shape(format!("{name} is {}x{}, H0 is {n}x{n}", m.nrows(), m.ncols())));
            }
        }
        let e0 = self.e0;
        let v = Self::perturbation(h1, h2, lambda);
        let r = self.split.r_minus_sqrt_formula(&v, e0)?;
        let s = &self.r0_plus_sqrt;
        let a = mul(h1, &r);
        let b = mul(h2, &r);
        let m1 = sandwich(s, h1);
        let m2 = sandwich(s, &(h2 - &mul(&a, h1)));
        let m3 = scaled(&sandwich(s, &(&mul(&a, h2) + &mul(&b, h1))), -1.0);
        let m4 = scaled(&sandwich(s, &mul(&b, h2)), -1.0);
        let aa = mul(&a, &a);
        let ab = mul(&a, &b);
        let ba = mul(&b, &a);
        let bb = mul(&b, &b);
        let k2 = m2.clone();
        let k3 = &scaled(&m3, 2.0) + &sandwich(s, &mul(&aa, h1));
        let k4 = &scaled(&m4, 3.0)
            + &sandwich(s, &(&(&scaled(&mul(&ab, h1), 2.0) + &mul(&aa, h2)) + &mul(&ba, h1)));
        let k5 = sandwich(s, &(&(&scaled(&mul(&ab, h2), 2.0) + &scaled(&mul(&bb, h1), 2.0)) + &mul(&ba, h2)));
        let k6 = scaled(&sandwich(s, &mul(&bb, h2)), 2.0);
        let m = vec![m1, m2, m3, m4];
        let mut gamma = Mat::<c64>::zeros(n, n);
        for (j, mj) in m.iter().enumerate() {
            gamma = &gamma + &scaled(mj, lambda.powi(j as i32 + 1));
        }
        let g = self.g_from_gamma(&gamma)?;
        Ok(FeshbachDecomposition {
            lambda,
            e0,
            lower_edge: self.split.lower_edge(),
            upper_edge: self.split.upper_edge(),
            delta_plus: self.delta_plus(),
            delta_minus: self.delta_minus(),
            lambda1: self.lambda1_value(h1, h2, lambda),
            p_plus: self.split.p_plus(),
            p_minus: self.split.p_minus(),
            h0: self.h0.clone(),
            h1: h1.to_owned(),
            h2: h2.to_owned(),
            v,
            r0_plus_sqrt: s.clone(),
            r_minus: r,
            g,
            gamma,
            m,
            k: vec![k2, k3, k4, k5, k6],
            split: self.split.clone(),
        })
    }

    /// `𝒢(E0) = S (1 + Γ̃₊)⁻¹ S` with the inverse taken on the upper subspace.
    fn g_from_gamma(&self, gamma: &Mat<c64>) -> Result<Mat<c64>> {
        let basis = &self.split.basis_plus;
        let mut t = SpectralSplit::restrict(basis, gamma);
        for i in 0..t.nrows() {
            t[(i, i)] += ONE;
        }
        let smin = min_singular(&t);
        if !(smin > SINGULAR_TOL) {
            return Err(Error::ReductionInvalid(smin));
        }
        let inv = SpectralSplit::embed(basis, &inverse(&t));
        Ok(sandwich(&self.r0_plus_sqrt, &inv))
    }
}

/// All blocks of the reduction at one `(ω, λ, E0)`.
#[derive(Debug, Clone)]
pub struct FeshbachDecomposition {
    pub lambda: f64,
    pub e0: f64,
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// Left side of the `λ0^(1)` bound; below 1 inside the validity regime.
    pub lambda1: f64,
    pub p_plus: Mat<c64>,
    pub p_minus: Mat<c64>,
    pub h0: Mat<c64>,
    pub h1: Mat<c64>,
    pub h2: Mat<c64>,
    /// `𝒱(λ) = λH1 + λ²H2`.
    pub v: Mat<c64>,
    pub r0_plus_sqrt: Mat<c64>,
    /// `R_-(E0) = P R_P(E0) P` from the square-root formula.
    pub r_minus: Mat<c64>,
    /// `𝒢(E0)` from `Γ̃₊`.
    pub g: Mat<c64>,
    /// `Γ̃₊(E0) = Σ λʲ M_j`.
    pub gamma: Mat<c64>,
    /// `M_1 ..= M_4`.
    pub m: Vec<Mat<c64>>,
    /// `K_2 ..= K_6`.
    pub k: Vec<Mat<c64>>,
    split: SpectralSplit,
}

/// Residuals of the reduction identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub lambda: f64,
    pub e0: f64,
    pub dim: usize,
    /// `max(‖P±² - P±‖, ‖P+P-‖, ‖P+ + P- - 1‖)`.
    pub projector_defect: f64,
    /// Resolvent rebuilt from the blocks at `E0` against the direct inverse, relative.
    pub resolvent_residual: f64,
    /// Same at `E0 + iδ+/2`, blocks recomputed directly at the complex energy.
    pub complex_resolvent_residual: f64,
    /// `𝒢(E0)` from `Γ̃₊` against its defining inverse, relative.
    pub g_residual: f64,
    /// `Γ̃₊` against `S(𝒱 - 𝒱R_P𝒱)S` with a directly inverted `R_P`, absolute.
    pub gamma_residual: f64,
    pub gamma_hermiticity: f64,
    pub lambda1: f64,
}

impl IdentityReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.projector_defect <= 1e-12
            && self.resolvent_residual <= rel_tol
            && self.complex_resolvent_residual <= rel_tol
            && self.g_residual <= rel_tol
            && self.gamma_residual <= 1e-10
            && self.gamma_hermiticity <= 1e-11
    }
}

impl FeshbachDecomposition {
    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn hamiltonian(&self) -> Mat<c64> {
        &self.h0 + &self.v
    }

    /// Right side of the resolvent identity built from `R_P(z)` and `𝒢(z)`,
    /// both inverted directly at `z`.
    pub fn resolvent_rhs(&self, z: c64) -> Mat<c64> {
        let h = self.hamiltonian();
        let rp = self.split.r_p_direct(&h, z);
        let g = self.split.g_direct(&h, &self.v, z);
        self.assemble(&rp, &g)
    }

    /// Right side at `E0` from the stored square-root blocks.
    pub fn resolvent_rhs_e0(&self) -> Mat<c64> {
        self.assemble(&self.r_minus, &self.g)
    }

    // The printed right factor carries R_P(z)*, which equals R_P(z) only on
    // the real axis; the block inverse needs R_P(z) itself.
    fn assemble(&self, rp: &Mat<c64>, g: &Mat<c64>) -> Mat<c64> {
        let q = &self.p_plus;
        let left = q - &mul3(rp, &self.v, q);
        let right = q - &mul3(q, &self.v, rp);
        rp + &mul3(&left, g, &right)
    }

    pub fn direct_resolvent(&self, z: c64) -> Mat<c64> {
        let mut a = self.hamiltonian();
        for i in 0..a.nrows() {
            a[(i, i)] -= z;
        }
        inverse(&a)
    }

    pub fn identity_report(&self) -> IdentityReport {
        let n = self.dim();
        let id = identity(n);
        let pp = &self.p_plus;
        let pm = &self.p_minus;
        let projector_defect = [
            norm2(&(&mul(pp, pp) - pp)),
            norm2(&(&mul(pm, pm) - pm)),
            norm2(&mul(pp, pm)),
            norm2(&(&(pp + pm) - &id)),
        ]
        .into_iter()
        .fold(0.0, f64::max);

        let z0 = c64::new(self.e0, 0.0);
        let direct = self.direct_resolvent(z0);
        let resolvent_residual = norm2(&(&direct - &self.resolvent_rhs_e0())) / norm2(&direct);
        let zc = c64::new(self.e0, 0.5 * self.delta_plus);
        let direct_c = self.direct_resolvent(zc);
        let complex_resolvent_residual = norm2(&(&direct_c - &self.resolvent_rhs(zc))) / norm2(&direct_c);

        let h = self.hamiltonian();
        let g_def = self.split.g_direct(&h, &self.v, z0);
        let g_residual = norm2(&(&g_def - &self.g)) / norm2(&g_def).max(f64::MIN_POSITIVE);
        let rp = self.split.r_p_direct(&h, z0);
        let gamma_def = sandwich(&self.r0_plus_sqrt, &(&self.v - &mul3(&self.v, &rp, &self.v)));
        let gamma_residual = norm2(&(&gamma_def - &self.gamma));
        IdentityReport {
            lambda: self.lambda,
            e0: self.e0,
            dim: n,
            projector_defect,
            resolvent_residual,
            complex_resolvent_residual,
            g_residual,
            gamma_residual,
            gamma_hermiticity: hermiticity_defect(&self.gamma),
            lambda1: self.lambda1,
        }
    }

    /// `Σ_{j=2}^6 λʲ‖K_j‖`.
    pub fn remainder_norm(&self) -> f64 {
        self.k.iter().enumerate().map(|(j, kj)| self.lambda.abs().powi(j as i32 + 2) * norm2(kj)).sum()
    }

    /// `Γ̃₊ + Σ λʲ K_j`, the right side of the vector-field identity.
    pub fn vector_field_rhs(&self) -> Mat<c64> {
        let mut out = self.gamma.clone();
        for (j, kj) in self.k.iter().enumerate() {
            out = &out + &scaled(kj, self.lambda.powi(j as i32 + 2));
        }
        out
    }

    /// `Γ̃₊` at coupling `mu` with `R_-` frozen at the decomposition's λ:
    /// a polynomial of degree 4 in `mu`.
    pub fn frozen_gamma(&self, mu: f64) -> Mat<c64> {
        let v = FeshbachBase::perturbation(&self.h1, &self.h2, mu);
        sandwich(&self.r0_plus_sqrt, &(&v - &mul3(&v, &self.r_minus, &v)))
    }

    /// Norms of the fourth and fifth forward differences of [`Self::frozen_gamma`]
    /// with step `step` starting at λ.
    pub fn lambda_differences(&self, step: f64) -> (f64, f64) {
        let f: Vec<Mat<c64>> = (0..6).map(|i| self.frozen_gamma(self.lambda + i as f64 * step)).collect();
        let diff = |order: usize| {
            let mut acc = Mat::<c64>::zeros(self.dim(), self.dim());
            let mut binom = 1.0;
            for k in 0..=order {
                let sign = if (order - k) % 2 == 0 { 1.0 } else { -1.0 };
                acc = &acc + &scaled(&f[k], sign * binom);
                binom = binom * (order - k) as f64 / (k + 1) as f64;
            }
            norm2(&acc)
        };
        (diff(4), diff(5))
    }

    /// Eigenvalues of `Γ̃₊` on the upper subspace.
    pub fn gamma_spectrum(&self) -> Result<Vec<f64>> {
        let r = SpectralSplit::restrict(&self.split.basis_plus, &self.gamma);
        eigenvalues(&crate::spectral::dense::hermitian_part(&r))
    }

    /// The events along the chain bounding `P{dist(σ(H), E0) < η}`.
    pub fn event_chain(&self, eta: f64) -> Result<EventChain> {
        let ev = eigenvalues(&crate::spectral::dense::hermitian_part(&self.hamiltonian()))?;
        let dist_h = ev.iter().map(|e| (e - self.e0).abs()).fold(f64::INFINITY, f64::min);
        let g_norm = norm2(&self.g);
        let dist_gamma = self.gamma_spectrum()?.iter().map(|e| (e + 1.0).abs()).fold(f64::INFINITY, f64::min);
        let resolvent = dist_h < eta;
        let g_large = g_norm > 1.0 / (8.0 * eta);
        let gamma_near = dist_gamma < 8.0 * eta / self.delta_plus;
        Ok(EventChain { eta, dist_h, g_norm, dist_gamma, resolvent, g_large, gamma_near })
    }
}

/// `dist(σ(H), E0) < η`, `‖𝒢(E0)‖ > 1/(8η)` and
/// `dist(σ(Γ̃₊), -1) < 8η/δ+`, each of which should imply the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventChain {
    pub eta: f64,
    pub dist_h: f64,
    pub g_norm: f64,
    pub dist_gamma: f64,
    pub resolvent: bool,
    pub g_large: bool,
    pub gamma_near: bool,
}

impl EventChain {
    /// Number of broken implications (0, 1 or 2).
    pub fn violations(&self) -> usize {
        (self.resolvent && !self.g_large) as usize + (self.g_large && !self.gamma_near) as usize
    }
}

pub fn feshbach_reduce(
    h0: &Mat<c64>,
    h1: &Mat<c64>,
    h2: &Mat<c64>,
    lambda: f64,
    e0: f64,
    threshold: f64,
) -> Result<FeshbachDecomposition> {
    FeshbachBase::new(h0, e0, threshold)?.reduce(h1, h2, lambda)
}

/// `H0`, `H1(ω) = Σ ω_j B_j` and `H2(ω) = Σ_a (Σ_j ω_j u_j^a)²` on the diagonal.
#[derive(Debug, Clone)]
pub struct OmegaFamily {
    pub h0: Mat<c64>,
    /// `B_j = ∂H1/∂ω_j`.
    pub currents: Vec<Mat<c64>>,
    /// `u_j`, `[axis][site]`, the vector potential of coupling `j`.
    pub fields: Vec<Vec<Vec<f64>>>,
}

impl OmegaFamily {
    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn n_omegas(&self) -> usize {
        self.currents.len()
    }

    fn check(&self, omega: &[f64]) -> Result<()> {
        if omega.len() != self.n_omegas() {
            return Err(Error::Shape(format!("{} couplings for a family of {}", omega.len(), self.n_omegas())));
        }
        Ok(())
    }

    pub fn h1(&self, omega: &[f64]) -> Result<Mat<c64>> {
        self.check(omega)?;
        let n = self.dim();
        let mut out = Mat::<c64>::zeros(n, n);
        for (w, b) in omega.iter().zip(&self.currents) {
            if *w != 0.0 {
                out = &out + &scaled(b, *w);
            }
        }
        Ok(out)
    }

    pub fn h2(&self, omega: &[f64]) -> Result<Mat<c64>> {
        self.check(omega)?;
        let n = self.dim();
        let axes = self.fields.first().map_or(0, |f| f.len());
        let mut diag = vec![0.0; n];
        for a in 0..axes {
            for (x, d) in diag.iter_mut().enumerate() {
                let v: f64 = omega.iter().zip(&self.fields).map(|(w, f)| w * f[a][x]).sum();
                *d += v * v;
            }
        }
        Ok(Mat::from_fn(n, n, |i, j| if i == j { c64::new(diag[i], 0.0) } else { c64::new(0.0, 0.0) }))
    }

    /// The family of a lattice model: one coupling per periodicity cell.
    pub fn from_model(model: &RandomModel) -> Result<Self> {
        let n = model.volume();
        if n > DENSE_LIMIT {
            return Err(Error::Capacity(format!("dense family limited to {DENSE_LIMIT} sites, got {n}")));
        }
        let cells = model.geometry.n_cells();
        let zero = model.split(&model.constant_realization(0.0))?;
        let mut currents = Vec::with_capacity(cells);
        let mut fields = Vec::with_capacity(cells);
        for j in 0..cells {
            let mut w = vec![0.0; cells];
            w[j] = 1.0;
            let r = DisorderRealization::fixed(w);
            currents.push(model.split(&r)?.h1.to_dense());
            fields.push(random_field(&model.geometry, &model.background, &model.profile, &r)?);
        }
        Ok(Self { h0: zero.h0.to_dense(), currents, fields })
    }
}

/// A random dense family whose `H0` has the gap `(-1, 1)`.
#[derive(Debug, Clone)]
pub struct GappedInstance {
    pub family: OmegaFamily,
    pub omega: Vec<f64>,
    pub gap: (f64, f64),
}

impl GappedInstance {
    pub fn threshold(&self) -> f64 {
        0.5 * (self.gap.0 + self.gap.1)
    }
}

/// `H0 = U diag(μ) U*` with `μ` drawn from `[-4, -1] ∪ [1, 4]` (both edges
/// attained), Hermitian currents of norm about 1, and site fields on a
/// random quarter of the sites for each coupling.
pub fn random_gapped_instance(n: usize, n_omegas: usize, seed: u64) -> Result<GappedInstance> {
    if n < 4 {
        return Err(Error::Input(format!("instance dimension {n} is below 4")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let herm = |rng: &mut ChaCha8Rng, scale: f64| {
        let mut m = Mat::<c64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c64::new(scale * rng.random_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let z = c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale;
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    };
    let g = herm(&mut rng, 1.0);
    let (_, u) = eigh(&g)?;
    let k = n / 2;
    let mu: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => -1.0,
            _ if i == k => 1.0,
            _ if i < k => -1.0 - 3.0 * rng.random::<f64>(),
            _ => 1.0 + 3.0 * rng.random::<f64>(),
        })
        .collect();
    let h0 = SpectralSplit::spectral(&u, |j| c64::new(mu[j], 0.0));
    let scale = 0.5 / (n as f64).sqrt();
    let currents: Vec<Mat<c64>> = (0..n_omegas).map(|_| herm(&mut rng, scale)).collect();
    let fields: Vec<Vec<Vec<f64>>> = (0..n_omegas)
        .map(|_| vec![(0..n).map(|_| if rng.random::<f64>() < 0.25 { rng.random_range(-1.0..1.0) } else { 0.0 }).collect()])
        .collect();
    let omega = (0..n_omegas).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(GappedInstance { family: OmegaFamily { h0, currents, fields }, omega, gap: (-1.0, 1.0) })
}

/// Both sides of `A_Λ Γ̃₊ = Γ̃₊ + Σ_{j=2}^6 λʲ K_j` with `A_Λ = Σ ω_j ∂/∂ω_j`.
#[derive(Debug, Clone)]
pub struct VectorFieldReport {
    pub lhs: Mat<c64>,
    pub rhs: Mat<c64>,
    /// `‖lhs - rhs‖` in operator norm.
    pub residual: f64,
    /// `‖D(s/2) - D(s)‖` summed over couplings: the size of the Richardson correction.
    pub richardson_change: f64,
}

/// Finite-difference step for coupling value `w`.
pub fn fd_step(w: f64) -> f64 {
    1e-5 * w.abs().max(1.0)
}

/// Centered differences in each `ω_j` with step `1e-5 max(1, |ω_j|)` and one
/// Richardson extrapolation, against the remainder formula.
pub fn vectorfield_check(
    base: &FeshbachBase,
    family: &OmegaFamily,
    omega: &[f64],
    lambda: f64,
) -> Result<VectorFieldReport> {
    vectorfield_check_with(base, family, omega, lambda, fd_step)
}

pub fn vectorfield_check_with(
    base: &FeshbachBase,
    family: &OmegaFamily,
    omega: &[f64],
    lambda: f64,
    step: impl Fn(f64) -> f64,
) -> Result<VectorFieldReport> {
    let dec = base.reduce(&family.h1(omega)?, &family.h2(omega)?, lambda)?;
    let n = family.dim();
    let gamma_at = |w: &[f64]| -> Result<Mat<c64>> { base.gamma(&family.h1(w)?, &family.h2(w)?, lambda) };
    let mut lhs = Mat::<c64>::zeros(n, n);
    let mut change = 0.0;
    for j in 0..omega.len() {
        if omega[j] == 0.0 {
            continue;
        }
        let s = step(omega[j]);
        if !(s > 0.0) || omega[j] + 0.5 * s == omega[j] {
            return Err(Error::StepSize(format!("step {s:e} vanishes against ω_{j} = {}", omega[j])));
        }
        let central = |h: f64| -> Result<Mat<c64>> {
            let mut wp = omega.to_vec();
            let mut wm = omega.to_vec();
            wp[j] += h;
            wm[j] -= h;
            Ok(scaled(&(&gamma_at(&wp)? - &gamma_at(&wm)?), 1.0 / (2.0 * h)))
        };
        let d1 = central(s)?;
        let d2 = central(0.5 * s)?;
        change += norm2(&(&d2 - &d1));
        let rich = &scaled(&d2, 4.0 / 3.0) - &scaled(&d1, 1.0 / 3.0);
        lhs = &lhs + &scaled(&rich, omega[j]);
    }
    let rhs = dec.vector_field_rhs();
    let residual = norm2(&(&lhs - &rhs));
    Ok(VectorFieldReport { lhs, rhs, residual, richardson_change: change })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Scaling of the vector-field remainder over a λ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderScaling {
    pub lambdas: Vec<f64>,
    pub norms: Vec<f64>,
    /// Log-log slope of the remainder norm in λ.
    pub slope: f64,
    /// `max_λ δ+ Σ λʲ‖K_j‖ / λ²`.
    pub constant: f64,
}

pub fn remainder_scaling(base: &FeshbachBase, h1: &Mat<c64>, h2: &Mat<c64>, lambdas: &[f64]) -> Result<RemainderScaling> {
    if lambdas.len() < 2 || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Input("remainder scaling needs at least two positive couplings".into()));
    }
    let mut norms = Vec::with_capacity(lambdas.len());
    let mut constant = 0.0f64;
    for &l in lambdas {
        let r = base.reduce(h1, h2, l)?.remainder_norm();
        constant = constant.max(r * base.delta_plus() / (l * l));
        norms.push(r);
    }
    Ok(RemainderScaling { lambdas: lambdas.to_vec(), norms: norms.clone(), slope: loglog_slope(lambdas, &norms), constant })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(seed: u64) -> (GappedInstance, FeshbachBase) {
        let inst = random_gapped_instance(24, 3, seed).unwrap();
        let base = FeshbachBase::new(&inst.family.h0, inst.threshold(), inst.threshold()).unwrap();
        (inst, base)
    }

    #[test]
    fn split_edges_and_projectors() {
        let (inst, base) = instance(1);
        assert!((base.split.lower_edge() + 1.0).abs() < 1e-12);
        assert!((base.split.upper_edge() - 1.0).abs() < 1e-12);
        let dec = base.reduce(&inst.family.h1(&inst.omega).unwrap(), &inst.family.h2(&inst.omega).unwrap(), 0.05).unwrap();
        assert!(dec.identity_report().projector_defect < 1e-12);
    }

    #[test]
    fn zero_coupling_is_block_diagonal() {
        let (inst, base) = instance(2);
        let dec = base.reduce(&inst.family.h1(&inst.omega).unwrap(), &inst.family.h2(&inst.omega).unwrap(), 0.0).unwrap();
        assert!(norm2(&dec.gamma) == 0.0);
        let r0p = mul(&dec.r0_plus_sqrt, &dec.r0_plus_sqrt);
        assert!(norm2(&(&dec.g - &r0p)) < 1e-12);
        assert!(dec.identity_report().resolvent_residual < 1e-12);
    }

    #[test]
    fn identities_hold_at_small_coupling() {
        let (inst, base) = instance(3);
        let dec = base.reduce(&inst.family.h1(&inst.omega).unwrap(), &inst.family.h2(&inst.omega).unwrap(), 0.05).unwrap();
        let r = dec.identity_report();
        assert!(r.passes(1e-8), "{r:?}");
        assert!(r.lambda1 < 1.0);
    }

    #[test]
    fn frozen_gamma_has_degree_four() {
        let (inst, base) = instance(4);
        let dec = base.reduce(&inst.family.h1(&inst.omega).unwrap(), &inst.family.h2(&inst.omega).unwrap(), 0.05).unwrap();
        let (d4, d5) = dec.lambda_differences(0.01);
        assert!(d5 < 1e-9, "fifth difference {d5}");
        assert!(d4 > 1e-9, "fourth difference {d4}");
    }

    #[test]
    fn vector_field_vanishes_at_zero_coupling() {
        let (inst, base) = instance(5);
        let r = vectorfield_check(&base, &inst.family, &inst.omega, 0.0).unwrap();
        assert!(norm2(&r.lhs) < 1e-12 && norm2(&r.rhs) < 1e-12);
    }

    #[test]
    fn vector_field_identity() {
        let (inst, base) = instance(6);
        let r = vectorfield_check(&base, &inst.family, &inst.omega, 0.05).unwrap();
        assert!(r.residual < 1e-6, "residual {}", r.residual);
    }

    #[test]
    fn step_underflow_is_reported() {
        let (inst, base) = instance(7);
        let err = vectorfield_check_with(&base, &inst.family, &inst.omega, 0.05, |_| 1e-300).unwrap_err();
        assert!(matches!(err, Error::StepSize(_)));
    }

    #[test]
    fn singular_reduction_reports_smallest_singular_value() {
        // H0 - λ·1 moves E+ = 1 onto E0 = 0 at λ = 1, where Γ̃₊ = -R0⁺ has
        // the eigenvalue -1.
        let (_, base) = instance(8);
        let minus_one = scaled(&identity(24), -1.0);
        let zero = Mat::<c64>::zeros(24, 24);
        match base.reduce(&minus_one, &zero, 1.0) {
            Err(Error::ReductionInvalid(s)) => assert!(s < SINGULAR_TOL),
            other => panic!("expected a singular reduction, got {:?}", other.map(|d| d.lambda)),
        }
    }

    #[test]
    fn wrong_energy_is_rejected() {
        let inst = random_gapped_instance(12, 2, 9).unwrap();
        let err = FeshbachBase::new(&inst.family.h0, 1.5, 0.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
