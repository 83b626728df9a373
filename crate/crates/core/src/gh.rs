//! Edge-state diagnostics for magnetic disorder: the matrix of first-order
//! matrix elements of the single-site vector potential between edge Bloch
//! functions, the `A0 = ∇⊥(ψ0²)` construction that keeps the edge state
//! real, and the phase-collinearity test for edge eigenfunctions.

use std::f64::consts::PI;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::background::{CellFile, PeriodicBackground, SingleSiteProfile};
use crate::error::{Error, Result};
use crate::floquet::{bloch_current, bloch_eigen, bloch_reduce, check_h4_h5, BandStructure, GapSpec};
use crate::geometry::LatticeGeometry;
use crate::sparse::{dot, norm, SparseMatrix};
use crate::spectral::{dense, Slicer};

const NORM_TOL: f64 = 1e-8;
/// Relative margin for a definite verdict.
pub const DEFINITE_MARGIN: f64 = 1e-6;
pub const COLLINEAR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    Positive,
    Negative,
    Indefinite,
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhMatrix {
    pub entries: Vec<Vec<c64>>,
    pub minimizers: Vec<Vec<f64>>,
    /// Eigenvalues of the Hermitian part, ascending.
    pub eigenvalues: Vec<f64>,
    pub verdict: Definiteness,
    /// Smallest eigenvalue modulus.
    pub margin: f64,
}

impl GhMatrix {
    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn is_definite(&self) -> bool {
        matches!(self.verdict, Definiteness::Positive | Definiteness::Negative)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let m = self.entries.len();
        let mut d: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                d = d.max((self.entries[i][j] - self.entries[j][i].conj()).norm());
            }
        }
        d
    }
}

/// Constant skew-symmetric matrix defining `∇⊥ = M ∇`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerpField {
    skew: Vec<Vec<f64>>,
}

impl PerpField {
    pub fn new(skew: Vec<Vec<f64>>) -> Result<Self> {
        let d = skew.len();
        if skew.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("perp matrix must be square".into()));
        }
        for i in 0..d {
            for j in 0..d {
                if skew[i][j] != -skew[j][i] {
                    return Err(Error::Input(format!("perp matrix is not skew-symmetric at ({i}, {j})")));
                }
            }
        }
        if skew.iter().flatten().all(|v| *v == 0.0) {
            return Err(Error::Input("perp matrix is zero".into()));
        }
        Ok(Self { skew })
    }

    /// `(-∂_j, ∂_i)` in the `(i, j)` coordinate plane.
    pub fn plane(d: usize, i: usize, j: usize) -> Result<Self> {
        if i >= d || j >= d || i == j {
            return Err(Error::Input(format!("invalid axis pair ({i}, {j}) in dimension {d}")));
        }
        let mut m = vec![vec![0.0; d]; d];
        m[i][j] = -1.0;
        m[j][i] = 1.0;
        Self::new(m)
    }

    /// `∇⊥ = (-∂2, ∂1)`.
    pub fn default_2d() -> Self {
        Self::plane(2, 0, 1).expect("valid plane")
    }

    pub fn dim(&self) -> usize {
        self.skew.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.skew
    }
}

fn cell_geometry(background: &PeriodicBackground) -> Result<LatticeGeometry> {
    LatticeGeometry::new(background.cell().to_vec(), background.spacing(), background.cell().to_vec())
}

fn real_difference(cell: &LatticeGeometry, f: &[f64], a: usize) -> Vec<f64> {
    let h = cell.spacing();
    (0..cell.n_sites())
        .map(|x| {
            let (xp, _) = cell.neighbor(x, a, 1).expect("periodic cell");
            let (xm, _) = cell.neighbor(x, a, -1).expect("periodic cell");
            (f[xp] - f[xm]) / (2.0 * h)
        })
        .collect()
}

fn cell_norm(psi: &[c64], h: f64, d: usize) -> f64 {
    (psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * h.powi(d as i32)).sqrt()
}

/// `(u·i∇ + i∇·u + 2ε u·A0) φ` with plain centered differences on the
/// twisted cell.
fn gh_apply(background: &PeriodicBackground, profile: &SingleSiteProfile, theta: &[f64], phi: &[c64]) -> Result<Vec<c64>> {
    let cell = cell_geometry(background)?;
    let free = PeriodicBackground::free(background.cell().to_vec(), background.spacing());
    let u: Vec<Vec<f64>> = profile.components().to_vec();
    let j = bloch_current(&free, theta, &u)?;
    let mut out = j.matvec(phi);
    let eps = background.coupling_eps();
    for x in 0..cell.n_sites() {
        let ua: f64 = (0..cell.dim()).map(|a| u[a][x] * background.vector_potential()[a][x]).sum();
        out[x] += phi[x] * (2.0 * eps * ua);
    }
    Ok(out)
}

/// Matrix `M_{kk'} = ∫ ((u·i∇ + i∇·u + 2εu·A0) φ_k) conj(φ_k')` over the cell
/// for edge Bloch functions `(θ_k, φ_k)` normalized on the cell.
pub fn gh_matrix(
    edge_states: &[(Vec<f64>, Vec<c64>)],
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
) -> Result<GhMatrix> {
    let m = edge_states.len();
    if m == 0 {
        return Err(Error::Precondition("no edge states given".into()));
    }
    if profile.cell() != background.cell() {
        return Err(Error::Model(format!(
            "profile grid {:?} differs from the cell {:?}",
            profile.cell(),
            background.cell()
        )));
    }
    let (h, d) = (background.spacing(), background.dim());
    let w = h.powi(d as i32);
    for (k, (th, phi)) in edge_states.iter().enumerate() {
        if phi.len() != background.cell_sites() || th.len() != d {
            return Err(Error::Shape(format!("edge state {k} does not live on the cell")));
        }
        let nrm = cell_norm(phi, h, d);
        if (nrm - 1.0).abs() > NORM_TOL {
            return Err(Error::Input(format!("edge state {k} has cell norm {nrm}, expected 1")));
        }
    }
    let applied: Vec<Vec<c64>> = edge_states
        .iter()
        .map(|(th, phi)| gh_apply(background, profile, th, phi))
        .collect::<Result<_>>()?;
    let entries: Vec<Vec<c64>> = (0..m)
        .map(|k| (0..m).map(|kp| dot(&edge_states[kp].1, &applied[k]) * w).collect())
        .collect();
    let mut herm = faer::Mat::<c64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            herm[(i, j)] = 0.5 * (entries[i][j] + entries[j][i].conj());
        }
    }
    let eigenvalues = dense::eigenvalues(&herm)?;
    let (verdict, margin) = classify(&eigenvalues);
    Ok(GhMatrix { entries, minimizers: edge_states.iter().map(|s| s.0.clone()).collect(), eigenvalues, verdict, margin })
}

fn classify(eigenvalues: &[f64]) -> (Definiteness, f64) {
    let scale = eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let margin = eigenvalues.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    let verdict = if scale == 0.0 || margin <= DEFINITE_MARGIN * scale {
        Definiteness::Singular
    } else if eigenvalues.iter().all(|&e| e > 0.0) {
        Definiteness::Positive
    } else if eigenvalues.iter().all(|&e| e < 0.0) {
        Definiteness::Negative
    } else {
        Definiteness::Indefinite
    };
    (verdict, margin)
}

/// Outcome of the phase-collinearity test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealityReport {
    pub collinear: bool,
    /// Phase φ with `e^{-iφ} ψ` as close to real as possible.
    pub phase: f64,
    /// `‖Im(e^{-iφ} ψ)‖ / ‖ψ‖`.
    pub residual: f64,
    /// For collinear states: whether `q_a θ_a ∈ {0, π}` on every axis.
    pub half_lattice: Option<bool>,
}

/// Minimizes `‖Im(e^{-iφ}ψ)‖` over φ from the second moments of
/// `(Re ψ, Im ψ)`.
pub fn reality_check(psi: &[c64], theta: &[f64], cell: &[usize]) -> Result<RealityReport> {
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for z in psi {
        sxx += z.re * z.re;
        syy += z.im * z.im;
        sxy += z.re * z.im;
    }
    let total = sxx + syy;
    if total == 0.0 {
        return Err(Error::Precondition("zero vector has no phase".into()));
    }
    let phase = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    // smallest eigenvalue of the 2x2 moment matrix
    let tr = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let residual = ((tr - disc).max(0.0) / total).sqrt();
    let collinear = residual <= COLLINEAR_TOL;
    let half_lattice = collinear.then(|| half_lattice(theta, cell));
    Ok(RealityReport { collinear, phase, residual, half_lattice })
}

/// `e^{-iφ} ψ` with its (tiny) imaginary part dropped.
pub fn realified(psi: &[c64], phase: f64) -> Vec<f64> {
    let r = c64::from_polar(1.0, -phase);
    psi.iter().map(|z| (r * z).re).collect()
}

fn half_lattice(theta: &[f64], cell: &[usize]) -> bool {
    theta.iter().zip(cell).all(|(&t, &q)| {
        let c = (t * q as f64).rem_euclid(PI);
        c.min(PI - c) < 1e-9
    })
}

/// `A0 = M ∇(ψ0²)` on the cell grid with centered differences.
///
/// `ψ0²` is cell-periodic because `θ0` is a half-lattice point, which is
/// checked.
pub fn perp_construct(psi0: &[f64], theta0: &[f64], background: &PeriodicBackground, perp: &PerpField) -> Result<Vec<Vec<f64>>> {
    let cell = cell_geometry(background)?;
    if psi0.len() != cell.n_sites() {
        return Err(Error::Shape(format!("ψ0 has {} values, the cell has {}", psi0.len(), cell.n_sites())));
    }
    if perp.dim() != cell.dim() {
        return Err(Error::Shape(format!("perp field is {}-dimensional, cell is {}", perp.dim(), cell.dim())));
    }
    if !half_lattice(theta0, background.cell()) {
        return Err(Error::Precondition(format!("θ0 = {theta0:?} is not a half-lattice point of the dual cell")));
    }
    let sq: Vec<f64> = psi0.iter().map(|p| p * p).collect();
    let grads: Vec<Vec<f64>> = (0..cell.dim()).map(|a| real_difference(&cell, &sq, a)).collect();
    let m = perp.matrix();
    let a0: Vec<Vec<f64>> = (0..cell.dim())
        .map(|i| (0..cell.n_sites()).map(|x| (0..cell.dim()).map(|j| m[i][j] * grads[j][x]).sum()).collect())
        .collect();
    let sup = a0.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    let scale = sq.iter().fold(0.0f64, |s, v| s.max(v.abs())) / background.spacing();
    if sup <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "∇⊥ψ0 vanishes identically for this perp field; choose a different skew matrix".into(),
        ));
    }
    Ok(a0)
}

/// Discrete divergence `Σ_a D_a A_a` with centered differences.
pub fn divergence(background: &PeriodicBackground, field: &[Vec<f64>]) -> Result<Vec<f64>> {
    let cell = cell_geometry(background)?;
    let mut div = vec![0.0; cell.n_sites()];
    for (a, comp) in field.iter().enumerate() {
        for (x, v) in real_difference(&cell, comp, a).into_iter().enumerate() {
            div[x] += v;
        }
    }
    Ok(div)
}

/// `‖(A0·i∇ + i∇·A0) ψ0‖ / ‖ψ0‖` with the discretization used for the
/// first-order term of the operator.
pub fn annihilation_check(background: &PeriodicBackground, theta0: &[f64], a0: &[Vec<f64>], psi0: &[c64]) -> Result<f64> {
    let n = background.cell_sites();
    if psi0.len() != n || a0.len() != background.dim() || a0.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("field and eigenvector must live on the background cell".into()));
    }
    let p = norm(psi0);
    if p == 0.0 {
        return Err(Error::Precondition("ψ0 vanishes; the relative residual is undefined".into()));
    }
    let free = PeriodicBackground::free(background.cell().to_vec(), background.spacing());
    let j = bloch_current(&free, theta0, a0)?;
    Ok(norm(&j.matvec(psi0)) / p)
}

/// First-order change of the edge eigenvector under `A0 -> A0 + δA`.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    pub energy: f64,
    pub psi0: Vec<c64>,
    pub correction: Vec<c64>,
    /// `‖(H0(θ0) - E) ψ' - rhs‖ / ‖rhs‖`.
    pub residual: f64,
    /// `|<ψ0, ψ'>|`.
    pub overlap: f64,
}

/// Solves `(H0(θ0) - E+) ψ' = -(1 - π0) J ψ0` on the complement of `ψ0`,
/// where `J` is the derivative of `H0(θ0)` along the field `direction`.
pub fn first_order_correction(
    background: &PeriodicBackground,
    theta0: &[f64],
    band: usize,
    direction: &[Vec<f64>],
) -> Result<FirstOrder> {
    let (vals, vecs) = bloch_eigen(background, theta0, Some(band + 2))?;
    let e = *vals.get(band).ok_or_else(|| Error::Input(format!("band {band} not available")))?;
    let gap_above = vals.get(band + 1).map_or(f64::INFINITY, |v| v - e);
    let gap_below = if band > 0 { e - vals[band - 1] } else { f64::INFINITY };
    if gap_above.min(gap_below) <= 1e-10 {
        return Err(Error::IllPosed(format!(
            "edge eigenvalue {e} is not simple (neighbour within {}); the edge hypothesis fails",
            gap_above.min(gap_below)
        )));
    }
    // unit Euclidean norm for the projector
    let psi0: Vec<c64> = {
        let v = &vecs[band];
        let nv = norm(v);
        v.iter().map(|z| z / nv).collect()
    };
    let j = bloch_current(background, theta0, direction)?;
    let mut rhs: Vec<c64> = j.matvec(&psi0).into_iter().map(|z| -z).collect();
    project_out(&mut rhs, &psi0);
    let h = bloch_reduce(background, theta0)?.matrix;
    let order = cell_geometry(background)?.band_ordering();
    let correction = complement_solve(&h, order, e, &rhs, &psi0, gap_above.min(gap_below))?;
    let hx = h.matvec(&correction);
    let r: Vec<c64> = hx.iter().zip(&correction).zip(&rhs).map(|((a, x), b)| a - e * x - b).collect();
    let rn = norm(&rhs);
    let residual = if rn > 0.0 { norm(&r) / rn } else { norm(&r) };
    let overlap = dot(&psi0, &correction).norm();
    Ok(FirstOrder { energy: e, psi0, correction, residual, overlap })
}

fn project_out(v: &mut [c64], unit: &[c64]) {
    let c = dot(unit, v);
    for (x, u) in v.iter_mut().zip(unit) {
        *x -= c * u;
    }
}

/// Iterative refinement with a banded LU of `H - E - δ`, projecting out the
/// null direction after every step.
fn complement_solve(
    h: &SparseMatrix,
    order: Vec<usize>,
    e: f64,
    rhs: &[c64],
    psi0: &[c64],
    gap: f64,
) -> Result<Vec<c64>> {
    let n = h.dim();
    let mut x = vec![c64::new(0.0, 0.0); n];
    let rn = norm(rhs);
    if rn == 0.0 {
        return Ok(x);
    }
    let delta = 1e-3 * gap;
    let slicer = Slicer::from_matrix(h.clone(), order);
    let lu = slicer.banded().factor_shifted(c64::new(e + delta, 0.0))?;
    for _ in 0..60 {
        let hx = h.matvec(&x);
        let mut r: Vec<c64> = rhs.iter().zip(&hx).zip(&x).map(|((b, a), xi)| b - (a - e * xi)).collect();
        project_out(&mut r, psi0);
        if norm(&r) <= 1e-13 * rn {
            break;
        }
        let mut dx = lu.solve(&r);
        project_out(&mut dx, psi0);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
    }
    Ok(x)
}

/// Everything produced by the edge-state construction for one background.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhCertificate {
    pub cell: Vec<usize>,
    pub spacing: f64,
    pub eps: f64,
    pub theta0: Vec<f64>,
    pub edge_band: usize,
    pub upper_edge: f64,
    pub lower_edge: f64,
    pub simple: bool,
    pub nondegenerate: bool,
    pub effective_masses: Vec<f64>,
    pub reality_residual: f64,
    pub divergence_max: f64,
    pub annihilation_residual: f64,
    pub correction_norm: f64,
    pub gh: GhMatrix,
    #[serde(skip)]
    pub background: Option<PeriodicBackground>,
    #[serde(skip)]
    pub profile: Option<SingleSiteProfile>,
}

impl GhCertificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Cell file with `V0`, `A0` and `u`, readable by [`CellFile::parse`].
    pub fn cell_file(&self) -> Option<CellFile> {
        Some(CellFile::from_parts(self.background.as_ref()?, self.profile.as_ref()))
    }
}

/// `sin²(π s/q)` per axis, vanishing on the cell boundary.
pub fn cell_bump(cell: &[usize]) -> Vec<f64> {
    let n: usize = cell.iter().product();
    (0..n)
        .map(|s| {
            let c = crate::geometry::unflatten(s, cell);
            c.iter().zip(cell).map(|(&x, &q)| (PI * x as f64 / q as f64).sin().powi(2)).product()
        })
        .collect()
}

/// Builds `A0 = ∇⊥(ψ0²)` from the upper edge state of `background`, scales it
/// to unit sup norm, couples it with strength `eps`, and certifies the
/// profile `u = bump · A0`.
pub fn certify(
    background: &PeriodicBackground,
    bands: &BandStructure,
    gap: &GapSpec,
    perp: &PerpField,
    eps: f64,
) -> Result<GhCertificate> {
    if gap.minimizers.len() != 1 {
        return Err(Error::Precondition(format!(
            "the construction needs a single edge minimizer, found {}",
            gap.minimizers.len()
        )));
    }
    let report = check_h4_h5(bands, gap)?;
    if !report.simple {
        return Err(Error::Precondition("upper band edge is not simple".into()));
    }
    let theta0 = gap.minimizers[0].clone();
    let n0 = gap.edge_band;
    let (_, vecs) = bloch_eigen(background, &theta0, Some(n0 + 1))?;
    let psi = &vecs[n0];
    let real = reality_check(psi, &theta0, background.cell())?;
    if !real.collinear {
        return Err(Error::Precondition(format!(
            "edge eigenfunction is not collinear to a real function (residual {:.3e})",
            real.residual
        )));
    }
    let psi0 = realified(psi, real.phase);
    let mut a0 = perp_construct(&psi0, &theta0, background, perp)?;
    // unit sup norm, so that eps alone sets the coupling strength
    let sup = (0..background.cell_sites())
        .map(|x| a0.iter().map(|c| c[x] * c[x]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    a0.iter_mut().flatten().for_each(|v| *v /= sup);
    let div = divergence(background, &a0)?;
    let psi0c: Vec<c64> = psi0.iter().map(|&v| c64::new(v, 0.0)).collect();
    let annihilation = annihilation_check(background, &theta0, &a0, &psi0c)?;
    let corr = first_order_correction(background, &theta0, n0, &a0)?;
    let with_a0 = background.clone().with_vector_potential(a0.clone(), eps)?;
    let bump = cell_bump(background.cell());
    let u: Vec<Vec<f64>> = a0.iter().map(|c| c.iter().zip(&bump).map(|(a, b)| a * b).collect()).collect();
    let profile = SingleSiteProfile::from_components(background.cell().to_vec(), u)?;
    let (_, evecs) = bloch_eigen(&with_a0, &theta0, Some(n0 + 1))?;
    let gh = gh_matrix(&[(theta0.clone(), evecs[n0].clone())], &with_a0, &profile)?;
    let h = background.spacing().powi(background.dim() as i32).sqrt();
    Ok(GhCertificate {
        cell: background.cell().to_vec(),
        spacing: background.spacing(),
        eps,
        theta0,
        edge_band: n0,
        upper_edge: gap.upper_edge,
        lower_edge: gap.lower_edge,
        simple: report.simple,
        nondegenerate: report.nondegenerate,
        effective_masses: report.effective_masses,
        reality_residual: real.residual,
        divergence_max: div.iter().fold(0.0, |m, v| m.max(v.abs())),
        annihilation_residual: annihilation,
        correction_norm: norm(&corr.correction) * h,
        gh,
        background: Some(with_a0),
        profile: Some(profile),
    })
}
