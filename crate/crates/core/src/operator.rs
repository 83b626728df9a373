//! Finite-volume magnetic operators on a torus.
//!
//! Every operator carries one unit-modulus phase per positively oriented
//! link `(x, x + e_a)`; the reversed link reads the conjugate. The matrix
//! entries on a link are
//!
//! * edge Laplacian: `H[x, y] = -p(x, y)`, diagonal = number of links at `x`;
//! * hopping: `H[x, y] = p(x, y)`;
//! * finite-difference continuum: `H[x, y] = -h^-2 p(x, y)` with
//!   `p(x, x + e_a) = exp(-i h A_a(midpoint))`, diagonal `2d h^-2 + V0(x)`.

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::background::{PeriodicBackground, SingleSiteProfile};
use crate::disorder::{DisorderModel, DisorderRealization};
use crate::error::{Error, Result};
use crate::geometry::LatticeGeometry;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    ContinuumFd,
    EdgeLaplacian,
    Hopping,
}

/// How the random vector potential enters the finite-difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `A0` and `A_Λ` both enter the link phases (exactly gauge covariant).
    #[default]
    Peierls,
    /// `H0 + λ H1 + λ² H2` with `A_Λ` entering through the symmetric
    /// first-order term and the diagonal `|A_Λ|²` (polynomial in λ).
    Split,
}

/// Real edge potential, one value per positively oriented link.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    dim: usize,
    n_sites: usize,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(geometry: &LatticeGeometry) -> Self {
        Self { dim: geometry.dim(), n_sites: geometry.n_sites(), values: vec![0.0; geometry.n_sites() * geometry.dim()] }
    }

    /// `f(site, axis)` is the value on the link from `site` to `site + e_axis`.
    pub fn from_fn(geometry: &LatticeGeometry, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut e = Self::zeros(geometry);
        for s in 0..e.n_sites {
            for a in 0..e.dim {
                e.values[s * e.dim + a] = f(s, a);
            }
        }
        e
    }

    /// Landau gauge: `A((x, x + e_2)) = b x_1`, all other links zero.
    pub fn landau(geometry: &LatticeGeometry, b: f64) -> Self {
        Self::from_fn(geometry, |s, a| if a == 1 { b * geometry.coords(s)[0] as f64 } else { 0.0 })
    }

    /// Builds the field from directed-edge values, checking that every pair
    /// is a lattice link and that reversed pairs carry opposite values.
    pub fn from_directed(geometry: &LatticeGeometry, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let d = geometry.dim();
        let mut e = Self::zeros(geometry);
        let mut seen = vec![None::<f64>; e.values.len()];
        for &(x, y, v) in entries {
            if x >= e.n_sites || y >= e.n_sites {
                return Err(Error::Shape(format!("edge ({x}, {y}) references a site outside the lattice")));
            }
            let slot = (0..d).find_map(|a| {
                if geometry.neighbor(x, a, 1).map(|n| n.0) == Some(y) {
                    Some((x * d + a, v))
                } else if geometry.neighbor(y, a, 1).map(|n| n.0) == Some(x) {
                    Some((y * d + a, -v))
                } else {
                    None
                }
            });
            let Some((k, val)) = slot else {
                return Err(Error::Shape(format!("({x}, {y}) is not a lattice edge")));
            };
            if let Some(prev) = seen[k] {
                if (prev - val).abs() > 1e-12 {
                    return Err(Error::Data(format!(
                        "edge potential on ({x}, {y}) is not antisymmetric: {prev} vs {val} after reversal"
                    )));
                }
            }
            seen[k] = Some(val);
            e.values[k] = val;
        }
        Ok(e)
    }

    pub fn get(&self, site: usize, axis: usize) -> f64 {
        self.values[site * self.dim + axis]
    }
}

/// Finite-volume Hermitian operator with its link phases.
#[derive(Debug, Clone)]
pub struct MagneticOperator {
    kind: OperatorKind,
    geometry: LatticeGeometry,
    matrix: SparseMatrix,
    link_phases: Vec<c64>,
}

impl MagneticOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> SparseMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Phase on the positively oriented link `(site, site + e_axis)`.
    pub fn positive_link_phase(&self, site: usize, axis: usize) -> c64 {
        self.link_phases[site * self.geometry.dim() + axis]
    }

    /// Phase on the directed link `(x, y)`, `None` if they are not neighbours.
    pub fn link_phase(&self, x: usize, y: usize) -> Option<c64> {
        let g = &self.geometry;
        (0..g.dim()).find_map(|a| {
            if g.neighbor(x, a, 1).map(|n| n.0) == Some(y) {
                Some(self.positive_link_phase(x, a))
            } else if g.neighbor(y, a, 1).map(|n| n.0) == Some(x) {
                Some(self.positive_link_phase(y, a).conj())
            } else {
                None
            }
        })
    }

    /// `max |H - H†| / max |H|`.
    pub fn relative_hermiticity_defect(&self) -> f64 {
        let scale = self.matrix.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            self.matrix.hermiticity_defect() / scale
        }
    }
}

/// Adds `v` on the link `x -> y` and its adjoint, handling self-loops of
/// one-site-wide axes.
fn add_link(m: &mut SparseMatrix, x: usize, y: usize, v: c64) {
    if x == y {
        m.add(x, x, v + v.conj());
    } else {
        m.add_hermitian_pair(x, y, v);
    }
}

/// Positive links `(x, y, axis, winding)` of the geometry.
pub(crate) fn positive_links(geometry: &LatticeGeometry) -> Vec<(usize, usize, usize, i32)> {
    let mut out = Vec::with_capacity(geometry.n_sites() * geometry.dim());
    for x in 0..geometry.n_sites() {
        for a in 0..geometry.dim() {
            if let Some((y, w)) = geometry.neighbor(x, a, 1) {
                out.push((x, y, a, w));
            }
        }
    }
    out
}

/// Nearest-neighbour operator with off-diagonal `coupling * p(x, y)` and the
/// given diagonal. Links missing on an open boundary keep phase 1.
pub(crate) fn link_operator(
    geometry: &LatticeGeometry,
    phase: impl Fn(usize, usize, i32) -> c64,
    coupling: f64,
    diagonal: &[f64],
) -> (SparseMatrix, Vec<c64>) {
    let d = geometry.dim();
    let mut m = SparseMatrix::diagonal(diagonal);
    let mut phases = vec![c64::new(1.0, 0.0); geometry.n_sites() * d];
    for (x, y, a, w) in positive_links(geometry) {
        let p = phase(x, a, w);
        phases[x * d + a] = p;
        add_link(&mut m, x, y, p * coupling);
    }
    (m, phases)
}

fn degree(geometry: &LatticeGeometry, x: usize) -> f64 {
    (0..geometry.dim())
        .map(|a| [1, -1].iter().filter(|&&dir| geometry.neighbor(x, a, dir).is_some()).count())
        .sum::<usize>() as f64
}

/// Lattice models with phases `exp(i A(x, y))`.
pub fn assemble_lattice(kind: OperatorKind, geometry: &LatticeGeometry, edge: &EdgeField) -> Result<MagneticOperator> {
    if edge.dim != geometry.dim() || edge.n_sites != geometry.n_sites() {
        return Err(Error::Shape("edge field was built for a different lattice".into()));
    }
    if edge.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("edge potential contains non-finite values".into()));
    }
    let phase = |x: usize, a: usize, _w: i32| c64::from_polar(1.0, edge.get(x, a));
    let (matrix, link_phases) = match kind {
        OperatorKind::EdgeLaplacian => {
            let diag: Vec<f64> = (0..geometry.n_sites()).map(|x| degree(geometry, x)).collect();
            link_operator(geometry, phase, -1.0, &diag)
        }
        OperatorKind::Hopping => link_operator(geometry, phase, 1.0, &vec![0.0; geometry.n_sites()]),
        OperatorKind::ContinuumFd => {
            return Err(Error::Config("use assemble_continuum for the finite-difference model".into()))
        }
    };
    Ok(MagneticOperator { kind, geometry: geometry.clone(), matrix, link_phases })
}

/// Site-sampled vector potentials `εA0` and `A_Λ`, `[axis][site]`.
struct SiteFields {
    background: Vec<Vec<f64>>,
    random: Vec<Vec<f64>>,
}

fn site_fields(
    geometry: &LatticeGeometry,
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
    realization: &DisorderRealization,
) -> Result<SiteFields> {
    check_compatible(geometry, background, profile)?;
    if realization.len() != geometry.n_cells() {
        return Err(Error::Shape(format!(
            "realization has {} couplings, lattice has {} cells",
            realization.len(),
            geometry.n_cells()
        )));
    }
    if realization.omegas.iter().any(|w| !w.is_finite()) {
        return Err(Error::Data("realization contains non-finite couplings".into()));
    }
    let n = geometry.n_sites();
    let d = geometry.dim();
    let mut bg = vec![vec![0.0; n]; d];
    let mut rnd = vec![vec![0.0; n]; d];
    for x in 0..n {
        let s = geometry.local_index(x);
        let w = realization.omegas[geometry.cell_of(x)];
        for a in 0..d {
            bg[a][x] = background.scaled_a0(a, s);
            rnd[a][x] = w * profile.value(a, s);
        }
    }
    Ok(SiteFields { background: bg, random: rnd })
}

/// The random vector potential `A_Λ` sampled at the sites, `[axis][site]`.
pub fn random_field(
    geometry: &LatticeGeometry,
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
    realization: &DisorderRealization,
) -> Result<Vec<Vec<f64>>> {
    Ok(site_fields(geometry, background, profile, realization)?.random)
}

pub(crate) fn check_compatible(
    geometry: &LatticeGeometry,
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
) -> Result<()> {
    if background.cell() != geometry.cell() {
        return Err(Error::Shape(format!(
            "background cell {:?} does not match lattice cell {:?}",
            background.cell(),
            geometry.cell()
        )));
    }
    if (background.spacing() - geometry.spacing()).abs() > 1e-14 * geometry.spacing() {
        return Err(Error::Shape(format!(
            "background spacing {} does not match lattice spacing {}",
            background.spacing(),
            geometry.spacing()
        )));
    }
    if profile.cell() != geometry.cell() {
        return Err(Error::Model(format!(
            "profile grid {:?} differs from the cell {:?}; the support must lie inside one cell",
            profile.cell(),
            geometry.cell()
        )));
    }
    Ok(())
}

fn potential_diagonal(geometry: &LatticeGeometry, background: &PeriodicBackground) -> Vec<f64> {
    let h2 = geometry.spacing().powi(-2);
    (0..geometry.n_sites())
        .map(|x| h2 * degree(geometry, x) + background.potential()[geometry.local_index(x)])
        .collect()
}

fn midpoint(field: &[Vec<f64>], a: usize, x: usize, y: usize) -> f64 {
    0.5 * (field[a][x] + field[a][y])
}

/// Finite-difference discretization of `(i∇ + εA0 + λA_Λ)² + V0` with link phases.
pub fn assemble_continuum(
    geometry: &LatticeGeometry,
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
    model: &DisorderModel,
    realization: &DisorderRealization,
) -> Result<MagneticOperator> {
    assemble_continuum_with(geometry, background, profile, model, realization, Discretization::Peierls)
}

pub fn assemble_continuum_with(
    geometry: &LatticeGeometry,
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
    model: &DisorderModel,
    realization: &DisorderRealization,
    discretization: Discretization,
) -> Result<MagneticOperator> {
    let lambda = model.lambda;
    match discretization {
        Discretization::Peierls => {
            let f = site_fields(geometry, background, profile, realization)?;
            let h = geometry.spacing();
            let diag = potential_diagonal(geometry, background);
            let phase = |x: usize, a: usize, _w: i32| {
                let (y, _) = geometry.neighbor(x, a, 1).expect("positive link");
                let amid = midpoint(&f.background, a, x, y) + lambda * midpoint(&f.random, a, x, y);
                c64::from_polar(1.0, -h * amid)
            };
            let (matrix, link_phases) = link_operator(geometry, phase, -h.powi(-2), &diag);
            Ok(MagneticOperator { kind: OperatorKind::ContinuumFd, geometry: geometry.clone(), matrix, link_phases })
        }
        Discretization::Split => {
            let split = assemble_split(geometry, background, profile, realization)?;
            Ok(split.operator_at(lambda))
        }
    }
}

/// The three λ-orders of the finite-difference operator.
#[derive(Debug, Clone)]
pub struct SplitOperator {
    pub geometry: LatticeGeometry,
    pub h0: SparseMatrix,
    pub h1: SparseMatrix,
    pub h2: SparseMatrix,
    link_phases: Vec<c64>,
}

impl SplitOperator {
    pub fn matrix_at(&self, lambda: f64) -> SparseMatrix {
        self.h0.axpy(lambda, &self.h1).axpy(lambda * lambda, &self.h2)
    }

    pub fn operator_at(&self, lambda: f64) -> MagneticOperator {
        MagneticOperator {
            kind: OperatorKind::ContinuumFd,
            geometry: self.geometry.clone(),
            matrix: self.matrix_at(lambda),
            link_phases: self.link_phases.clone(),
        }
    }

    /// `H1 + 2λ H2`, the λ-derivative of `H(λ)`.
    pub fn derivative_at(&self, lambda: f64) -> SparseMatrix {
        self.h1.axpy(2.0 * lambda, &self.h2)
    }
}

/// `H0` with phases from `εA0`, `H1 = Σ_a (Π_a U_a + U_a Π_a)` with the
/// magnetic momentum `Π_a = i D_a`, and `H2 = |A_Λ|²` on the diagonal.
pub fn assemble_split(
    geometry: &LatticeGeometry,
    background: &PeriodicBackground,
    profile: &SingleSiteProfile,
    realization: &DisorderRealization,
) -> Result<SplitOperator> {
    let f = site_fields(geometry, background, profile, realization)?;
    let h = geometry.spacing();
    let diag = potential_diagonal(geometry, background);
    let phase = |x: usize, a: usize, _w: i32| {
        let (y, _) = geometry.neighbor(x, a, 1).expect("positive link");
        c64::from_polar(1.0, -h * midpoint(&f.background, a, x, y))
    };
    let (h0, link_phases) = link_operator(geometry, phase, -h.powi(-2), &diag);
    let h1 = symmetrized_momentum(geometry, |x, a| link_phases[x * geometry.dim() + a], &f.random);
    let h2diag: Vec<f64> = (0..geometry.n_sites())
        .map(|x| f.random.iter().map(|c| c[x] * c[x]).sum())
        .collect();
    let h2 = SparseMatrix::diagonal(&h2diag);
    Ok(SplitOperator { geometry: geometry.clone(), h0, h1, h2, link_phases })
}

/// `Σ_a (Π_a U_a + U_a Π_a)` for a site field `U` and link phases `p`, with
/// `(Π_a ψ)(x) = i [p(x, x+e) ψ(x+e) - conj(p(x-e, x)) ψ(x-e)] / (2h)`.
///
/// This equals the derivative of the phase-discretized kinetic term along
/// `U`, so it is also the current operator used by the edge-state analysis.
pub(crate) fn symmetrized_momentum(
    geometry: &LatticeGeometry,
    phase: impl Fn(usize, usize) -> c64,
    field: &[Vec<f64>],
) -> SparseMatrix {
    let h = geometry.spacing();
    let mut m = SparseMatrix::zeros(geometry.n_sites());
    for (x, y, a, _) in positive_links(geometry) {
        let v = c64::new(0.0, 1.0) * phase(x, a) * ((field[a][x] + field[a][y]) / (2.0 * h));
        add_link(&mut m, x, y, v);
    }
    m
}

/// Conjugates by `U = diag(exp(iχ))`: `H' = U† H U`.
pub fn apply_gauge(op: &MagneticOperator, chi: &[f64]) -> Result<MagneticOperator> {
    let n = op.dim();
    if chi.len() != n {
        return Err(Error::Shape(format!("gauge field has {} values, operator has {n} sites", chi.len())));
    }
    let u: Vec<c64> = chi.iter().map(|&c| c64::from_polar(1.0, c)).collect();
    let mut matrix = SparseMatrix::zeros(n);
    for i in 0..n {
        for &(j, v) in op.matrix.row(i) {
            matrix.add(i, j, u[i].conj() * v * u[j]);
        }
    }
    let d = op.geometry.dim();
    let mut link_phases = op.link_phases.clone();
    for (x, y, a, _) in positive_links(&op.geometry) {
        link_phases[x * d + a] *= u[x].conj() * u[y];
    }
    Ok(MagneticOperator { kind: op.kind, geometry: op.geometry.clone(), matrix, link_phases })
}

/// Elementary face spanned by `axes` at the lower corner `site`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plaquette {
    pub site: usize,
    pub axes: (usize, usize),
}

/// Flux through a plaquette: the argument of the oriented product of link
/// phases around it, in `(-π, π]`.
///
/// For lattice models this is `Σ_{e ∈ ∂F} A(e)`; for the finite-difference
/// model the phases carry `-h A`.
pub fn plaquette_flux(op: &MagneticOperator, plaquette: Plaquette) -> Result<f64> {
    let g = &op.geometry;
    if g.dim() < 2 {
        return Err(Error::Dimension("plaquette flux needs d >= 2".into()));
    }
    let Plaquette { site: x, axes: (a, b) } = plaquette;
    if a == b || a >= g.dim() || b >= g.dim() || x >= g.n_sites() {
        return Err(Error::Input(format!("invalid plaquette at site {x} with axes ({a}, {b})")));
    }
    let xa = g.neighbor(x, a, 1).ok_or_else(|| Error::Input("plaquette leaves the lattice".into()))?.0;
    let xb = g.neighbor(x, b, 1).ok_or_else(|| Error::Input("plaquette leaves the lattice".into()))?.0;
    let p = op.positive_link_phase(x, a)
        * op.positive_link_phase(xa, b)
        * op.positive_link_phase(xb, a).conj()
        * op.positive_link_phase(x, b).conj();
    Ok(reduce_angle(p.arg()))
}

/// Maps an angle to `(-π, π]`.
pub fn reduce_angle(t: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut r = t.rem_euclid(2.0 * pi);
    if r > pi {
        r -= 2.0 * pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_field_rejects_non_edges_and_asymmetry() {
        let g = LatticeGeometry::cube(2, 4).unwrap();
        let err = EdgeField::from_directed(&g, &[(0, 5, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = EdgeField::from_directed(&g, &[(0, 1, 1.0), (1, 0, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let e = EdgeField::from_directed(&g, &[(0, 1, 1.0), (1, 0, -1.0), (4, 0, 0.25)]).unwrap();
        assert_eq!(e.get(0, 0), 1.0);
        assert_eq!(e.get(0, 1), -0.25);
    }

    #[test]
    fn reversed_link_reads_conjugate() {
        let g = LatticeGeometry::cube(2, 3).unwrap();
        let e = EdgeField::from_fn(&g, |s, a| 0.1 * (s + a) as f64);
        let op = assemble_lattice(OperatorKind::Hopping, &g, &e).unwrap();
        for x in 0..g.n_sites() {
            for a in 0..2 {
                let (y, _) = g.neighbor(x, a, 1).unwrap();
                assert_eq!(op.link_phase(y, x).unwrap(), op.link_phase(x, y).unwrap().conj());
            }
        }
        assert_eq!(op.link_phase(0, 4), None);
    }

    #[test]
    fn zero_phases_give_real_matrix() {
        let g = LatticeGeometry::cube(2, 4).unwrap();
        let op = assemble_lattice(OperatorKind::EdgeLaplacian, &g, &EdgeField::zeros(&g)).unwrap();
        assert!(op.matrix().is_real());
        assert_eq!(op.matrix().get(0, 0), c64::new(4.0, 0.0));
    }

    #[test]
    fn one_site_ring_collects_both_directions() {
        let g = LatticeGeometry::cube(1, 1).unwrap();
        let e = EdgeField::from_fn(&g, |_, _| 0.3);
        let op = assemble_lattice(OperatorKind::Hopping, &g, &e).unwrap();
        assert!((op.matrix().get(0, 0).re - 2.0 * 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn reduce_angle_range() {
        let pi = std::f64::consts::PI;
        assert_eq!(reduce_angle(pi), pi);
        assert!((reduce_angle(-pi) - pi).abs() < 1e-15);
        assert!((reduce_angle(3.0 * pi / 2.0) + pi / 2.0).abs() < 1e-15);
    }

    #[test]
    fn plaquette_needs_two_dimensions() {
        let g = LatticeGeometry::cube(1, 4).unwrap();
        let op = assemble_lattice(OperatorKind::Hopping, &g, &EdgeField::zeros(&g)).unwrap();
        let err = plaquette_flux(&op, Plaquette { site: 0, axes: (0, 1) }).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
