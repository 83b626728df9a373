//! Bloch reduction of the periodic operator `H0`, band structures, gap
//! detection and the simplicity / nondegeneracy checks at a band edge.
//!
//! Quasi-momenta are measured per lattice site: `θ_a` lives in the dual cell
//! `[-π/q_a, π/q_a)` and a link crossing the cell boundary in direction `+e_a`
//! picks up the twist `exp(i q_a θ_a)`, i.e. `ψ(x + q_a e_a) = e^{i q_a θ_a} ψ(x)`.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::PeriodicBackground;
use crate::error::{Error, Result};
use crate::geometry::LatticeGeometry;
use crate::operator::{link_operator, symmetrized_momentum};
use crate::sparse::SparseMatrix;
use crate::spectral::{dense, SolveMode, SolverOptions, Slicer, DENSE_THRESHOLD};

/// Cell-sized Hermitian matrix at one quasi-momentum.
#[derive(Debug, Clone)]
pub struct BlochOperator {
    pub theta: Vec<f64>,
    /// `true` if the requested θ was outside the dual cell and got folded.
    pub folded: bool,
    pub matrix: SparseMatrix,
}

/// Folds θ into `[-π/q, π/q)` per axis; reports whether anything moved.
pub fn fold_theta(theta: &[f64], cell: &[usize]) -> (Vec<f64>, bool) {
    let mut moved = false;
    let out = theta
        .iter()
        .zip(cell)
        .map(|(&t, &q)| {
            let period = 2.0 * PI / q as f64;
            let half = PI / q as f64;
            let f = (t + half).rem_euclid(period) - half;
            if (f - t).abs() > 1e-12 * period {
                moved = true;
            }
            f
        })
        .collect();
    (out, moved)
}

fn cell_geometry(background: &PeriodicBackground) -> Result<LatticeGeometry> {
    LatticeGeometry::new(background.cell().to_vec(), background.spacing(), background.cell().to_vec())
}

/// Twisted phases on the positive links of the cell torus.
fn twisted_phase<'a>(
    background: &'a PeriodicBackground,
    cell: &LatticeGeometry,
    theta: &[f64],
) -> impl Fn(usize, usize, i32) -> c64 + 'a {
    let h = background.spacing();
    let twists: Vec<f64> = theta.iter().zip(background.cell()).map(|(t, &q)| t * q as f64).collect();
    let cell = cell.clone();
    move |x, a, w| {
        let (y, _) = cell.neighbor(x, a, 1).expect("periodic cell");
        let amid = 0.5 * (background.scaled_a0(a, x) + background.scaled_a0(a, y));
        c64::from_polar(1.0, -h * amid + w as f64 * twists[a])
    }
}

/// Bloch matrix `H0(θ)` of the finite-difference operator on one cell.
pub fn bloch_reduce(background: &PeriodicBackground, theta: &[f64]) -> Result<BlochOperator> {
    if theta.len() != background.dim() {
        return Err(Error::Shape(format!("θ has {} components, dimension is {}", theta.len(), background.dim())));
    }
    let (theta, folded) = fold_theta(theta, background.cell());
    if folded {
        log::warn!("quasi-momentum folded into the dual cell");
    }
    let cell = cell_geometry(background)?;
    let h = background.spacing();
    let d = background.dim() as f64;
    let diag: Vec<f64> = background.potential().iter().map(|v| 2.0 * d / (h * h) + v).collect();
    let (matrix, _) = link_operator(&cell, twisted_phase(background, &cell, &theta), -1.0 / (h * h), &diag);
    Ok(BlochOperator { theta, folded, matrix })
}

/// `Σ_a (Π_a U_a + U_a Π_a)` on the twisted cell for a site field `U`.
pub(crate) fn bloch_current(background: &PeriodicBackground, theta: &[f64], field: &[Vec<f64>]) -> Result<SparseMatrix> {
    let cell = cell_geometry(background)?;
    let phase = twisted_phase(background, &cell, theta);
    let wind = |x: usize, a: usize| cell.neighbor(x, a, 1).expect("periodic cell").1;
    Ok(symmetrized_momentum(&cell, |x, a| phase(x, a, wind(x, a)), field))
}

/// Lowest `k` eigenpairs (or all with `None`) of `H0(θ)`, eigenvectors
/// normalized so that `Σ |ψ|² h^d = 1`.
pub fn bloch_eigen(background: &PeriodicBackground, theta: &[f64], k: Option<usize>) -> Result<(Vec<f64>, Vec<Vec<c64>>)> {
    let b = bloch_reduce(background, theta)?;
    let n = b.matrix.dim();
    let want = k.unwrap_or(n).min(n);
    let (vals, vecs) = if n <= 256 || (k.is_none() && n <= DENSE_THRESHOLD) {
        let (v, u) = dense::eigh(&b.matrix.to_dense())?;
        let cols: Vec<Vec<c64>> = (0..want).map(|j| dense::column(&u, j)).collect();
        (v[..want].to_vec(), cols)
    } else if k.is_none() {
        return Err(Error::Capacity(format!(
            "cell with {n} sites exceeds the dense threshold {DENSE_THRESHOLD}; request a number of bands"
        )));
    } else {
        let cell = cell_geometry(background)?;
        let s = Slicer::from_matrix(b.matrix.clone(), cell.band_ordering());
        let r = s.solve(SolveMode::Lowest { k: want }, &SolverOptions::default())?;
        let u = r.eigenvectors.expect("windowed solve returns vectors");
        let cols = (0..want).map(|j| dense::column(&u, j)).collect();
        (r.eigenvalues, cols)
    };
    let w = background.spacing().powi(background.dim() as i32);
    let vecs = vecs
        .into_iter()
        .map(|v: Vec<c64>| {
            let nrm = (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * w).sqrt();
            v.into_iter().map(|z| z / nrm).collect()
        })
        .collect();
    Ok((vals, vecs))
}

/// Floquet eigenvalues on a uniform θ-grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandStructure {
    pub cell: Vec<usize>,
    pub resolution: usize,
    pub theta_grid: Vec<Vec<f64>>,
    /// `bands[n][t]` = `E_n(θ_t)`, ascending in `n` at each θ.
    pub bands: Vec<Vec<f64>>,
    #[serde(skip)]
    background: Option<PeriodicBackground>,
}

impl BandStructure {
    /// Band data without an operator behind it (no refinement possible).
    pub fn from_bands(cell: Vec<usize>, resolution: usize, theta_grid: Vec<Vec<f64>>, bands: Vec<Vec<f64>>) -> Self {
        Self { cell, resolution, theta_grid, bands, background: None }
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn dim(&self) -> usize {
        self.cell.len()
    }

    pub fn band_range(&self, n: usize) -> (f64, f64) {
        let b = &self.bands[n];
        (b.iter().cloned().fold(f64::INFINITY, f64::min), b.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `E_n(θ)`, recomputed from the operator when available.
    /// Band `n` at any θ; the band functions are dual-lattice periodic.
    pub fn eval(&self, n: usize, theta: &[f64]) -> Result<f64> {
        match &self.background {
            Some(bg) => Ok(bloch_eigen(bg, &fold_theta(theta, &self.cell).0, Some(n + 1))?.0[n]),
            None => Err(Error::Input("band structure has no operator attached".into())),
        }
    }

    pub fn background(&self) -> Option<&PeriodicBackground> {
        self.background.as_ref()
    }

    /// Grid spacing of θ along `axis`.
    pub fn mesh(&self, axis: usize) -> f64 {
        2.0 * PI / (self.cell[axis] * self.resolution) as f64
    }

    fn grid_index(&self, coords: &[usize]) -> usize {
        crate::geometry::flat_index(coords, &vec![self.resolution; self.dim()])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let heads: Vec<String> = (1..=self.dim())
            .map(|a| format!("theta_{a}"))
            .chain((1..=self.n_bands()).map(|n| format!("E_{n}")))
            .collect();
        s.push_str(&heads.join(","));
        s.push('\n');
        for (t, th) in self.theta_grid.iter().enumerate() {
            let row: Vec<String> = th
                .iter()
                .map(|x| format!("{x:.12e}"))
                .chain(self.bands.iter().map(|b| format!("{:.12e}", b[t])))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// θ-grid `θ_a = -π/q_a + 2π k / (q_a r)`, `k = 0..r`, first axis fastest.
pub fn theta_grid(cell: &[usize], resolution: usize) -> Vec<Vec<f64>> {
    let d = cell.len();
    let total = resolution.pow(d as u32);
    (0..total)
        .map(|t| {
            let c = crate::geometry::unflatten(t, &vec![resolution; d]);
            c.iter()
                .zip(cell)
                .map(|(&k, &q)| -PI / q as f64 + 2.0 * PI * k as f64 / (q * resolution) as f64)
                .collect()
        })
        .collect()
}

/// Diagonalizes `H0(θ)` on the grid; `max_bands` limits the number of
/// bands (required for cells above the dense threshold).
pub fn band_structure(background: &PeriodicBackground, resolution: usize, max_bands: Option<usize>) -> Result<BandStructure> {
    if resolution < 4 {
        return Err(Error::Input(format!("θ resolution must be >= 4 per axis, got {resolution}")));
    }
    let grid = theta_grid(background.cell(), resolution);
    let per_theta: Vec<Result<Vec<f64>>> = grid
        .par_iter()
        .map(|th| {
            let b = bloch_reduce(background, th)?;
            match max_bands {
                None => {
                    if b.matrix.dim() > DENSE_THRESHOLD {
                        return Err(Error::Capacity(format!(
                            "cell with {} sites exceeds the dense threshold {DENSE_THRESHOLD}",
                            b.matrix.dim()
                        )));
                    }
                    dense::eigenvalues(&b.matrix.to_dense())
                }
                Some(k) => Ok(bloch_eigen(background, th, Some(k))?.0),
            }
        })
        .collect();
    let rows: Vec<Vec<f64>> = per_theta.into_iter().collect::<Result<_>>()?;
    let nb = rows[0].len();
    let bands = (0..nb).map(|n| rows.iter().map(|r| r[n]).collect()).collect();
    Ok(BandStructure {
        cell: background.cell().to_vec(),
        resolution,
        theta_grid: grid,
        bands,
        background: Some(background.clone()),
    })
}

/// Internal gap `(E-, E+)` and the data of its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub lower_edge: f64,
    pub upper_edge: f64,
    /// Bottom of the spectrum.
    pub m0: f64,
    /// Bottom of the spectral component just below the gap.
    pub c0: f64,
    /// Top of the spectral component just above the gap.
    pub c1: f64,
    /// Band attaining `E+`.
    pub edge_band: usize,
    /// Band attaining `E-`.
    pub lower_band: usize,
    /// Quasi-momenta where `E_{n0}(θ) - E+ <= 1e-8`.
    pub minimizers: Vec<Vec<f64>>,
    pub simple: bool,
    pub effective_mass_eigenvalues: Vec<f64>,
}

impl GapSpec {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower_edge + self.upper_edge)
    }

    pub fn width(&self) -> f64 {
        self.upper_edge - self.lower_edge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum GapDetection {
    Gap(GapSpec),
    NoGap { window: (f64, f64) },
}

impl GapDetection {
    pub fn gap(&self) -> Option<&GapSpec> {
        match self {
            GapDetection::Gap(g) => Some(g),
            GapDetection::NoGap { .. } => None,
        }
    }

    pub fn require(self) -> Result<GapSpec> {
        match self {
            GapDetection::Gap(g) => Ok(g),
            GapDetection::NoGap { window } => {
                Err(Error::Precondition(format!("no spectral gap in the window [{}, {}]", window.0, window.1)))
            }
        }
    }
}

pub const MINIMIZER_TOL: f64 = 1e-8;
pub const SIMPLICITY_TOL: f64 = 1e-8;

/// Widest open gap between band ranges that meets `window`.
pub fn detect_gap(bands: &BandStructure, window: (f64, f64)) -> Result<GapDetection> {
    let ranges: Vec<(f64, f64, usize)> = (0..bands.n_bands()).map(|n| {
        let (lo, hi) = bands.band_range(n);
        (lo, hi, n)
    }).collect();
    let all_lo = ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let all_hi = ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    if window.1 < all_lo || window.0 > all_hi {
        return Err(Error::Input(format!(
            "window [{}, {}] misses the band range [{all_lo}, {all_hi}]",
            window.0, window.1
        )));
    }
    // merge band ranges into connected spectral components
    let mut sorted = ranges.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut comps: Vec<(f64, f64)> = Vec::new();
    for (lo, hi, _) in sorted {
        match comps.last_mut() {
            Some(c) if lo <= c.1 => c.1 = c.1.max(hi),
            _ => comps.push((lo, hi)),
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 0..comps.len().saturating_sub(1) {
        let (em, ep) = (comps[i].1, comps[i + 1].0);
        if ep <= window.0 || em >= window.1 {
            continue;
        }
        let w = ep - em;
        if best.is_none_or(|b| w > b.1) {
            best = Some((i, w));
        }
    }
    let Some((i, _)) = best else {
        return Ok(GapDetection::NoGap { window });
    };
    let (lower_edge, grid_upper) = (comps[i].1, comps[i + 1].0);
    let edge_band = ranges.iter().find(|r| r.0 == grid_upper).expect("edge band").2;
    let lower_band = ranges.iter().rev().find(|r| r.1 == lower_edge).expect("lower band").2;
    let (upper_edge, minimizers) = locate_minimizers(bands, edge_band, grid_upper)?;
    let mut spec = GapSpec {
        lower_edge,
        upper_edge,
        m0: all_lo,
        c0: comps[i].0,
        c1: comps[i + 1].1,
        edge_band,
        lower_band,
        minimizers,
        simple: false,
        effective_mass_eigenvalues: Vec::new(),
    };
    if let Ok(report) = check_h4_h5(bands, &spec) {
        spec.simple = report.simple;
        spec.effective_mass_eigenvalues = report.effective_masses;
    }
    Ok(GapDetection::Gap(spec))
}

/// Grid minima of band `n` near `grid_min`, refined by a local pattern
/// search when the operator is available.
fn locate_minimizers(bands: &BandStructure, n: usize, grid_min: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let d = bands.dim();
    let r = bands.resolution;
    let vals = &bands.bands[n];
    let spread = bands.band_range(n).1 - grid_min;
    let mut candidates = Vec::new();
    for (t, th) in bands.theta_grid.iter().enumerate() {
        let c = crate::geometry::unflatten(t, &vec![r; d]);
        let is_local_min = (0..d).all(|a| {
            [1usize, r - 1].iter().all(|&step| {
                let mut nb = c.clone();
                nb[a] = (nb[a] + step) % r;
                vals[bands.grid_index(&nb)] >= vals[t]
            })
        });
        if is_local_min && vals[t] - grid_min <= 0.05 * spread + MINIMIZER_TOL {
            candidates.push((th.clone(), vals[t]));
        }
    }
    if bands.background.is_none() {
        let pts = candidates.into_iter().filter(|c| c.1 - grid_min <= MINIMIZER_TOL).map(|c| c.0).collect();
        return Ok((grid_min, pts));
    }
    let refined: Vec<(Vec<f64>, f64)> = candidates
        .into_iter()
        .map(|(th, v)| refine_minimum(bands, n, th, v))
        .collect::<Result<_>>()?;
    let emin = refined.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for (th, v) in refined {
        let (th, _) = fold_theta(&th, &bands.cell);
        let dup = pts.iter().any(|p| theta_distance(p, &th, &bands.cell) < 1e-6);
        if v - emin <= MINIMIZER_TOL && !dup {
            pts.push(th);
        }
    }
    Ok((emin, pts))
}

fn theta_distance(a: &[f64], b: &[f64], cell: &[usize]) -> f64 {
    a.iter()
        .zip(b)
        .zip(cell)
        .map(|((x, y), &q)| {
            let p = 2.0 * PI / q as f64;
            let d = (x - y).rem_euclid(p);
            d.min(p - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Coordinate-wise parabolic steps from a grid point until the step falls
/// below `1e-7` of the mesh, then a snap to a nearby half-lattice point.
fn refine_minimum(bands: &BandStructure, n: usize, mut th: Vec<f64>, mut v: f64) -> Result<(Vec<f64>, f64)> {
    let d = bands.dim();
    let mut step: Vec<f64> = (0..d).map(|a| 0.25 * bands.mesh(a)).collect();
    for _ in 0..40 {
        let mut moved = false;
        for a in 0..d {
            let s = step[a];
            let mut tp = th.clone();
            tp[a] += s;
            let mut tm = th.clone();
            tm[a] -= s;
            let (ep, em) = (bands.eval(n, &tp)?, bands.eval(n, &tm)?);
            let curv = ep - 2.0 * v + em;
            let delta = if curv > 0.0 {
                (0.5 * s * (em - ep) / curv).clamp(-2.0 * s, 2.0 * s)
            } else if ep < em {
                2.0 * s
            } else {
                -2.0 * s
            };
            let mut t = th.clone();
            t[a] += delta;
            let e = bands.eval(n, &t)?;
            if e < v {
                th = t;
                v = e;
            }
            if delta.abs() > 1e-7 * bands.mesh(a) {
                moved = true;
            }
            step[a] = (delta.abs()).clamp(1e-4 * bands.mesh(a), 0.25 * bands.mesh(a));
        }
        if !moved {
            break;
        }
    }
    // A quadratic minimum is only located to about sqrt(machine epsilon);
    // prefer a nearby half-lattice point when it is at least as low.
    let snapped: Vec<f64> = th
        .iter()
        .zip(&bands.cell)
        .zip(0..d)
        .map(|((&t, &q), a)| {
            let unit = PI / q as f64;
            let s = (t / unit).round() * unit;
            if (s - t).abs() < 1e-3 * bands.mesh(a) { s } else { t }
        })
        .collect();
    if snapped != th {
        let e = bands.eval(n, &snapped)?;
        if e <= v + 1e-12 * v.abs().max(1.0) {
            return Ok((snapped, e));
        }
    }
    Ok((th, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub simple: bool,
    pub nondegenerate: bool,
    pub effective_masses: Vec<f64>,
    /// The Hessian estimates at mesh scale and half mesh disagree by more than 10%.
    pub inconclusive: bool,
}

/// Simplicity of the edge band at every minimizer and positive
/// definiteness of its Hessian there.
pub fn check_h4_h5(bands: &BandStructure, gap: &GapSpec) -> Result<EdgeReport> {
    if gap.minimizers.is_empty() {
        return Err(Error::Precondition("gap has no recorded minimizers".into()));
    }
    let n0 = gap.edge_band;
    let mut simple = true;
    let mut nondegenerate = true;
    let mut inconclusive = false;
    let mut masses = Vec::new();
    for th in &gap.minimizers {
        match &bands.background {
            Some(bg) => {
                let (vals, _) = bloch_eigen(bg, th, Some(n0 + 2))?;
                let next = vals.get(n0 + 1).copied().unwrap_or(f64::INFINITY);
                let prev = if n0 > 0 { vals[n0 - 1] } else { f64::NEG_INFINITY };
                if next - vals[n0] <= SIMPLICITY_TOL || vals[n0] - prev <= SIMPLICITY_TOL {
                    simple = false;
                }
                let h1 = band_hessian(bands, n0, th, 1.0)?;
                let h2 = band_hessian(bands, n0, th, 0.5)?;
                let e1 = symmetric_eigenvalues(&h1)?;
                let e2 = symmetric_eigenvalues(&h2)?;
                if e1.iter().zip(&e2).any(|(a, b)| (a - b).abs() > 0.1 * b.abs().max(1e-12)) {
                    inconclusive = true;
                }
                // second differences are O(step²) accurate; one Richardson step
                let hr: Vec<Vec<f64>> = h1
                    .iter()
                    .zip(&h2)
                    .map(|(r1, r2)| r1.iter().zip(r2).map(|(a, b)| (4.0 * b - a) / 3.0).collect())
                    .collect();
                let er = symmetric_eigenvalues(&hr)?;
                if er.iter().any(|&e| e <= 0.0) {
                    nondegenerate = false;
                }
                masses.extend(er);
            }
            None => {
                let t = bands
                    .theta_grid
                    .iter()
                    .position(|g| theta_distance(g, th, &bands.cell) < 1e-12)
                    .ok_or_else(|| Error::Input("minimizer is not a grid point".into()))?;
                let e = bands.bands[n0][t];
                let next = bands.bands.get(n0 + 1).map_or(f64::INFINITY, |b| b[t]);
                let prev = if n0 > 0 { bands.bands[n0 - 1][t] } else { f64::NEG_INFINITY };
                if next - e <= SIMPLICITY_TOL || e - prev <= SIMPLICITY_TOL {
                    simple = false;
                }
                let h = grid_hessian(bands, n0, t);
                let e = symmetric_eigenvalues(&h)?;
                if e.iter().any(|&x| x <= 0.0) {
                    nondegenerate = false;
                }
                masses.extend(e);
                inconclusive = true;
            }
        }
    }
    Ok(EdgeReport { simple, nondegenerate, effective_masses: masses, inconclusive })
}

/// Centered second-difference Hessian of `E_n` at `θ` with step `factor`
/// times the grid mesh.
pub fn band_hessian(bands: &BandStructure, n: usize, theta: &[f64], factor: f64) -> Result<Vec<Vec<f64>>> {
    let d = bands.dim();
    let e0 = bands.eval(n, theta)?;
    let step: Vec<f64> = (0..d).map(|a| factor * bands.mesh(a)).collect();
    let at = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut t = theta.to_vec();
        for &(a, s) in shifts {
            t[a] += s;
        }
        bands.eval(n, &t)
    };
    let mut h = vec![vec![0.0; d]; d];
    for a in 0..d {
        let s = step[a];
        h[a][a] = (at(&[(a, s)])? - 2.0 * e0 + at(&[(a, -s)])?) / (s * s);
        for b in 0..a {
            let t = step[b];
            let v = (at(&[(a, s), (b, t)])? - at(&[(a, s), (b, -t)])? - at(&[(a, -s), (b, t)])?
                + at(&[(a, -s), (b, -t)])?)
                / (4.0 * s * t);
            h[a][b] = v;
            h[b][a] = v;
        }
    }
    Ok(h)
}

fn grid_hessian(bands: &BandStructure, n: usize, t: usize) -> Vec<Vec<f64>> {
    let d = bands.dim();
    let r = bands.resolution;
    let c = crate::geometry::unflatten(t, &vec![r; d]);
    let val = |shift: &[(usize, i64)]| {
        let mut cc = c.clone();
        for &(a, s) in shift {
            cc[a] = ((cc[a] as i64 + s).rem_euclid(r as i64)) as usize;
        }
        bands.bands[n][bands.grid_index(&cc)]
    };
    let mut h = vec![vec![0.0; d]; d];
    for a in 0..d {
        let s = bands.mesh(a);
        h[a][a] = (val(&[(a, 1)]) - 2.0 * val(&[]) + val(&[(a, -1)])) / (s * s);
        for b in 0..a {
            let t = bands.mesh(b);
            let v = (val(&[(a, 1), (b, 1)]) - val(&[(a, 1), (b, -1)]) - val(&[(a, -1), (b, 1)])
                + val(&[(a, -1), (b, -1)]))
                / (4.0 * s * t);
            h[a][b] = v;
            h[b][a] = v;
        }
    }
    h
}

fn symmetric_eigenvalues(h: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = h.len();
    dense::eigenvalues(&Mat::from_fn(d, d, |i, j| c64::new(h[i][j], 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(potential: Vec<f64>) -> PeriodicBackground {
        let q = potential.len();
        PeriodicBackground::new(vec![q], 1.0, potential, vec![vec![0.0; q]], 0.0).unwrap()
    }

    #[test]
    fn folding_flags_outside_points() {
        let (t, moved) = fold_theta(&[PI / 2.0 + 0.1], &[2]);
        assert!(moved);
        assert!((t[0] - (-PI / 2.0 + 0.1)).abs() < 1e-14);
        let (_, moved) = fold_theta(&[0.3], &[2]);
        assert!(!moved);
    }

    #[test]
    fn free_band_at_theta() {
        let bg = chain(vec![0.0]);
        for th in [-3.0, -1.0, 0.0, 0.5, 2.9] {
            let b = bloch_reduce(&bg, &[th]).unwrap();
            let m = b.matrix.to_dense();
            assert!((m[(0, 0)].re - (2.0 - 2.0 * f64::cos(th))).abs() < 1e-14);
            assert!(m[(0, 0)].im.abs() < 1e-15);
        }
    }

    #[test]
    fn period_two_gap_and_edge() {
        let bs = band_structure(&chain(vec![0.0, 2.0]), 16, None).unwrap();
        let gap = detect_gap(&bs, (-1.0, 6.0)).unwrap().require().unwrap();
        // E(θ) = 3 ± sqrt(1 + 4 cos²θ): gap (2, 4) with both edges at θ = -π/2
        assert!((gap.lower_edge - 2.0).abs() < 1e-12 && (gap.upper_edge - 4.0).abs() < 1e-12);
        assert_eq!(gap.edge_band, 1);
        assert!((gap.minimizers[0][0] + PI / 2.0).abs() < 1e-6);
        assert!((gap.effective_mass_eigenvalues[0] - 4.0).abs() < 1e-2);
        assert!(gap.simple);
        assert_eq!(gap.minimizers.len(), 1);
    }

    #[test]
    fn doubled_band_is_not_simple() {
        let grid = theta_grid(&[1], 8);
        let band: Vec<f64> = grid.iter().map(|t| 2.0 - 2.0 * t[0].cos()).collect();
        let upper: Vec<f64> = band.iter().map(|e| e + 10.0).collect();
        let bs = BandStructure::from_bands(vec![1], 8, grid, vec![band, upper.clone(), upper]);
        let gap = detect_gap(&bs, (0.0, 20.0)).unwrap().require().unwrap();
        let rep = check_h4_h5(&bs, &gap).unwrap();
        assert!(!rep.simple);
    }
}
