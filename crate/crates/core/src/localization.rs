//! Analyses on spectral data: Lifshitz-tail fits, finite-volume IDS
//! concentration in the gap, localized resolvent decay and
//! Feynman–Hellman derivatives.

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::GapSpec;
use crate::model::RandomModel;
use crate::operator::{MagneticOperator, SplitOperator};
use crate::sparse::{dot, SparseMatrix};
use crate::spectral::banded::BandedHermitian;
use crate::spectral::dense::{eigh, inverse, norm2};
use crate::spectral::ensemble::{mean_stderr, run_ensemble};
use crate::spectral::ids::IdsCurve;
use crate::spectral::Slicer;
use crate::wegner::Z95;

/// Upper end of the fit window in `N - N(edge)`.
pub const LIFSHITZ_CEILING: f64 = 1e-2;
/// Minimum number of fitted points.
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifshitzFit {
    pub band_edge: f64,
    pub fit_window: (f64, f64),
    /// `(log(E - edge), log|log(N - N(edge))|)`.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: (f64, f64),
    pub target: f64,
    /// `(n, passed)` for the superpolynomial check at orders 1, 2, 3.
    pub dos2: Vec<(u32, bool)>,
}

impl LifshitzFit {
    pub fn dos2_passes(&self) -> bool {
        self.dos2.iter().all(|d| d.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("log_offset,loglog_ids\n");
        for (x, y) in &self.points {
            s.push_str(&format!("{x:.12e},{y:.12e}\n"));
        }
        s
    }
}

/// Least-squares line `y = a + b x` with the standard error of `b`.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let se = if pts.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (a, b, se)
}

/// Double-log fit of the IDS above `edge` over the window where
/// `N - N(edge)` lies in `[n_min / (|Λ| · ensemble), 1e-2]`.
///
/// The superpolynomial check asks that `(E - edge)^{-n} [N(E) - N(edge)]`
/// grow with `E` across the window, up to two standard errors.
pub fn lifshitz_fit(curve: &IdsCurve, edge: f64, d: usize, n_min: f64) -> Result<LifshitzFit> {
    let base = curve.value_at(edge);
    let floor = n_min / (curve.volume as f64 * curve.ensemble_size as f64);
    let mut sel: Vec<(f64, f64, f64)> = Vec::new();
    for ((&e, &v), &se) in curve.energy_grid.iter().zip(&curve.values).zip(&curve.standard_errors) {
        let y = v - base;
        if e > edge && y >= floor && y <= LIFSHITZ_CEILING && y > 0.0 {
            sel.push((e, y, se));
        }
    }
    if sel.len() < MIN_FIT_POINTS {
        // Each grid step resolves about one more decade once the floor drops
        // by a decade, so scale the ensemble by the shortfall.
        let needed = (curve.ensemble_size as f64 * 10f64.powi((MIN_FIT_POINTS - sel.len()) as i32)).ceil();
        return Err(Error::InsufficientData(format!(
            "{} resolvable points above the edge, need {MIN_FIT_POINTS}; try an ensemble of at least {needed:.0}",
            sel.len()
        )));
    }
    let points: Vec<(f64, f64)> = sel.iter().map(|&(e, y, _)| ((e - edge).ln(), y.ln().abs().ln())).collect();
    let (intercept, slope, se) = linear_fit(&points);
    let dos2 = (1..=3u32)
        .map(|n| {
            let ok = sel.windows(2).all(|w| {
                let r0 = w[0].1 / (w[0].0 - edge).powi(n as i32);
                let r1 = w[1].1 / (w[1].0 - edge).powi(n as i32);
                let tol = 2.0 * (w[0].2 / (w[0].0 - edge).powi(n as i32) + w[1].2 / (w[1].0 - edge).powi(n as i32));
                r1 >= r0 - tol
            });
            (n, ok)
        })
        .collect();
    Ok(LifshitzFit {
        band_edge: edge,
        fit_window: (sel[0].0, sel[sel.len() - 1].0),
        points,
        slope,
        intercept,
        slope_ci: (slope - Z95 * se, slope + Z95 * se),
        target: -(d as f64) / 2.0,
        dos2,
    })
}

/// `N(E) = exp(-(E - edge)^{-d/2})` on `grid`, as an exact-Lifshitz curve.
pub fn synthetic_lifshitz(grid: &[f64], edge: f64, d: usize, volume: usize, ensemble: usize) -> IdsCurve {
    let values = grid
        .iter()
        .map(|&e| if e > edge { (-(e - edge).powf(-(d as f64) / 2.0)).exp() } else { 0.0 })
        .collect();
    IdsCurve {
        energy_grid: grid.to_vec(),
        values,
        volume,
        ensemble_size: ensemble,
        standard_errors: vec![0.0; grid.len()],
        failures: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwRow {
    pub side: usize,
    pub volume: usize,
    /// `L^{-1/2}`.
    pub half_width: f64,
    /// `𝔼[N_Λ(E0 + L^{-1/2}) - N_Λ(E0 - L^{-1/2})]`.
    pub expectation: f64,
    pub stderr: f64,
    /// Fraction of realizations with an eigenvalue in the window.
    pub hit_probability: f64,
    /// Mean eigenvalue count in the window; bounds the hit probability.
    pub mean_count: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwTable {
    pub e0: f64,
    pub lambda: f64,
    pub rows: Vec<KwRow>,
}

impl KwTable {
    /// Each expectation at most the previous one plus the combined 95% error.
    pub fn nonincreasing_within_ci(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].expectation <= w[0].expectation + Z95 * (w[0].stderr + w[1].stderr))
    }

    /// `P{count >= 1} <= 𝔼[count]` on every row.
    pub fn markov_holds(&self) -> bool {
        self.rows.iter().all(|r| r.hit_probability <= r.mean_count)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("side,volume,half_width,expectation,stderr,hit_probability,mean_count,trials\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}\n",
                r.side, r.volume, r.half_width, r.expectation, r.stderr, r.hit_probability, r.mean_count, r.trials
            ));
        }
        s
    }
}

/// Eigenvalue counts in `[E0 - L^{-1/2}, E0 + L^{-1/2}]` over the ensemble
/// for each side `L`.
pub fn kw_concentration(
    model: &RandomModel,
    gap: &GapSpec,
    e0: f64,
    sides: &[usize],
    n: usize,
    master_seed: u64,
) -> Result<KwTable> {
    if sides.is_empty() || n == 0 {
        return Err(Error::Config("side list and ensemble size must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(sides.len());
    for &l in sides {
        let hw = (l as f64).powf(-0.5);
        if !(e0 - hw > gap.lower_edge && e0 + hw < gap.upper_edge) {
            return Err(Error::Geometry(format!(
                "window [{}, {}] for L = {l} does not fit in the gap ({}, {})",
                e0 - hw,
                e0 + hw,
                gap.lower_edge,
                gap.upper_edge
            )));
        }
        let m = model.with_side(l)?;
        let out = run_ensemble(n, |i| {
            let op = m.operator(&m.realization(master_seed, i))?;
            Slicer::new(&op).count_in(e0 - hw, e0 + hw)
        });
        if out.records.is_empty() {
            return Err(out.failures.into_iter().next().map(|f| f.1).expect("n >= 1"));
        }
        let counts: Vec<usize> = out.values().copied().collect();
        let trials = counts.len();
        let vol = m.volume() as f64;
        let ids: Vec<f64> = counts.iter().map(|&c| c as f64 / vol).collect();
        let (expectation, stderr) = mean_stderr(&ids);
        let total: usize = counts.iter().sum();
        rows.push(KwRow {
            side: l,
            volume: m.volume(),
            half_width: hw,
            expectation,
            stderr,
            hit_probability: counts.iter().filter(|&&c| c > 0).count() as f64 / trials as f64,
            mean_count: total as f64 / trials as f64,
            trials,
        });
    }
    Ok(KwTable { e0, lambda: model.lambda(), rows })
}

/// Smoothstep `3t² - 2t³` clamped to `[0, 1]`.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Cutoff equal to 1 away from the seam of the torus and falling to 0 over
/// `width` sites on either side of it; `width = 0` gives `g ≡ 1`.
pub fn cutoff(op: &MagneticOperator, width: usize) -> Vec<f64> {
    let g = op.geometry();
    (0..g.n_sites())
        .map(|x| {
            if width == 0 {
                return 1.0;
            }
            g.coords(x)
                .iter()
                .zip(g.sides())
                .map(|(&c, &l)| {
                    // distance in sites from the seam between l-1 and 0
                    let dist = c.min(l - 1 - c) as f64;
                    smoothstep(dist / width as f64)
                })
                .product()
        })
        .collect()
}

/// Sites of the central cube of side `⌊L/3⌋`.
pub fn core_sites(op: &MagneticOperator) -> Vec<usize> {
    let g = op.geometry();
    (0..g.n_sites())
        .filter(|&x| {
            g.coords(x).iter().zip(g.sides()).all(|(&c, &l)| {
                let s = l / 3;
                let lo = (l - s) / 2;
                c >= lo && c < lo + s
            })
        })
        .collect()
}

/// `W(g) = H g - g H`: entries `H_xy (g_y - g_x)`.
pub fn commutator(m: &SparseMatrix, g: &[f64]) -> SparseMatrix {
    let mut w = SparseMatrix::zeros(m.dim());
    for x in 0..m.dim() {
        for &(y, v) in m.row(x) {
            let d = g[y] - g[x];
            if d != 0.0 {
                w.add(x, y, v * d);
            }
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProbe {
    pub side: usize,
    pub energy: f64,
    pub width: usize,
    /// Separation from the spectrum verified before solving.
    pub separation: f64,
    pub core_sites: usize,
    /// `‖W(g) R(E) χ_core‖`.
    pub norm: f64,
    /// Rows where `W` has entries, all inside the transition shell.
    pub shell_sites: usize,
}

/// `‖W(g_L) (H - E)⁻¹ χ_core‖` by banded solves, one per core site.
pub fn resolvent_decay(op: &MagneticOperator, e: f64, width: usize, delta: f64) -> Result<DecayProbe> {
    let slicer = Slicer::new(op);
    if slicer.count_in(e - delta, e + delta)? > 0 {
        return Err(Error::Precondition(format!("E = {e} is within {delta} of the spectrum")));
    }
    let g = cutoff(op, width);
    let w = commutator(op.matrix(), &g);
    let core = core_sites(op);
    let n = op.dim();
    let shell_sites = (0..n).filter(|&x| !w.row(x).is_empty()).count();
    let norm = if w.nnz() == 0 {
        0.0
    } else {
        let b = BandedHermitian::new(op.matrix(), op.geometry().band_ordering());
        let lu = b.factor_shifted(c64::new(e, 0.0))?;
        let cols: Vec<Vec<c64>> = core
            .iter()
            .map(|&s| {
                let mut rhs = vec![c64::new(0.0, 0.0); n];
                rhs[s] = c64::new(1.0, 0.0);
                w.matvec(&lu.solve(&rhs))
            })
            .collect();
        let m = Mat::from_fn(n, core.len(), |i, j| cols[j][i]);
        norm2(&m)
    };
    Ok(DecayProbe {
        side: op.geometry().sides()[0],
        energy: e,
        width,
        separation: delta,
        core_sites: core.len(),
        norm,
        shell_sites,
    })
}

/// The same norm from a dense inverse.
pub fn resolvent_decay_dense(op: &MagneticOperator, e: f64, width: usize) -> Result<f64> {
    let n = op.dim();
    if n > crate::feshbach::DENSE_LIMIT {
        return Err(Error::Capacity(format!("dense oracle limited to {} sites", crate::feshbach::DENSE_LIMIT)));
    }
    let mut a = op.matrix().to_dense();
    for i in 0..n {
        a[(i, i)] -= c64::new(e, 0.0);
    }
    let r = inverse(&a);
    let w = commutator(op.matrix(), &cutoff(op, width)).to_dense();
    let core = core_sites(op);
    let wr = &w * &r;
    let m = Mat::from_fn(n, core.len(), |i, j| wr[(i, core[j])]);
    Ok(norm2(&m))
}

/// `γ̂` from the least-squares slope of `-log norm` against `L`.
pub fn decay_rate(probes: &[DecayProbe]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = probes.iter().filter(|p| p.norm > 0.0).map(|p| (p.side as f64, -p.norm.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData("decay rate needs two sides with nonzero norm".into()));
    }
    Ok(linear_fit(&pts).1)
}

pub fn decay_csv(probes: &[DecayProbe], rate: f64) -> String {
    let mut s = String::from("side,energy,width,norm,gamma_hat\n");
    for p in probes {
        s.push_str(&format!("{},{:.12e},{},{:.12e},{:.12e}\n", p.side, p.energy, p.width, p.norm, rate));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhReport {
    pub lambda: f64,
    pub index: usize,
    pub eigenvalue: f64,
    /// `⟨φ, (H1 + 2λH2) φ⟩`.
    pub analytic: f64,
    /// Centered difference with one Richardson step.
    pub finite_difference: f64,
    /// `⟨φ, 2λH2 φ⟩`.
    pub second_order: f64,
    /// `2λ‖u‖²_∞`.
    pub second_order_bound: f64,
    /// `‖H1 φ‖`.
    pub h1_norm: f64,
    pub step: f64,
}

impl FhReport {
    pub fn agrees(&self, tol: f64) -> bool {
        (self.analytic - self.finite_difference).abs() <= tol * self.analytic.abs().max(1.0)
    }

    pub fn bound_holds(&self) -> bool {
        self.second_order.abs() <= self.second_order_bound * (1.0 + 1e-12)
    }
}

/// Minimum separation from neighbours for an eigenvalue to count as simple.
pub const SIMPLE_GAP: f64 = 1e-8;

fn eigen_at(split: &SplitOperator, lambda: f64) -> Result<(Vec<f64>, Mat<c64>)> {
    eigh(&split.matrix_at(lambda).to_dense())
}

fn neighbour_gap(ev: &[f64], j: usize) -> f64 {
    let below = if j > 0 { ev[j] - ev[j - 1] } else { f64::INFINITY };
    let above = if j + 1 < ev.len() { ev[j + 1] - ev[j] } else { f64::INFINITY };
    below.min(above)
}

/// Feynman–Hellman derivative of the `j`-th eigenvalue of `H(λ)` against a
/// finite difference with step `step`. `u_sup` is `sup |ω_j u|` over the box.
pub fn fh_derivative(split: &SplitOperator, lambda: f64, j: usize, step: f64, u_sup: f64) -> Result<FhReport> {
    let n = split.h0.dim();
    if n > crate::feshbach::DENSE_LIMIT {
        return Err(Error::Capacity(format!("dense derivative check limited to {} sites", crate::feshbach::DENSE_LIMIT)));
    }
    if j >= n {
        return Err(Error::Input(format!("eigenvalue index {j} out of range for dimension {n}")));
    }
    if !(step > 0.0) {
        return Err(Error::StepSize(format!("step {step} must be positive")));
    }
    let (ev, vecs) = eigen_at(split, lambda)?;
    if neighbour_gap(&ev, j) <= SIMPLE_GAP {
        return Err(Error::Crossing(format!("eigenvalue {j} is not simple at λ = {lambda}")));
    }
    let phi: Vec<c64> = (0..n).map(|i| vecs[(i, j)]).collect();
    let deriv = split.derivative_at(lambda);
    let analytic = dot(&phi, &deriv.matvec(&phi)).re;
    let second_order = 2.0 * lambda * dot(&phi, &split.h2.matvec(&phi)).re;
    let h1_norm = crate::sparse::norm(&split.h1.matvec(&phi));

    let at = |mu: f64| -> Result<f64> {
        let (e, _) = eigen_at(split, mu)?;
        if neighbour_gap(&e, j) <= SIMPLE_GAP.max((e[j] - ev[j]).abs()) {
            return Err(Error::Crossing(format!(
                "eigenvalue {j} meets a neighbour inside the stencil at λ = {mu}; use a smaller step or track the branch"
            )));
        }
        Ok(e[j])
    };
    let d1 = (at(lambda + step)? - at(lambda - step)?) / (2.0 * step);
    let h = 0.5 * step;
    let d2 = (at(lambda + h)? - at(lambda - h)?) / (2.0 * h);
    let finite_difference = (4.0 * d2 - d1) / 3.0;
    Ok(FhReport {
        lambda,
        index: j,
        eigenvalue: ev[j],
        analytic,
        finite_difference,
        second_order,
        second_order_bound: 2.0 * lambda.abs() * u_sup * u_sup,
        h1_norm,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{PeriodicBackground, SingleSiteProfile};
    use crate::disorder::{DisorderModel, DisorderRealization};
    use crate::geometry::LatticeGeometry;
    use crate::operator::{assemble_lattice, EdgeField, OperatorKind};

    #[test]
    fn synthetic_curve_recovers_exponent() {
        let grid: Vec<f64> = (1..400).map(|i| 0.5 + i as f64 * 0.005).collect();
        let c = synthetic_lifshitz(&grid, 0.5, 2, 1 << 20, 1 << 20);
        let fit = lifshitz_fit(&c, 0.5, 2, 10.0).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-3, "slope {}", fit.slope);
        assert!(fit.dos2_passes());
    }

    #[test]
    fn too_few_points_is_insufficient_data() {
        let grid = vec![0.1, 0.2, 0.3];
        let c = synthetic_lifshitz(&grid, 0.0, 2, 100, 10);
        assert!(matches!(lifshitz_fit(&c, 0.0, 2, 10.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn free_lattice_slope_is_far_from_lifshitz() {
        let g = LatticeGeometry::cube(2, 64).unwrap();
        let op = assemble_lattice(OperatorKind::EdgeLaplacian, &g, &EdgeField::zeros(&g)).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.0005).collect();
        let curve = crate::spectral::ids::ids(&op, &grid).unwrap();
        // the torus IDS has a jump at 0 from the constant mode
        let fit = lifshitz_fit(&curve, 1e-12, 2, 1.0).unwrap();
        assert!(fit.slope > -0.5, "slope {}", fit.slope);
    }

    #[test]
    fn constant_cutoff_has_zero_commutator() {
        let g = LatticeGeometry::cube(2, 12).unwrap();
        let op = assemble_lattice(OperatorKind::EdgeLaplacian, &g, &EdgeField::landau(&g, 0.3)).unwrap();
        let p = resolvent_decay(&op, -3.0, 0, 0.5).unwrap();
        assert_eq!(p.norm, 0.0);
        assert_eq!(p.shell_sites, 0);
    }

    #[test]
    fn cutoff_is_a_smooth_indicator() {
        let g = LatticeGeometry::cube(2, 16).unwrap();
        let op = assemble_lattice(OperatorKind::EdgeLaplacian, &g, &EdgeField::zeros(&g)).unwrap();
        let c = cutoff(&op, 2);
        assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        let core = core_sites(&op);
        assert_eq!(core.len(), 25);
        assert!(core.iter().all(|&x| c[x] == 1.0));
        let w = commutator(op.matrix(), &c);
        for x in 0..op.dim() {
            if !w.row(x).is_empty() {
                let coords = g.coords(x);
                assert!(coords.iter().any(|&k| k <= 2 || k >= 13), "W at {coords:?}");
            }
        }
    }

    #[test]
    fn decay_matches_dense_and_is_monotone_in_distance() {
        let g = LatticeGeometry::cube(2, 12).unwrap();
        let op = assemble_lattice(OperatorKind::EdgeLaplacian, &g, &EdgeField::landau(&g, 0.2)).unwrap();
        let mut last = f64::INFINITY;
        for e in [-0.5, -1.0, -2.0, -4.0] {
            let p = resolvent_decay(&op, e, 2, 0.1).unwrap();
            let d = resolvent_decay_dense(&op, e, 2).unwrap();
            assert!((p.norm - d).abs() <= 1e-10 * d, "{} vs {d}", p.norm);
            assert!(p.norm <= last);
            last = p.norm;
        }
    }

    #[test]
    fn energy_in_spectrum_is_rejected() {
        let g = LatticeGeometry::cube(2, 8).unwrap();
        let op = assemble_lattice(OperatorKind::EdgeLaplacian, &g, &EdgeField::zeros(&g)).unwrap();
        assert!(matches!(resolvent_decay(&op, 4.0, 1, 0.1), Err(Error::Precondition(_))));
    }

    fn small_split(seed: u64) -> (SplitOperator, f64) {
        let g = LatticeGeometry::new(vec![6, 6], 1.0, vec![2, 2]).unwrap();
        let bg = PeriodicBackground::from_potential(vec![2, 2], 1.0, |x| (x[0] + 2 * x[1]) as f64 * 0.7);
        let prof = SingleSiteProfile::from_components(vec![2, 2], vec![vec![0.3, -0.2, 0.5, 0.1], vec![0.0, 0.4, -0.3, 0.2]])
            .unwrap();
        let model = RandomModel::new(g, bg, prof, DisorderModel::uniform(0.1)).unwrap();
        let r = model.realization(seed, 0);
        (model.split(&r).unwrap(), model.profile.sup_norm())
    }

    #[test]
    fn zero_profile_has_zero_derivative() {
        let g = LatticeGeometry::new(vec![4, 4], 1.0, vec![2, 2]).unwrap();
        let bg = PeriodicBackground::from_potential(vec![2, 2], 1.0, |x| x[0] as f64);
        let model = RandomModel::new(g, bg, SingleSiteProfile::zero(vec![2, 2]), DisorderModel::uniform(0.0)).unwrap();
        let split = model.split(&DisorderRealization::constant(4, 0.7)).unwrap();
        let r = fh_derivative(&split, 0.0, 0, 1e-5, 0.0).unwrap();
        assert_eq!(r.analytic, 0.0);
    }

    #[test]
    fn feynman_hellman_agrees_with_finite_difference() {
        let (split, u) = small_split(3);
        for j in [0, 7, 20] {
            let r = fh_derivative(&split, 0.05, j, 1e-5, u).unwrap();
            assert!(r.agrees(1e-6), "{r:?}");
            assert!(r.bound_holds());
        }
    }
}
