//! Monte Carlo probes of the Wegner estimate
//! `P{dist(σ(H_Λ(λ)), E0) < η} <= C η^{1/q} |Λ|` and of the Hölder
//! continuity of the IDS inside the gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feshbach::{loglog_slope, FeshbachBase, OmegaFamily};
use crate::floquet::GapSpec;
use crate::model::RandomModel;
use crate::spectral::ensemble::run_ensemble;
use crate::spectral::ids::IdsCurve;
use crate::spectral::Slicer;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WegnerProbe {
    pub e0: f64,
    pub eta: f64,
    pub q: f64,
    pub lambda: f64,
    pub volume: usize,
    pub hits: usize,
    pub trials: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WegnerTable {
    pub probes: Vec<WegnerProbe>,
    /// Smallest `C` with Wilson upper bound `<= C η^{1/q} |Λ|` on the
    /// smallest volume.
    pub c_hat: f64,
    /// Mean log-log slope of `p̂` in η over volumes with at least two hit cells.
    pub eta_exponent: Option<f64>,
    /// Mean log-log slope of `p̂` in `|Λ|` over η with at least two hit cells.
    pub volume_exponent: Option<f64>,
    /// Every cell has Wilson lower bound `<= Ĉ η^{1/q} |Λ|`.
    pub consistent: bool,
    /// `p̂` nondecreasing in η at every volume.
    pub monotone: bool,
    /// No hits at any cell: the bound holds vacuously.
    pub degenerate: bool,
    /// Left side of the `λ0^(1)` condition on the smallest box at the
    /// extreme coupling configuration.
    pub lambda1: Option<f64>,
    pub failures: usize,
}

impl WegnerTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eta,volume,lambda,hits,trials,p_hat,ci_low,ci_high\n");
        for p in &self.probes {
            s.push_str(&format!(
                "{:.6e},{},{:.6e},{},{},{:.9e},{:.9e},{:.9e}\n",
                p.eta, p.volume, p.lambda, p.hits, p.trials, p.p_hat, p.ci_low, p.ci_high
            ));
        }
        s
    }

    pub fn bound(&self, eta: f64, volume: usize, q: f64) -> f64 {
        self.c_hat * eta.powf(1.0 / q) * volume as f64
    }
}

/// Largest dimension on which the `λ0^(1)` condition is evaluated densely.
const LAMBDA1_DENSE: usize = 1024;

/// `λ δ-^{-1/2} (‖H1 R0⁻^{1/2}‖ + λ‖H2 R0⁻^{1/2}‖)` for the couplings all at
/// the support endpoint of largest modulus.
pub fn lambda1_condition(model: &RandomModel, gap: &GapSpec, e0: f64) -> Result<f64> {
    let fam = OmegaFamily::from_model(model)?;
    let base = FeshbachBase::new(&fam.h0, e0, gap.center())?;
    let (a, b) = model.disorder.distribution.support();
    let w = if a.abs() > b.abs() { a } else { b };
    let omega = vec![w; fam.n_omegas()];
    Ok(base.lambda1_value(&fam.h1(&omega)?, &fam.h2(&omega)?, model.lambda()))
}

/// Estimates `p̂(η, |Λ|)` on boxes of side `sides` with `n` realizations each.
/// The model supplies λ, the profile and the distribution; `gap` is the gap
/// of the deterministic operator.
#[allow(clippy::too_many_arguments)]
pub fn wegner_mc(
    model: &RandomModel,
    gap: &GapSpec,
    e0: f64,
    etas: &[f64],
    q: f64,
    sides: &[usize],
    n: usize,
    master_seed: u64,
) -> Result<WegnerTable> {
    if etas.is_empty() || sides.is_empty() || n == 0 {
        return Err(Error::Config("η list, side list and ensemble size must be non-empty".into()));
    }
    if !(q > 1.0) {
        return Err(Error::Config(format!("q = {q} must exceed 1")));
    }
    if etas.windows(2).any(|w| !(w[1] > w[0])) || !(etas[0] > 0.0) {
        return Err(Error::Config("η list must be positive and strictly ascending".into()));
    }
    let eta_max = *etas.last().expect("non-empty");
    if !(e0 - 2.0 * eta_max > gap.lower_edge && e0 + 2.0 * eta_max < gap.upper_edge) {
        return Err(Error::Precondition(format!(
            "[E0 - 2η, E0 + 2η] = [{}, {}] leaves the gap ({}, {})",
            e0 - 2.0 * eta_max,
            e0 + 2.0 * eta_max,
            gap.lower_edge,
            gap.upper_edge
        )));
    }
    let mut sorted_sides = sides.to_vec();
    sorted_sides.sort_unstable();
    let small = model.with_side(sorted_sides[0])?;
    let lambda1 = if small.volume() <= LAMBDA1_DENSE { Some(lambda1_condition(&small, gap, e0)?) } else { None };
    if let Some(v) = lambda1 {
        if v >= 1.0 {
            return Err(Error::Precondition(format!(
                "λ = {} is outside the reduction regime (λ0 condition value {v:.3})",
                model.lambda()
            )));
        }
    }

    let tol = 1e-6 * etas[0];
    let mut probes = Vec::new();
    let mut failures = 0;
    for &l in &sorted_sides {
        let m = model.with_side(l)?;
        let out = run_ensemble(n, |i| {
            let op = m.operator(&m.realization(master_seed, i))?;
            Slicer::new(&op).distance_within(e0, eta_max, tol)
        });
        failures += out.failure_count();
        let dists: Vec<Option<f64>> = out.values().copied().collect();
        let trials = dists.len();
        for &eta in etas {
            // One distance per realization makes the events nested in η.
            let hits = dists.iter().filter(|d| d.is_some_and(|d| d <= eta)).count();
            let (ci_low, ci_high) = wilson_interval(hits, trials, Z95);
            probes.push(WegnerProbe {
                e0,
                eta,
                q,
                lambda: model.lambda(),
                volume: m.volume(),
                hits,
                trials,
                p_hat: if trials > 0 { hits as f64 / trials as f64 } else { 0.0 },
                ci_low,
                ci_high,
            });
        }
    }
    if probes.iter().all(|p| p.trials == 0) {
        return Err(Error::InsufficientData("every realization failed".into()));
    }

    let k = etas.len();
    let v0 = probes[0].volume;
    let c_hat = probes[..k]
        .iter()
        .map(|p| p.ci_high / (p.eta.powf(1.0 / q) * v0 as f64))
        .fold(0.0, f64::max);
    let bound = |p: &WegnerProbe| c_hat * p.eta.powf(1.0 / q) * p.volume as f64;
    let consistent = probes.iter().all(|p| p.ci_low <= bound(p));
    let monotone = probes.chunks(k).all(|c| c.windows(2).all(|w| w[1].hits >= w[0].hits));
    let degenerate = probes.iter().all(|p| p.hits == 0);
    if degenerate {
        log::warn!("no realization has spectrum within η of E0; the Wegner bound holds vacuously");
    }

    let mean = |xs: Vec<f64>| if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) };
    let eta_exponent = mean(
        probes
            .chunks(k)
            .filter_map(|c| {
                let hit: Vec<&WegnerProbe> = c.iter().filter(|p| p.hits > 0).collect();
                (hit.len() >= 2).then(|| {
                    loglog_slope(&hit.iter().map(|p| p.eta).collect::<Vec<_>>(), &hit.iter().map(|p| p.p_hat).collect::<Vec<_>>())
                })
            })
            .collect(),
    );
    let volume_exponent = mean(
        (0..k)
            .filter_map(|j| {
                let hit: Vec<&WegnerProbe> = probes.iter().skip(j).step_by(k).filter(|p| p.hits > 0).collect();
                (hit.len() >= 2).then(|| {
                    loglog_slope(
                        &hit.iter().map(|p| p.volume as f64).collect::<Vec<_>>(),
                        &hit.iter().map(|p| p.p_hat).collect::<Vec<_>>(),
                    )
                })
            })
            .collect(),
    );
    Ok(WegnerTable { probes, c_hat, eta_exponent, volume_exponent, consistent, monotone, degenerate, lambda1, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub interval: (f64, f64),
    pub q: f64,
    /// `sup [N(E) - N(E')] / |E - E'|^{1/q}` over grid pairs in the interval.
    pub constant: f64,
    pub pairs: usize,
}

/// Empirical Hölder constant of order `1/q` of an IDS curve on `interval`,
/// which must lie inside the gap `(E-, E+)` of the deterministic operator.
pub fn holder_ids(curve: &IdsCurve, interval: (f64, f64), q: f64, gap: (f64, f64)) -> Result<HolderReport> {
    let (a, b) = interval;
    if !(a < b) {
        return Err(Error::Input(format!("interval [{a}, {b}] is empty")));
    }
    if !(q > 1.0) {
        return Err(Error::Config(format!("q = {q} must exceed 1")));
    }
    if !(a > gap.0 && b < gap.1) {
        return Err(Error::Precondition(format!(
            "interval [{a}, {b}] meets the spectrum of H0 outside the gap ({}, {})",
            gap.0, gap.1
        )));
    }
    let pts: Vec<(f64, f64)> = curve
        .energy_grid
        .iter()
        .zip(&curve.values)
        .filter(|(e, _)| **e >= a && **e <= b)
        .map(|(e, v)| (*e, *v))
        .collect();
    let mut constant = 0.0f64;
    let mut pairs = 0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let de = pts[j].0 - pts[i].0;
            constant = constant.max((pts[j].1 - pts[i].1).abs() / de.powf(1.0 / q));
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::InsufficientData(format!("fewer than two grid energies in [{a}, {b}]")));
    }
    Ok(HolderReport { interval, q, constant, pairs })
}
