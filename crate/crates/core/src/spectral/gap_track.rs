//! Tracking the gap edges `E±(λ)` of a random model as the disorder
//! coupling grows.

use serde::{Deserialize, Serialize};

use super::ensemble::{run_ensemble, EnsembleOutcome};
use super::Slicer;
use crate::disorder::DisorderRealization;
use crate::error::{Error, Result};
use crate::floquet::GapSpec;
use crate::model::RandomModel;

const EDGE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTrack {
    pub lambdas: Vec<f64>,
    pub lower_edges: Vec<f64>,
    pub upper_edges: Vec<f64>,
    /// Least-squares slope through the origin of `E+ - E+(λ)` against `λ`.
    pub fit_nu: f64,
    /// `max_λ (E+ - E+(λ)) / λ`, the smallest ν satisfying the linear bound.
    pub envelope_nu: f64,
    /// First λ at which the edges met; the track stops there.
    pub closed_at: Option<f64>,
    /// `E+(λ)` nonincreasing and `E-(λ)` nondecreasing along the track.
    pub monotone: bool,
    /// The deterministic edges the drift is measured from.
    pub base_edges: (f64, f64),
}

impl GapTrack {
    pub fn upper_drift(&self) -> Vec<f64> {
        self.upper_edges.iter().map(|e| self.base_edges.1 - e).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,lower_edge,upper_edge,upper_drift\n");
        for ((l, lo), hi) in self.lambdas.iter().zip(&self.lower_edges).zip(&self.upper_edges) {
            s.push_str(&format!("{l:.12e},{lo:.12e},{hi:.12e},{:.12e}\n", self.base_edges.1 - hi));
        }
        s
    }
}

/// Edges closest to `center` from below and above for one configuration.
fn edges_of(model: &RandomModel, lambda: f64, r: &DisorderRealization, center: f64) -> Result<(f64, f64)> {
    let op = model.operator_at(lambda, r)?;
    let s = Slicer::new(&op);
    let below = s.next_below(center, EDGE_TOL)?.unwrap_or(f64::NEG_INFINITY);
    let above = s.next_above(center, EDGE_TOL)?.unwrap_or(f64::INFINITY);
    Ok((below, above))
}

/// `E+(λ)` is the minimum over `n_random` realizations and the constant
/// configurations at both support endpoints of the lowest eigenvalue above
/// the gap center; `E-(λ)` symmetric.
pub fn track_gap_edges(
    model: &RandomModel,
    gap: &GapSpec,
    lambdas: &[f64],
    n_random: usize,
    master_seed: u64,
) -> Result<GapTrack> {
    if lambdas.is_empty() || lambdas[0] != 0.0 {
        return Err(Error::Input("λ list must start at 0".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("λ list must be strictly ascending".into()));
    }
    let center = gap.center();
    let (a, b) = model.disorder.distribution.support();
    let mut configs: Vec<DisorderRealization> = (0..n_random as u64).map(|i| model.realization(master_seed, i)).collect();
    configs.push(model.constant_realization(a));
    configs.push(model.constant_realization(b));

    let mut track = GapTrack {
        lambdas: Vec::new(),
        lower_edges: Vec::new(),
        upper_edges: Vec::new(),
        fit_nu: 0.0,
        envelope_nu: 0.0,
        closed_at: None,
        monotone: true,
        base_edges: (gap.lower_edge, gap.upper_edge),
    };
    for &lambda in lambdas {
        let out = run_ensemble(configs.len(), |i| edges_of(model, lambda, &configs[i as usize], center));
        let EnsembleOutcome { records, failures } = out;
        if let Some((_, e)) = failures.into_iter().next() {
            return Err(e);
        }
        let lo = records.iter().map(|r| r.1 .0).fold(f64::NEG_INFINITY, f64::max);
        let hi = records.iter().map(|r| r.1 .1).fold(f64::INFINITY, f64::min);
        if lo >= hi {
            track.closed_at = Some(lambda);
            log::warn!("gap closed at λ = {lambda}");
            break;
        }
        if let (Some(&plo), Some(&phi)) = (track.lower_edges.last(), track.upper_edges.last()) {
            if hi > phi + 1e-10 || lo < plo - 1e-10 {
                track.monotone = false;
            }
        }
        track.lambdas.push(lambda);
        track.lower_edges.push(lo);
        track.upper_edges.push(hi);
    }
    let drift = track.upper_drift();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (l, dr) in track.lambdas.iter().zip(&drift) {
        sxy += l * dr;
        sxx += l * l;
        if *l > 0.0 {
            track.envelope_nu = track.envelope_nu.max(dr / l);
        }
    }
    track.fit_nu = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(track)
}
