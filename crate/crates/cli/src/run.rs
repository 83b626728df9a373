//! Dispatch from an experiment description to the library.

use maglab::feshbach::{random_gapped_instance, remainder_scaling, vectorfield_check, FeshbachBase, RemainderScaling};
use maglab::floquet::{band_structure, detect_gap, GapSpec};
use maglab::gh::{certify, PerpField};
use maglab::localization::{decay_csv, decay_rate, fh_derivative, kw_concentration, lifshitz_fit, resolvent_decay};
use maglab::spectral::gap_track::track_gap_edges;
use maglab::spectral::ids::ensemble_ids;
use maglab::wegner::wegner_mc;
use maglab::{Error, Result};
use serde::Serialize;

use crate::config::*;

/// One output file, held in memory until the run settles.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    /// `None` for files written regardless of the configured formats.
    pub format: Option<Format>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct Outputs {
    pub items: Vec<Artifact>,
}

impl Outputs {
    fn csv(&mut self, name: impl Into<String>, text: String) {
        self.items.push(Artifact { name: name.into(), format: Some(Format::Csv), bytes: text.into_bytes() });
    }

    fn json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.items.push(Artifact { name: name.into(), format: Some(Format::Json), bytes });
        Ok(())
    }

    fn raw(&mut self, name: impl Into<String>, text: String) {
        self.items.push(Artifact { name: name.into(), format: None, bytes: text.into_bytes() });
    }
}

/// Runs the experiment, pushing artifacts as they complete so a failure
/// leaves the finished part in `out`.
pub fn execute(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let seed = cfg.compute.master_seed;
    let n = cfg.compute.ensemble_size;
    match &cfg.experiment {
        Experiment::Bands(p) => bands(model(cfg)?, p, out),
        Experiment::GhCertify(p) => gh_certify(model(cfg)?, p, out),
        Experiment::Ids(p) => {
            let m = model(cfg)?;
            let side = m.require_side()?;
            for (k, &lambda) in m.lambdas().iter().enumerate() {
                let curve = ensemble_ids(&m.random_model(side, lambda)?, seed, n, &p.grid.values())?;
                out.csv(format!("ids_{k}.csv"), curve.to_csv());
            }
            out.json("lambdas.json", &m.lambdas())
        }
        Experiment::Lifshitz(p) => {
            let m = model(cfg)?;
            let side = m.require_side()?;
            let gap = model_gap(m, cfg.compute.gap_resolution)?;
            let d = m.background()?.dim();
            for (k, &lambda) in m.lambdas().iter().enumerate() {
                let rm = m.random_model(side, lambda)?;
                let lambdas: Vec<f64> = if lambda > 0.0 { vec![0.0, lambda] } else { vec![0.0] };
                let track = track_gap_edges(&rm, &gap, &lambdas, p.edge_realizations, seed)?;
                if let Some(at) = track.closed_at {
                    return Err(Error::Precondition(format!("gap closed at λ = {at}")));
                }
                let edge = *track.upper_edges.last().expect("λ = 0 is always tracked");
                let grid: Vec<f64> = p.offsets.values().iter().map(|o| edge + o).collect();
                let curve = ensemble_ids(&rm, seed, n, &grid)?;
                out.csv(format!("ids_{k}.csv"), curve.to_csv());
                let fit = lifshitz_fit(&curve, edge, d, p.n_min)?;
                out.csv(format!("lifshitz_{k}.csv"), fit.to_csv());
                out.json(format!("lifshitz_{k}.json"), &fit)?;
            }
            out.json("lambdas.json", &m.lambdas())
        }
        Experiment::Wegner(p) => {
            let m = model(cfg)?;
            let gap = model_gap(m, cfg.compute.gap_resolution)?;
            let side = *p.sides.iter().min().ok_or_else(|| Error::Config("experiment.sides is empty".into()))?;
            let q = p.q.unwrap_or(2.0);
            for (k, &lambda) in m.lambdas().iter().enumerate() {
                let rm = m.random_model(side, lambda)?;
                let table = wegner_mc(&rm, &gap, p.e0, &p.etas, q, &p.sides, n, seed)?;
                out.csv(format!("wegner_{k}.csv"), table.to_csv());
                out.json(format!("wegner_{k}.json"), &table)?;
            }
            Ok(())
        }
        Experiment::Kw(p) => {
            let m = model(cfg)?;
            let gap = model_gap(m, cfg.compute.gap_resolution)?;
            let side = *p.sides.iter().min().ok_or_else(|| Error::Config("experiment.sides is empty".into()))?;
            for (k, &lambda) in m.lambdas().iter().enumerate() {
                let rm = m.random_model(side, lambda)?;
                let table = kw_concentration(&rm, &gap, p.e0, &p.sides, n, seed)?;
                out.csv(format!("kw_{k}.csv"), table.to_csv());
                out.json(format!("kw_{k}.json"), &table)?;
            }
            Ok(())
        }
        Experiment::Decay(p) => {
            let m = model(cfg)?;
            for (k, &lambda) in m.lambdas().iter().enumerate() {
                let mut probes = Vec::with_capacity(p.sides.len());
                for &side in &p.sides {
                    let rm = m.random_model(side, lambda)?;
                    let op = rm.operator(&rm.realization(seed, 0))?;
                    let width = p.width.unwrap_or(side / 8);
                    probes.push(resolvent_decay(&op, p.energy, width, p.delta)?);
                }
                let rate = if probes.len() >= 2 {
                    decay_rate(&probes)?
                } else {
                    log::info!("one side only: no decay rate fitted");
                    f64::NAN
                };
                out.csv(format!("decay_{k}.csv"), decay_csv(&probes, rate));
            }
            Ok(())
        }
        Experiment::FeshbachVerify(p) => feshbach_verify(p, seed, out),
        Experiment::FhCheck(p) => {
            let m = model(cfg)?;
            let side = m.require_side()?;
            let mut csv = String::from("lambda,realization,index,eigenvalue,analytic,finite_difference,second_order,second_order_bound\n");
            for &lambda in m.lambdas() {
                let rm = m.random_model(side, lambda)?;
                let (a, b) = rm.disorder.distribution.support();
                let u_sup = a.abs().max(b.abs()) * rm.profile.sup_norm();
                for r in 0..n as u64 {
                    let split = rm.split(&rm.realization(seed, r))?;
                    for &j in &p.indices {
                        let f = fh_derivative(&split, lambda, j, p.step, u_sup)?;
                        csv.push_str(&format!(
                            "{lambda:.12e},{r},{j},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                            f.eigenvalue, f.analytic, f.finite_difference, f.second_order, f.second_order_bound
                        ));
                    }
                }
            }
            out.csv("fh.csv", csv);
            Ok(())
        }
    }
}

fn model(cfg: &ExperimentConfig) -> Result<&ModelBlock> {
    cfg.model.as_ref().ok_or_else(|| Error::Config("missing [model] table".into()))
}

fn model_gap(m: &ModelBlock, resolution: usize) -> Result<GapSpec> {
    let w = m.gap_window.ok_or_else(|| Error::Config("model.gap_window is required for this experiment".into()))?;
    let bands = band_structure(&m.background()?, resolution, None)?;
    detect_gap(&bands, (w[0], w[1]))?.require()
}

fn bands(m: &ModelBlock, p: &BandsParams, out: &mut Outputs) -> Result<()> {
    let bs = band_structure(&m.background()?, p.resolution, p.max_bands)?;
    out.csv("bands.csv", bs.to_csv());
    if let Some(w) = p.gap_window {
        out.json("gap.json", &detect_gap(&bs, (w[0], w[1]))?)?;
    }
    Ok(())
}

fn gh_certify(m: &ModelBlock, p: &GhParams, out: &mut Outputs) -> Result<()> {
    let bg = m.background()?;
    let bs = band_structure(&bg, p.resolution, None)?;
    let gap = detect_gap(&bs, (p.gap_window[0], p.gap_window[1]))?.require()?;
    out.json("gap.json", &gap)?;
    let cert = certify(&bg, &bs, &gap, &PerpField::plane(bg.dim(), 0, 1)?, p.eps)?;
    out.json("certificate.json", &cert)?;
    if let Some(cell) = cert.cell_file() {
        out.raw("certified.cell", cell.render());
    }
    Ok(())
}

#[derive(Serialize)]
struct FeshbachRow {
    instance: usize,
    seed: u64,
    lambda: f64,
    projector_defect: f64,
    resolvent_residual: f64,
    complex_resolvent_residual: f64,
    g_residual: f64,
    gamma_residual: f64,
    gamma_hermiticity: f64,
    lambda1: f64,
    vector_field_residual: f64,
}

#[derive(Serialize)]
struct ScalingRow {
    instance: usize,
    #[serde(flatten)]
    scaling: RemainderScaling,
}

fn feshbach_verify(p: &FeshbachParams, seed: u64, out: &mut Outputs) -> Result<()> {
    let positive: Vec<f64> = p.lambdas.iter().copied().filter(|l| *l > 0.0).collect();
    let mut rows = Vec::new();
    let mut scalings = Vec::new();
    for i in 0..p.instances {
        let s = seed.wrapping_add(i as u64);
        let inst = random_gapped_instance(p.dim, p.n_omegas, s)?;
        let e0 = 0.5 * (inst.gap.0 + inst.gap.1);
        let base = FeshbachBase::new(&inst.family.h0, e0, inst.threshold())?;
        let h1 = inst.family.h1(&inst.omega)?;
        let h2 = inst.family.h2(&inst.omega)?;
        for &lambda in &p.lambdas {
            let r = base.reduce(&h1, &h2, lambda)?.identity_report();
            let vf = vectorfield_check(&base, &inst.family, &inst.omega, lambda)?;
            rows.push(FeshbachRow {
                instance: i,
                seed: s,
                lambda,
                projector_defect: r.projector_defect,
                resolvent_residual: r.resolvent_residual,
                complex_resolvent_residual: r.complex_resolvent_residual,
                g_residual: r.g_residual,
                gamma_residual: r.gamma_residual,
                gamma_hermiticity: r.gamma_hermiticity,
                lambda1: r.lambda1,
                vector_field_residual: vf.residual,
            });
        }
        if positive.len() >= 2 {
            scalings.push(ScalingRow { instance: i, scaling: remainder_scaling(&base, &h1, &h2, &positive)? });
        }
    }
    let mut csv = String::from(
        "instance,seed,lambda,projector_defect,resolvent_residual,complex_resolvent_residual,g_residual,gamma_residual,gamma_hermiticity,lambda1,vector_field_residual\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            r.instance,
            r.seed,
            r.lambda,
            r.projector_defect,
            r.resolvent_residual,
            r.complex_resolvent_residual,
            r.g_residual,
            r.gamma_residual,
            r.gamma_hermiticity,
            r.lambda1,
            r.vector_field_residual
        ));
    }
    out.csv("feshbach.csv", csv);
    out.json("remainder_scaling.json", &scalings)
}
