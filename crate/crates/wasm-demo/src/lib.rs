//! Browser bindings: band ranges of the built-in backgrounds, the IDS of the
//! certified magnetic lattice, and its gap edges under growing disorder.

use std::cell::OnceCell;

use maglab::floquet::{band_structure, detect_gap};
use maglab::models::{builtin_background, magnetic_lattice, MagneticLattice};
use maglab::spectral::gap_track::track_gap_edges;
use maglab::spectral::ids::{default_grid, ensemble_ids};
use serde_json::json;
use wasm_bindgen::prelude::*;

thread_local! {
    static LATTICE: OnceCell<MagneticLattice> = const { OnceCell::new() };
}

fn with_lattice<T>(f: impl FnOnce(&MagneticLattice) -> Result<T, String>) -> Result<T, String> {
    LATTICE.with(|cell| {
        if cell.get().is_none() {
            let m = magnetic_lattice().map_err(|e| e.to_string())?;
            let _ = cell.set(m);
        }
        f(cell.get().expect("set above"))
    })
}

/// `{"ranges": [[lo, hi], ...], "gap": [E-, E+] | null}` for a built-in background.
pub fn bands_json(background: &str, resolution: usize) -> Result<String, String> {
    let bg = builtin_background(background).map_err(|e| e.to_string())?;
    let bs = band_structure(&bg, resolution, None).map_err(|e| e.to_string())?;
    let ranges: Vec<(f64, f64)> = (0..bs.n_bands()).map(|n| bs.band_range(n)).collect();
    let window = (ranges[0].0, ranges[ranges.len() - 1].1);
    let gap = detect_gap(&bs, window).map_err(|e| e.to_string())?.gap().map(|g| (g.lower_edge, g.upper_edge));
    Ok(json!({ "background": background, "ranges": ranges, "gap": gap }).to_string())
}

/// Ensemble IDS of the magnetic lattice on an `side x side` torus.
pub fn ids_json(lambda: f64, side: usize, ensemble: usize, seed: u64, lo: f64, hi: f64, points: usize) -> Result<String, String> {
    with_lattice(|ml| {
        let model = ml.model(side, lambda).map_err(|e| e.to_string())?;
        let curve = ensemble_ids(&model, seed, ensemble, &default_grid(lo, hi, points)).map_err(|e| e.to_string())?;
        Ok(json!({
            "energy": curve.energy_grid,
            "ids": curve.values,
            "stderr": curve.standard_errors,
            "gap": [ml.gap.lower_edge, ml.gap.upper_edge],
        })
        .to_string())
    })
}

/// Gap edges `E-(λ)`, `E+(λ)` of the magnetic lattice for ascending λ from 0.
pub fn gap_track_json(lambdas: &[f64], side: usize, realizations: usize, seed: u64) -> Result<String, String> {
    with_lattice(|ml| {
        let model = ml.model(side, 0.0).map_err(|e| e.to_string())?;
        let t = track_gap_edges(&model, &ml.gap, lambdas, realizations, seed).map_err(|e| e.to_string())?;
        Ok(json!({
            "lambda": t.lambdas,
            "lower": t.lower_edges,
            "upper": t.upper_edges,
            "nu_fit": t.fit_nu,
            "nu_envelope": t.envelope_nu,
            "closed_at": t.closed_at,
        })
        .to_string())
    })
}

#[wasm_bindgen]
pub fn bands(background: &str, resolution: usize) -> Result<String, JsValue> {
    bands_json(background, resolution).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn ids(lambda: f64, side: usize, ensemble: usize, seed: u32, lo: f64, hi: f64, points: usize) -> Result<String, JsValue> {
    ids_json(lambda, side, ensemble, seed as u64, lo, hi, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn gap_track(lambdas: Vec<f64>, side: usize, realizations: usize, seed: u32) -> Result<String, JsValue> {
    gap_track_json(&lambdas, side, realizations, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn free_chain_band_is_zero_to_four() {
        let v = parse(&bands_json("free", 32).unwrap());
        let r = &v["ranges"][0];
        assert!(r[0].as_f64().unwrap().abs() < 1e-12);
        assert!((r[1].as_f64().unwrap() - 4.0).abs() < 1e-12);
        assert!(v["gap"].is_null());
    }

    #[test]
    fn period_two_chain_has_a_gap() {
        let v = parse(&bands_json("period-two-chain", 32).unwrap());
        let g = v["gap"].as_array().unwrap();
        assert!((g[0].as_f64().unwrap() - 2.0).abs() < 1e-9);
        assert!((g[1].as_f64().unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_background_is_an_error() {
        assert!(bands_json("nope", 8).unwrap_err().contains("unknown builtin background"));
    }

    #[test]
    fn ids_is_monotone_and_gap_track_starts_at_base() {
        let v = parse(&ids_json(0.2, 8, 3, 1, -3.0, 6.0, 10).unwrap());
        let n: Vec<f64> = v["ids"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(n.windows(2).all(|w| w[1] >= w[0]));
        let t = parse(&gap_track_json(&[0.0, 0.1], 8, 2, 1).unwrap());
        let up0 = t["upper"][0].as_f64().unwrap();
        assert!((up0 - v["gap"][1].as_f64().unwrap()).abs() < 1e-8);
    }
}
