//! Coupling distributions and reproducible disorder draws.
//!
//! Each periodicity cell `j` gets one coupling `ω_j`. The draw for cell `j`
//! of realization `r` under master seed `s` comes from a ChaCha8 stream keyed
//! by `(s, r)` and positioned at block `j`, so a realization can be rebuilt
//! cell by cell in any order and on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LatticeGeometry;

/// Density of the single-site couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Uniform { a: f64, b: f64 },
    /// Piecewise-linear density through `(x, density)` nodes; renormalized on use.
    Table { points: Vec<(f64, f64)> },
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Uniform { a: -1.0, b: 1.0 }
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Distribution::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a >= -1.0 && *b <= 1.0) {
                    return Err(Error::Config(format!("uniform({a}, {b}): support must lie in [-1, 1]")));
                }
                if !(*a < 0.0 && *b > 0.0) {
                    return Err(Error::Config(format!(
                        "uniform({a}, {b}): the support must have negative infimum and positive supremum"
                    )));
                }
                Ok(())
            }
            Distribution::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::Config("density table needs at least two nodes".into()));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Config("density table nodes must be strictly ascending".into()));
                }
                if points.iter().any(|&(x, p)| !(-1.0..=1.0).contains(&x) || !p.is_finite() || p < 0.0) {
                    return Err(Error::Config(
                        "density table must have nodes in [-1, 1] and finite non-negative values".into(),
                    ));
                }
                let mass = self.table_mass();
                if !(mass > 0.0 && mass.is_finite()) {
                    return Err(Error::Config("density table is not normalizable (zero total mass)".into()));
                }
                let (lo, hi) = self.support();
                if !(lo < 0.0 && hi > 0.0) {
                    return Err(Error::Config(format!(
                        "density support [{lo}, {hi}] must have negative infimum and positive supremum"
                    )));
                }
                Ok(())
            }
        }
    }

    fn table_mass(&self) -> f64 {
        match self {
            Distribution::Table { points } => {
                points.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum()
            }
            Distribution::Uniform { .. } => 1.0,
        }
    }

    /// Closed support `[inf, sup]`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Distribution::Uniform { a, b } => (*a, *b),
            Distribution::Table { points } => {
                let massive = |w: &[(f64, f64)]| w[0].1 + w[1].1 > 0.0;
                let segs: Vec<&[(f64, f64)]> = points.windows(2).collect();
                let lo = segs.iter().find(|w| massive(w)).map_or(0.0, |w| w[0].0);
                let hi = segs.iter().rev().find(|w| massive(w)).map_or(0.0, |w| w[1].0);
                (lo, hi)
            }
        }
    }

    /// Inverse cumulative distribution function on `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Distribution::Uniform { a, b } => a + (b - a) * u,
            Distribution::Table { points } => {
                let mass = self.table_mass();
                let mut target = u * mass;
                for w in points.windows(2) {
                    let (x0, p0) = w[0];
                    let (x1, p1) = w[1];
                    let dx = x1 - x0;
                    let seg = 0.5 * (p0 + p1) * dx;
                    if target <= seg && seg > 0.0 {
                        // Solve p0 t + (p1 - p0) t^2 / (2 dx) = target for t in [0, dx].
                        let slope = (p1 - p0) / dx;
                        let t = if slope.abs() < 1e-14 * (p0 + p1) {
                            target / p0
                        } else {
                            let disc = (p0 * p0 + 2.0 * slope * target).max(0.0);
                            2.0 * target / (p0 + disc.sqrt())
                        };
                        return x0 + t.clamp(0.0, dx);
                    }
                    target -= seg;
                }
                self.support().1
            }
        }
    }
}

/// Coupling density together with the disorder strength `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderModel {
    pub distribution: Distribution,
    pub lambda: f64,
}

impl DisorderModel {
    pub fn new(distribution: Distribution, lambda: f64) -> Result<Self> {
        let m = Self { distribution, lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(lambda: f64) -> Self {
        Self { distribution: Distribution::default(), lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        self.distribution.validate()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { distribution: self.distribution.clone(), lambda }
    }
}

/// One draw of the cell couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub omegas: Vec<f64>,
    pub master_seed: u64,
    pub realization_index: u64,
}

impl DisorderRealization {
    /// Fixed couplings, e.g. the extreme configurations `ω_j = inf` or `sup`.
    pub fn fixed(omegas: Vec<f64>) -> Self {
        Self { omegas, master_seed: 0, realization_index: 0 }
    }

    pub fn constant(n_cells: usize, value: f64) -> Self {
        Self::fixed(vec![value; n_cells])
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

fn stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Uniform variate for one cell of one realization.
pub fn cell_uniform(master_seed: u64, index: u64, cell: u64) -> f64 {
    let mut rng = stream(master_seed, index);
    rng.set_word_pos(2 * cell as u128);
    rng.random::<f64>()
}

/// Draws `ω_j` for every periodicity cell of `geometry`.
pub fn sample_disorder(
    model: &DisorderModel,
    geometry: &LatticeGeometry,
    master_seed: u64,
    index: u64,
) -> Result<DisorderRealization> {
    model.validate()?;
    Ok(sample_cells(&model.distribution, geometry.n_cells(), master_seed, index))
}

pub fn sample_cells(dist: &Distribution, n_cells: usize, master_seed: u64, index: u64) -> DisorderRealization {
    // Consecutive cells read consecutive words, so one stream serves the whole draw.
    let mut rng = stream(master_seed, index);
    let omegas = (0..n_cells).map(|_| dist.quantile(rng.random::<f64>())).collect();
    DisorderRealization { omegas, master_seed, realization_index: index }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_position_matches_sequential_draws() {
        let r = sample_cells(&Distribution::default(), 50, 7, 3);
        for j in [0usize, 1, 17, 49] {
            let w = Distribution::default().quantile(cell_uniform(7, 3, j as u64));
            assert_eq!(w.to_bits(), r.omegas[j].to_bits());
        }
    }

    #[test]
    fn rejects_support_without_negative_part() {
        let d = Distribution::Uniform { a: 0.0, b: 1.0 };
        assert!(matches!(d.validate(), Err(Error::Config(_))));
        let t = Distribution::Table { points: vec![(-1.0, 0.0), (0.0, 0.0), (1.0, 1.0)] };
        let msg = t.validate().unwrap_err().to_string();
        assert!(msg.contains("negative infimum"), "{msg}");
    }

    #[test]
    fn rejects_zero_mass_table() {
        let t = Distribution::Table { points: vec![(-1.0, 0.0), (1.0, 0.0)] };
        assert!(t.validate().unwrap_err().to_string().contains("normalizable"));
    }

    #[test]
    fn table_quantile_of_triangle() {
        // density 1 - |x| on [-1, 1]; CDF at 0 is 1/2, at -1/2 is 1/8.
        let t = Distribution::Table { points: vec![(-1.0, 0.0), (0.0, 1.0), (1.0, 0.0)] };
        t.validate().unwrap();
        assert!((t.quantile(0.5)).abs() < 1e-12);
        assert!((t.quantile(0.125) + 0.5).abs() < 1e-12);
        assert!((t.quantile(0.875) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_table_is_rescaled() {
        let t = Distribution::Table { points: vec![(-1.0, 3.0), (1.0, 3.0)] };
        assert!((t.quantile(0.25) + 0.5).abs() < 1e-12);
    }
}
