//! Finite-volume integrated density of states `N_Λ(E) = |Λ|⁻¹ #{E_j ≤ E}`.

use serde::{Deserialize, Serialize};

use super::ensemble::run_ensemble;
use super::{eigenvalues_dense, Slicer, DENSE_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::RandomModel;
use crate::operator::MagneticOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsCurve {
    pub energy_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub volume: usize,
    pub ensemble_size: usize,
    pub standard_errors: Vec<f64>,
    pub failures: usize,
}

impl IdsCurve {
    /// Value at the largest grid point `<= e` (0 below the grid).
    pub fn value_at(&self, e: f64) -> f64 {
        match self.energy_grid.partition_point(|&x| x <= e) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("energy,ids,stderr\n");
        for ((e, v), se) in self.energy_grid.iter().zip(&self.values).zip(&self.standard_errors) {
            s.push_str(&format!("{e:.12e},{v:.12e},{se:.12e}\n"));
        }
        s
    }
}

/// `points` equally spaced energies over `[lo - 0.1, hi + 0.1]`.
pub fn default_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo - 0.1, hi + 0.1);
    let m = points.max(2) - 1;
    (0..=m).map(|i| a + (b - a) * i as f64 / m as f64).collect()
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Input("energy grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|e| !e.is_finite()) {
        return Err(Error::Input("energy grid must be finite and strictly ascending".into()));
    }
    Ok(())
}

/// `#{E_j <= E}` for each grid energy, given ascending eigenvalues.
pub fn counts_from_eigenvalues(sorted: &[f64], grid: &[f64]) -> Vec<usize> {
    grid.iter().map(|&e| sorted.partition_point(|&x| x <= e)).collect()
}

/// Eigenvalue counts of one operator on the grid: exact from a dense solve
/// below the dense threshold, by inertia above it.
pub fn operator_counts(op: &MagneticOperator, grid: &[f64]) -> Result<Vec<usize>> {
    check_grid(grid)?;
    if op.dim() <= DENSE_THRESHOLD {
        let ev = eigenvalues_dense(op.matrix())?;
        Ok(counts_from_eigenvalues(&ev, grid))
    } else {
        let s = Slicer::new(op);
        grid.iter().map(|&e| s.count_below(e)).collect()
    }
}

pub fn ids(op: &MagneticOperator, grid: &[f64]) -> Result<IdsCurve> {
    let counts = operator_counts(op, grid)?;
    Ok(curve_from_counts(grid, op.dim(), &[counts], 0))
}

/// Mean IDS over realizations `0..n` of `model` under `master_seed`.
pub fn ensemble_ids(model: &RandomModel, master_seed: u64, n: usize, grid: &[f64]) -> Result<IdsCurve> {
    check_grid(grid)?;
    if n == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    let out = run_ensemble(n, |i| {
        let r = model.realization(master_seed, i);
        operator_counts(&model.operator(&r)?, grid)
    });
    if out.records.is_empty() {
        return Err(out.failures.into_iter().next().map(|f| f.1).expect("n >= 1"));
    }
    let counts: Vec<Vec<usize>> = out.records.into_iter().map(|r| r.1).collect();
    Ok(curve_from_counts(grid, model.volume(), &counts, out.failures.len()))
}

/// Averages integer counts first so identical realizations reproduce the
/// single-operator curve bit for bit.
pub fn curve_from_counts(grid: &[f64], volume: usize, counts: &[Vec<usize>], failures: usize) -> IdsCurve {
    let n = counts.len();
    let vol = volume as f64;
    let mut values = Vec::with_capacity(grid.len());
    let mut errs = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let total: u64 = counts.iter().map(|c| c[g] as u64).sum();
        let mean = total as f64 / n as f64;
        values.push(mean / vol);
        let se = if n > 1 {
            let var = counts.iter().map(|c| (c[g] as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt() / vol
        } else {
            0.0
        };
        errs.push(se);
    }
    IdsCurve { energy_grid: grid.to_vec(), values, volume, ensemble_size: n, standard_errors: errs, failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_is_inclusive() {
        let c = counts_from_eigenvalues(&[0.0, 1.0, 1.0, 2.0], &[-1.0, 0.0, 1.0, 1.5, 2.0]);
        assert_eq!(c, vec![0, 1, 3, 3, 4]);
    }

    #[test]
    fn rejects_unsorted_grid() {
        assert!(matches!(check_grid(&[0.0, 1.0, 1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn averaged_counts() {
        let c = curve_from_counts(&[0.0, 1.0], 4, &[vec![1, 2], vec![3, 4]], 0);
        assert_eq!(c.values, vec![0.5, 0.75]);
        assert!((c.standard_errors[0] - 0.25).abs() < 1e-15);
    }
}
