//! Disorder ensembles with per-realization seeding.
//!
//! Realizations run in parallel, but results are collected by index and
//! reduced in index order, so aggregates are bit-identical across runs and
//! thread counts.

use rayon::prelude::*;

use crate::error::Error;

/// Per-realization results in index order plus tagged failures.
#[derive(Debug)]
pub struct EnsembleOutcome<T> {
    pub records: Vec<(u64, T)>,
    pub failures: Vec<(u64, Error)>,
}

impl<T> EnsembleOutcome<T> {
    pub fn failure_count(&self) -> usize {
        self.failures.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.records.iter().map(|r| &r.1)
    }
}

/// Runs `f(index)` for `index in 0..n`; failures are recorded, not fatal.
pub fn run_ensemble<T, F>(n: usize, f: F) -> EnsembleOutcome<T>
where
    T: Send,
    F: Fn(u64) -> crate::Result<T> + Sync,
{
    let results: Vec<(u64, crate::Result<T>)> = (0..n as u64).into_par_iter().map(|i| (i, f(i))).collect();
    let mut records = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(v) => records.push((i, v)),
            Err(e) => {
                log::warn!("realization {i} failed: {e}");
                failures.push((i, e));
            }
        }
    }
    EnsembleOutcome { records, failures }
}

/// Mean and standard error of a sample (standard error 0 for one sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failures_are_tagged_and_order_is_kept() {
        let out = run_ensemble(20, |i| if i % 7 == 3 { Err(Error::Input(format!("bad {i}"))) } else { Ok(i * i) });
        assert_eq!(out.failure_count(), 3);
        assert_eq!(out.failures[1].0, 10);
        let idx: Vec<u64> = out.records.iter().map(|r| r.0).collect();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(idx, sorted);
    }

    #[test]
    fn mean_stderr_small_sample() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
    }
}
