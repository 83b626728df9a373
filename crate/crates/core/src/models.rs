//! Built-in periodic backgrounds and the certified magnetic lattice model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::background::{PeriodicBackground, SingleSiteProfile};
use crate::disorder::DisorderModel;
use crate::error::{Error, Result};
use crate::floquet::{band_structure, detect_gap, GapSpec};
use crate::geometry::LatticeGeometry;
use crate::gh::{certify, GhCertificate, PerpField};
use crate::model::RandomModel;

/// Names accepted by [`builtin_background`].
pub const BUILTINS: &[&str] = &["free", "period-two-chain", "separable-cosine", "checkerboard", "magnetic-lattice"];

/// One-site cell of the unit lattice in dimension `d`.
pub fn free_lattice(d: usize) -> PeriodicBackground {
    PeriodicBackground::free(vec![1; d], 1.0)
}

/// Chain with potential `(0, v)` on a two-site cell.
pub fn period_two_chain(v: f64) -> PeriodicBackground {
    PeriodicBackground::from_potential(vec![2], 1.0, |x| if x[0] == 1 { v } else { 0.0 })
}

/// `V0(x) = -a cos(2πx1) - b cos(2πx2)` on the unit square with `n` grid
/// points per axis.
pub fn separable_cosine(n: usize, a: f64, b: f64) -> PeriodicBackground {
    let h = 1.0 / n as f64;
    PeriodicBackground::from_potential(vec![n, n], h, |x| {
        -a * (2.0 * PI * x[0] as f64 * h).cos() - b * (2.0 * PI * x[1] as f64 * h).cos()
    })
}

/// Unit-lattice potential `a c(x1) + b c(x2)` with `c = (1, 0, -1, 0)` on a 4x4 cell.
pub fn checkerboard(a: f64, b: f64) -> PeriodicBackground {
    const C: [f64; 4] = [1.0, 0.0, -1.0, 0.0];
    PeriodicBackground::from_potential(vec![4, 4], 1.0, |x| a * C[x[0]] + b * C[x[1]])
}

pub const CHECKERBOARD_A: f64 = 1.5;
pub const CHECKERBOARD_B: f64 = 2.5;
pub const MAGNETIC_EPS: f64 = 0.3;

/// The checkerboard lattice with `A0 = ∇⊥(ψ0²)` built from its upper gap
/// edge, coupled with `ε`, and the certified single-site profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagneticLattice {
    pub background: PeriodicBackground,
    pub profile: SingleSiteProfile,
    /// Gap of the magnetic background.
    pub gap: GapSpec,
    pub certificate: GhCertificate,
}

impl MagneticLattice {
    pub fn new(a: f64, b: f64, eps: f64) -> Result<Self> {
        let base = checkerboard(a, b);
        let bands = band_structure(&base, 16, None)?;
        let window = (bands.band_range(0).0, bands.band_range(1).1);
        let gap = detect_gap(&bands, window)?.require()?;
        let certificate = certify(&base, &bands, &gap, &PerpField::default_2d(), eps)?;
        let background = certificate.background.clone().expect("certificate carries its background");
        let profile = certificate.profile.clone().expect("certificate carries its profile");
        let mbands = band_structure(&background, 16, None)?;
        let gap = detect_gap(&mbands, (gap.lower_edge, gap.upper_edge))?.require()?;
        Ok(Self { background, profile, gap, certificate })
    }

    /// Random model on an `l x l` torus (`l` a multiple of 4) with uniform
    /// couplings on `[-1, 1]`.
    pub fn model(&self, l: usize, lambda: f64) -> Result<RandomModel> {
        if l % 4 != 0 {
            return Err(Error::Geometry(format!("side {l} is not a multiple of the cell side 4")));
        }
        let g = LatticeGeometry::new(vec![l, l], 1.0, vec![4, 4])?;
        RandomModel::new(g, self.background.clone(), self.profile.clone(), DisorderModel::uniform(lambda))
    }
}

pub fn magnetic_lattice() -> Result<MagneticLattice> {
    MagneticLattice::new(CHECKERBOARD_A, CHECKERBOARD_B, MAGNETIC_EPS)
}

/// Background by name with default parameters.
pub fn builtin_background(name: &str) -> Result<PeriodicBackground> {
    match name {
        "free" => Ok(free_lattice(1)),
        "period-two-chain" => Ok(period_two_chain(2.0)),
        "separable-cosine" => Ok(separable_cosine(16, 10.0, 15.0)),
        "checkerboard" => Ok(checkerboard(CHECKERBOARD_A, CHECKERBOARD_B)),
        "magnetic-lattice" => Ok(magnetic_lattice()?.background),
        other => Err(Error::Config(format!("unknown builtin background '{other}', expected one of {BUILTINS:?}"))),
    }
}
