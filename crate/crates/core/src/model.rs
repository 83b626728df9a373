//! A random magnetic model: lattice, periodic background, single-site
//! profile and coupling distribution.

use serde::{Deserialize, Serialize};

use crate::background::{PeriodicBackground, SingleSiteProfile};
use crate::disorder::{sample_cells, DisorderModel, DisorderRealization};
use crate::error::Result;
use crate::geometry::LatticeGeometry;
use crate::operator::{
    assemble_continuum_with, assemble_split, check_compatible, Discretization, MagneticOperator, SplitOperator,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomModel {
    pub geometry: LatticeGeometry,
    pub background: PeriodicBackground,
    pub profile: SingleSiteProfile,
    pub disorder: DisorderModel,
    #[serde(default)]
    pub discretization: Discretization,
}

impl RandomModel {
    pub fn new(
        geometry: LatticeGeometry,
        background: PeriodicBackground,
        profile: SingleSiteProfile,
        disorder: DisorderModel,
    ) -> Result<Self> {
        check_compatible(&geometry, &background, &profile)?;
        disorder.validate()?;
        Ok(Self { geometry, background, profile, disorder, discretization: Discretization::Peierls })
    }

    pub fn with_discretization(mut self, discretization: Discretization) -> Self {
        self.discretization = discretization;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.disorder.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { disorder: self.disorder.with_lambda(lambda), ..self.clone() }
    }

    /// Same model on a box of `cells` periodicity cells per axis.
    pub fn with_cells(&self, cells: usize) -> Result<Self> {
        Ok(Self { geometry: self.geometry.tiled(cells)?, ..self.clone() })
    }

    /// Same model on a box of side `l` sites per axis.
    pub fn with_side(&self, l: usize) -> Result<Self> {
        let g = LatticeGeometry::new(vec![l; self.geometry.dim()], self.geometry.spacing(), self.geometry.cell().to_vec())?;
        Ok(Self { geometry: g, ..self.clone() })
    }

    pub fn volume(&self) -> usize {
        self.geometry.n_sites()
    }

    pub fn realization(&self, master_seed: u64, index: u64) -> DisorderRealization {
        sample_cells(&self.disorder.distribution, self.geometry.n_cells(), master_seed, index)
    }

    /// Couplings all equal to `value` (e.g. a support endpoint).
    pub fn constant_realization(&self, value: f64) -> DisorderRealization {
        DisorderRealization::constant(self.geometry.n_cells(), value)
    }

    pub fn operator(&self, realization: &DisorderRealization) -> Result<MagneticOperator> {
        self.operator_at(self.disorder.lambda, realization)
    }

    pub fn operator_at(&self, lambda: f64, realization: &DisorderRealization) -> Result<MagneticOperator> {
        assemble_continuum_with(
            &self.geometry,
            &self.background,
            &self.profile,
            &self.disorder.with_lambda(lambda),
            realization,
            self.discretization,
        )
    }

    /// The deterministic operator `H0` on this lattice.
    pub fn background_operator(&self) -> Result<MagneticOperator> {
        self.operator_at(0.0, &self.constant_realization(0.0))
    }

    pub fn split(&self, realization: &DisorderRealization) -> Result<SplitOperator> {
        assemble_split(&self.geometry, &self.background, &self.profile, realization)
    }
}
