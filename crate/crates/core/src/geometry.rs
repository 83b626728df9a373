//! Finite lattices: a box of sites with spacing `h`, partitioned into
//! periodicity cells of `q` sites per axis.
//!
//! Sites are numbered with the first axis running fastest. Periodicity
//! cells and the sites inside one cell follow the same convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition of the finite box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Open chain, only available in one dimension (test fixture).
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    sides: Vec<usize>,
    spacing: f64,
    cell: Vec<usize>,
    #[serde(default)]
    boundary: Boundary,
}

impl LatticeGeometry {
    pub fn new(sides: Vec<usize>, spacing: f64, cell: Vec<usize>) -> Result<Self> {
        Self::with_boundary(sides, spacing, cell, Boundary::Periodic)
    }

    pub fn with_boundary(
        sides: Vec<usize>,
        spacing: f64,
        cell: Vec<usize>,
        boundary: Boundary,
    ) -> Result<Self> {
        let d = sides.len();
        if !(1..=3).contains(&d) {
            return Err(Error::Dimension(format!("dimension {d} not in 1..=3")));
        }
        if cell.len() != d {
            return Err(Error::Shape(format!(
                "cell has {} axes but the box has {d}",
                cell.len()
            )));
        }
        if sides.iter().any(|&l| l == 0) || cell.iter().any(|&q| q == 0) {
            return Err(Error::Geometry("sides and cell sizes must be positive".into()));
        }
        if let Some(a) = (0..d).find(|&a| sides[a] % cell[a] != 0) {
            return Err(Error::Geometry(format!(
                "cell size {} does not divide side {} on axis {a}",
                cell[a], sides[a]
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing}")));
        }
        if boundary == Boundary::Open && d != 1 {
            return Err(Error::Dimension("open boundary only supported for d = 1".into()));
        }
        Ok(Self { sides, spacing, cell, boundary })
    }

    /// A cube of side `l` in `d` dimensions with unit spacing and unit cell.
    pub fn cube(d: usize, l: usize) -> Result<Self> {
        Self::new(vec![l; d], 1.0, vec![1; d])
    }

    /// The geometry of a single periodicity cell (used for Bloch reductions).
    pub fn unit_cell(&self) -> Self {
        Self {
            sides: self.cell.clone(),
            spacing: self.spacing,
            cell: self.cell.clone(),
            boundary: Boundary::Periodic,
        }
    }

    /// Same cell and spacing on a box with `cells_per_axis` cells along every axis.
    pub fn tiled(&self, cells_per_axis: usize) -> Result<Self> {
        Self::new(
            self.cell.iter().map(|q| q * cells_per_axis).collect(),
            self.spacing,
            self.cell.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn cell(&self) -> &[usize] {
        &self.cell
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n_sites(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn cell_sites(&self) -> usize {
        self.cell.iter().product()
    }

    pub fn cells_per_axis(&self) -> Vec<usize> {
        self.sides.iter().zip(&self.cell).map(|(l, q)| l / q).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_axis().iter().product()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        flat_index(coords, &self.sides)
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        unflatten(index, &self.sides)
    }

    /// Neighbour of `site` one step along `axis` in direction `dir` (+1/-1).
    ///
    /// Returns the neighbour and the winding (-1, 0, +1) picked up across the
    /// periodic seam, or `None` on an open boundary.
    pub fn neighbor(&self, site: usize, axis: usize, dir: i32) -> Option<(usize, i32)> {
        let mut c = self.coords(site);
        let l = self.sides[axis];
        let x = c[axis] as i64 + dir as i64;
        let (xn, wind) = if x < 0 {
            (x + l as i64, -1)
        } else if x >= l as i64 {
            (x - l as i64, 1)
        } else {
            (x, 0)
        };
        if wind != 0 && self.boundary == Boundary::Open {
            return None;
        }
        c[axis] = xn as usize;
        Some((self.index(&c), wind))
    }

    /// Index of the periodicity cell containing `site`.
    pub fn cell_of(&self, site: usize) -> usize {
        let c = self.coords(site);
        let cc: Vec<usize> = c.iter().zip(&self.cell).map(|(x, q)| x / q).collect();
        flat_index(&cc, &self.cells_per_axis())
    }

    /// Index of `site` inside its periodicity cell.
    pub fn local_index(&self, site: usize) -> usize {
        let c = self.coords(site);
        let lc: Vec<usize> = c.iter().zip(&self.cell).map(|(x, q)| x % q).collect();
        flat_index(&lc, &self.cell)
    }

    /// Physical position of a site.
    pub fn position(&self, site: usize) -> Vec<f64> {
        self.coords(site).iter().map(|&x| x as f64 * self.spacing).collect()
    }

    /// Site permutation that keeps the matrix bandwidth of nearest-neighbour
    /// operators at about twice the largest cross-section, even with
    /// periodic wrap-around. `order[k]` is the site placed at position `k`.
    pub fn band_ordering(&self) -> Vec<usize> {
        let folded: Vec<Vec<usize>> = self.sides.iter().map(|&l| fold_axis(l)).collect();
        let n = self.n_sites();
        let mut order = Vec::with_capacity(n);
        let mut pos = vec![0usize; self.dim()];
        for _ in 0..n {
            let coords: Vec<usize> = (0..self.dim()).map(|a| folded[a][pos[a]]).collect();
            order.push(self.index(&coords));
            for a in 0..self.dim() {
                pos[a] += 1;
                if pos[a] < self.sides[a] {
                    break;
                }
                pos[a] = 0;
            }
        }
        order
    }
}

/// Sequence 0, L-1, 1, L-2, ... so that ring neighbours sit at most two apart.
fn fold_axis(l: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(l);
    let (mut lo, mut hi) = (0usize, l);
    while lo < hi {
        out.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            out.push(hi);
        }
    }
    out
}

pub(crate) fn flat_index(coords: &[usize], shape: &[usize]) -> usize {
    let mut idx = 0;
    for a in (0..shape.len()).rev() {
        idx = idx * shape[a] + coords[a];
    }
    idx
}

pub(crate) fn unflatten(mut index: usize, shape: &[usize]) -> Vec<usize> {
    let mut c = Vec::with_capacity(shape.len());
    for &s in shape {
        c.push(index % s);
        index /= s;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_dividing_cell() {
        let err = LatticeGeometry::new(vec![6, 6], 1.0, vec![4, 2]).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn open_boundary_only_in_one_dimension() {
        assert!(LatticeGeometry::with_boundary(vec![4, 4], 1.0, vec![1, 1], Boundary::Open).is_err());
        let g = LatticeGeometry::with_boundary(vec![4], 1.0, vec![1], Boundary::Open).unwrap();
        assert_eq!(g.neighbor(3, 0, 1), None);
        assert_eq!(g.neighbor(2, 0, 1), Some((3, 0)));
    }

    #[test]
    fn cell_bookkeeping() {
        let g = LatticeGeometry::new(vec![8, 4], 0.5, vec![4, 2]).unwrap();
        assert_eq!(g.n_cells(), 4);
        let s = g.index(&[5, 3]);
        assert_eq!(g.cell_of(s), 1 + 2);
        assert_eq!(g.local_index(s), 1 + 4);
        assert_eq!(g.neighbor(g.index(&[7, 0]), 0, 1), Some((g.index(&[0, 0]), 1)));
    }

    #[test]
    fn band_ordering_is_a_permutation_with_small_bandwidth() {
        let g = LatticeGeometry::cube(2, 10).unwrap();
        let order = g.band_ordering();
        let mut inv = vec![usize::MAX; g.n_sites()];
        for (k, &s) in order.iter().enumerate() {
            inv[s] = k;
        }
        assert!(inv.iter().all(|&k| k != usize::MAX));
        let mut bw = 0;
        for s in 0..g.n_sites() {
            for a in 0..2 {
                let (t, _) = g.neighbor(s, a, 1).unwrap();
                bw = bw.max(inv[s].abs_diff(inv[t]));
            }
        }
        assert!(bw <= 2 * 10, "bandwidth {bw}");
    }
}
