//! Cell-periodic data: the background potentials `V0`, `A0` and the
//! single-site vector potential `u`, all sampled on the sites of one
//! periodicity cell, plus the plain-text cell file format that carries them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flat_index, unflatten};

/// Deterministic periodic data of `(i∇ + εA0)² + V0`.
///
/// `vector_potential[a][s]` is the `a`-th component of `A0` at cell site `s`;
/// link values are taken at link midpoints as the mean of the two endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicBackground {
    cell: Vec<usize>,
    spacing: f64,
    potential: Vec<f64>,
    vector_potential: Vec<Vec<f64>>,
    coupling_eps: f64,
}

impl PeriodicBackground {
    pub fn new(
        cell: Vec<usize>,
        spacing: f64,
        potential: Vec<f64>,
        vector_potential: Vec<Vec<f64>>,
        coupling_eps: f64,
    ) -> Result<Self> {
        let n: usize = cell.iter().product();
        if potential.len() != n {
            return Err(Error::Shape(format!(
                "potential has {} values, cell expects {n}",
                potential.len()
            )));
        }
        if vector_potential.len() != cell.len() {
            return Err(Error::Shape(format!(
                "vector potential has {} components, dimension is {}",
                vector_potential.len(),
                cell.len()
            )));
        }
        if let Some(c) = vector_potential.iter().find(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "vector potential component has {} values, cell expects {n}",
                c.len()
            )));
        }
        let finite = potential.iter().chain(vector_potential.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Data("background contains non-finite values".into()));
        }
        if !(coupling_eps >= 0.0 && coupling_eps.is_finite()) {
            return Err(Error::Data(format!("coupling eps must be >= 0, got {coupling_eps}")));
        }
        if !(spacing > 0.0) {
            return Err(Error::Data(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { cell, spacing, potential, vector_potential, coupling_eps })
    }

    /// Zero potentials on a cell.
    pub fn free(cell: Vec<usize>, spacing: f64) -> Self {
        let n: usize = cell.iter().product();
        let d = cell.len();
        Self { cell, spacing, potential: vec![0.0; n], vector_potential: vec![vec![0.0; n]; d], coupling_eps: 0.0 }
    }

    /// Background with a scalar potential given as a function of cell coordinates.
    pub fn from_potential(cell: Vec<usize>, spacing: f64, v: impl Fn(&[usize]) -> f64) -> Self {
        let mut bg = Self::free(cell, spacing);
        for s in 0..bg.potential.len() {
            bg.potential[s] = v(&unflatten(s, &bg.cell));
        }
        bg
    }

    pub fn with_vector_potential(mut self, a0: Vec<Vec<f64>>, eps: f64) -> Result<Self> {
        let checked = Self::new(self.cell.clone(), self.spacing, self.potential.clone(), a0, eps)?;
        self.vector_potential = checked.vector_potential;
        self.coupling_eps = eps;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.coupling_eps = eps;
        self
    }

    pub fn shifted(mut self, c: f64) -> Self {
        self.potential.iter_mut().for_each(|v| *v += c);
        self
    }

    pub fn dim(&self) -> usize {
        self.cell.len()
    }

    pub fn cell(&self) -> &[usize] {
        &self.cell
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cell_sites(&self) -> usize {
        self.potential.len()
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn vector_potential(&self) -> &[Vec<f64>] {
        &self.vector_potential
    }

    pub fn coupling_eps(&self) -> f64 {
        self.coupling_eps
    }

    pub fn potential_sup(&self) -> f64 {
        self.potential.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn vector_potential_sup(&self) -> f64 {
        sup_norm(&self.vector_potential)
    }

    /// `ε A0` at cell site `s`, component `axis`.
    pub fn scaled_a0(&self, axis: usize, s: usize) -> f64 {
        self.coupling_eps * self.vector_potential[axis][s]
    }
}

/// Single-site vector potential `u` on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSiteProfile {
    cell: Vec<usize>,
    components: Vec<Vec<f64>>,
    support: Vec<bool>,
}

impl SingleSiteProfile {
    pub fn new(cell: Vec<usize>, components: Vec<Vec<f64>>, support: Vec<bool>) -> Result<Self> {
        let n: usize = cell.iter().product();
        if components.len() != cell.len() {
            return Err(Error::Shape(format!(
                "profile has {} components, dimension is {}",
                components.len(),
                cell.len()
            )));
        }
        if components.iter().any(|c| c.len() != n) || support.len() != n {
            return Err(Error::Model(format!(
                "profile grid does not match the {n}-site cell; the support must lie inside one cell"
            )));
        }
        if !components.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Data("profile contains non-finite values".into()));
        }
        for c in &components {
            if c.iter().zip(&support).any(|(v, &m)| !m && *v != 0.0) {
                return Err(Error::Model("profile is non-zero outside its support mask".into()));
            }
        }
        Ok(Self { cell, components, support })
    }

    /// Profile whose support is wherever it is non-zero.
    pub fn from_components(cell: Vec<usize>, components: Vec<Vec<f64>>) -> Result<Self> {
        let n: usize = cell.iter().product();
        let support = (0..n)
            .map(|s| components.iter().any(|c| c.get(s).is_some_and(|v| *v != 0.0)))
            .collect();
        Self::new(cell, components, support)
    }

    pub fn zero(cell: Vec<usize>) -> Self {
        let n: usize = cell.iter().product();
        let d = cell.len();
        Self { cell, components: vec![vec![0.0; n]; d], support: vec![false; n] }
    }

    pub fn cell(&self) -> &[usize] {
        &self.cell
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn value(&self, axis: usize, s: usize) -> f64 {
        self.components[axis][s]
    }

    /// `max_x |u(x)|` with the Euclidean norm on components.
    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.components)
    }

    /// Every component is non-zero somewhere.
    pub fn nontrivial_components(&self) -> bool {
        self.components.iter().all(|c| c.iter().any(|v| *v != 0.0))
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.components.iter_mut().flatten().for_each(|v| *v *= factor);
        self
    }
}

fn sup_norm(components: &[Vec<f64>]) -> f64 {
    let n = components.first().map_or(0, |c| c.len());
    (0..n)
        .map(|s| components.iter().map(|c| c[s] * c[s]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Parsed contents of a cell file.
///
/// ```text
/// # comment
/// d 2
/// q 4 4
/// h 1.0
/// eps 0.5
/// potential
///   <q1*q2 reals, first axis fastest>
/// vector_potential 1
///   <grid>
/// profile 2
///   <grid>
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellFile {
    pub cell: Vec<usize>,
    pub spacing: f64,
    pub eps: f64,
    pub potential: Option<Vec<f64>>,
    pub vector_potential: Vec<Option<Vec<f64>>>,
    pub profile: Vec<Option<Vec<f64>>>,
}

impl CellFile {
    pub fn from_parts(background: &PeriodicBackground, profile: Option<&SingleSiteProfile>) -> Self {
        Self {
            cell: background.cell.clone(),
            spacing: background.spacing,
            eps: background.coupling_eps,
            potential: Some(background.potential.clone()),
            vector_potential: background.vector_potential.iter().cloned().map(Some).collect(),
            profile: match profile {
                Some(p) => p.components.iter().cloned().map(Some).collect(),
                None => vec![None; background.dim()],
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut d: Option<usize> = None;
        let mut out = CellFile { spacing: f64::NAN, ..Default::default() };
        let mut current: Option<(String, usize, Vec<f64>)> = None;

        let flush = |out: &mut CellFile, cur: Option<(String, usize, Vec<f64>)>| -> Result<()> {
            let Some((key, line, values)) = cur else { return Ok(()) };
            let n: usize = out.cell.iter().product();
            if values.len() != n {
                return Err(Error::Shape(format!(
                    "grid '{key}' starting at line {line} has {} values, cell {:?} expects {n}",
                    values.len(),
                    out.cell
                )));
            }
            let mut parts = key.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let axis = parts.next().map(|a| a.parse::<usize>());
            let slot = match (name, axis) {
                ("potential", None) => {
                    out.potential = Some(values);
                    return Ok(());
                }
                ("vector_potential", Some(Ok(a))) => out.vector_potential.get_mut(a.wrapping_sub(1)),
                ("profile", Some(Ok(a))) => out.profile.get_mut(a.wrapping_sub(1)),
                _ => None,
            };
            match slot {
                Some(s) => {
                    *s = Some(values);
                    Ok(())
                }
                None => Err(Error::Data(format!("line {line}: bad section header '{key}'"))),
            }
        };

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let first = line.split_whitespace().next().unwrap();
            let is_number = first.parse::<f64>().is_ok();
            if is_number {
                let Some((_, _, vals)) = current.as_mut() else {
                    return Err(Error::Data(format!("line {lineno}: numbers outside of a grid section")));
                };
                for tok in line.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::Data(format!("line {lineno}: cannot parse '{tok}'")))?;
                    vals.push(v);
                }
                continue;
            }
            flush(&mut out, current.take())?;
            let rest: Vec<&str> = line.split_whitespace().skip(1).collect();
            match first {
                "d" => {
                    let v = parse_one::<usize>(&rest, lineno)?;
                    d = Some(v);
                }
                "q" => {
                    let q: Vec<usize> = rest
                        .iter()
                        .map(|t| t.parse().map_err(|_| Error::Data(format!("line {lineno}: bad cell size '{t}'"))))
                        .collect::<Result<_>>()?;
                    if Some(q.len()) != d {
                        return Err(Error::Shape(format!(
                            "line {lineno}: 'q' has {} entries but d = {:?}",
                            q.len(),
                            d
                        )));
                    }
                    out.vector_potential = vec![None; q.len()];
                    out.profile = vec![None; q.len()];
                    out.cell = q;
                }
                "h" => out.spacing = parse_one::<f64>(&rest, lineno)?,
                "eps" => out.eps = parse_one::<f64>(&rest, lineno)?,
                "potential" | "vector_potential" | "profile" => {
                    if out.cell.is_empty() {
                        return Err(Error::Data(format!("line {lineno}: grid before header 'q'")));
                    }
                    current = Some((line.to_string(), lineno, Vec::new()));
                }
                other => return Err(Error::Data(format!("line {lineno}: unknown keyword '{other}'"))),
            }
        }
        flush(&mut out, current.take())?;
        if out.cell.is_empty() || !out.spacing.is_finite() {
            return Err(Error::Data("cell file is missing the 'd', 'q' or 'h' header".into()));
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("{}: {m}", path.display())),
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d {}", self.cell.len());
        let _ = writeln!(s, "q {}", join(&self.cell));
        let _ = writeln!(s, "h {:?}", self.spacing);
        let _ = writeln!(s, "eps {:?}", self.eps);
        let mut grid = |name: String, v: &[f64]| {
            let _ = writeln!(s, "{name}");
            let row = self.cell[0];
            for chunk in v.chunks(row) {
                let line: Vec<String> = chunk.iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(s, "  {}", line.join(" "));
            }
        };
        if let Some(v) = &self.potential {
            grid("potential".into(), v);
        }
        for (a, v) in self.vector_potential.iter().enumerate() {
            if let Some(v) = v {
                grid(format!("vector_potential {}", a + 1), v);
            }
        }
        for (a, v) in self.profile.iter().enumerate() {
            if let Some(v) = v {
                grid(format!("profile {}", a + 1), v);
            }
        }
        s
    }

    pub fn background(&self) -> Result<PeriodicBackground> {
        let n: usize = self.cell.iter().product();
        let potential = self.potential.clone().unwrap_or_else(|| vec![0.0; n]);
        let a0 = self.vector_potential.iter().map(|c| c.clone().unwrap_or_else(|| vec![0.0; n])).collect();
        PeriodicBackground::new(self.cell.clone(), self.spacing, potential, a0, self.eps)
    }

    /// The single-site profile, if the file defines one.
    pub fn profile(&self) -> Result<Option<SingleSiteProfile>> {
        if self.profile.iter().all(Option::is_none) {
            return Ok(None);
        }
        let n: usize = self.cell.iter().product();
        let comps = self.profile.iter().map(|c| c.clone().unwrap_or_else(|| vec![0.0; n])).collect();
        SingleSiteProfile::from_components(self.cell.clone(), comps).map(Some)
    }
}

fn parse_one<T: std::str::FromStr>(rest: &[&str], line: usize) -> Result<T> {
    match rest {
        [tok] => tok.parse().map_err(|_| Error::Data(format!("line {line}: cannot parse '{tok}'"))),
        _ => Err(Error::Data(format!("line {line}: expected exactly one value"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Cell-site index from cell coordinates (first axis fastest).
pub fn cell_index(coords: &[usize], cell: &[usize]) -> usize {
    flat_index(coords, cell)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two by two cell
d 2
q 2 2
h 0.5
eps 0.25
potential
  0 1
  2 3
vector_potential 2
  0.5 0
  0 -0.5
profile 1
  1 0
  0 0
";

    #[test]
    fn parses_sections() {
        let f = CellFile::parse(SAMPLE).unwrap();
        assert_eq!(f.cell, vec![2, 2]);
        assert_eq!(f.spacing, 0.5);
        let bg = f.background().unwrap();
        assert_eq!(bg.potential(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(bg.vector_potential()[0], vec![0.0; 4]);
        assert_eq!(bg.vector_potential()[1], vec![0.5, 0.0, 0.0, -0.5]);
        assert_eq!(bg.coupling_eps(), 0.25);
        let p = f.profile().unwrap().unwrap();
        assert_eq!(p.support(), &[true, false, false, false]);
    }

    #[test]
    fn render_parse_roundtrip() {
        let f = CellFile::parse(SAMPLE).unwrap();
        let g = CellFile::parse(&f.render()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn wrong_grid_size_names_both_sizes() {
        let bad = SAMPLE.replace("  2 3\n", "  2 3 4\n");
        let err = CellFile::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("has 5 values") && err.contains("expects 4"), "{err}");
    }

    #[test]
    fn profile_outside_support_is_rejected() {
        let err = SingleSiteProfile::new(vec![2], vec![vec![1.0, 1.0]], vec![true, false]).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn profile_larger_than_cell_is_a_model_error() {
        let err = SingleSiteProfile::new(vec![2], vec![vec![1.0, 1.0, 1.0]], vec![true; 3]).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }
}
