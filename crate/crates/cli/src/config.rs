//! Experiment descriptions read from TOML.
//!
//! One file describes one experiment. Unknown keys are rejected everywhere;
//! physics-bearing values (λ, the coupling distribution, the background and
//! therefore the grid spacing) have no defaults.

use std::path::{Path, PathBuf};

use maglab::background::{CellFile, PeriodicBackground, SingleSiteProfile};
use maglab::disorder::{DisorderModel, Distribution};
use maglab::geometry::LatticeGeometry;
use maglab::model::RandomModel;
use maglab::models::{builtin_background, magnetic_lattice};
use maglab::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub compute: ComputeBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Bands(BandsParams),
    GhCertify(GhParams),
    Ids(IdsParams),
    Lifshitz(LifshitzParams),
    Wegner(WegnerParams),
    Kw(KwParams),
    Decay(DecayParams),
    FeshbachVerify(FeshbachParams),
    FhCheck(FhParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Bands(_) => "bands",
            Experiment::GhCertify(_) => "gh_certify",
            Experiment::Ids(_) => "ids",
            Experiment::Lifshitz(_) => "lifshitz",
            Experiment::Wegner(_) => "wegner",
            Experiment::Kw(_) => "kw",
            Experiment::Decay(_) => "decay",
            Experiment::FeshbachVerify(_) => "feshbach_verify",
            Experiment::FhCheck(_) => "fh_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsParams {
    /// θ points per axis.
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_bands: Option<usize>,
    /// Window searched for a gap; no gap report without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhParams {
    pub eps: f64,
    pub resolution: usize,
    pub gap_window: [f64; 2],
}

/// Uniform grid of `points` energies on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        maglab::spectral::ids::default_grid(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdsParams {
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifshitzParams {
    /// Energies relative to the tracked edge `E+(λ)`.
    pub offsets: GridSpec,
    /// Realizations used to locate `E+(λ)`.
    pub edge_realizations: usize,
    /// Minimum expected eigenvalue count for a grid point to enter the fit.
    pub n_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WegnerParams {
    pub e0: f64,
    pub etas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub sides: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KwParams {
    pub e0: f64,
    pub sides: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    pub energy: f64,
    pub sides: Vec<usize>,
    /// Cutoff ramp width in sites; `L/8` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// Required distance from `energy` to the spectrum.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeshbachParams {
    pub instances: usize,
    pub dim: usize,
    pub n_omegas: usize,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhParams {
    /// Eigenvalue indices, ascending order.
    pub indices: Vec<usize>,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// Built-in background name; exclusive with `cell_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_file: Option<PathBuf>,
    /// Cell file whose profile grids replace the background's profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_file: Option<PathBuf>,
    /// Box side in lattice sites along every axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Distribution>,
    /// Window searched for the background gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeBlock {
    #[serde(default = "one")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// θ points per axis used to locate the background gap.
    #[serde(default = "sixteen")]
    pub gap_resolution: usize,
}

impl Default for ComputeBlock {
    fn default() -> Self {
        Self { ensemble_size: 1, master_seed: 0, gap_resolution: 16 }
    }
}

fn one() -> usize {
    1
}

fn sixteen() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: default_dir(), formats: all_formats() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// Reads and validates a config. Relative file references resolve against
/// the config's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", path.display())))?;
    let mut cfg = parse_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(m) = cfg.model.as_mut() {
        let base = path.parent().unwrap_or(Path::new("."));
        for f in [&mut m.cell_file, &mut m.profile_file].into_iter().flatten() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    log_defaults(&raw);
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn log_defaults(raw: &toml::Table) {
    let has = |table: &str, key: &str| raw.get(table).and_then(|t| t.get(key)).is_some();
    for (table, key, value) in [
        ("compute", "ensemble_size", "1"),
        ("compute", "master_seed", "0"),
        ("compute", "gap_resolution", "16"),
        ("output", "directory", "\"out\""),
        ("output", "formats", "[\"csv\", \"json\"]"),
    ] {
        if !has(table, key) {
            log::info!("default {table}.{key} = {value}");
        }
    }
    if raw.get("experiment").and_then(|t| t.get("kind")).and_then(|k| k.as_str()) == Some("wegner")
        && !has("experiment", "q")
    {
        log::info!("default experiment.q = 2");
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.compute.ensemble_size == 0 {
            return Err(Error::Config("compute.ensemble_size must be >= 1".into()));
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        let needs_model = !matches!(self.experiment, Experiment::FeshbachVerify(_));
        if needs_model && self.model.is_none() {
            return Err(Error::Config(format!("experiment '{}' needs a [model] table", self.experiment.name())));
        }
        let needs_disorder =
            !matches!(self.experiment, Experiment::Bands(_) | Experiment::GhCertify(_) | Experiment::FeshbachVerify(_));
        if needs_disorder {
            let m = self.model.as_ref().expect("checked above");
            if m.lambda.is_none() {
                return Err(Error::Config(format!("experiment '{}' needs model.lambda", self.experiment.name())));
            }
            if m.distribution.is_none() {
                return Err(Error::Config(format!("experiment '{}' needs model.distribution", self.experiment.name())));
            }
        }
        if let Experiment::FeshbachVerify(p) = &self.experiment {
            if p.lambdas.iter().any(|l| !(*l >= 0.0)) {
                return Err(Error::Config("experiment.lambdas must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Canonical TOML text, the input of the config hash.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

impl ModelBlock {
    fn validate(&self) -> Result<()> {
        match (&self.background, &self.cell_file) {
            (Some(_), Some(_)) => return Err(Error::Config("model.background and model.cell_file are exclusive".into())),
            (None, None) => return Err(Error::Config("model needs background or cell_file".into())),
            _ => {}
        }
        if let Some(ls) = &self.lambda {
            if ls.is_empty() || ls.iter().any(|l| !(*l >= 0.0)) {
                return Err(Error::Config("model.lambda must be a non-empty list of values >= 0".into()));
            }
        }
        if let Some(d) = &self.distribution {
            d.validate()?;
        }
        for f in [&self.cell_file, &self.profile_file].into_iter().flatten() {
            if !f.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        self.background()?;
        self.profile()?;
        Ok(())
    }

    pub fn background(&self) -> Result<PeriodicBackground> {
        match (&self.background, &self.cell_file) {
            (Some(name), _) => builtin_background(name),
            (None, Some(path)) => CellFile::read(path)?.background(),
            (None, None) => Err(Error::Config("model needs background or cell_file".into())),
        }
    }

    /// Profile from `profile_file`, else from the cell file or the certified
    /// built-in, else zero.
    pub fn profile(&self) -> Result<SingleSiteProfile> {
        let bg = self.background()?;
        if let Some(path) = &self.profile_file {
            let file = CellFile::read(path)?;
            if file.cell != bg.cell() {
                return Err(Error::Shape(format!(
                    "profile file {} has cell {:?}, background has cell {:?}",
                    path.display(),
                    file.cell,
                    bg.cell()
                )));
            }
            return file
                .profile()?
                .ok_or_else(|| Error::Config(format!("profile file {} defines no profile grid", path.display())));
        }
        if let Some(path) = &self.cell_file {
            if let Some(p) = CellFile::read(path)?.profile()? {
                return Ok(p);
            }
        }
        if self.background.as_deref() == Some("magnetic-lattice") {
            return Ok(magnetic_lattice()?.profile);
        }
        Ok(SingleSiteProfile::zero(bg.cell().to_vec()))
    }

    pub fn lambdas(&self) -> &[f64] {
        self.lambda.as_deref().unwrap_or(&[])
    }

    /// Random model at `lambda` on a cube of side `side`.
    pub fn random_model(&self, side: usize, lambda: f64) -> Result<RandomModel> {
        let bg = self.background()?;
        let profile = self.profile()?;
        let dist = self.distribution.clone().ok_or_else(|| Error::Config("model.distribution is required".into()))?;
        let g = LatticeGeometry::new(vec![side; bg.dim()], bg.spacing(), bg.cell().to_vec())?;
        RandomModel::new(g, bg, profile, DisorderModel::new(dist, lambda)?)
    }

    pub fn require_side(&self) -> Result<usize> {
        self.side.ok_or_else(|| Error::Config("model.side is required for this experiment".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BANDS: &str = r#"
[experiment]
kind = "bands"
resolution = 8

[model]
background = "free"
"#;

    #[test]
    fn minimal_bands_parses() {
        let cfg = parse_str(BANDS).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment, Experiment::Bands(BandsParams { resolution: 8, max_bands: None, gap_window: None }));
        assert_eq!(cfg.compute, ComputeBlock::default());
    }

    #[test]
    fn unknown_experiment_key_rejected() {
        let text = BANDS.replace("resolution = 8", "resolution = 8\nresoltion = 9");
        let e = parse_str(&text).unwrap_err().to_string();
        assert!(e.contains("resoltion"), "{e}");
    }

    #[test]
    fn missing_lambda_rejected() {
        let text = r#"
[experiment]
kind = "ids"
grid = { lo = -1.0, hi = 1.0, points = 5 }

[model]
background = "free"
side = 8
distribution = { kind = "uniform", a = -1.0, b = 1.0 }
"#;
        let cfg = parse_str(text).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("model.lambda"));
    }

    #[test]
    fn exclusive_background_sources() {
        let text = BANDS.replace("background = \"free\"", "background = \"free\"\ncell_file = \"x.cell\"");
        let cfg = parse_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        let text = r#"
[experiment]
kind = "kw"
e0 = 0.0
sides = [8]

[model]
background = "free"
lambda = [-0.1]
distribution = { kind = "uniform", a = -1.0, b = 1.0 }
"#;
        assert!(parse_str(text).unwrap().validate().is_err());
    }
}
