//! Pipeline configuration: one TOML file with a section per stage. Every
//! section has defaults, unknown keys are rejected, and validation errors
//! name the offending line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::constitutive::ElasticParams;
use crate::inverse::NoiseSettings;
use crate::mcmc::{ChainConfig, InactiveConfig};
use crate::prior::PriorBox;
use crate::triax::{default_stations, validate_stations, LoadingSchedule, TriaxSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardKind {
    /// The triaxial compression test.
    #[default]
    Triaxial,
    /// A cheap synthetic map with a known two-dimensional active subspace.
    PlantedRidge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub model: ForwardKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationConfig {
    /// Number of uniformly spaced stations when `values` is absent.
    pub count: usize,
    /// Explicit signed axial strains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl Default for StationConfig {
    fn default() -> Self {
        StationConfig {
            count: 23,
            values: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Ground truth in normalized coordinates.
    pub x_true: Vec<f64>,
    /// Perturb the data with draws from the noise model.
    pub add_noise: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            x_true: vec![0.0; 8],
            add_noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientConfig {
    pub n_samples: usize,
    /// Central-difference step in normalized coordinates.
    pub fd_step: f64,
    /// The stage fails when more than this fraction of samples fail.
    pub max_failure_fraction: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            n_samples: 250,
            fd_step: 1e-4,
            max_failure_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubspaceConfig {
    pub n_boot: usize,
    /// Active dimension; the largest eigenvalue gap when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig { n_boot: 200, dim: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    /// Prior samples projected onto the active subspace.
    pub n_samples: usize,
    /// Multiplier on Scott's rule bandwidths.
    pub bandwidth_factor: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            n_samples: 100_000,
            bandwidth_factor: 1.0,
        }
    }
}

/// Chain settings. Unset values come from the preset for the active
/// dimension: the five-dimensional preset for `k = 5`, the two-dimensional
/// one otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inactive_proposal_scale: Option<f64>,
    pub n_z_ess: usize,
    pub inactive_initial_steps: usize,
    pub inactive_max_steps: usize,
    pub inactive_burn_in_fraction: f64,
    /// Rows kept in the written active-chain trace.
    pub trace_rows: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let inactive = InactiveConfig::default();
        McmcConfig {
            n_steps: None,
            burn_in: None,
            proposal_scale: None,
            inactive_proposal_scale: None,
            n_z_ess: inactive.n_z_ess,
            inactive_initial_steps: inactive.initial_steps,
            inactive_max_steps: inactive.max_steps,
            inactive_burn_in_fraction: inactive.burn_in_fraction,
            trace_rows: 10_000,
        }
    }
}

impl McmcConfig {
    pub fn active_chain(&self, k: usize, seed: u64) -> ChainConfig {
        let mut c = if k == 5 {
            ChainConfig::preset_5d(seed)
        } else {
            ChainConfig::preset_2d(seed)
        };
        if let Some(v) = self.n_steps {
            c.n_steps = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in = v;
        }
        if let Some(v) = self.proposal_scale {
            c.proposal_scale = v;
        }
        c
    }

    pub fn inactive_chain(&self, k: usize, seed: u64) -> InactiveConfig {
        let mut c = if k == 5 {
            InactiveConfig::preset_5d(seed)
        } else {
            InactiveConfig::preset_2d(seed)
        };
        if let Some(v) = self.inactive_proposal_scale {
            c.proposal_scale = v;
        }
        c.n_z_ess = self.n_z_ess;
        c.initial_steps = self.inactive_initial_steps;
        c.max_steps = self.inactive_max_steps;
        c.burn_in_fraction = self.inactive_burn_in_fraction;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub histogram_bins: usize,
    /// Points per axis of the fitted-surface grid.
    pub surface_grid: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            histogram_bins: 40,
            surface_grid: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub prior: PriorBox,
    #[serde(default)]
    pub elastic: ElasticParams,
    #[serde(default)]
    pub schedule: LoadingSchedule,
    #[serde(default)]
    pub triax: TriaxSettings,
    #[serde(default)]
    pub stations: StationConfig,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub gradients: GradientConfig,
    #[serde(default)]
    pub subspace: SubspaceConfig,
    #[serde(default)]
    pub kde: KdeConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("ghbs-out")
}

fn default_seed() -> u64 {
    20_240_917
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

/// A validation failure located at a `section.key` path.
struct Invalid {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn invalid(section: &'static str, key: &'static str, message: impl Into<String>) -> Invalid {
    Invalid {
        section,
        key,
        message: message.into(),
    }
}

/// 1-based line of `key` inside `[section]` (or at top level when `section`
/// is empty), falling back to the section header.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config {
            location: match e.span() {
                Some(span) => format!("{origin}:{}", text[..span.start].matches('\n').count() + 1),
                None => origin.to_string(),
            },
            message: e.message().to_string(),
        })?;
        if let Err(bad) = cfg.check() {
            let path = if bad.section.is_empty() {
                bad.key.to_string()
            } else {
                format!("{}.{}", bad.section, bad.key)
            };
            let location = match locate(text, bad.section, bad.key) {
                Some(line) => format!("{origin}:{line}"),
                None => origin.to_string(),
            };
            return Err(PipelineError::Config {
                location,
                message: format!("{path}: {}", bad.message),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Checks every section; used after applying command-line overrides.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.check().map_err(|bad| PipelineError::Config {
            location: "configuration".into(),
            message: format!("{}.{}: {}", bad.section, bad.key, bad.message),
        })
    }

    pub fn station_values(&self) -> Vec<f64> {
        match &self.stations.values {
            Some(v) => v.clone(),
            None => default_stations(&self.schedule, self.stations.count),
        }
    }

    fn check(&self) -> Result<(), Invalid> {
        if let Err(e) = self.prior.validate() {
            return Err(invalid("prior", "bounds", e.to_string()));
        }
        let n = self.prior.dim();
        if let Err(e) = self.elastic.validate() {
            return Err(invalid("elastic", "", e.to_string()));
        }
        if let Err(e) = self.schedule.validate() {
            return Err(invalid("schedule", "", e.to_string()));
        }
        if self.triax.tol_lat <= 0.0 || self.triax.max_lat_iter == 0 {
            return Err(invalid("triax", "tol_lat", "tol_lat and max_lat_iter must be positive"));
        }
        match &self.stations.values {
            Some(v) => {
                if v.is_empty() || validate_stations(v).is_err() {
                    return Err(invalid(
                        "stations",
                        "values",
                        "stations must be nonzero and strictly increasing in magnitude",
                    ));
                }
                let max = self.schedule.final_axial_strain().abs();
                if v.iter().any(|s| s.abs() > max) {
                    return Err(invalid("stations", "values", format!("stations exceed the final axial strain {max:e}")));
                }
            }
            None => {
                if self.stations.count == 0 {
                    return Err(invalid("stations", "count", "count must be at least 1"));
                }
            }
        }
        let nz = &self.noise;
        if let Some(a) = nz.absolute {
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid("noise", "absolute", "absolute noise must be positive"));
            }
        } else if !(nz.relative >= 0.0 && nz.floor_vol_strain > 0.0 && nz.floor_shear_stress > 0.0) {
            return Err(invalid("noise", "relative", "relative must be >= 0 and floors > 0"));
        }
        if self.synthetic.x_true.len() != n {
            return Err(invalid("synthetic", "x_true", format!("x_true needs {n} entries")));
        }
        if self.synthetic.x_true.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(invalid("synthetic", "x_true", "x_true must lie in [-1, 1]"));
        }
        let g = &self.gradients;
        if g.n_samples < n {
            return Err(invalid("gradients", "n_samples", format!("need at least {n} gradient samples")));
        }
        if !(g.fd_step > 0.0 && g.fd_step < 1.0) {
            return Err(invalid("gradients", "fd_step", "fd_step must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&g.max_failure_fraction) {
            return Err(invalid("gradients", "max_failure_fraction", "must lie in [0, 1]"));
        }
        if self.subspace.n_boot < 30 {
            return Err(invalid("subspace", "n_boot", "n_boot must be at least 30"));
        }
        if let Some(k) = self.subspace.dim {
            if k < 1 || k >= n {
                return Err(invalid("subspace", "dim", format!("dim must lie in [1, {}]", n - 1)));
            }
        }
        if self.kde.n_samples < 2 || self.kde.bandwidth_factor.is_nan() || self.kde.bandwidth_factor <= 0.0 {
            return Err(invalid("kde", "n_samples", "need n_samples >= 2 and a positive bandwidth_factor"));
        }
        let k = self.subspace.dim.unwrap_or(2);
        if let Err(e) = self.mcmc.active_chain(k, 0).validate(k) {
            return Err(invalid("mcmc", "n_steps", e.to_string()));
        }
        if let Err(e) = self.mcmc.inactive_chain(k, 0).validate() {
            return Err(invalid("mcmc", "n_z_ess", e.to_string()));
        }
        if self.mcmc.trace_rows == 0 {
            return Err(invalid("mcmc", "trace_rows", "trace_rows must be positive"));
        }
        if self.report.histogram_bins == 0 || self.report.surface_grid < 2 {
            return Err(invalid("report", "histogram_bins", "need histogram_bins >= 1 and surface_grid >= 2"));
        }
        Ok(())
    }
}
