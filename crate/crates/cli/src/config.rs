//! Pipeline configuration: one TOML file, every section optional.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use windrom::bench::{ParameterDomain, SamplePlan, StudyConfig};
use windrom::mesh::{load_mesh, synth_urban_mesh, MeshFormat, UrbanLayout};
use windrom::rom_podg::PodgOptions;
use windrom::rom_podi::PodiOptions;
use windrom::uq::UncertaintySpec;
use windrom::{Mesh, NewtonOptions};
use windrom_service::{EngineSources, ModelKind, ServiceConfig, TransportSettings};

/// A configuration problem, located by its dotted field path.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { path: path.into(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "invalid configuration: {}", self.message)
        } else {
            write!(f, "invalid configuration at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh file (native text or Gmsh); takes the place of `layout`.
    pub path: Option<PathBuf>,
    /// Synthetic urban layout, used when no path is given.
    pub layout: Option<UrbanLayout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    /// Kinematic viscosity [m²/s].
    pub nu: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self { nu: 280.0 }
    }
}

/// Training grid of the `snapshot` and `train` commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    pub domain: ParameterDomain,
    pub plan: SamplePlan,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self { domain: ParameterDomain { w_i: [0.5, 20.0], w_d: None }, plan: SamplePlan { w_i: 50, w_d: None } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Snapshot counts of the data study, increasing.
    pub data_counts: Vec<usize>,
    /// Training speeds of the extrapolation study.
    pub train_range: [f64; 2],
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { data_counts: vec![25, 50, 75, 100], train_range: [0.5, 10.15] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub spec: UncertaintySpec,
    /// Output times [s].
    pub times: Vec<f64>,
    pub model: ModelKind,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self { spec: UncertaintySpec { samples: 500, ..Default::default() }, times: vec![100.0], model: ModelKind::Podi }
    }
}

/// Trained artifacts consumed by `evaluate`, `uq` and `serve`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactConfig {
    /// Output directory of `train`; supplies any path not given below.
    pub dir: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub podi: Option<PathBuf>,
    pub podg: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: MeshConfig,
    pub physics: Physics,
    pub newton: NewtonOptions,
    pub transport: TransportSettings,
    pub snapshots: SnapshotConfig,
    pub podi: PodiOptions,
    pub podg: PodgOptions,
    pub study: StudyConfig,
    pub bench: BenchConfig,
    pub uq: UqConfig,
    pub artifacts: ArtifactConfig,
    pub service: ServiceConfig,
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::new(key, "empty key"))?;
    let mut t = table;
    for (k, part) in parts.iter().enumerate() {
        let entry = t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::new(parts[..=k].join("."), "is not a table"))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value`, reading the value as TOML and falling back to a string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| ConfigError::new(s, "overrides take the form key=value"))?;
    let key = key.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    Ok((key.to_string(), value))
}

impl PipelineConfig {
    /// Reads `path` (or the defaults), applies overrides and resolves relative
    /// paths against the directory of the file.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", p.display())))?;
                let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("", e.message()))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        let mut cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| ConfigError::new(e.path().to_string(), e.inner().message()))?;
        cfg.resolve(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut().filter(|x| x.is_relative()) {
                *x = base.join(&*x);
            }
        };
        fix(&mut self.mesh.path);
        fix(&mut self.artifacts.dir);
        fix(&mut self.artifacts.mesh);
        fix(&mut self.artifacts.podi);
        fix(&mut self.artifacts.podg);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let at = |path: &'static str| move |e: windrom::Error| ConfigError::new(path, e);
        if self.mesh.path.is_some() && self.mesh.layout.is_some() {
            return Err(ConfigError::new("mesh", "set either `path` or `layout`, not both"));
        }
        if let Some(p) = self.mesh.path.as_ref().filter(|p| !p.is_file()) {
            return Err(ConfigError::new("mesh.path", format!("{} does not exist", p.display())));
        }
        if !(self.physics.nu > 0.0 && self.physics.nu.is_finite()) {
            return Err(ConfigError::new("physics.nu", format!("must be positive, got {}", self.physics.nu)));
        }
        if self.newton.max_iterations == 0 || !(self.newton.tolerance > 0.0) {
            return Err(ConfigError::new("newton", "tolerance and max_iterations must be positive"));
        }
        let t = &self.transport;
        if !(t.kappa >= 0.0 && t.dt > 0.0 && t.t_end >= t.dt && t.source.radius > 0.0) {
            return Err(ConfigError::new("transport", "need kappa >= 0, 0 < dt <= t_end and a positive source radius"));
        }
        self.snapshots.domain.grid(&self.snapshots.plan, windrom::bench::Placement::Nodes).map_err(at("snapshots"))?;
        if self.podi.size == 0 {
            return Err(ConfigError::new("podi.size", "must be positive"));
        }
        if self.podg.velocity_size == 0 {
            return Err(ConfigError::new("podg.velocity_size", "must be positive"));
        }
        self.study.validate().map_err(at("study"))?;
        if self.bench.data_counts.is_empty() || self.bench.data_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::new("bench.data_counts", "must be a nonempty increasing list"));
        }
        let [lo, hi] = self.bench.train_range;
        if !(lo < hi) {
            return Err(ConfigError::new("bench.train_range", "lower end must be below the upper end"));
        }
        self.uq.spec.validate().map_err(at("uq.spec"))?;
        if self.uq.times.is_empty() {
            return Err(ConfigError::new("uq.times", "at least one output time is required"));
        }
        if let Some(t) = self.uq.times.iter().find(|x| !(**x >= 0.0 && **x <= self.transport.t_end)) {
            return Err(ConfigError::new("uq.times", format!("time {t} outside [0, {}]", self.transport.t_end)));
        }
        self.service.validate().map_err(at("service"))?;
        Ok(())
    }

    /// The configured mesh: loaded from file or synthesized.
    pub fn build_mesh(&self) -> anyhow::Result<Mesh> {
        Ok(match &self.mesh.path {
            Some(p) => load_mesh(p, MeshFormat::from_path(p))?,
            None => synth_urban_mesh(&self.mesh.layout.clone().unwrap_or_default())?,
        })
    }

    /// Artifact locations, checked for existence.
    pub fn engine_sources(&self) -> Result<EngineSources, ConfigError> {
        let a = &self.artifacts;
        let pick = |explicit: &Option<PathBuf>, name: &str| explicit.clone().or_else(|| a.dir.as_ref().map(|d| d.join(name)));
        let require = |field: &'static str, p: Option<PathBuf>| match p {
            Some(p) if p.is_file() => Ok(p),
            Some(p) => Err(ConfigError::new(field, format!("{} does not exist", p.display()))),
            None => Err(ConfigError::new(field, "not set; pass --artifacts or set artifacts.dir")),
        };
        let mesh = require("artifacts.mesh", pick(&a.mesh, crate::MESH_FILE))?;
        let podi = require("artifacts.podi", pick(&a.podi, crate::PODI_FILE))?;
        let podg = match &a.podg {
            Some(_) => Some(require("artifacts.podg", a.podg.clone())?),
            None => pick(&None, crate::PODG_FILE).filter(|p| p.is_file()),
        };
        Ok(EngineSources { mesh, podi, podg, transport: self.transport })
    }
}
