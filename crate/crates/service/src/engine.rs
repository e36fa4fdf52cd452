//! Loaded artifacts and the evaluations shared by the service and the CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use windrom::container::Container;
use windrom::fom_ad::{solve_ad_recording, AdProblem, SourceSpec};
use windrom::mesh::{load_mesh, MeshFormat};
use windrom::rom_podg::PodgArtifact;
use windrom::rom_podi::PodiArtifact;
use windrom::uq::{run_monte_carlo, UncertaintySpec, UqOptions, WindModel};
use windrom::{Error, Mesh, ParameterBounds, ParameterPoint, Result, TaylorHoodSpace};

use crate::payload::{EvaluatePayload, Field, MeshPayload, UqPayload};

/// Transport physics applied to every wind field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSettings {
    /// Diffusion coefficient [m²/s].
    pub kappa: f64,
    pub source: SourceSpec,
    pub t_end: f64,
    pub dt: f64,
    pub supg: bool,
}

impl Default for TransportSettings {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            source: SourceSpec { center: [333.0, 250.0], radius: 60.0, amplitude: 1.0 },
            t_end: 100.0,
            dt: 1.0,
            supg: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Podi,
    Podg,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Podi => "podi",
            ModelKind::Podg => "podg",
        }
    }
}

/// Where an [`Engine`] loads its inputs from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSources {
    pub mesh: PathBuf,
    pub podi: PathBuf,
    pub podg: Option<PathBuf>,
    pub transport: TransportSettings,
}

/// Immutable artifacts plus the transport template.
pub struct Engine {
    mesh: Arc<Mesh>,
    space: Arc<TaylorHoodSpace>,
    podi: PodiArtifact,
    podg: Option<PodgArtifact>,
    transport: TransportSettings,
    mesh_hash: String,
    podi_hash: String,
    podg_hash: Option<String>,
}

fn read_container(path: &Path) -> Result<Container> {
    Container::read(path).map_err(|e| Error::invalid(format!("cannot load {}: {e}", path.display())))
}

impl Engine {
    pub fn new(mesh: Arc<Mesh>, podi: PodiArtifact, podg: Option<PodgArtifact>, transport: TransportSettings) -> Result<Self> {
        let space = Arc::new(TaylorHoodSpace::new(&mesh));
        let expected = space.velocity_dofs();
        if podi.velocity.basis.dim() != expected {
            return Err(Error::Dimension { expected, got: podi.velocity.basis.dim() });
        }
        if let Some(g) = &podg {
            if g.velocity_modes().nrows() != expected {
                return Err(Error::Dimension { expected, got: g.velocity_modes().nrows() });
            }
        }
        let podi_hash = podi.to_container()?.hash();
        let podg_hash = podg.as_ref().map(|g| g.to_container().map(|c| c.hash())).transpose()?;
        let engine = Self { mesh_hash: mesh.hash(), mesh, space, podi, podg, transport, podi_hash, podg_hash };
        engine.template().validate()?;
        Ok(engine)
    }

    pub fn load(sources: &EngineSources) -> Result<Self> {
        let mesh = load_mesh(&sources.mesh, MeshFormat::from_path(&sources.mesh))
            .map_err(|e| Error::invalid(format!("cannot load {}: {e}", sources.mesh.display())))?;
        let podi = PodiArtifact::from_container(&read_container(&sources.podi)?)?;
        let podg = sources.podg.as_deref().map(|p| PodgArtifact::from_container(&read_container(p)?)).transpose()?;
        Self::new(Arc::new(mesh), podi, podg, sources.transport)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn mesh_hash(&self) -> &str {
        &self.mesh_hash
    }

    pub fn transport(&self) -> &TransportSettings {
        &self.transport
    }

    pub fn bounds(&self) -> &ParameterBounds {
        &self.podi.bounds
    }

    pub fn artifact_hash(&self, kind: ModelKind) -> Option<&str> {
        match kind {
            ModelKind::Podi => Some(&self.podi_hash),
            ModelKind::Podg => self.podg_hash.as_deref(),
        }
    }

    pub fn has(&self, kind: ModelKind) -> bool {
        kind == ModelKind::Podi || self.podg.is_some()
    }

    fn model(&self, kind: ModelKind) -> Result<&dyn WindModel> {
        match kind {
            ModelKind::Podi => Ok(&self.podi),
            ModelKind::Podg => self.podg.as_ref().map(|g| g as &dyn WindModel).ok_or_else(|| Error::invalid("no PODG artifact is loaded")),
        }
    }

    /// Transport problem with a zero wind field.
    pub fn template(&self) -> AdProblem {
        let t = &self.transport;
        AdProblem {
            initial: t.source.nodal(&self.mesh),
            wind: vec![0.0; self.space.velocity_dofs()],
            mesh: self.mesh.clone(),
            space: self.space.clone(),
            kappa: t.kappa,
            t_end: t.t_end,
            dt: t.dt,
            supg: t.supg,
            source: Some(t.source),
        }
    }

    /// Checks `times` against `[0, T]`.
    pub fn check_times(&self, times: &[f64]) -> Result<()> {
        match times.iter().find(|t| !(**t >= 0.0 && **t <= self.transport.t_end)) {
            Some(t) => Err(Error::invalid(format!("time {t} outside [0, {}]", self.transport.t_end))),
            None => Ok(()),
        }
    }

    /// Wind (vertex velocities) or concentration fields at `mu`.
    pub fn evaluate(&self, mu: &ParameterPoint, field: Field, times: &[f64], kind: ModelKind) -> Result<EvaluatePayload> {
        mu.validate()?;
        let model = self.model(kind)?;
        let extrapolated = !model.bounds().contains(mu);
        let u = model.wind(mu)?;
        let base = EvaluatePayload::header(self, kind, mu, field, extrapolated);
        match field {
            Field::Wind => {
                let nn = self.space.n_nodes();
                let nv = self.mesh.n_vertices();
                Ok(base.with_wind(&u[..nv], &u[nn..nn + nv]))
            }
            Field::Concentration => {
                if times.is_empty() {
                    return Err(Error::invalid("concentration requests need at least one time"));
                }
                self.check_times(times)?;
                let problem = AdProblem { wind: u, ..self.template() };
                let series = solve_ad_recording(&problem, Some(times))?;
                let fields = times
                    .iter()
                    .map(|&t| {
                        let (g, c) = series
                            .times
                            .iter()
                            .zip(&series.fields)
                            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
                            .expect("every requested time is recorded");
                        (*g, c.as_slice())
                    })
                    .collect::<Vec<_>>();
                Ok(base.with_concentration(&fields))
            }
        }
    }

    pub fn uq(&self, spec: &UncertaintySpec, times: &[f64], kind: ModelKind) -> Result<UqPayload> {
        self.check_times(times)?;
        let result = match kind {
            ModelKind::Podi => run_monte_carlo(&self.podi, &self.template(), spec, times, &UqOptions::default())?,
            ModelKind::Podg => {
                let g = self.podg.as_ref().ok_or_else(|| Error::invalid("no PODG artifact is loaded"))?;
                run_monte_carlo(g, &self.template(), spec, times, &UqOptions::default())?
            }
        };
        Ok(UqPayload::new(self, kind, &result))
    }

    pub fn mesh_payload(&self) -> MeshPayload {
        MeshPayload::new(&self.mesh, &self.mesh_hash)
    }
}
