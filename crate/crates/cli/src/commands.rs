use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _};
use log::info;
use serde_json::json;
use windrom::bench::{charts, run_comparison, run_data_study, run_extrapolation_study, Placement};
use windrom::container::Container;
use windrom::mesh::{load_mesh, write_mesh_text, MeshFormat};
use windrom::pod::SnapshotSet;
use windrom::rom_podg::train_podg;
use windrom::rom_podi::train_podi;
use windrom::{FlowSolution, InsProblem, Mesh, ParameterPoint, TaylorHoodSpace};
use windrom_service::{decode_f64, AppState, Engine, EvaluatePayload, Field, ModelKind, UqPayload};

use crate::config::PipelineConfig;
use crate::manifest::{Manifest, Output};
use crate::{MESH_FILE, PODG_FILE, PODI_FILE, SNAPSHOT_DIR};

pub struct Context {
    pub jobs: Option<usize>,
}

impl Context {
    fn output(&self, dir: &Path, command: &str, cfg: &PipelineConfig) -> anyhow::Result<Output> {
        Output::create(dir, Manifest::new(command, cfg, self.jobs)?)
    }
}

fn mesh_summary(mesh: &Mesh) -> String {
    let space = TaylorHoodSpace::new(mesh);
    let (lo, hi) = mesh.bounding_box();
    let mut s = String::new();
    let _ = writeln!(s, "vertices\t{}", mesh.n_vertices());
    let _ = writeln!(s, "triangles\t{}", mesh.n_triangles());
    let _ = writeln!(s, "velocity_dofs\t{}", space.velocity_dofs());
    let _ = writeln!(s, "pressure_dofs\t{}", space.pressure_dofs());
    for (tag, n) in mesh.tag_counts() {
        let _ = writeln!(s, "edges_{}\t{}\tlength {:.6}", tag.as_str(), n, mesh.boundary_length(tag));
    }
    let _ = writeln!(s, "holes\t{}", mesh.boundary_loops().len().saturating_sub(1));
    let _ = writeln!(s, "area\t{:.6}", mesh.area());
    let _ = writeln!(s, "bounding_box\t[{}, {}] x [{}, {}]", lo[0], hi[0], lo[1], hi[1]);
    let _ = writeln!(s, "characteristic_length\t{}", mesh.characteristic_length());
    let _ = writeln!(s, "enclosed\t{}", mesh.enclosed());
    let _ = writeln!(s, "hash\t{}", mesh.hash());
    s
}

pub fn mesh_info(ctx: &Context, cfg: &PipelineConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let mesh = cfg.build_mesh()?;
    let summary = mesh_summary(&mesh);
    print!("{summary}");
    if let Some(dir) = out {
        let mut o = ctx.output(dir, "mesh-info", cfg)?;
        o.manifest().inputs.insert("mesh".into(), mesh.hash());
        o.write(MESH_FILE, write_mesh_text(&mesh))?;
        o.write("mesh_info.tsv", &summary)?;
        o.finish()?;
    }
    Ok(())
}

fn problem(cfg: &PipelineConfig, mesh: Arc<Mesh>) -> anyhow::Result<InsProblem> {
    Ok(InsProblem::new(mesh, cfg.physics.nu)?)
}

fn solve_snapshots(cfg: &PipelineConfig, problem: &InsProblem) -> anyhow::Result<Vec<FlowSolution>> {
    let params = cfg.snapshots.domain.grid(&cfg.snapshots.plan, Placement::Nodes)?;
    info!("solving {} full-order problems", params.len());
    Ok(problem.solve_many(&params, &cfg.newton)?)
}

pub fn snapshot(ctx: &Context, cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let mesh = Arc::new(cfg.build_mesh()?);
    let problem = problem(cfg, mesh.clone())?;
    let sols = solve_snapshots(cfg, &problem)?;
    let mut o = ctx.output(out, "snapshot", cfg)?;
    o.manifest().inputs.insert("mesh".into(), mesh.hash());
    o.write(MESH_FILE, write_mesh_text(&mesh))?;
    for (k, s) in sols.iter().enumerate() {
        o.write(&format!("{SNAPSHOT_DIR}/snapshot_{k:04}.bin"), s.to_container(cfg.physics.nu)?.to_bytes())?;
    }
    let set = SnapshotSet::velocity(&sols)?;
    o.manifest().result = Some(json!({
        "count": sols.len(),
        "velocity_snapshot_hash": set.hash(),
        "parameters": sols.iter().map(|s| s.mu).collect::<Vec<_>>(),
        "newton_iterations": sols.iter().map(|s| s.newton_iterations).collect::<Vec<_>>(),
    }));
    o.finish()?;
    println!("{} snapshots written to {}", sols.len(), out.display());
    Ok(())
}

/// Mesh and solutions written by `snapshot`.
fn read_snapshots(dir: &Path) -> anyhow::Result<(Mesh, Vec<FlowSolution>)> {
    let mesh_path = dir.join(MESH_FILE);
    let mesh = load_mesh(&mesh_path, MeshFormat::from_path(&mesh_path)).with_context(|| format!("cannot load {}", mesh_path.display()))?;
    let sub = dir.join(SNAPSHOT_DIR);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&sub)
        .with_context(|| format!("cannot list {}", sub.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "bin"));
    files.sort();
    if files.is_empty() {
        bail!("no snapshots in {}", sub.display());
    }
    let sols = files
        .iter()
        .map(|p| FlowSolution::from_container(&Container::read(p)?).with_context(|| format!("cannot read {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((mesh, sols))
}

pub fn train(ctx: &Context, cfg: &PipelineConfig, podi: bool, podg: bool, snapshots: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let (mesh, problem, sols) = match snapshots {
        Some(dir) => {
            let (mesh, sols) = read_snapshots(dir)?;
            let mesh = Arc::new(mesh);
            let problem = problem(cfg, mesh.clone())?;
            if let Some(s) = sols.iter().find(|s| s.u.len() != problem.space().velocity_dofs()) {
                bail!("snapshot at {} has {} velocity values, the mesh needs {}", s.mu, s.u.len(), problem.space().velocity_dofs());
            }
            (mesh, problem, sols)
        }
        None => {
            let mesh = Arc::new(cfg.build_mesh()?);
            let problem = problem(cfg, mesh.clone())?;
            let sols = solve_snapshots(cfg, &problem)?;
            (mesh, problem, sols)
        }
    };
    let velocity = SnapshotSet::velocity(&sols)?.with_mass(Arc::new(problem.space().velocity_mass(&mesh)))?;
    let mut o = ctx.output(out, "train", cfg)?;
    o.manifest().inputs.insert("mesh".into(), mesh.hash());
    o.manifest().inputs.insert("snapshots".into(), velocity.hash());
    o.write(MESH_FILE, write_mesh_text(&mesh))?;
    let mut result = serde_json::Map::new();
    if podi {
        let artifact = train_podi(&velocity, &cfg.podi)?;
        let c = artifact.to_container()?;
        o.write(PODI_FILE, c.to_bytes())?;
        result.insert("podi".into(), json!({"hash": c.hash(), "size": artifact.size(), "bounds": artifact.bounds}));
    }
    if podg {
        let artifact = train_podg(&problem, &sols, &cfg.podg)?;
        let c = artifact.to_container()?;
        o.write(PODG_FILE, c.to_bytes())?;
        result.insert(
            "podg".into(),
            json!({"hash": c.hash(), "velocity_size": artifact.velocity_size(), "pressure_size": artifact.pressure_size()}),
        );
    }
    o.manifest().result = Some(result.into());
    o.finish()?;
    println!("trained from {} snapshots into {}", sols.len(), out.display());
    Ok(())
}

fn engine(cfg: &PipelineConfig) -> anyhow::Result<Engine> {
    Ok(Engine::load(&cfg.engine_sources()?)?)
}

fn record_engine(o: &mut Output, e: &Engine, kind: ModelKind) {
    o.manifest().inputs.insert("mesh".into(), e.mesh_hash().to_string());
    if let Some(h) = e.artifact_hash(kind) {
        o.manifest().inputs.insert(kind.as_str().into(), h.to_string());
    }
}

fn time_label(t: f64) -> String {
    format!("t{t}")
}

fn nodal_csv(mesh: &Mesh, header: &str, columns: &[&[f64]]) -> String {
    let mut s = format!("x,y,{header}\n");
    for (k, p) in mesh.vertices().iter().enumerate() {
        let _ = write!(s, "{},{}", p[0], p[1]);
        for c in columns {
            let _ = write!(s, ",{}", c[k]);
        }
        s.push('\n');
    }
    s
}

pub fn evaluate(
    ctx: &Context,
    cfg: &PipelineConfig,
    mu: ParameterPoint,
    field: Field,
    times: &[f64],
    kind: ModelKind,
    out: &Path,
) -> anyhow::Result<()> {
    let e = engine(cfg)?;
    let times = if times.is_empty() && field == Field::Concentration { vec![cfg.transport.t_end] } else { times.to_vec() };
    let payload = e.evaluate(&mu, field, &times, kind)?;
    let mut o = ctx.output(out, "evaluate", cfg)?;
    record_engine(&mut o, &e, kind);
    o.write("evaluate.json", serde_json::to_vec(&payload)?)?;
    write_field_tables(&mut o, e.mesh(), &payload)?;
    o.manifest().result = Some(json!({
        "w_i": payload.w_i,
        "w_d": payload.w_d,
        "field": payload.field,
        "extrapolated": payload.extrapolated,
        "range": payload.range,
    }));
    o.finish()?;
    if payload.extrapolated {
        log::warn!("{mu} lies outside the training range");
    }
    println!("{} at {mu}: range [{:.6e}, {:.6e}]", if field == Field::Wind { "speed" } else { "concentration" }, payload.range[0], payload.range[1]);
    Ok(())
}

fn write_field_tables(o: &mut Output, mesh: &Mesh, p: &EvaluatePayload) -> anyhow::Result<()> {
    if let Some((ux, uy)) = p.wind_values()? {
        o.write("wind.csv", nodal_csv(mesh, "ux,uy", &[&ux, &uy]))?;
    }
    for f in p.concentration.iter().flatten() {
        let c = decode_f64(&f.values)?;
        o.write(&format!("concentration_{}.csv", time_label(f.time)), nodal_csv(mesh, "c", &[&c]))?;
    }
    Ok(())
}

#[derive(Clone, Copy)]
pub enum Study {
    Compare,
    Data,
    Extrapolation,
}

pub fn bench(ctx: &Context, cfg: &PipelineConfig, kind: Study, out: &Path) -> anyhow::Result<()> {
    let mesh = Arc::new(cfg.build_mesh()?);
    let problem = problem(cfg, mesh.clone())?;
    let study = &cfg.study;
    let (name, report) = match kind {
        Study::Compare => ("bench compare", run_comparison(&problem, study)?),
        Study::Data => ("bench data-study", run_data_study(&problem, study, &cfg.bench.data_counts)?),
        Study::Extrapolation => ("bench extrapolation", run_extrapolation_study(&problem, study, cfg.bench.train_range)?),
    };
    let mut o = ctx.output(out, name, cfg)?;
    o.manifest().inputs.insert("mesh".into(), mesh.hash());
    for t in &report.meta.training {
        o.manifest().inputs.insert(format!("snapshots_{}", t.n_snapshots), t.snapshot_hash.clone());
    }
    let text = report.to_text();
    o.write("report.txt", &text)?;
    o.write("report.json", report.to_json()?)?;
    for (file, chart) in charts(&report) {
        o.write(&format!("{file}.svg"), chart.to_svg())?;
    }
    o.manifest().result = Some(json!({ "failures": report.failures().count(), "records": report.records.len() }));
    o.finish()?;
    let summary: String = text.lines().skip_while(|l| *l != "[summary]").take_while(|l| !l.is_empty()).map(|l| format!("{l}\n")).collect();
    print!("{summary}");
    Ok(())
}

pub fn uq(ctx: &Context, cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let e = engine(cfg)?;
    let kind = cfg.uq.model;
    let payload = e.uq(&cfg.uq.spec, &cfg.uq.times, kind)?;
    let mut o = ctx.output(out, "uq", cfg)?;
    record_engine(&mut o, &e, kind);
    write_uq_tables(&mut o, e.mesh(), &payload)?;
    o.manifest().result = Some(serde_json::to_value(&payload)?);
    o.finish()?;
    let h = &payload.histogram;
    println!(
        "{} samples ({} failed); histogram node {} at ({}, {}), t = {}",
        payload.successful + payload.failures,
        payload.failures,
        h.node,
        payload.histogram_position[0],
        payload.histogram_position[1],
        h.time
    );
    Ok(())
}

fn write_uq_tables(o: &mut Output, mesh: &Mesh, p: &UqPayload) -> anyhow::Result<()> {
    for f in &p.fields {
        for (name, values) in [("min", &f.min), ("mean", &f.mean), ("max", &f.max)] {
            let v = decode_f64(values)?;
            o.write(&format!("{name}_{}.csv", time_label(f.time)), nodal_csv(mesh, name, &[&v]))?;
        }
    }
    let h = &p.histogram;
    let mut s = format!(
        "# node {} at ({}, {}), t = {}, degenerate = {}\nlo\thi\tcount\n",
        h.node, p.histogram_position[0], p.histogram_position[1], h.time, h.degenerate
    );
    for b in &h.bins {
        let _ = writeln!(s, "{}\t{}\t{}", b.lo, b.hi, b.count);
    }
    o.write("histogram.tsv", s)?;
    let mut s = String::from("index\tw_i\tw_d\tredraws\textrapolated\tfailure\n");
    for r in &p.parameters {
        let d = r.mu.w_d.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", r.index, r.mu.w_i, d, r.redraws, r.extrapolated, r.failure.as_deref().unwrap_or(""));
    }
    o.write("samples.tsv", s)?;
    Ok(())
}

pub fn serve(ctx: &Context, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let e = engine(cfg)?;
    info!("mesh {} with {} vertices; podi {}", e.mesh_hash(), e.mesh().n_vertices(), e.artifact_hash(ModelKind::Podi).unwrap_or(""));
    let state = AppState::new(e, cfg.service.clone())?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = ctx.jobs {
        rt.worker_threads(n);
    }
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], cfg.service.port));
    rt.enable_all().build()?.block_on(windrom_service::serve(state, addr))?;
    Ok(())
}
