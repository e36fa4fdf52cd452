//! Study configurations and drivers.

use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::metrics::{max_abs_velocity_error, median_time, relative_l2_error};
use super::report::{PointRecord, ReportMeta, StudyKind, StudyReport, TrainingInfo};
use crate::fom_ins::{solve_steady_ins, FlowSolution, InsProblem, NewtonOptions, ParameterBounds, ParameterPoint};
use crate::linalg::CsrMatrix;
use crate::pod::{compute_pod, SnapshotSet, Truncation};
use crate::rom_podg::{NonlinearModel, PodgOffline, PodgOptions};
use crate::rom_podi::{train_podi, PodiOptions};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Podg,
    Podi,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Podg => "podg",
            Method::Podi => "podi",
        }
    }
}

/// Box of inflow speeds [m/s] and, optionally, directions [deg].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDomain {
    pub w_i: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<[f64; 2]>,
}

/// Points per parameter axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlan {
    pub w_i: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<usize>,
}

/// Where equidistant samples sit on an axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Placement {
    /// Including both ends (a full-circle direction axis omits the duplicate end).
    Nodes,
    /// Centres of equal cells.
    Midpoints,
    /// At the given fraction of each equal cell, in `(0, 1)`.
    Cells(f64),
}

fn axis(range: [f64; 2], n: usize, placement: Placement, periodic: bool) -> Result<Vec<f64>> {
    let [lo, hi] = range;
    if n == 0 {
        return Err(Error::invalid("sample counts must be positive"));
    }
    Ok(match placement {
        Placement::Midpoints => axis(range, n, Placement::Cells(0.5), periodic)?,
        Placement::Cells(f) if !(f > 0.0 && f < 1.0) => return Err(Error::invalid(format!("cell fraction {f} outside (0, 1)"))),
        Placement::Cells(f) => (0..n).map(|k| lo + (hi - lo) * (k as f64 + f) / n as f64).collect(),
        Placement::Nodes if periodic => (0..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect(),
        Placement::Nodes if n == 1 => vec![0.5 * (lo + hi)],
        Placement::Nodes => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    })
}

impl ParameterDomain {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.w_i;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("w_i range must satisfy 0 <= lo < hi, got {:?}", self.w_i)));
        }
        if let Some([a, b]) = self.w_d {
            if !(a >= 0.0 && b > a && b <= 360.0) {
                return Err(Error::invalid(format!("w_d range must satisfy 0 <= lo < hi <= 360, got {:?}", [a, b])));
            }
        }
        Ok(())
    }

    fn periodic(&self) -> bool {
        self.w_d.is_some_and(|[a, b]| b - a >= 360.0 - 1e-9)
    }

    /// Tensor grid, speeds outermost.
    pub fn grid(&self, plan: &SamplePlan, placement: Placement) -> Result<Vec<ParameterPoint>> {
        self.validate()?;
        let speeds = axis(self.w_i, plan.w_i, placement, false)?;
        match (self.w_d, plan.w_d) {
            (None, None) => Ok(speeds.into_iter().map(ParameterPoint::speed).collect()),
            (Some(range), Some(n)) => {
                let dirs = axis(range, n, placement, self.periodic())?;
                Ok(speeds.iter().flat_map(|&w| dirs.iter().map(move |&d| ParameterPoint::wind(w, d % 360.0))).collect())
            }
            _ => Err(Error::invalid("sample plan and parameter domain disagree on the wind direction")),
        }
    }

    pub fn with_speeds(&self, w_i: [f64; 2]) -> Self {
        Self { w_i, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub domain: ParameterDomain,
    /// Training grid, equidistant including the ends.
    pub train: SamplePlan,
    /// Test grid at cell midpoints; must avoid every training point.
    pub test: SamplePlan,
    /// Requested reduced-basis sizes.
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub deim_size: usize,
    /// Pressure modes for PODG; defaults to the velocity size.
    pub pressure_size: Option<usize>,
    pub podi: PodiOptions,
    /// Timing repetitions per evaluation; 0 skips timing.
    pub repetitions: usize,
    pub newton: NewtonOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            domain: ParameterDomain { w_i: [0.5, 20.0], w_d: None },
            train: SamplePlan { w_i: 50, w_d: None },
            test: SamplePlan { w_i: 20, w_d: None },
            sizes: (1..=20).collect(),
            methods: vec![Method::Podg, Method::Podi],
            deim_size: 20,
            pressure_size: None,
            podi: PodiOptions::default(),
            repetitions: 5,
            newton: NewtonOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::invalid("sizes must be a nonempty list of positive basis sizes"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods must name at least one reduced model"));
        }
        if self.methods.contains(&Method::Podg) && self.deim_size == 0 {
            return Err(Error::invalid("deim_size must be positive"));
        }
        if self.repetitions != 0 && self.repetitions < 3 {
            return Err(Error::invalid("repetitions must be 0 (no timing) or at least 3"));
        }
        Ok(())
    }

    fn max_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(1)
    }
}

fn check_disjoint(train: &[ParameterPoint], test: &[ParameterPoint]) -> Result<()> {
    match test.iter().find(|t| train.contains(t)) {
        Some(p) => Err(Error::invalid(format!("test point {p} is also a training point"))),
        None => Ok(()),
    }
}

/// Test grid at cell midpoints, or at the first cell fraction in
/// 1/2, 3/8, 5/8, 1/4, 3/4, … whose points keep a distance of 1e-6 test
/// cells from every training point.
fn test_grid(cfg: &StudyConfig, trains: &[&[ParameterPoint]]) -> Result<Vec<ParameterPoint>> {
    let d = &cfg.domain;
    let cell_i = (d.w_i[1] - d.w_i[0]) / cfg.test.w_i as f64;
    let cell_d = match (d.w_d, cfg.test.w_d) {
        (Some([a, b]), Some(n)) => (b - a) / n as f64,
        _ => 0.0,
    };
    let close = |t: &ParameterPoint, p: &ParameterPoint| {
        let dd = match (t.w_d, p.w_d) {
            (Some(a), Some(b)) => {
                let x = (a - b).rem_euclid(360.0);
                x.min(360.0 - x)
            }
            _ => 0.0,
        };
        (t.w_i - p.w_i).abs() < 1e-6 * cell_i && dd <= 1e-6 * cell_d
    };
    let mut fractions = vec![0.5];
    for k in 2..=5 {
        let den = (1u32 << k) as f64;
        for odd in (1..(1u32 << (k - 1))).step_by(2) {
            let off = odd as f64 / den;
            fractions.extend([0.5 - off, 0.5 + off]);
        }
    }
    for f in fractions {
        let test = d.grid(&cfg.test, Placement::Cells(f))?;
        if !test.iter().any(|t| trains.iter().any(|tr| tr.iter().any(|p| close(t, p)))) {
            return Ok(test);
        }
    }
    Err(Error::invalid("no equidistant test grid avoids the training points"))
}

/// Reference solutions with their FOM timings.
struct Reference {
    solutions: Vec<FlowSolution>,
    seconds: Vec<Option<f64>>,
}

fn references(problem: &InsProblem, test: &[ParameterPoint], cfg: &StudyConfig) -> Result<Reference> {
    let solutions = problem.solve_many(test, &cfg.newton)?;
    let seconds = if cfg.repetitions == 0 {
        vec![None; test.len()]
    } else {
        test.iter()
            .map(|mu| {
                let mut err = None;
                let t = median_time(
                    || {
                        if let Err(e) = solve_steady_ins(problem, mu, &cfg.newton) {
                            err = Some(e);
                        }
                    },
                    cfg.repetitions,
                )?;
                match err {
                    Some(e) => Err(Error::Snapshot { param: mu.to_string(), source: Box::new(e) }),
                    None => Ok(Some(t)),
                }
            })
            .collect::<Result<_>>()?
    };
    Ok(Reference { solutions, seconds })
}

struct Context<'a> {
    problem: &'a InsProblem,
    cfg: &'a StudyConfig,
    mass: Arc<CsrMatrix>,
    reference: &'a Reference,
    bounds: ParameterBounds,
}

impl Context<'_> {
    fn record(
        &self,
        method: Method,
        n_s: usize,
        (n_rb, n_rb_used): (usize, usize),
        k: usize,
        outcome: Result<(Vec<f64>, Option<usize>, bool)>,
        rom_seconds: Option<f64>,
    ) -> Result<PointRecord> {
        let reference = &self.reference.solutions[k];
        let mu = reference.mu;
        let fom_seconds = self.reference.seconds[k];
        let base = PointRecord {
            method,
            n_snapshots: n_s,
            n_rb,
            n_rb_used,
            w_i: mu.w_i,
            w_d: mu.w_d,
            extrapolated: false,
            rel_error: None,
            max_abs_error: None,
            iterations: None,
            fom_seconds,
            rom_seconds: None,
            speedup: None,
            failure: None,
        };
        Ok(match outcome {
            Ok((u, iterations, extrapolated)) => PointRecord {
                extrapolated,
                rel_error: Some(relative_l2_error(&reference.u, &u, Some(&self.mass))?),
                max_abs_error: Some(max_abs_velocity_error(&reference.u, &u)?),
                iterations,
                rom_seconds,
                speedup: fom_seconds.zip(rom_seconds).map(|(f, r)| f / r),
                ..base
            },
            Err(e) => {
                warn!("{} with N_rb = {n_rb} failed at {mu}: {e}", method.as_str());
                PointRecord { extrapolated: !self.bounds.contains(&mu), failure: Some(e.to_string()), ..base }
            }
        })
    }

    fn time(&self, action: impl FnMut()) -> Result<Option<f64>> {
        if self.cfg.repetitions == 0 {
            return Ok(None);
        }
        median_time(action, self.cfg.repetitions).map(Some)
    }

    /// Trains both methods on `train` and evaluates every size at every reference point.
    fn sweep(&mut self, train: &[ParameterPoint], records: &mut Vec<PointRecord>) -> Result<TrainingInfo> {
        let n_s = train.len();
        self.bounds = ParameterBounds::from_points(train)?;
        let t = Instant::now();
        let snapshots = self.problem.solve_many(train, &self.cfg.newton)?;
        let snapshot_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let velocity = SnapshotSet::velocity(&snapshots)?.with_mass(self.mass.clone())?;
        let full = compute_pod(&velocity, Truncation::Energy(1.0))?;
        let rank = full.size();
        let lambda_max = full.sigma().first().copied().unwrap_or(1.0);
        let eigenvalues: Vec<f64> = full.sigma().iter().map(|s| s / lambda_max).collect();
        let hash = velocity.hash();
        let max = self.cfg.max_size();
        let points = &self.reference.solutions;
        let mut info = TrainingInfo {
            n_snapshots: n_s,
            snapshot_hash: hash.clone(),
            velocity_rank: rank,
            pressure_rank: None,
            deim_size: None,
            undersampled: n_s < max,
            snapshot_seconds,
            offline_seconds: 0.0,
            eigenvalues,
        };
        if info.undersampled {
            warn!("{n_s} snapshots cannot supply {max} modes");
        }

        if self.cfg.methods.contains(&Method::Podg) {
            let pressure = SnapshotSet::pressure(&snapshots)?;
            let max_p = self.cfg.pressure_size.unwrap_or(max);
            let offline = PodgOffline::clamped(self.problem, &velocity, &pressure, max, max_p, self.cfg.deim_size)?;
            let (rv, rp) = (offline.velocity_pod().size(), offline.pressure_pod().size());
            let deim = offline.deim().map_or(0, |d| d.size());
            info.pressure_rank = Some(rp);
            info.deim_size = Some(deim);
            if deim < self.cfg.deim_size {
                info!("DEIM limited to {deim} points by the rank of the convective snapshots");
            }
            for &n_rb in &self.cfg.sizes {
                let n = n_rb.min(rv);
                let m = self.cfg.pressure_size.unwrap_or(n_rb).min(rp);
                let opts = PodgOptions {
                    velocity_size: n,
                    pressure_size: Some(m),
                    nonlinear: NonlinearModel::Deim { size: deim },
                    ..Default::default()
                };
                let artifact = offline.artifact(&opts);
                if let Ok(a) = &artifact {
                    debug_assert_eq!(a.source_hash(), hash);
                }
                for (k, reference) in points.iter().enumerate() {
                    let mu = reference.mu;
                    let (outcome, seconds) = match &artifact {
                        Ok(a) => {
                            let outcome = a.evaluate(&mu).map(|(sol, u)| (u, Some(sol.iterations), sol.extrapolated));
                            let seconds = if outcome.is_ok() {
                                self.time(|| {
                                    let _ = std::hint::black_box(a.evaluate(&mu));
                                })?
                            } else {
                                None
                            };
                            (outcome, seconds)
                        }
                        Err(e) => (Err(Error::invalid(format!("training failed: {e}"))), None),
                    };
                    records.push(self.record(Method::Podg, n_s, (n_rb, n), k, outcome, seconds)?);
                }
            }
        }

        if self.cfg.methods.contains(&Method::Podi) {
            let opts = PodiOptions { size: max.min(rank), ..self.cfg.podi };
            let podi = train_podi(&velocity, &opts)?;
            debug_assert_eq!(podi.velocity.basis.source_hash(), hash);
            for &n_rb in &self.cfg.sizes {
                let n = n_rb.min(podi.size());
                let model = podi.truncate(n)?;
                for (k, reference) in points.iter().enumerate() {
                    let mu = reference.mu;
                    let outcome = model.evaluate(&mu).map(|e| (e.u, None, e.extrapolated));
                    let seconds = if outcome.is_ok() {
                        self.time(|| {
                            let _ = std::hint::black_box(model.evaluate(&mu));
                        })?
                    } else {
                        None
                    };
                    records.push(self.record(Method::Podi, n_s, (n_rb, n), k, outcome, seconds)?);
                }
            }
        }
        info.offline_seconds = t.elapsed().as_secs_f64();
        Ok(info)
    }
}

fn meta(problem: &InsProblem, cfg: &StudyConfig, study: StudyKind) -> ReportMeta {
    ReportMeta {
        study,
        version: env!("CARGO_PKG_VERSION").into(),
        mesh_hash: problem.mesh().hash(),
        nu: problem.nu(),
        velocity_dofs: problem.space().velocity_dofs(),
        config: cfg.clone(),
        train_range: None,
        snapshot_counts: None,
        training: Vec::new(),
        seed: None,
    }
}

fn context<'a>(problem: &'a InsProblem, cfg: &'a StudyConfig, reference: &'a Reference) -> Context<'a> {
    let mass = Arc::new(problem.space().velocity_mass(problem.mesh()));
    let bounds = ParameterBounds { w_i: [0.0, 0.0], w_d: None };
    Context { problem, cfg, mass, reference, bounds }
}

/// Both methods trained on the same snapshots and evaluated over the size sweep.
pub fn run_comparison(problem: &InsProblem, cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let train = cfg.domain.grid(&cfg.train, Placement::Nodes)?;
    let test = test_grid(cfg, &[&train])?;
    check_disjoint(&train, &test)?;
    let reference = references(problem, &test, cfg)?;
    let mut ctx = context(problem, cfg, &reference);
    let mut records = Vec::new();
    let info = ctx.sweep(&train, &mut records)?;
    let mut meta = meta(problem, cfg, StudyKind::Comparison);
    meta.training.push(info);
    Ok(StudyReport { meta, records })
}

/// The comparison repeated for several training-set sizes on one fixed test set.
pub fn run_data_study(problem: &InsProblem, cfg: &StudyConfig, counts: &[usize]) -> Result<StudyReport> {
    cfg.validate()?;
    if counts.is_empty() || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("snapshot counts must be nonempty and strictly ascending"));
    }
    if counts[0] < 2 {
        return Err(Error::invalid("every training set needs at least two snapshots"));
    }
    let trains: Vec<Vec<ParameterPoint>> = counts
        .iter()
        .map(|&n| cfg.domain.grid(&SamplePlan { w_i: n, ..cfg.train }, Placement::Nodes))
        .collect::<Result<_>>()?;
    let test = test_grid(cfg, &trains.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
    for train in &trains {
        check_disjoint(train, &test)?;
    }
    let reference = references(problem, &test, cfg)?;
    let mut ctx = context(problem, cfg, &reference);
    let mut records = Vec::new();
    let mut meta = meta(problem, cfg, StudyKind::DataStudy);
    meta.snapshot_counts = Some(counts.to_vec());
    for train in &trains {
        meta.training.push(ctx.sweep(train, &mut records)?);
    }
    Ok(StudyReport { meta, records })
}

/// Training on `train_range` of speeds, evaluation over `cfg.domain`.
pub fn run_extrapolation_study(problem: &InsProblem, cfg: &StudyConfig, train_range: [f64; 2]) -> Result<StudyReport> {
    cfg.validate()?;
    let eval = cfg.domain.w_i;
    if !(train_range[0] >= eval[0] && train_range[1] <= eval[1] && train_range[0] < train_range[1]) {
        return Err(Error::invalid(format!("training range {train_range:?} must lie inside the evaluation range {eval:?}")));
    }
    let train = cfg.domain.with_speeds(train_range).grid(&cfg.train, Placement::Nodes)?;
    let test = test_grid(cfg, &[&train])?;
    check_disjoint(&train, &test)?;
    let reference = references(problem, &test, cfg)?;
    let mut ctx = context(problem, cfg, &reference);
    let mut records = Vec::new();
    let info = ctx.sweep(&train, &mut records)?;
    let mut meta = meta(problem, cfg, StudyKind::Extrapolation);
    meta.train_range = Some(train_range);
    meta.training.push(info);
    Ok(StudyReport { meta, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let d = ParameterDomain { w_i: [0.5, 20.0], w_d: None };
        let nodes = d.grid(&SamplePlan { w_i: 50, w_d: None }, Placement::Nodes).unwrap();
        assert_eq!(nodes.len(), 50);
        assert_eq!(nodes[0].w_i, 0.5);
        assert_eq!(nodes[49].w_i, 20.0);
        let mids = d.grid(&SamplePlan { w_i: 20, w_d: None }, Placement::Midpoints).unwrap();
        assert!(check_disjoint(&nodes, &mids).is_ok());
        assert!(check_disjoint(&nodes, &nodes[..3]).is_err());

        let d2 = ParameterDomain { w_i: [1e-4, 12.0], w_d: Some([0.0, 360.0]) };
        let g = d2.grid(&SamplePlan { w_i: 8, w_d: Some(36) }, Placement::Nodes).unwrap();
        assert_eq!(g.len(), 288);
        assert!(g.iter().all(|p| p.w_d.unwrap() < 360.0));
        assert_eq!(g[1].w_d, Some(10.0));
        assert!(d2.grid(&SamplePlan { w_i: 8, w_d: None }, Placement::Nodes).is_err());
    }

    #[test]
    fn test_grid_avoids_every_training_set() {
        let cfg = StudyConfig::default();
        let trains: Vec<Vec<ParameterPoint>> = [25, 50, 75, 100]
            .iter()
            .map(|&n| cfg.domain.grid(&SamplePlan { w_i: n, w_d: None }, Placement::Nodes).unwrap())
            .collect();
        // midpoints of 20 cells hit the 25-point training grid at 2.9375
        let mids = cfg.domain.grid(&cfg.test, Placement::Midpoints).unwrap();
        assert!(check_disjoint(&trains[0], &mids).is_err());
        let test = test_grid(&cfg, &trains.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
        assert_eq!(test.len(), 20);
        for t in &trains {
            assert!(check_disjoint(t, &test).is_ok());
        }
        assert_eq!(test_grid(&cfg, &[&trains[1]]).unwrap(), mids);
        assert!(cfg.domain.grid(&cfg.test, Placement::Cells(1.0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        assert!(StudyConfig { sizes: vec![], ..Default::default() }.validate().is_err());
        assert!(StudyConfig { methods: vec![], ..Default::default() }.validate().is_err());
        assert!(StudyConfig { repetitions: 2, ..Default::default() }.validate().is_err());
    }
}
