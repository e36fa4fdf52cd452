//! Intrusive POD-Galerkin reduced model.
//!
//! The velocity is split as `u = L θ(μ) + V a`, where the lifting `L` holds one
//! Stokes solution per boundary-data component and `θ(μ)` are the boundary
//! coefficients of [`InsProblem::bc_coefficients`]. `V` collects POD modes of
//! the homogenised snapshots plus one supremizer per pressure mode, and the
//! pressure is `p = P b`. The reduced equations are
//!
//! ```text
//! ν (Â a + Â_L θ) + N̂(θ, a) + B̂ᵀ b = 0
//! B̂ a + B̂_L θ = 0
//! ```
//!
//! with the convective term `N̂` approximated by DEIM on a reduced mesh, or
//! evaluated exactly through a precomputed quadratic tensor.

mod deim;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use deim::{build_deim, greedy_indices, DeimData};

use crate::container::Container;
use crate::fem::{convection_local, P2Tabulation, Point, TriGeom};
use crate::fom_ins::{assemble_ins, convection_vector, FlowSolution, InsProblem, ParameterBounds, ParameterPoint};
use crate::linalg::{dense_rcond, dot, CsrMatrix, SparseLu};
use crate::pod::{compute_pod, FieldKind, ReducedBasis, SnapshotSet, Truncation};
use crate::rom_podi::{AngleMode, Normalization};
use crate::{Error, Result};

/// Treatment of the convective term online.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NonlinearModel {
    /// DEIM with the given number of interpolation points.
    Deim { size: usize },
    /// Exact quadratic tensor; online cost grows with the cube of the basis size.
    Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodgOptions {
    /// Number of POD velocity modes.
    pub velocity_size: usize,
    /// Number of pressure modes; defaults to `velocity_size`.
    pub pressure_size: Option<usize>,
    pub nonlinear: NonlinearModel,
    /// Append one supremizer per pressure mode to the velocity space.
    pub supremizers: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PodgOptions {
    fn default() -> Self {
        Self {
            velocity_size: 20,
            pressure_size: None,
            nonlinear: NonlinearModel::Deim { size: 20 },
            supremizers: true,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

impl PodgOptions {
    pub fn pressure_modes(&self) -> usize {
        self.pressure_size.unwrap_or(self.velocity_size)
    }
}

/// Parameter-independent data shared by every artifact trained on the same
/// snapshots, so that sweeps over basis sizes only redo the projections.
pub struct PodgOffline<'a> {
    problem: &'a InsProblem,
    params: Vec<ParameterPoint>,
    thetas: Vec<Vec<f64>>,
    lifting: DMatrix<f64>,
    homogeneous: SnapshotSet,
    pressure_snapshots: SnapshotSet,
    velocity_pod: ReducedBasis,
    pressure_pod: ReducedBasis,
    supremizers: DMatrix<f64>,
    deim: Option<DeimData>,
    a: CsrMatrix,
    b: CsrMatrix,
    mass_u: Arc<CsrMatrix>,
    source_hash: String,
}

/// Dirichlet-row elimination of the velocity stiffness, used as supremizer inner product.
fn constrained_stiffness(problem: &InsProblem) -> CsrMatrix {
    let k = problem.space().velocity_stiffness(problem.mesh());
    let mask = problem.dirichlet_mask();
    let mut trip = Vec::with_capacity(k.nnz());
    for i in 0..k.nrows() {
        let (cols, vals) = k.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if !mask[i] && !mask[j] {
                trip.push((i, j, v));
            }
        }
        if mask[i] {
            trip.push((i, i, 1.0));
        }
    }
    CsrMatrix::from_triplets(k.nrows(), k.ncols(), &trip)
}

impl<'a> PodgOffline<'a> {
    /// Precomputes liftings, POD bases up to the given sizes, supremizers and
    /// (when `deim_size > 0`) the DEIM data.
    pub fn new(
        problem: &'a InsProblem,
        velocity: &SnapshotSet,
        pressure: &SnapshotSet,
        max_velocity: usize,
        max_pressure: usize,
        deim_size: usize,
    ) -> Result<Self> {
        Self::build(problem, velocity, pressure, [max_velocity, max_pressure, deim_size], false)
    }

    /// Like [`PodgOffline::new`], but sizes above the attainable ranks are
    /// reduced to them instead of failing.
    pub fn clamped(
        problem: &'a InsProblem,
        velocity: &SnapshotSet,
        pressure: &SnapshotSet,
        max_velocity: usize,
        max_pressure: usize,
        deim_size: usize,
    ) -> Result<Self> {
        Self::build(problem, velocity, pressure, [max_velocity, max_pressure, deim_size], true)
    }

    fn build(
        problem: &'a InsProblem,
        velocity: &SnapshotSet,
        pressure: &SnapshotSet,
        [max_velocity, max_pressure, deim_size]: [usize; 3],
        clamp: bool,
    ) -> Result<Self> {
        let pod = |set: &SnapshotSet, n: usize| match compute_pod(set, Truncation::Size(n)) {
            Err(Error::Truncation { attainable, .. }) if clamp && attainable > 0 => {
                compute_pod(set, Truncation::Size(attainable))
            }
            other => other,
        };
        let space = problem.space();
        let nh = space.velocity_dofs();
        if velocity.dim() != nh {
            return Err(Error::Dimension { expected: nh, got: velocity.dim() });
        }
        if pressure.dim() != space.pressure_dofs() {
            return Err(Error::Dimension { expected: space.pressure_dofs(), got: pressure.dim() });
        }
        if velocity.params() != pressure.params() {
            return Err(Error::invalid("velocity and pressure snapshots must share their parameter points"));
        }
        let params = velocity.params().to_vec();
        let thetas: Vec<Vec<f64>> = params.iter().map(|p| problem.bc_coefficients(p)).collect::<Result<_>>()?;

        let fields = problem.bc_fields();
        let q = fields.len();
        let mut lifting = DMatrix::zeros(nh, q);
        for (k, g) in fields.iter().enumerate() {
            let x = crate::fom_ins::stokes(problem, g)?;
            lifting.set_column(k, &DVector::from_column_slice(&x[..nh]));
        }

        let mask = problem.dirichlet_mask();
        let mut hom = velocity.matrix().clone();
        for (j, th) in thetas.iter().enumerate() {
            let lift = &lifting * DVector::from_column_slice(th);
            let mut col = hom.column_mut(j);
            col -= lift;
            for (i, &d) in mask.iter().enumerate() {
                if d {
                    col[i] = 0.0;
                }
            }
        }
        let mass_u = Arc::new(space.velocity_mass(problem.mesh()));
        let mass_p = Arc::new(space.pressure_mass(problem.mesh()));
        let homogeneous = SnapshotSet::new(hom, params.clone(), FieldKind::Velocity)?.with_mass(mass_u.clone())?;
        let pressure_snapshots = pressure.clone().with_mass(mass_p)?;
        let velocity_pod = pod(&homogeneous, max_velocity)?;
        let pressure_pod = pod(&pressure_snapshots, max_pressure)?;
        let max_pressure = pressure_pod.size();

        let sys = assemble_ins(problem, &vec![0.0; nh])?;
        let x = constrained_stiffness(problem);
        let lu = SparseLu::factor(&x)?;
        let mut supremizers = DMatrix::zeros(nh, max_pressure);
        for j in 0..max_pressure {
            let mut rhs = sys.b.transpose_mul_vec(pressure_pod.modes().column(j).as_slice());
            for (i, &d) in mask.iter().enumerate() {
                if d {
                    rhs[i] = 0.0;
                }
            }
            lu.solve_in_place(&mut rhs)?;
            supremizers.set_column(j, &DVector::from_vec(rhs));
        }

        let deim = if deim_size > 0 {
            let cols: Vec<Vec<f64>> = (0..velocity.len())
                .into_par_iter()
                .map(|j| {
                    let u: Vec<f64> = velocity.matrix().column(j).iter().copied().collect();
                    let mut n = convection_vector(space, problem.mesh(), &u);
                    for (i, &d) in mask.iter().enumerate() {
                        if d {
                            n[i] = 0.0;
                        }
                    }
                    n
                })
                .collect();
            let set = SnapshotSet::from_columns(&cols, params.clone(), FieldKind::Nonlinear)?;
            let mut size = deim_size;
            loop {
                match build_deim(&set, size) {
                    Err(Error::DeimRank { attainable, .. }) if clamp && attainable > 0 && attainable < size => {
                        size = attainable
                    }
                    other => break Some(other?),
                }
            }
        } else {
            None
        };

        Ok(Self {
            problem,
            source_hash: velocity.hash(),
            params,
            thetas,
            lifting,
            homogeneous,
            pressure_snapshots,
            velocity_pod,
            pressure_pod,
            supremizers,
            deim,
            a: sys.a,
            b: sys.b,
            mass_u,
        })
    }

    pub fn velocity_pod(&self) -> &ReducedBasis {
        &self.velocity_pod
    }

    pub fn pressure_pod(&self) -> &ReducedBasis {
        &self.pressure_pod
    }

    pub fn deim(&self) -> Option<&DeimData> {
        self.deim.as_ref()
    }

    pub fn lifting(&self) -> &DMatrix<f64> {
        &self.lifting
    }

    /// Builds an artifact for the given sizes.
    pub fn artifact(&self, opts: &PodgOptions) -> Result<PodgArtifact> {
        if !(opts.tolerance > 0.0) {
            return Err(Error::invalid("reduced Newton tolerance must be positive"));
        }
        let nu_modes = opts.velocity_size;
        let np_modes = opts.pressure_modes();
        let vu = self.velocity_pod.truncate(nu_modes)?;
        let pb = self.pressure_pod.truncate(np_modes)?;
        if np_modes > self.supremizers.ncols() {
            return Err(Error::Truncation { requested: np_modes, attainable: self.supremizers.ncols() });
        }
        let extra = if opts.supremizers { np_modes } else { 0 };
        let mut v = DMatrix::zeros(vu.dim(), nu_modes + extra);
        v.columns_mut(0, nu_modes).copy_from(vu.modes());
        if extra > 0 {
            v.columns_mut(nu_modes, extra).copy_from(&self.supremizers.columns(0, extra));
            for _ in 0..2 {
                m_orthonormalize(&mut v, &self.mass_u, nu_modes)?;
            }
        }
        let p = pb.modes().clone();
        let l = &self.lifting;

        let av = self.a.mul_dense(&v);
        let al = self.a.mul_dense(l);
        let a_vv = v.transpose() * &av;
        let a_vl = v.transpose() * &al;
        let b_pv = p.transpose() * self.b.mul_dense(&v);
        let b_pl = p.transpose() * self.b.mul_dense(l);

        let nonlinear = match opts.nonlinear {
            NonlinearModel::Deim { size } => {
                let data = self.deim.as_ref().ok_or_else(|| Error::invalid("offline data was built without DEIM"))?;
                if size > data.size() {
                    return Err(Error::DeimRank { requested: size, attainable: data.size() });
                }
                let data = truncate_deim(data, size)?;
                ReducedNonlinear::Deim(DeimOnline::new(self.problem, &data, l, &v)?)
            }
            NonlinearModel::Tensor => ReducedNonlinear::Tensor(quadratic_tensor(self.problem, l, &v)),
        };

        let mut train_a = DMatrix::zeros(v.ncols(), self.params.len());
        let mut train_b = DMatrix::zeros(p.ncols(), self.params.len());
        let mv = self.mass_u.mul_dense(&v);
        let mp = self.pressure_snapshots.mass().expect("pressure mass set").mul_dense(&p);
        for j in 0..self.params.len() {
            train_a.set_column(j, &(mv.transpose() * self.homogeneous.matrix().column(j)));
            train_b.set_column(j, &(mp.transpose() * self.pressure_snapshots.matrix().column(j)));
        }

        let artifact = PodgArtifact {
            options: *opts,
            nu: self.problem.nu(),
            params: self.params.clone(),
            bounds: ParameterBounds::from_points(&self.params)?,
            normalization: Normalization::fit(&self.params, AngleMode::Embed)?,
            lifting: l.clone(),
            velocity_modes: v,
            pressure_modes: p,
            a_vv,
            a_vl,
            b_pv,
            b_pl,
            nonlinear,
            train_a,
            train_b,
            source_hash: self.source_hash.clone(),
        };
        for (k, th) in self.thetas.iter().enumerate() {
            let y: Vec<f64> = artifact.train_a.column(k).iter().chain(artifact.train_b.column(k).iter()).copied().collect();
            let (_, jac, _) = artifact.system(th, &y);
            if dense_rcond(&jac) < 1e-14 {
                return Err(Error::Stabilization { index: k });
            }
        }
        Ok(artifact)
    }
}

/// Modified Gram–Schmidt in the `M` inner product, starting at column `from`.
fn m_orthonormalize(v: &mut DMatrix<f64>, mass: &CsrMatrix, from: usize) -> Result<()> {
    let mut mv: Vec<Vec<f64>> = (0..from).map(|i| mass.mul_vec(v.column(i).as_slice())).collect();
    for j in from..v.ncols() {
        let mut col: Vec<f64> = v.column(j).iter().copied().collect();
        let norm0 = dot(&mass.mul_vec(&col), &col).sqrt();
        for (i, w) in mv.iter().enumerate() {
            let c = dot(w, &col);
            col.iter_mut().zip(v.column(i).iter()).for_each(|(x, y)| *x -= c * y);
        }
        let mc = mass.mul_vec(&col);
        let norm = dot(&mc, &col).sqrt();
        if !(norm > 1e-12 * norm0) {
            return Err(Error::Truncation { requested: v.ncols(), attainable: j });
        }
        col.iter_mut().for_each(|x| *x /= norm);
        mv.push(mc.iter().map(|x| x / norm).collect());
        v.set_column(j, &DVector::from_vec(col));
    }
    Ok(())
}

fn truncate_deim(d: &DeimData, size: usize) -> Result<DeimData> {
    if size == d.size() {
        return Ok(d.clone());
    }
    // greedy indices are nested, so the leading block is the smaller DEIM
    let basis = d.basis.columns(0, size).into_owned();
    let indices = d.indices[..size].to_vec();
    let p = DMatrix::from_fn(size, size, |i, j| basis[(indices[i], j)]);
    let interp_inverse = p.try_inverse().ok_or(Error::DeimRank { requested: size, attainable: size - 1 })?;
    Ok(DeimData { basis, indices, interp_inverse })
}

/// Symmetric tensor `H_r[i][j]` with `N̂_r(c) = cᵀ H_r c` over the stacked basis `[L | V]`.
fn quadratic_tensor(problem: &InsProblem, l: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let w = stack(l, v);
    let k = w.ncols();
    let (space, mesh) = (problem.space(), problem.mesh());
    let col = |i: usize| -> Vec<f64> { w.column(i).iter().copied().collect() };
    let diag: Vec<Vec<f64>> = (0..k).into_par_iter().map(|i| convection_vector(space, mesh, &col(i))).collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let mixed: Vec<((usize, usize), DVector<f64>)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let sum: Vec<f64> = col(i).iter().zip(col(j)).map(|(a, b)| a + b).collect();
            let n = convection_vector(space, mesh, &sum);
            // polarization: C(w_i)w_j + C(w_j)w_i
            let sym: Vec<f64> = (0..n.len()).map(|r| 0.5 * (n[r] - diag[i][r] - diag[j][r])).collect();
            ((i, j), v.transpose() * DVector::from_vec(sym))
        })
        .collect();
    let n = v.ncols();
    let mut h = DMatrix::zeros(n, k * k);
    for (i, d) in diag.iter().enumerate() {
        let pd = v.transpose() * DVector::from_column_slice(d);
        h.column_mut(i * k + i).copy_from(&pd);
    }
    for ((i, j), pv) in mixed {
        h.column_mut(i * k + j).copy_from(&pv);
        h.column_mut(j * k + i).copy_from(&pv);
    }
    h
}

fn stack(l: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(v.nrows(), l.ncols() + v.ncols());
    w.columns_mut(0, l.ncols()).copy_from(l);
    w.columns_mut(l.ncols(), v.ncols()).copy_from(v);
    w
}

/// DEIM evaluation on the cells touching the interpolation points.
#[derive(Clone, Debug)]
pub struct DeimOnline {
    vertices: Vec<[Point; 3]>,
    /// Per reduced cell, the 12 velocity unknowns as rows of `rows`.
    cell_rows: Vec<[usize; 12]>,
    /// `[L | V]` restricted to the reduced-mesh unknowns.
    rows: DMatrix<f64>,
    /// `(DEIM point, reduced cell, local unknown)` contributions.
    targets: Vec<[usize; 3]>,
    /// `Vᵀ U (℘ᵀU)⁻¹`.
    projector: DMatrix<f64>,
    tabs: Vec<P2Tabulation>,
}

impl DeimOnline {
    fn new(problem: &InsProblem, data: &DeimData, l: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Self> {
        let space = problem.space();
        let nn = space.n_nodes();
        let mut node_cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &data.indices {
            node_cells.entry(i % nn).or_default();
        }
        for c in 0..space.n_cells() {
            for &n in space.cell_nodes(c) {
                if let Some(list) = node_cells.get_mut(&n) {
                    list.push(c);
                }
            }
        }
        let mut cell_index: BTreeMap<usize, usize> = BTreeMap::new();
        let mut row_index: BTreeMap<usize, usize> = BTreeMap::new();
        let mut cells = Vec::new();
        let mut targets = Vec::new();
        for (k, &i) in data.indices.iter().enumerate() {
            let (comp, node) = (i / nn, i % nn);
            for &c in &node_cells[&node] {
                let rc = *cell_index.entry(c).or_insert_with(|| {
                    cells.push(c);
                    cells.len() - 1
                });
                let a = space.cell_nodes(c).iter().position(|&x| x == node).expect("node in its cell");
                targets.push([k, rc, comp * 6 + a]);
            }
        }
        let mut cell_rows = Vec::with_capacity(cells.len());
        let mut vertices = Vec::with_capacity(cells.len());
        for &c in &cells {
            let dofs = space.cell_velocity_dofs(c);
            let mut r = [0usize; 12];
            for (m, &d) in dofs.iter().enumerate() {
                let next = row_index.len();
                r[m] = *row_index.entry(d).or_insert(next);
            }
            cell_rows.push(r);
            let t = problem.mesh().triangles()[c];
            vertices.push(t.map(|x| problem.mesh().vertices()[x]));
        }
        let w = stack(l, v);
        let mut rows = DMatrix::zeros(row_index.len(), w.ncols());
        for (&d, &r) in &row_index {
            rows.row_mut(r).copy_from(&w.row(d));
        }
        let tabs = tabulate(&vertices)?;
        Ok(Self { vertices, cell_rows, rows, targets, projector: data.projector(v), tabs })
    }

    pub fn cells(&self) -> usize {
        self.vertices.len()
    }

    /// DEIM values and their Jacobian with respect to the stacked coefficients.
    fn eval(&self, c: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.projector.ncols();
        let u = &self.rows * c;
        let mut vals = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, c.len());
        let mut by_cell: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.cell_rows.len()];
        for t in &self.targets {
            by_cell[t[1]].push((t[0], t[2]));
        }
        let mut local_jac = [[0.0; 12]; 12];
        for (e, rows) in self.cell_rows.iter().enumerate() {
            let loc: [f64; 12] = rows.map(|r| u[r]);
            let n = convection_local(&self.tabs[e], &loc, Some(&mut local_jac));
            for &(k, a) in &by_cell[e] {
                vals[k] += n[a];
                for (mloc, &r) in rows.iter().enumerate() {
                    let s = local_jac[a][mloc];
                    if s != 0.0 {
                        for col in 0..c.len() {
                            jac[(k, col)] += s * self.rows[(r, col)];
                        }
                    }
                }
            }
        }
        (vals, jac)
    }
}

fn tabulate(vertices: &[[Point; 3]]) -> Result<Vec<P2Tabulation>> {
    vertices
        .iter()
        .enumerate()
        .map(|(c, v)| {
            TriGeom::new(*v)
                .map(|g| P2Tabulation::new(&g))
                .ok_or_else(|| Error::Assembly { cell: c, msg: "singular element Jacobian".into() })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum ReducedNonlinear {
    Deim(DeimOnline),
    /// Rows `r`, columns `i·k + j` hold `H_r[i][j]`.
    Tensor(DMatrix<f64>),
}

/// Trained intrusive model.
#[derive(Clone, Debug)]
pub struct PodgArtifact {
    pub options: PodgOptions,
    pub nu: f64,
    pub params: Vec<ParameterPoint>,
    pub bounds: ParameterBounds,
    normalization: Normalization,
    lifting: DMatrix<f64>,
    velocity_modes: DMatrix<f64>,
    pressure_modes: DMatrix<f64>,
    a_vv: DMatrix<f64>,
    a_vl: DMatrix<f64>,
    b_pv: DMatrix<f64>,
    b_pl: DMatrix<f64>,
    nonlinear: ReducedNonlinear,
    train_a: DMatrix<f64>,
    train_b: DMatrix<f64>,
    source_hash: String,
}

/// Reduced coefficients at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSolution {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<f64>,
    pub mu: ParameterPoint,
    pub iterations: usize,
    pub residual: f64,
    pub extrapolated: bool,
}

const ROUNDOFF: f64 = 8.0 * f64::EPSILON;

impl PodgArtifact {
    pub const KIND: &'static str = "podg-artifact";

    pub fn velocity_size(&self) -> usize {
        self.velocity_modes.ncols()
    }

    pub fn pressure_size(&self) -> usize {
        self.pressure_modes.ncols()
    }

    pub fn velocity_modes(&self) -> &DMatrix<f64> {
        &self.velocity_modes
    }

    pub fn pressure_modes(&self) -> &DMatrix<f64> {
        &self.pressure_modes
    }

    pub fn lifting(&self) -> &DMatrix<f64> {
        &self.lifting
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    /// Number of cells in the DEIM reduced mesh, if DEIM is used.
    pub fn reduced_mesh_cells(&self) -> Option<usize> {
        match &self.nonlinear {
            ReducedNonlinear::Deim(d) => Some(d.cells()),
            ReducedNonlinear::Tensor(_) => None,
        }
    }

    /// `(Â, Â_L, B̂, B̂_L)`.
    pub fn operators(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.a_vv, &self.a_vl, &self.b_pv, &self.b_pl)
    }

    /// Boundary coefficients `θ(μ)`.
    pub fn theta(&self, mu: &ParameterPoint) -> Result<Vec<f64>> {
        mu.validate()?;
        let q = self.lifting.ncols();
        match (mu.w_d, q) {
            (Some(d), 2) => Ok(vec![mu.w_i * d.to_radians().cos(), mu.w_i * d.to_radians().sin()]),
            (None, 1) => Ok(vec![mu.w_i]),
            _ => Err(Error::Dimension { expected: q, got: mu.dim() }),
        }
    }

    /// Reduced convective term and its Jacobian with respect to `a`.
    fn convective(&self, theta: &[f64], a: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let q = theta.len();
        let c = DVector::from_iterator(q + a.len(), theta.iter().chain(a).copied());
        match &self.nonlinear {
            ReducedNonlinear::Deim(d) => {
                let (vals, jac) = d.eval(&c);
                (&d.projector * vals, &d.projector * jac.columns(q, a.len()))
            }
            ReducedNonlinear::Tensor(h) => {
                let k = c.len();
                let n = h.nrows();
                let mut out = DVector::zeros(n);
                let mut jac = DMatrix::zeros(n, a.len());
                for r in 0..n {
                    let hr = DMatrix::from_fn(k, k, |i, j| h[(r, i * k + j)]);
                    let hc = &hr * &c;
                    out[r] = c.dot(&hc);
                    for j in 0..a.len() {
                        jac[(r, j)] = 2.0 * hc[q + j];
                    }
                }
                (out, jac)
            }
        }
    }

    /// Residual, Jacobian and round-off scale at `y = [a, b]`.
    fn system(&self, theta: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
        let n = self.velocity_size();
        let m = self.pressure_size();
        let a = DVector::from_column_slice(&y[..n]);
        let b = DVector::from_column_slice(&y[n..]);
        let th = DVector::from_column_slice(theta);
        let (conv, dconv) = self.convective(theta, &y[..n]);
        let va = self.nu * (&self.a_vv * &a);
        let vl = self.nu * (&self.a_vl * &th);
        let bt = self.b_pv.transpose() * &b;
        let ba = &self.b_pv * &a;
        let bl = &self.b_pl * &th;
        let mut r = DVector::zeros(n + m);
        r.rows_mut(0, n).copy_from(&(&va + &vl + &conv + &bt));
        r.rows_mut(n, m).copy_from(&(&ba + &bl));
        let scale = (va.abs() + vl.abs() + conv.abs() + bt.abs()).norm_squared() + (ba.abs() + bl.abs()).norm_squared();
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&(self.nu * &self.a_vv + dconv));
        j.view_mut((0, n), (n, m)).copy_from(&self.b_pv.transpose());
        j.view_mut((n, 0), (m, n)).copy_from(&self.b_pv);
        (r, j, scale.sqrt())
    }

    fn nearest_training(&self, mu: &ParameterPoint) -> Result<usize> {
        let x = self.normalization.apply(mu)?;
        let mut best = (0, f64::INFINITY);
        for (k, p) in self.params.iter().enumerate() {
            let y = self.normalization.apply(p)?;
            let d: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }

    fn newton(&self, theta: &[f64], mut y: Vec<f64>) -> std::result::Result<(Vec<f64>, usize, f64), (usize, f64)> {
        let mut history: Vec<f64> = Vec::new();
        for it in 0..=self.options.max_iterations {
            let (r, j, scale) = self.system(theta, &y);
            let nr = r.norm();
            history.push(nr);
            if nr <= self.options.tolerance || nr <= ROUNDOFF * scale {
                return Ok((y, it, nr));
            }
            let h = history.len();
            let stalled = h > 5 && history[h - 1] > 0.5 * history[h - 6];
            if !nr.is_finite() || nr > 1e8 * history[0].max(self.options.tolerance) || stalled || it == self.options.max_iterations {
                return Err((it, nr));
            }
            match j.lu().solve(&(-r)) {
                Some(d) if d.iter().all(|v| v.is_finite()) => y.iter_mut().zip(d.iter()).for_each(|(a, b)| *a += b),
                _ => return Err((it, nr)),
            }
        }
        unreachable!("loop returns on the last iteration")
    }

    /// Solves the reduced system at `mu`, starting from the nearest training point
    /// and falling back to the reduced Stokes solution.
    pub fn solve(&self, mu: &ParameterPoint) -> Result<ReducedSolution> {
        let theta = self.theta(mu)?;
        let k = self.nearest_training(mu)?;
        let warm: Vec<f64> = self.train_a.column(k).iter().chain(self.train_b.column(k).iter()).copied().collect();
        let n = self.velocity_size();
        let mut spent = 0;
        let mut last = f64::NAN;
        for guess in [Some(warm), None] {
            let y0 = match guess {
                Some(y) => y,
                None => self.stokes_guess(&theta),
            };
            match self.newton(&theta, y0) {
                Ok((y, iterations, residual)) => {
                    return Ok(ReducedSolution {
                        a: y[..n].to_vec(),
                        b: y[n..].to_vec(),
                        theta,
                        mu: *mu,
                        iterations: spent + iterations,
                        residual,
                        extrapolated: !self.bounds.contains(mu),
                    })
                }
                Err((it, r)) => {
                    spent += it;
                    last = r;
                }
            }
        }
        Err(Error::NonConvergence { iterations: spent, residual: last })
    }

    fn stokes_guess(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.velocity_size();
        let m = self.pressure_size();
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&(self.nu * &self.a_vv));
        j.view_mut((0, n), (n, m)).copy_from(&self.b_pv.transpose());
        j.view_mut((n, 0), (m, n)).copy_from(&self.b_pv);
        let th = DVector::from_column_slice(theta);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-self.nu * (&self.a_vl * &th)));
        rhs.rows_mut(n, m).copy_from(&(-(&self.b_pl * &th)));
        j.lu().solve(&rhs).map_or_else(|| vec![0.0; n + m], |x| x.data.into())
    }

    /// Full-order velocity `L θ + V a`.
    pub fn velocity(&self, sol: &ReducedSolution) -> Vec<f64> {
        let u = &self.lifting * DVector::from_column_slice(&sol.theta) + &self.velocity_modes * DVector::from_column_slice(&sol.a);
        u.data.into()
    }

    /// Full-order pressure `P b`.
    pub fn pressure(&self, sol: &ReducedSolution) -> Vec<f64> {
        (&self.pressure_modes * DVector::from_column_slice(&sol.b)).data.into()
    }

    /// Solves and lifts to full order.
    pub fn evaluate(&self, mu: &ParameterPoint) -> Result<(ReducedSolution, Vec<f64>)> {
        let sol = self.solve(mu)?;
        let u = self.velocity(&sol);
        Ok((sol, u))
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(Self::KIND, serde_json::Value::Null)?;
        for (name, m) in [
            ("lifting", &self.lifting),
            ("velocity_modes", &self.velocity_modes),
            ("pressure_modes", &self.pressure_modes),
            ("a_vv", &self.a_vv),
            ("a_vl", &self.a_vl),
            ("b_pv", &self.b_pv),
            ("b_pl", &self.b_pl),
            ("train_a", &self.train_a),
            ("train_b", &self.train_b),
        ] {
            c.push_matrix(name, m);
        }
        match &self.nonlinear {
            ReducedNonlinear::Deim(d) => {
                c.push_matrix("deim.rows", &d.rows);
                c.push_matrix("deim.projector", &d.projector);
                let verts: Vec<f64> = d.vertices.iter().flat_map(|t| t.iter().flat_map(|p| *p)).collect();
                c.push_f64("deim.vertices", 6, d.vertices.len(), verts);
                c.push_indices("deim.cell_rows", &d.cell_rows.concat());
                c.push_indices("deim.targets", &d.targets.concat());
            }
            ReducedNonlinear::Tensor(h) => c.push_matrix("tensor", h),
        }
        let meta = PodgMeta {
            format: 1,
            options: self.options,
            nu: self.nu,
            params: self.params.clone(),
            bounds: self.bounds,
            normalization: self.normalization.clone(),
            source_hash: self.source_hash.clone(),
        };
        c.meta = serde_json::to_value(meta).map_err(|e| Error::Container(e.to_string()))?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let meta: PodgMeta = c.meta_as()?;
        if meta.format != 1 {
            return Err(Error::Container(format!("unsupported PODG format {}", meta.format)));
        }
        let nonlinear = match meta.options.nonlinear {
            NonlinearModel::Deim { .. } => {
                let (verts, rows6, ncell) = c.f64_block("deim.vertices")?;
                if rows6 != 6 {
                    return Err(Error::Container("DEIM vertex block must have 6 rows".into()));
                }
                let vertices: Vec<[Point; 3]> = (0..ncell)
                    .map(|e| {
                        let v = &verts[6 * e..6 * e + 6];
                        [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]]
                    })
                    .collect();
                let flat = c.indices("deim.cell_rows")?;
                let targets_flat = c.indices("deim.targets")?;
                if flat.len() != 12 * ncell || targets_flat.len() % 3 != 0 {
                    return Err(Error::Container("DEIM index blocks are malformed".into()));
                }
                let cell_rows: Vec<[usize; 12]> = flat.chunks(12).map(|ch| ch.try_into().expect("chunk of 12")).collect();
                let targets: Vec<[usize; 3]> = targets_flat.chunks(3).map(|ch| [ch[0], ch[1], ch[2]]).collect();
                let rows = c.matrix("deim.rows")?;
                let projector = c.matrix("deim.projector")?;
                let bad_row = cell_rows.iter().flatten().any(|&r| r >= rows.nrows());
                let bad_target = targets.iter().any(|t| t[0] >= projector.ncols() || t[1] >= ncell || t[2] >= 12);
                if bad_row || bad_target {
                    return Err(Error::Container("DEIM indices out of range".into()));
                }
                let tabs = tabulate(&vertices)?;
                ReducedNonlinear::Deim(DeimOnline { vertices, cell_rows, rows, targets, projector, tabs })
            }
            NonlinearModel::Tensor => ReducedNonlinear::Tensor(c.matrix("tensor")?),
        };
        let art = Self {
            options: meta.options,
            nu: meta.nu,
            params: meta.params,
            bounds: meta.bounds,
            normalization: meta.normalization,
            lifting: c.matrix("lifting")?,
            velocity_modes: c.matrix("velocity_modes")?,
            pressure_modes: c.matrix("pressure_modes")?,
            a_vv: c.matrix("a_vv")?,
            a_vl: c.matrix("a_vl")?,
            b_pv: c.matrix("b_pv")?,
            b_pl: c.matrix("b_pl")?,
            nonlinear,
            train_a: c.matrix("train_a")?,
            train_b: c.matrix("train_b")?,
            source_hash: meta.source_hash,
        };
        let (n, m, q) = (art.velocity_size(), art.pressure_size(), art.lifting.ncols());
        let ok = art.a_vv.shape() == (n, n)
            && art.a_vl.shape() == (n, q)
            && art.b_pv.shape() == (m, n)
            && art.b_pl.shape() == (m, q)
            && art.train_a.shape() == (n, art.params.len())
            && art.train_b.shape() == (m, art.params.len());
        if !ok {
            return Err(Error::Container("PODG operator shapes are inconsistent".into()));
        }
        Ok(art)
    }
}

#[derive(Serialize, Deserialize)]
struct PodgMeta {
    format: u32,
    options: PodgOptions,
    nu: f64,
    params: Vec<ParameterPoint>,
    bounds: ParameterBounds,
    normalization: Normalization,
    source_hash: String,
}

/// Trains an artifact from FOM snapshots in one call.
pub fn train_podg(problem: &InsProblem, solutions: &[FlowSolution], opts: &PodgOptions) -> Result<PodgArtifact> {
    let u = SnapshotSet::velocity(solutions)?;
    let p = SnapshotSet::pressure(solutions)?;
    let deim = match opts.nonlinear {
        NonlinearModel::Deim { size } => size,
        NonlinearModel::Tensor => 0,
    };
    PodgOffline::new(problem, &u, &p, opts.velocity_size, opts.pressure_modes(), deim)?.artifact(opts)
}
