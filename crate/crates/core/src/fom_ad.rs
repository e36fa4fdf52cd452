//! Transient SUPG advection–diffusion of a concentration through a steady wind field.
//!
//! The concentration is P1 on the mesh vertices; the wind is a Taylor–Hood
//! P2 velocity. Time stepping is backward Euler with one factorization of
//! the (constant) step matrix. Zero Dirichlet data is imposed on inflow
//! edges (`u·n < 0`); all other boundaries are insulated.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::fem::{p1_mass, p1_stiffness, velocity_at, P2Tabulation, Point, QUAD_DEG5};
use crate::linalg::{CsrMatrix, SparseLu};
use crate::mesh::{Mesh, TaylorHoodSpace};
use crate::{Error, Result};

/// Classification of a boundary edge by the sign of the edge-averaged `u·n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxClass {
    /// `u·n > 0`.
    Outflow,
    /// `u·n = 0` within the zero band.
    Tangential,
    /// `u·n < 0`, carries zero Dirichlet data.
    Inflow,
}

/// Relative zero band of the flux classification: `|u·n| ≤ ZERO_BAND · max|u|`.
pub const ZERO_BAND: f64 = 1e-10;

/// Classifies every boundary edge (in the order of [`TaylorHoodSpace::segments`]).
pub fn partition_ad_boundary(mesh: &Mesh, space: &TaylorHoodSpace, u: &[f64]) -> Vec<FluxClass> {
    let band = ZERO_BAND * space.max_speed(u);
    let v = mesh.vertices();
    space
        .segments()
        .iter()
        .map(|s| {
            let [a, b] = s.vertices;
            // orient the edge with the domain on its left via the owning triangle
            let tri = mesh.triangles()[s.cell];
            let k = (0..3)
                .find(|&k| {
                    let (x, y) = (tri[k], tri[(k + 1) % 3]);
                    (x == a && y == b) || (x == b && y == a)
                })
                .expect("boundary edge belongs to its cell");
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            let (pp, qq) = (v[p], v[q]);
            let len = ((qq[0] - pp[0]).powi(2) + (qq[1] - pp[1]).powi(2)).sqrt();
            // outward normal of an edge traversed with the domain on the left
            let n = [(qq[1] - pp[1]) / len, -(qq[0] - pp[0]) / len];
            // Simpson's rule is exact for the P2 trace
            let ua = space.node_velocity(u, a);
            let ub = space.node_velocity(u, b);
            let um = space.node_velocity(u, s.midpoint);
            let flux = [0, 1].map(|d| (ua[d] + 4.0 * um[d] + ub[d]) / 6.0);
            let un = flux[0] * n[0] + flux[1] * n[1];
            if un.abs() <= band {
                FluxClass::Tangential
            } else if un > 0.0 {
                FluxClass::Outflow
            } else {
                FluxClass::Inflow
            }
        })
        .collect()
}

/// Streamline-diffusion parameter
/// `τ = ((2|u|/h)² + (4κ/h²)² + (2/Δt)²)^(-1/2)`.
pub fn supg_tau(h: f64, speed: f64, kappa: f64, dt: f64) -> f64 {
    let a = 2.0 * speed / h;
    let d = 4.0 * kappa / (h * h);
    let t = 2.0 / dt;
    1.0 / (a * a + d * d + t * t).sqrt()
}

/// Truncated Gaussian bump `amplitude · exp(-4.5 r²/R²)` for `r < R`, zero
/// outside, clipped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub center: Point,
    pub radius: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn value(&self, x: Point) -> f64 {
        let r2 = (x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2);
        let rr = self.radius * self.radius;
        if r2 >= rr {
            0.0
        } else {
            (self.amplitude * (-4.5 * r2 / rr).exp()).clamp(0.0, 1.0)
        }
    }

    pub fn nodal(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.vertices().iter().map(|&x| self.value(x)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct AdProblem {
    pub mesh: Arc<Mesh>,
    pub space: Arc<TaylorHoodSpace>,
    pub kappa: f64,
    /// Taylor–Hood velocity vector.
    pub wind: Vec<f64>,
    /// Nodal initial concentration on the vertices.
    pub initial: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    /// Streamline-upwind stabilization; plain Galerkin when false.
    pub supg: bool,
    pub source: Option<SourceSpec>,
}

impl AdProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("diffusion coefficient must be positive, got {}", self.kappa)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::invalid(format!("need 0 < dt <= T, got dt={} T={}", self.dt, self.t_end)));
        }
        if self.wind.len() != self.space.velocity_dofs() {
            return Err(Error::Dimension { expected: self.space.velocity_dofs(), got: self.wind.len() });
        }
        if self.initial.len() != self.mesh.n_vertices() {
            return Err(Error::Dimension { expected: self.mesh.n_vertices(), got: self.initial.len() });
        }
        if self.initial.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("initial concentration must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Time grid `0, dt, 2dt, ..., T`; the last step is shortened if `T` is
    /// not a multiple of `dt`.
    pub fn times(&self) -> Vec<f64> {
        let n = ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let mut t: Vec<f64> = (0..n).map(|k| k as f64 * self.dt).collect();
        t.push(self.t_end);
        t
    }
}

/// Concentration snapshots at increasing times, starting with the initial field.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationSeries {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub source: Option<SourceSpec>,
}

#[derive(Serialize, Deserialize)]
struct SeriesMeta {
    n_nodes: usize,
    times: Vec<f64>,
    source: Option<SourceSpec>,
}

impl ConcentrationSeries {
    pub const KIND: &'static str = "concentration-series";

    /// Field at time `t` (must be one of the stored times up to 1e-9).
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0)).map(|k| self.fields[k].as_slice())
    }

    pub fn to_container(&self) -> Result<Container> {
        let n = self.fields.first().map_or(0, |f| f.len());
        let mut c = Container::new(Self::KIND, SeriesMeta { n_nodes: n, times: self.times.clone(), source: self.source })?;
        c.push_vec("times", &self.times);
        c.push_f64("fields", n, self.fields.len(), self.fields.concat());
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let meta: SeriesMeta = c.meta_as()?;
        let (data, rows, cols) = c.f64_block("fields")?;
        if cols != meta.times.len() || rows != meta.n_nodes {
            return Err(Error::Container("series block shape disagrees with header".into()));
        }
        let fields = data.chunks(rows.max(1)).take(cols).map(|s| s.to_vec()).collect();
        Ok(Self { times: meta.times, fields, source: meta.source })
    }

    /// One CSV row per vertex: `x,y,c(t_0),c(t_1),...`.
    pub fn to_csv(&self, mesh: &Mesh) -> String {
        let mut s = String::from("x,y");
        for t in &self.times {
            s.push_str(&format!(",t={t}"));
        }
        s.push('\n');
        for (k, p) in mesh.vertices().iter().enumerate() {
            s.push_str(&format!("{},{}", p[0], p[1]));
            for f in &self.fields {
                s.push_str(&format!(",{}", f[k]));
            }
            s.push('\n');
        }
        s
    }
}

struct StepOperators {
    /// `(M + M_s)`, the (stabilized) mass.
    mass: CsrMatrix,
    /// `K + C + S`.
    stiff: CsrMatrix,
    inflow_nodes: Vec<bool>,
}

fn assemble_ad(problem: &AdProblem) -> Result<StepOperators> {
    let mesh = &problem.mesh;
    let space = &problem.space;
    let nv = mesh.n_vertices();
    let mut tm = Vec::with_capacity(9 * mesh.n_triangles());
    let mut tk = Vec::with_capacity(9 * mesh.n_triangles());
    for cell in 0..mesh.n_triangles() {
        let geom = mesh.geometry(cell);
        let tab = P2Tabulation::new(&geom);
        let u_loc = space.gather_velocity(cell, &problem.wind);
        let gl = geom.grad_lambda;
        let m = p1_mass(geom.area);
        let k = p1_stiffness(&geom);
        let centre = velocity_at_bary(&u_loc, [1.0 / 3.0; 3]);
        let speed = centre[0].hypot(centre[1]);
        let tau = if problem.supg { supg_tau(geom.diameter(), speed, problem.kappa, problem.dt) } else { 0.0 };
        let mut mloc = [[0.0; 3]; 3];
        let mut kloc = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                mloc[i][j] = m[i][j];
                kloc[i][j] = problem.kappa * k[i][j];
            }
        }
        for (q, (l, _)) in QUAD_DEG5.iter().enumerate() {
            let w = tab.weights[q];
            let (u, _) = velocity_at(&tab, q, &u_loc);
            let adv: [f64; 3] = [0, 1, 2].map(|a| u[0] * gl[a][0] + u[1] * gl[a][1]);
            for i in 0..3 {
                for j in 0..3 {
                    // Galerkin convection and the streamline test-function terms
                    kloc[i][j] += w * (l[i] * adv[j] + tau * adv[i] * adv[j]);
                    mloc[i][j] += w * tau * adv[i] * l[j];
                }
            }
        }
        let tri = mesh.triangles()[cell];
        for i in 0..3 {
            for j in 0..3 {
                tm.push((tri[i], tri[j], mloc[i][j]));
                tk.push((tri[i], tri[j], kloc[i][j]));
            }
        }
    }
    let mut inflow_nodes = vec![false; nv];
    for (seg, class) in space.segments().iter().zip(partition_ad_boundary(mesh, space, &problem.wind)) {
        if class == FluxClass::Inflow {
            inflow_nodes[seg.vertices[0]] = true;
            inflow_nodes[seg.vertices[1]] = true;
        }
    }
    Ok(StepOperators {
        mass: CsrMatrix::from_triplets(nv, nv, &tm),
        stiff: CsrMatrix::from_triplets(nv, nv, &tk),
        inflow_nodes,
    })
}

fn velocity_at_bary(u_loc: &[f64; 12], l: [f64; 3]) -> [f64; 2] {
    let phi = crate::fem::p2_values(l);
    let mut u = [0.0; 2];
    for a in 0..6 {
        u[0] += u_loc[a] * phi[a];
        u[1] += u_loc[6 + a] * phi[a];
    }
    u
}

fn step_matrix(ops: &StepOperators, dt: f64) -> CsrMatrix {
    let mut a = ops.stiff.clone();
    let inv = 1.0 / dt;
    for (v, m) in a.values_mut().iter_mut().zip(ops.mass.values()) {
        *v += inv * m;
    }
    // zero Dirichlet rows on the inflow boundary
    for i in 0..a.nrows() {
        if ops.inflow_nodes[i] {
            let start = a.row_ptr()[i];
            let end = a.row_ptr()[i + 1];
            for k in start..end {
                let j = a.col_idx()[k];
                a.values_mut()[k] = if j == i { 1.0 } else { 0.0 };
            }
        }
    }
    a
}

/// Integrates the problem over `[0, T]` and stores every step.
pub fn solve_ad(problem: &AdProblem) -> Result<ConcentrationSeries> {
    solve_ad_recording(problem, None)
}

/// Integrates the problem over `[0, T]`, keeping only the fields at the time
/// grid points closest to `record` (all points when `None`).
pub fn solve_ad_recording(problem: &AdProblem, record: Option<&[f64]>) -> Result<ConcentrationSeries> {
    problem.validate()?;
    let ops = assemble_ad(problem)?;
    // mass and stiffness share the pattern because both come from the same cells
    debug_assert_eq!(ops.mass.col_idx(), ops.stiff.col_idx());
    let grid = problem.times();
    let keep: Vec<bool> = match record {
        None => vec![true; grid.len()],
        Some(ts) => {
            let mut keep = vec![false; grid.len()];
            for &t in ts {
                if !(0.0..=problem.t_end * (1.0 + 1e-12)).contains(&t) {
                    return Err(Error::invalid(format!("requested time {t} outside [0, {}]", problem.t_end)));
                }
                let k = grid
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap())
                    .unwrap()
                    .0;
                keep[k] = true;
            }
            keep
        }
    };

    let mut c = problem.initial.clone();
    let mut times = Vec::new();
    let mut fields = Vec::new();
    if keep[0] {
        times.push(0.0);
        fields.push(c.clone());
    }
    let mut current: Option<(f64, SparseLu)> = None;
    let mut rhs = vec![0.0; c.len()];
    for step in 1..grid.len() {
        let dt = grid[step] - grid[step - 1];
        let refactor = current.as_ref().is_none_or(|(d, _)| (d - dt).abs() > 1e-12 * dt);
        if refactor {
            let a = step_matrix(&ops, dt);
            let lu = SparseLu::factor(&a).map_err(|e| Error::TimeStep { step, msg: e.to_string() })?;
            current = Some((dt, lu));
        }
        let (_, lu) = current.as_ref().unwrap();
        ops.mass.mul_vec_into(&c, &mut rhs);
        let inv = 1.0 / dt;
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = if ops.inflow_nodes[i] { 0.0 } else { *r * inv };
        }
        lu.solve_in_place(&mut rhs).map_err(|e| Error::TimeStep { step, msg: e.to_string() })?;
        std::mem::swap(&mut c, &mut rhs);
        if keep[step] {
            times.push(grid[step]);
            fields.push(c.clone());
        }
    }
    Ok(ConcentrationSeries { times, fields, source: problem.source })
}

/// Total mass `∫ c dΩ` of a nodal P1 field.
pub fn total_mass(mesh: &Mesh, c: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(cell, t)| mesh.geometry(cell).area * (c[t[0]] + c[t[1]] + c[t[2]]) / 3.0)
        .sum()
}

/// Centroid `∫ x c / ∫ c` of a nodal P1 field.
pub fn centroid(mesh: &Mesh, c: &[f64]) -> Point {
    let mut mx = [0.0; 2];
    let mut m = 0.0;
    for (cell, t) in mesh.triangles().iter().enumerate() {
        let g = mesh.geometry(cell);
        let mass = p1_mass(g.area);
        for i in 0..3 {
            for j in 0..3 {
                let w = mass[i][j] * c[t[j]];
                mx[0] += w * g.vertices[i][0];
                mx[1] += w * g.vertices[i][1];
                m += w;
            }
        }
    }
    [mx[0] / m, mx[1] / m]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::unit_square;

    #[test]
    fn tau_limits() {
        let h = 0.1;
        // without velocity only the diffusive and temporal scales remain
        let (d, t) = (4.0 * 0.3 / (h * h), 2.0 / 0.5);
        assert!((supg_tau(h, 0.0, 0.3, 0.5) - 1.0 / (d * d + t * t).sqrt()).abs() < 1e-15);
        let t = supg_tau(h, 2.0, 1e-12, 1e12);
        assert!((t - h / 4.0).abs() < 1e-9 * t);
        assert!(supg_tau(h, 0.0, 1.0, 1.0) > 0.0);
    }

    #[test]
    fn flux_partition_of_uniform_flow() {
        let m = unit_square();
        let s = TaylorHoodSpace::new(&m);
        let mut u = vec![0.0; s.velocity_dofs()];
        assert!(partition_ad_boundary(&m, &s, &u).iter().all(|&c| c == FluxClass::Tangential));
        u[..s.n_nodes()].iter_mut().for_each(|v| *v = 1.0);
        let classes = partition_ad_boundary(&m, &s, &u);
        for (seg, class) in s.segments().iter().zip(classes) {
            let [a, b] = seg.vertices;
            let (p, q) = (m.vertices()[a], m.vertices()[b]);
            let expect = if p[0] == 0.0 && q[0] == 0.0 {
                FluxClass::Inflow
            } else if p[0] == 1.0 && q[0] == 1.0 {
                FluxClass::Outflow
            } else {
                FluxClass::Tangential
            };
            assert_eq!(class, expect);
        }
    }

    #[test]
    fn source_is_clipped_and_truncated() {
        let s = SourceSpec { center: [0.0, 0.0], radius: 1.0, amplitude: 2.0 };
        assert_eq!(s.value([0.0, 0.0]), 1.0);
        assert_eq!(s.value([1.0, 0.0]), 0.0);
        assert!(s.value([0.5, 0.0]) < 1.0);
    }
}
