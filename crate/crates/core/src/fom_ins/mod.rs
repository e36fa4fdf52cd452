//! Full-order steady incompressible Navier–Stokes solver on Taylor–Hood elements.
//!
//! Unknowns are ordered `[u (N_h) | p (N_h,p) | λ]`, where the scalar `λ`
//! exists only for enclosed flows and enforces a zero-mean pressure.
//! Dirichlet data is imposed by row elimination: prescribed rows become
//! identity rows and the matching columns are cleared in the remaining rows,
//! with the known values moved to the right-hand side.

mod assemble;
mod newton;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::fem::Point;
use crate::linalg::{CsrMatrix, LuPattern};
use crate::mesh::{BoundaryTag, Mesh, TaylorHoodSpace};
use crate::{Error, Result};

pub use assemble::{assemble_ins, convection_vector, AssembledSystem};
pub use newton::{solve_steady_ins, InitialGuess, NewtonOptions};
pub(crate) use newton::stokes;

/// Inflow speed `w_i` [m/s] and optional direction `w_d` [deg].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub w_i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<f64>,
}

impl ParameterPoint {
    pub fn speed(w_i: f64) -> Self {
        Self { w_i, w_d: None }
    }

    pub fn wind(w_i: f64, w_d: f64) -> Self {
        Self { w_i, w_d: Some(w_d) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_i.is_finite() && self.w_i >= 0.0) {
            return Err(Error::invalid(format!("w_i must be finite and non-negative, got {}", self.w_i)));
        }
        if let Some(d) = self.w_d {
            if !(d.is_finite() && (0.0..360.0).contains(&d)) {
                return Err(Error::invalid(format!("w_d must lie in [0, 360), got {d}")));
            }
        }
        Ok(())
    }

    /// Coordinates as a vector `[w_i]` or `[w_i, w_d]`.
    pub fn coords(&self) -> Vec<f64> {
        match self.w_d {
            Some(d) => vec![self.w_i, d],
            None => vec![self.w_i],
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.w_d.is_some() as usize
    }
}

impl fmt::Display for ParameterPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.w_d {
            Some(d) => write!(f, "(w_i={} m/s, w_d={} deg)", self.w_i, d),
            None => write!(f, "(w_i={} m/s)", self.w_i),
        }
    }
}

/// Axis-aligned box of parameter values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub w_i: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<[f64; 2]>,
}

impl ParameterBounds {
    /// Smallest box containing the points; all must share the same dimension.
    pub fn from_points(points: &[ParameterPoint]) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::invalid("no parameter points"))?;
        let mut b = Self { w_i: [first.w_i; 2], w_d: first.w_d.map(|d| [d; 2]) };
        for p in points {
            if p.dim() != first.dim() {
                return Err(Error::Dimension { expected: first.dim(), got: p.dim() });
            }
            b.w_i = [b.w_i[0].min(p.w_i), b.w_i[1].max(p.w_i)];
            if let (Some(r), Some(d)) = (b.w_d.as_mut(), p.w_d) {
                *r = [r[0].min(d), r[1].max(d)];
            }
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        1 + self.w_d.is_some() as usize
    }

    pub fn contains(&self, p: &ParameterPoint) -> bool {
        let inside = |r: [f64; 2], v: f64| v >= r[0] && v <= r[1];
        inside(self.w_i, p.w_i)
            && match (self.w_d, p.w_d) {
                (Some(r), Some(d)) => inside(r, d),
                (None, None) => true,
                _ => false,
            }
    }
}

/// Velocity profile on the inflow boundary for a unit speed.
pub type Profile = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// How the inflow Dirichlet data depends on the parameter.
#[derive(Clone)]
pub enum InflowModel {
    /// `g = w_i · direction`, uniform over the inflow edges.
    Fixed { direction: [f64; 2] },
    /// `g = w_i (cos w_d, sin w_d)` with `w_d` in degrees, uniform.
    Directional,
    /// `g = w_i · profile(x)`.
    Profile(Profile),
}

impl fmt::Debug for InflowModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InflowModel::Fixed { direction } => f.debug_struct("Fixed").field("direction", direction).finish(),
            InflowModel::Directional => f.write_str("Directional"),
            InflowModel::Profile(_) => f.write_str("Profile(..)"),
        }
    }
}

/// Shared, immutable sparsity structure of the Newton system.
pub(crate) struct SystemLayout {
    pub lu: LuPattern,
    /// Value positions of the 12×12 velocity block of each cell.
    pub vv_pos: Vec<[[usize; 12]; 12]>,
    /// Linear part `[[νA, Bᵀ, 0], [B, 0, m], [0, mᵀ, 0]]` on `pattern`.
    pub base: CsrMatrix,
    /// Value positions cleared for Dirichlet rows (excluding the diagonal).
    pub dirichlet_row_pos: Vec<usize>,
    pub dirichlet_diag_pos: Vec<usize>,
    /// Value positions of Dirichlet columns in free rows.
    pub dirichlet_col_pos: Vec<usize>,
}

/// A steady Navier–Stokes problem on a fixed mesh.
pub struct InsProblem {
    mesh: Arc<Mesh>,
    space: Arc<TaylorHoodSpace>,
    nu: f64,
    inflow: InflowModel,
    /// Prescribed velocity unknowns, sorted.
    dirichlet_dofs: Vec<usize>,
    dirichlet_mask: Vec<bool>,
    /// One field per affine boundary-data component, over all velocity unknowns.
    bc_fields: Vec<Vec<f64>>,
    gauge: Option<Vec<f64>>,
    layout: SystemLayout,
}

impl fmt::Debug for InsProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InsProblem")
            .field("nu", &self.nu)
            .field("inflow", &self.inflow)
            .field("velocity_dofs", &self.space.velocity_dofs())
            .field("pressure_dofs", &self.space.pressure_dofs())
            .field("enclosed", &self.mesh.enclosed())
            .finish()
    }
}

impl InsProblem {
    /// Problem with the default inflow model: [`InflowModel::Directional`] for
    /// enclosed meshes, otherwise [`InflowModel::Fixed`] along the mean inward
    /// normal of the inflow edges.
    pub fn new(mesh: Arc<Mesh>, nu: f64) -> Result<Self> {
        let inflow = if mesh.enclosed() {
            InflowModel::Directional
        } else {
            InflowModel::Fixed { direction: inward_inflow_direction(&mesh)? }
        };
        Self::with_inflow(mesh, nu, inflow)
    }

    pub fn with_inflow(mesh: Arc<Mesh>, nu: f64, inflow: InflowModel) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("viscosity must be positive, got {nu}")));
        }
        if mesh.enclosed() && mesh.boundary().iter().any(|e| e.tag == BoundaryTag::Outflow) {
            return Err(Error::invalid("enclosed flow must not have outflow edges"));
        }
        let space = Arc::new(TaylorHoodSpace::new(&mesh));
        let nn = space.n_nodes();
        let nh = space.velocity_dofs();
        let mut dirichlet_mask = vec![false; nh];
        let mut comps: Vec<Vec<f64>> = match &inflow {
            InflowModel::Directional => vec![vec![0.0; nh], vec![0.0; nh]],
            _ => vec![vec![0.0; nh]],
        };
        for (n, tag) in space.dirichlet_nodes() {
            dirichlet_mask[n] = true;
            dirichlet_mask[nn + n] = true;
            if tag != BoundaryTag::Inflow {
                continue;
            }
            match &inflow {
                InflowModel::Fixed { direction } => {
                    comps[0][n] = direction[0];
                    comps[0][nn + n] = direction[1];
                }
                InflowModel::Directional => {
                    comps[0][n] = 1.0;
                    comps[1][nn + n] = 1.0;
                }
                InflowModel::Profile(f) => {
                    let g = f(space.node_coords()[n]);
                    comps[0][n] = g[0];
                    comps[0][nn + n] = g[1];
                }
            }
        }
        let dirichlet_dofs: Vec<usize> = (0..nh).filter(|&i| dirichlet_mask[i]).collect();
        let gauge = mesh.enclosed().then(|| {
            let m = space.pressure_mass(&mesh);
            m.mul_vec(&vec![1.0; space.pressure_dofs()])
        });
        let layout = assemble::build_layout(&mesh, &space, nu, &dirichlet_mask, gauge.as_deref())?;
        Ok(Self { mesh, space, nu, inflow, dirichlet_dofs, dirichlet_mask, bc_fields: comps, gauge, layout })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn space(&self) -> &Arc<TaylorHoodSpace> {
        &self.space
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn inflow(&self) -> &InflowModel {
        &self.inflow
    }

    pub fn enclosed(&self) -> bool {
        self.mesh.enclosed()
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet_dofs
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet_mask
    }

    /// Zero-mean pressure constraint vector `m_k = ∫ψ_k`, enclosed flows only.
    pub fn gauge(&self) -> Option<&[f64]> {
        self.gauge.as_deref()
    }

    /// Size of the full Newton system.
    pub fn system_size(&self) -> usize {
        self.space.velocity_dofs() + self.space.pressure_dofs() + self.gauge.is_some() as usize
    }

    pub(crate) fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    /// Boundary-data fields `g_k` such that `g_D(μ) = Σ θ_k(μ) g_k`.
    pub fn bc_fields(&self) -> &[Vec<f64>] {
        &self.bc_fields
    }

    /// Parameter-dependent factors `θ_k(μ)` of the boundary data.
    pub fn bc_coefficients(&self, mu: &ParameterPoint) -> Result<Vec<f64>> {
        mu.validate()?;
        match &self.inflow {
            InflowModel::Directional => {
                let d = mu
                    .w_d
                    .ok_or_else(|| Error::invalid("this problem needs a wind direction w_d"))?
                    .to_radians();
                Ok(vec![mu.w_i * d.cos(), mu.w_i * d.sin()])
            }
            _ => {
                if mu.w_d.is_some() {
                    return Err(Error::invalid("this problem has a fixed inflow direction; omit w_d"));
                }
                Ok(vec![mu.w_i])
            }
        }
    }

    /// Velocity vector that is `g_D(μ)` on Dirichlet unknowns and zero elsewhere.
    pub fn dirichlet_values(&self, mu: &ParameterPoint) -> Result<Vec<f64>> {
        let theta = self.bc_coefficients(mu)?;
        let mut g = vec![0.0; self.space.velocity_dofs()];
        for (t, field) in theta.iter().zip(&self.bc_fields) {
            for &d in &self.dirichlet_dofs {
                g[d] += t * field[d];
            }
        }
        Ok(g)
    }

    /// Solves a batch of parameter points in parallel, in input order.
    pub fn solve_many(&self, params: &[ParameterPoint], opts: &NewtonOptions) -> Result<Vec<FlowSolution>> {
        params
            .par_iter()
            .map(|mu| {
                solve_steady_ins(self, mu, opts)
                    .map_err(|e| Error::Snapshot { param: mu.to_string(), source: Box::new(e) })
            })
            .collect()
    }
}

fn inward_inflow_direction(mesh: &Mesh) -> Result<[f64; 2]> {
    // boundary edges oriented with the domain on their left: inward normal is (-dy, dx)
    let inflow: std::collections::HashSet<(usize, usize)> = mesh
        .boundary()
        .iter()
        .filter(|e| e.tag == BoundaryTag::Inflow)
        .map(|e| crate::mesh::edge_key(e.vertices[0], e.vertices[1]))
        .collect();
    let mut sum = [0.0, 0.0];
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if inflow.contains(&crate::mesh::edge_key(a, b)) {
                let (p, q) = (mesh.vertices()[a], mesh.vertices()[b]);
                sum[0] -= q[1] - p[1];
                sum[1] += q[0] - p[0];
            }
        }
    }
    let n = sum[0].hypot(sum[1]);
    if !(n > 0.0) {
        return Err(Error::invalid("cannot derive an inflow direction: no net inflow normal"));
    }
    Ok([sum[0] / n, sum[1] / n])
}

/// Converged full-order solution at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: ParameterPoint,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlowMeta {
    mu: ParameterPoint,
    nu: f64,
    velocity_dofs: usize,
    pressure_dofs: usize,
    newton_iterations: usize,
    residual_norm: f64,
}

impl FlowSolution {
    pub const KIND: &'static str = "flow-solution";

    pub fn to_container(&self, nu: f64) -> Result<Container> {
        let meta = FlowMeta {
            mu: self.mu,
            nu,
            velocity_dofs: self.u.len(),
            pressure_dofs: self.p.len(),
            newton_iterations: self.newton_iterations,
            residual_norm: self.residual_norm,
        };
        let mut c = Container::new(Self::KIND, meta)?;
        c.push_vec("u", &self.u);
        c.push_vec("p", &self.p);
        c.push_vec("residual_history", &self.residual_history);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let meta: FlowMeta = c.meta_as()?;
        let u = c.vec("u")?;
        let p = c.vec("p")?;
        if u.len() != meta.velocity_dofs || p.len() != meta.pressure_dofs {
            return Err(Error::Container("flow solution block lengths disagree with header".into()));
        }
        Ok(Self {
            u,
            p,
            mu: meta.mu,
            newton_iterations: meta.newton_iterations,
            residual_norm: meta.residual_norm,
            residual_history: c.vec("residual_history")?,
        })
    }
}

/// `Re = max nodal |u| · l / ν`.
pub fn reynolds_number(problem: &InsProblem, solution: &FlowSolution) -> f64 {
    problem.space.max_speed(&solution.u) * problem.mesh.characteristic_length() / problem.nu
}
