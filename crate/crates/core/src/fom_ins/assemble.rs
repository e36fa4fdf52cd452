//! Operator assembly on a precomputed sparsity pattern.

use super::{InsProblem, SystemLayout};
use crate::fem::{convection_local, convection_picard_local, divergence_local, p2_stiffness, P2Tabulation, TriGeom};
use crate::linalg::{CsrMatrix, LuPattern};
use crate::mesh::{Mesh, TaylorHoodSpace};
use crate::{Error, Result};

/// Raw (unconstrained) operators of the discrete Navier–Stokes system
/// `νAu + C(u)u + Bᵀp = f`, `Bu = g`.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    /// Vector Laplacian `∫∇φ_i:∇φ_j` (without ν).
    pub a: CsrMatrix,
    /// Divergence `-∫ψ_k ∇·φ_j`.
    pub b: CsrMatrix,
    /// Convection `∫(w·∇φ_j)·φ_i` at the given state `w`.
    pub c: CsrMatrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

pub(crate) fn cell_geometry(mesh: &Mesh, cell: usize) -> Result<TriGeom> {
    let [a, b, c] = mesh.triangles()[cell];
    let v = mesh.vertices();
    TriGeom::new([v[a], v[b], v[c]])
        .ok_or_else(|| Error::Assembly { cell, msg: "singular element Jacobian".into() })
}

/// Assembles `A`, `B` and `C(state)` without boundary treatment.
pub fn assemble_ins(problem: &InsProblem, state: &[f64]) -> Result<AssembledSystem> {
    let space = problem.space();
    let mesh = problem.mesh();
    let nh = space.velocity_dofs();
    let np = space.pressure_dofs();
    if state.len() != nh {
        return Err(Error::Dimension { expected: nh, got: state.len() });
    }
    let nn = space.n_nodes();
    let mut ta = Vec::with_capacity(72 * space.n_cells());
    let mut tb = Vec::with_capacity(36 * space.n_cells());
    let mut tc = Vec::with_capacity(72 * space.n_cells());
    for cell in 0..space.n_cells() {
        let tab = P2Tabulation::new(&cell_geometry(mesh, cell)?);
        let k = p2_stiffness(&tab);
        let c = convection_picard_local(&tab, &space.gather_velocity(cell, state));
        let nodes = space.cell_nodes(cell);
        for comp in 0..2 {
            for a in 0..6 {
                for b in 0..6 {
                    let (i, j) = (comp * nn + nodes[a], comp * nn + nodes[b]);
                    ta.push((i, j, k[a][b]));
                    tc.push((i, j, c[a][b]));
                }
            }
        }
        let bl = divergence_local(&tab);
        let vd = space.cell_velocity_dofs(cell);
        let pd = space.cell_pressure_dofs(cell);
        for r in 0..3 {
            for j in 0..12 {
                tb.push((pd[r], vd[j], bl[r][j]));
            }
        }
    }
    Ok(AssembledSystem {
        a: CsrMatrix::from_triplets(nh, nh, &ta),
        b: CsrMatrix::from_triplets(np, nh, &tb),
        c: CsrMatrix::from_triplets(nh, nh, &tc),
        f: vec![0.0; nh],
        g: vec![0.0; np],
    })
}

/// Convective term `N(u) = C(u)u` as a full velocity vector.
pub fn convection_vector(space: &TaylorHoodSpace, mesh: &Mesh, u: &[f64]) -> Vec<f64> {
    let mut n = vec![0.0; space.velocity_dofs()];
    for cell in 0..space.n_cells() {
        let tab = P2Tabulation::new(&mesh.geometry(cell));
        let loc = convection_local(&tab, &space.gather_velocity(cell, u), None);
        let d = space.cell_velocity_dofs(cell);
        for k in 0..12 {
            n[d[k]] += loc[k];
        }
    }
    n
}

pub(crate) fn build_layout(
    mesh: &Mesh,
    space: &TaylorHoodSpace,
    nu: f64,
    dirichlet: &[bool],
    gauge: Option<&[f64]>,
) -> Result<SystemLayout> {
    let nh = space.velocity_dofs();
    let np = space.pressure_dofs();
    let n = nh + np + gauge.is_some() as usize;
    let lam = nh + np;
    let ncell = space.n_cells();

    let mut trip = Vec::with_capacity(ncell * (144 + 72) + 2 * np);
    let mut locals = Vec::with_capacity(ncell);
    for cell in 0..ncell {
        let tab = P2Tabulation::new(&cell_geometry(mesh, cell)?);
        let k = p2_stiffness(&tab);
        let b = divergence_local(&tab);
        let vd = space.cell_velocity_dofs(cell);
        let pd = space.cell_pressure_dofs(cell);
        for i in 0..12 {
            for j in 0..12 {
                let v = if i / 6 == j / 6 { nu * k[i % 6][j % 6] } else { 0.0 };
                trip.push((vd[i], vd[j], v));
            }
        }
        for r in 0..3 {
            for j in 0..12 {
                trip.push((nh + pd[r], vd[j], b[r][j]));
                trip.push((vd[j], nh + pd[r], b[r][j]));
            }
        }
        locals.push((vd, pd));
    }
    if let Some(m) = gauge {
        for (k, &mk) in m.iter().enumerate() {
            trip.push((nh + k, lam, mk));
            trip.push((lam, nh + k, mk));
        }
    }
    let base = CsrMatrix::from_triplets(n, n, &trip);
    let mut pattern = base.clone();
    pattern.values_mut().iter_mut().for_each(|v| *v = 0.0);

    let vv_pos = locals
        .iter()
        .map(|(vd, _)| {
            let mut pos = [[0usize; 12]; 12];
            for i in 0..12 {
                for j in 0..12 {
                    pos[i][j] = base.find(vd[i], vd[j]).expect("entry in pattern");
                }
            }
            pos
        })
        .collect();

    let mut dirichlet_row_pos = Vec::new();
    let mut dirichlet_diag_pos = Vec::new();
    let mut dirichlet_col_pos = Vec::new();
    for i in 0..n {
        let row_is_d = i < nh && dirichlet[i];
        for k in base.row_ptr()[i]..base.row_ptr()[i + 1] {
            let j = base.col_idx()[k];
            if row_is_d {
                if j == i {
                    dirichlet_diag_pos.push(k);
                } else {
                    dirichlet_row_pos.push(k);
                }
            } else if j < nh && dirichlet[j] {
                dirichlet_col_pos.push(k);
            }
        }
    }
    let lu = LuPattern::analyze(&pattern)?;
    Ok(SystemLayout { lu, vv_pos, base, dirichlet_row_pos, dirichlet_diag_pos, dirichlet_col_pos })
}

impl InsProblem {
    /// Nonlinear residual of the full system at `x = [u, p, λ]`. Dirichlet
    /// rows hold `u_D - g_D`.
    pub fn residual(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let layout = self.layout();
        let mut r = layout.base.mul_vec(x);
        let nh = self.space().velocity_dofs();
        let conv = convection_vector(self.space(), self.mesh(), &x[..nh]);
        for i in 0..nh {
            r[i] = if self.dirichlet_mask()[i] { x[i] - g[i] } else { r[i] + conv[i] };
        }
        r
    }

    /// Magnitude of the terms summed into each residual row,
    /// `‖ |K||x| + |N(u)| ‖`, with `K` the linear part. Scales the
    /// round-off floor of the residual norm.
    pub(crate) fn residual_scale(&self, x: &[f64]) -> f64 {
        let base = &self.layout().base;
        let nh = self.space().velocity_dofs();
        let conv = convection_vector(self.space(), self.mesh(), &x[..nh]);
        let mut sum = 0.0;
        for i in 0..base.nrows() {
            let (cols, vals) = base.row(i);
            let mut s: f64 = cols.iter().zip(vals).map(|(&c, &v)| (v * x[c]).abs()).sum();
            if i < nh {
                s += conv[i].abs();
            }
            sum += s * s;
        }
        sum.sqrt()
    }

    /// Newton (or Stokes, when `convective` is false) matrix at `x` with the
    /// Dirichlet rows and columns eliminated.
    pub(crate) fn jacobian(&self, x: &[f64], convective: bool) -> CsrMatrix {
        let layout = self.layout();
        let space = self.space();
        let mut jac = layout.base.clone();
        if convective {
            let vals = jac.values_mut();
            let mut local = [[0.0; 12]; 12];
            for cell in 0..space.n_cells() {
                let tab = P2Tabulation::new(&self.mesh().geometry(cell));
                convection_local(&tab, &space.gather_velocity(cell, x), Some(&mut local));
                let pos = &layout.vv_pos[cell];
                for i in 0..12 {
                    for j in 0..12 {
                        vals[pos[i][j]] += local[i][j];
                    }
                }
            }
        }
        let vals = jac.values_mut();
        for &k in layout.dirichlet_row_pos.iter().chain(&layout.dirichlet_col_pos) {
            vals[k] = 0.0;
        }
        for &k in &layout.dirichlet_diag_pos {
            vals[k] = 1.0;
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{p2_values, QUAD_DEG5};
    use crate::mesh::unit_square_grid;

    fn problem(n: usize) -> InsProblem {
        InsProblem::new(Arc::new(unit_square_grid(n).unwrap()), 1.0).unwrap()
    }

    #[test]
    fn zero_state_has_no_convection() {
        let p = problem(3);
        let sys = assemble_ins(&p, &vec![0.0; p.space().velocity_dofs()]).unwrap();
        assert!(sys.c.values().iter().all(|&v| v == 0.0));
        assert_eq!(sys.f.len(), p.space().velocity_dofs());
        assert_eq!(sys.g.len(), p.space().pressure_dofs());
    }

    #[test]
    fn constant_state_convection_matches_hand_quadrature() {
        let p = problem(2);
        let space = p.space();
        let nn = space.n_nodes();
        let mut u = vec![0.0; space.velocity_dofs()];
        u[..nn].iter_mut().for_each(|v| *v = 1.0);
        let sys = assemble_ins(&p, &u).unwrap();
        // every entry is Σ_cells ∫ φ_i ∂_x φ_j; check one cell's contribution
        // against an independent evaluation with finite-difference gradients
        let cell = 0;
        let g = p.mesh().geometry(cell);
        let nodes = space.cell_nodes(cell);
        let eps = 1e-6;
        let mut local = [[0.0; 6]; 6];
        for (l, w) in QUAD_DEG5 {
            let x = g.map(l);
            let bary = |pt: [f64; 2]| {
                let [a, b, c] = g.vertices;
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                let l1 = ((pt[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (pt[1] - a[1])) / det;
                let l2 = ((b[0] - a[0]) * (pt[1] - a[1]) - (pt[0] - a[0]) * (b[1] - a[1])) / det;
                [1.0 - l1 - l2, l1, l2]
            };
            let phi = p2_values(l);
            let plus = p2_values(bary([x[0] + eps, x[1]]));
            let minus = p2_values(bary([x[0] - eps, x[1]]));
            for i in 0..6 {
                for j in 0..6 {
                    local[i][j] += w * g.area * phi[i] * (plus[j] - minus[j]) / (2.0 * eps);
                }
            }
        }
        // compare contributions at an entry coupling two nodes only shared by cell 0
        let mut other = 0.0;
        for c in 1..space.n_cells() {
            let nb = space.cell_nodes(c);
            if nb.contains(&nodes[0]) && nb.contains(&nodes[3]) {
                let tab = P2Tabulation::new(&p.mesh().geometry(c));
                let cl = convection_picard_local(&tab, &space.gather_velocity(c, &u));
                let a = nb.iter().position(|&x| x == nodes[0]).unwrap();
                let b = nb.iter().position(|&x| x == nodes[3]).unwrap();
                other += cl[a][b];
            }
        }
        let assembled = sys.c.get(nodes[0], nodes[3]) - other;
        assert!((assembled - local[0][3]).abs() < 1e-8, "{assembled} vs {}", local[0][3]);
    }

    #[test]
    fn laplacian_annihilates_linear_fields_on_interior_rows() {
        let p = problem(4);
        let space = p.space();
        let nn = space.n_nodes();
        let sys = assemble_ins(&p, &vec![0.0; space.velocity_dofs()]).unwrap();
        let mut u = vec![0.0; space.velocity_dofs()];
        for (k, x) in space.node_coords().iter().enumerate() {
            u[k] = 2.0 * x[0] - 3.0 * x[1] + 0.5;
            u[nn + k] = -x[0] + 4.0 * x[1];
        }
        let au = sys.a.mul_vec(&u);
        for k in 0..nn {
            if space.node_tags()[k].is_empty() {
                assert!(au[k].abs() < 1e-12);
                assert!(au[nn + k].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        // div(x, y) = 2, so B u = -2 ∫ψ
        let p = problem(3);
        let space = p.space();
        let nn = space.n_nodes();
        let sys = assemble_ins(&p, &vec![0.0; space.velocity_dofs()]).unwrap();
        let mut u = vec![0.0; space.velocity_dofs()];
        for (k, x) in space.node_coords().iter().enumerate() {
            u[k] = x[0];
            u[nn + k] = x[1];
        }
        let bu = sys.b.mul_vec(&u);
        let lumped = space.pressure_mass(p.mesh()).mul_vec(&vec![1.0; space.pressure_dofs()]);
        for (a, m) in bu.iter().zip(&lumped) {
            assert!((a + 2.0 * m).abs() < 1e-13);
        }
    }
}
