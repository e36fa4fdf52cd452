//! Taylor–Hood P2/P1 degree-of-freedom maps.

use std::collections::HashMap;

use super::{edge_key, BoundaryTag, Mesh};
use crate::fem::{p1_mass, p2_mass, p2_stiffness, P2Tabulation, Point};
use crate::linalg::CsrMatrix;

/// Set of boundary tags touching a P2 node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TagSet(u8);

impl TagSet {
    fn bit(tag: BoundaryTag) -> u8 {
        match tag {
            BoundaryTag::Inflow => 1,
            BoundaryTag::NoSlip => 2,
            BoundaryTag::Outflow => 4,
        }
    }

    pub fn insert(&mut self, tag: BoundaryTag) {
        self.0 |= Self::bit(tag);
    }

    pub fn contains(self, tag: BoundaryTag) -> bool {
        self.0 & Self::bit(tag) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Tag imposing the velocity at this node: NoSlip wins over Inflow, and
    /// both win over Outflow (which imposes nothing).
    pub fn dirichlet(self) -> Option<BoundaryTag> {
        if self.contains(BoundaryTag::NoSlip) {
            Some(BoundaryTag::NoSlip)
        } else if self.contains(BoundaryTag::Inflow) {
            Some(BoundaryTag::Inflow)
        } else {
            None
        }
    }
}

/// Boundary edge with its P2 midpoint node.
#[derive(Clone, Copy, Debug)]
pub struct BoundarySegment {
    pub vertices: [usize; 2],
    pub midpoint: usize,
    pub tag: BoundaryTag,
    pub cell: usize,
}

/// P2 velocity (two components) and P1 pressure spaces on a mesh.
///
/// P2 nodes are the mesh vertices followed by one node per edge. Velocity
/// unknowns are blocked by component: `x` components occupy `0..n_nodes`,
/// `y` components `n_nodes..2*n_nodes`. Pressure unknowns are the vertices.
#[derive(Clone, Debug)]
pub struct TaylorHoodSpace {
    n_vertices: usize,
    n_nodes: usize,
    cell_nodes: Vec<[usize; 6]>,
    node_coords: Vec<Point>,
    node_tags: Vec<TagSet>,
    segments: Vec<BoundarySegment>,
}

impl TaylorHoodSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let nv = mesh.n_vertices();
        let mut edge_node: HashMap<(usize, usize), usize> = HashMap::new();
        let mut node_coords: Vec<Point> = mesh.vertices().to_vec();
        let mut cell_nodes = Vec::with_capacity(mesh.n_triangles());
        let mut edge_cell: HashMap<(usize, usize), usize> = HashMap::new();
        for (c, t) in mesh.triangles().iter().enumerate() {
            let mut nodes = [t[0], t[1], t[2], 0, 0, 0];
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = edge_key(a, b);
                edge_cell.entry(key).or_insert(c);
                nodes[3 + k] = *edge_node.entry(key).or_insert_with(|| {
                    let (p, q) = (node_coords[a], node_coords[b]);
                    node_coords.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                    node_coords.len() - 1
                });
            }
            cell_nodes.push(nodes);
        }
        let n_nodes = node_coords.len();
        let mut node_tags = vec![TagSet::default(); n_nodes];
        let mut segments = Vec::with_capacity(mesh.boundary().len());
        for e in mesh.boundary() {
            let [a, b] = e.vertices;
            let key = edge_key(a, b);
            let m = edge_node[&key];
            node_tags[a].insert(e.tag);
            node_tags[b].insert(e.tag);
            node_tags[m].insert(e.tag);
            segments.push(BoundarySegment { vertices: [a, b], midpoint: m, tag: e.tag, cell: edge_cell[&key] });
        }
        Self { n_vertices: nv, n_nodes, cell_nodes, node_coords, node_tags, segments }
    }

    /// Number of velocity unknowns `N_h`.
    pub fn velocity_dofs(&self) -> usize {
        2 * self.n_nodes
    }

    /// Number of pressure unknowns `N_h,p`.
    pub fn pressure_dofs(&self) -> usize {
        self.n_vertices
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_cells(&self) -> usize {
        self.cell_nodes.len()
    }

    pub fn cell_nodes(&self, cell: usize) -> &[usize; 6] {
        &self.cell_nodes[cell]
    }

    /// Global velocity indices in local layout `[ux0..ux5, uy0..uy5]`.
    pub fn cell_velocity_dofs(&self, cell: usize) -> [usize; 12] {
        let n = &self.cell_nodes[cell];
        let mut d = [0; 12];
        for a in 0..6 {
            d[a] = n[a];
            d[6 + a] = self.n_nodes + n[a];
        }
        d
    }

    pub fn cell_pressure_dofs(&self, cell: usize) -> [usize; 3] {
        let n = &self.cell_nodes[cell];
        [n[0], n[1], n[2]]
    }

    pub fn node_coords(&self) -> &[Point] {
        &self.node_coords
    }

    pub fn node_tags(&self) -> &[TagSet] {
        &self.node_tags
    }

    pub fn segments(&self) -> &[BoundarySegment] {
        &self.segments
    }

    /// Per-node Dirichlet class (see [`TagSet::dirichlet`]).
    pub fn dirichlet_nodes(&self) -> Vec<(usize, BoundaryTag)> {
        self.node_tags.iter().enumerate().filter_map(|(n, t)| t.dirichlet().map(|tag| (n, tag))).collect()
    }

    /// Mask over velocity unknowns: true where the velocity is prescribed.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.velocity_dofs()];
        for (n, _) in self.dirichlet_nodes() {
            mask[n] = true;
            mask[self.n_nodes + n] = true;
        }
        mask
    }

    /// Extracts the local 12-vector of a global velocity.
    pub fn gather_velocity(&self, cell: usize, u: &[f64]) -> [f64; 12] {
        let d = self.cell_velocity_dofs(cell);
        let mut out = [0.0; 12];
        for k in 0..12 {
            out[k] = u[d[k]];
        }
        out
    }

    /// Nodal velocity vector at P2 node `n`.
    pub fn node_velocity(&self, u: &[f64], n: usize) -> [f64; 2] {
        [u[n], u[self.n_nodes + n]]
    }

    /// Largest nodal velocity magnitude.
    pub fn max_speed(&self, u: &[f64]) -> f64 {
        (0..self.n_nodes).map(|n| u[n].hypot(u[self.n_nodes + n])).fold(0.0, f64::max)
    }

    /// Velocity restricted to the vertices, interleaved `[ux, uy]` per vertex.
    pub fn vertex_velocity(&self, u: &[f64]) -> Vec<[f64; 2]> {
        (0..self.n_vertices).map(|n| self.node_velocity(u, n)).collect()
    }

    /// Assembles a matrix from per-cell 6×6 scalar P2 blocks, replicated on
    /// both velocity components.
    fn assemble_vector_p2(&self, mesh: &Mesh, local: impl Fn(&P2Tabulation) -> [[f64; 6]; 6]) -> CsrMatrix {
        let mut trip = Vec::with_capacity(72 * self.n_cells());
        for c in 0..self.n_cells() {
            let tab = P2Tabulation::new(&mesh.geometry(c));
            let k = local(&tab);
            let nodes = &self.cell_nodes[c];
            for comp in 0..2 {
                let off = comp * self.n_nodes;
                for a in 0..6 {
                    for b in 0..6 {
                        trip.push((off + nodes[a], off + nodes[b], k[a][b]));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.velocity_dofs(), self.velocity_dofs(), &trip)
    }

    /// Vector L² mass matrix on the velocity space.
    pub fn velocity_mass(&self, mesh: &Mesh) -> CsrMatrix {
        self.assemble_vector_p2(mesh, p2_mass)
    }

    /// Vector H¹-seminorm (stiffness) matrix on the velocity space.
    pub fn velocity_stiffness(&self, mesh: &Mesh) -> CsrMatrix {
        self.assemble_vector_p2(mesh, p2_stiffness)
    }

    /// P1 mass matrix on the pressure space.
    pub fn pressure_mass(&self, mesh: &Mesh) -> CsrMatrix {
        let mut trip = Vec::with_capacity(9 * self.n_cells());
        for c in 0..self.n_cells() {
            let m = p1_mass(mesh.geometry(c).area);
            let d = self.cell_pressure_dofs(c);
            for a in 0..3 {
                for b in 0..3 {
                    trip.push((d[a], d[b], m[a][b]));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_vertices, self.n_vertices, &trip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_square_grid, BoundaryEdge};

    fn two_triangles() -> Mesh {
        crate::mesh::tests::unit_square()
    }

    #[test]
    fn dof_counts() {
        let s = TaylorHoodSpace::new(&two_triangles());
        assert_eq!(s.n_nodes(), 9);
        assert_eq!(s.velocity_dofs(), 18);
        assert_eq!(s.pressure_dofs(), 4);

        let tri = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![
                BoundaryEdge { vertices: [0, 1], tag: BoundaryTag::NoSlip },
                BoundaryEdge { vertices: [1, 2], tag: BoundaryTag::Outflow },
                BoundaryEdge { vertices: [2, 0], tag: BoundaryTag::Inflow },
            ],
            None,
            false,
        )
        .unwrap();
        let s = TaylorHoodSpace::new(&tri);
        assert_eq!((s.velocity_dofs(), s.pressure_dofs()), (12, 3));

        let grid = unit_square_grid(8).unwrap();
        let s = TaylorHoodSpace::new(&grid);
        let edges = grid.n_vertices() + grid.n_triangles() - 1;
        assert_eq!(s.pressure_dofs(), 81);
        assert_eq!(s.velocity_dofs(), 2 * (81 + edges));
    }

    #[test]
    fn dof_maps_are_bijective() {
        let grid = unit_square_grid(5).unwrap();
        let s = TaylorHoodSpace::new(&grid);
        let mut hit = vec![false; s.velocity_dofs()];
        for c in 0..s.n_cells() {
            for d in s.cell_velocity_dofs(c) {
                hit[d] = true;
            }
        }
        assert!(hit.iter().all(|&h| h));
        // midpoint nodes sit at the edge midpoints
        for c in 0..s.n_cells() {
            let n = s.cell_nodes(c);
            for k in 0..3 {
                let (p, q) = (s.node_coords()[n[k]], s.node_coords()[n[(k + 1) % 3]]);
                let m = s.node_coords()[n[3 + k]];
                assert!((m[0] - 0.5 * (p[0] + q[0])).abs() < 1e-15);
                assert!((m[1] - 0.5 * (p[1] + q[1])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lumped_pressure_mass_recovers_area() {
        let grid = unit_square_grid(6).unwrap();
        let s = TaylorHoodSpace::new(&grid);
        let m = s.pressure_mass(&grid);
        let lumped = m.mul_vec(&vec![1.0; s.pressure_dofs()]);
        let total: f64 = lumped.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // each row equals a third of the patch area
        let mut patch = vec![0.0; s.pressure_dofs()];
        for c in 0..grid.n_triangles() {
            for v in grid.triangles()[c] {
                patch[v] += grid.geometry(c).area / 3.0;
            }
        }
        for (a, b) in lumped.iter().zip(&patch) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn corner_nodes_prefer_noslip() {
        let s = TaylorHoodSpace::new(&two_triangles());
        // vertex 0 touches inflow (west) and no-slip (south)
        assert_eq!(s.node_tags()[0].dirichlet(), Some(BoundaryTag::NoSlip));
        // vertex 1 touches no-slip (south) and outflow (east)
        assert_eq!(s.node_tags()[1].dirichlet(), Some(BoundaryTag::NoSlip));
        let outflow_mid = s.segments().iter().find(|g| g.tag == BoundaryTag::Outflow).unwrap().midpoint;
        assert_eq!(s.node_tags()[outflow_mid].dirichlet(), None);
    }
}
