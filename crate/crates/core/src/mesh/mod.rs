//! Triangulated 2D domains with tagged boundaries.

mod format;
mod space;
mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fem::{dist, signed_area, Point, TriGeom};
use crate::{Error, Result};

pub use format::{load_mesh, parse_gmsh, parse_mesh_text, write_mesh_text, MeshFormat};
pub use space::{TaylorHoodSpace, TagSet};
pub use synth::{rectangle_mesh, synth_urban_mesh, unit_square_grid, Side, UrbanLayout};

/// Boundary condition class of a boundary edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    /// Γ_D: inhomogeneous Dirichlet (inflow) data.
    Inflow,
    /// Γ_0: no-slip walls and buildings.
    NoSlip,
    /// Γ_N: do-nothing outflow.
    Outflow,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Inflow => "inflow",
            BoundaryTag::NoSlip => "noslip",
            BoundaryTag::Outflow => "outflow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inflow" | "dirichlet" => Some(BoundaryTag::Inflow),
            "noslip" | "no-slip" | "wall" | "building" => Some(BoundaryTag::NoSlip),
            "outflow" | "neumann" => Some(BoundaryTag::Outflow),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// Unordered edge key.
pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A validated triangulation. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
    characteristic_length: f64,
    enclosed: bool,
}

impl Mesh {
    /// Validates and builds a mesh. Clockwise triangles are reoriented;
    /// degenerate ones are rejected.
    ///
    /// `characteristic_length = None` selects the default: the total length of
    /// the inflow boundary, or the domain diameter for enclosed flows.
    pub fn new(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        boundary: Vec<BoundaryEdge>,
        characteristic_length: Option<f64>,
        enclosed: bool,
    ) -> Result<Self> {
        let nv = vertices.len();
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Geometry("non-finite vertex coordinate".into()));
        }
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::Geometry(format!("triangle {t} references a vertex out of range")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area < 0.0 {
                tri.swap(1, 2);
            } else if !(area > 0.0) {
                return Err(Error::Geometry(format!("triangle {t} is degenerate")));
            }
        }
        if triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }

        let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                *edge_use.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        if let Some((e, _)) = edge_use.iter().find(|(_, &n)| n > 2) {
            return Err(Error::Validation {
                msg: "non-manifold edge shared by more than two triangles".into(),
                edges: vec![[e.0, e.1]],
            });
        }

        let mut tagged: HashMap<(usize, usize), BoundaryTag> = HashMap::new();
        let mut bad = Vec::new();
        for be in &boundary {
            let [a, b] = be.vertices;
            if a >= nv || b >= nv {
                return Err(Error::Geometry(format!("boundary edge ({a}, {b}) references a vertex out of range")));
            }
            let key = edge_key(a, b);
            if edge_use.get(&key) != Some(&1) || tagged.insert(key, be.tag).is_some() {
                bad.push([a, b]);
            }
        }
        if !bad.is_empty() {
            return Err(Error::Validation {
                msg: "tagged edges must be distinct topological boundary edges".into(),
                edges: bad,
            });
        }
        let mut untagged: Vec<[usize; 2]> = edge_use
            .iter()
            .filter(|(k, &n)| n == 1 && !tagged.contains_key(k))
            .map(|(k, _)| [k.0, k.1])
            .collect();
        if !untagged.is_empty() {
            untagged.sort();
            return Err(Error::Validation { msg: "untagged boundary edges".into(), edges: untagged });
        }

        let has = |t: BoundaryTag| boundary.iter().any(|e| e.tag == t);
        if enclosed {
            if has(BoundaryTag::Outflow) {
                return Err(Error::Validation {
                    msg: "enclosed-flow mesh must not carry outflow edges".into(),
                    edges: boundary
                        .iter()
                        .filter(|e| e.tag == BoundaryTag::Outflow)
                        .map(|e| e.vertices)
                        .collect(),
                });
            }
        } else if !(has(BoundaryTag::Inflow) && has(BoundaryTag::NoSlip) && has(BoundaryTag::Outflow)) {
            return Err(Error::Validation {
                msg: "open-flow mesh needs inflow, no-slip and outflow edges (or the enclosed flag)".into(),
                edges: vec![],
            });
        }

        let mut mesh = Self { vertices, triangles, boundary, characteristic_length: 1.0, enclosed };
        let l = match characteristic_length {
            Some(l) => l,
            None if enclosed => mesh.diameter(),
            None => mesh.boundary_length(BoundaryTag::Inflow),
        };
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Geometry(format!("characteristic length must be positive, got {l}")));
        }
        mesh.characteristic_length = l;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn characteristic_length(&self) -> f64 {
        self.characteristic_length
    }

    pub fn enclosed(&self) -> bool {
        self.enclosed
    }

    pub fn with_characteristic_length(mut self, l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Geometry(format!("characteristic length must be positive, got {l}")));
        }
        self.characteristic_length = l;
        Ok(self)
    }

    pub fn geometry(&self, cell: usize) -> TriGeom {
        let [a, b, c] = self.triangles[cell];
        TriGeom::new([self.vertices[a], self.vertices[b], self.vertices[c]])
            .expect("validated triangles are positively oriented")
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| signed_area(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]))
            .sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        dist(lo, hi)
    }

    pub fn boundary_length(&self, tag: BoundaryTag) -> f64 {
        self.boundary
            .iter()
            .filter(|e| e.tag == tag)
            .map(|e| dist(self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]))
            .fold(0.0, |a, l| a + l)
    }

    pub fn tag_counts(&self) -> [(BoundaryTag, usize); 3] {
        let count = |t| self.boundary.iter().filter(|e| e.tag == t).count();
        [
            (BoundaryTag::Inflow, count(BoundaryTag::Inflow)),
            (BoundaryTag::NoSlip, count(BoundaryTag::NoSlip)),
            (BoundaryTag::Outflow, count(BoundaryTag::Outflow)),
        ]
    }

    /// Unique edges in order of first appearance over the triangles.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut seen = HashMap::new();
        let mut edges = Vec::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let key = edge_key(tri[k], tri[(k + 1) % 3]);
                seen.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
            }
        }
        edges
    }

    /// `V - E + F` over vertices, edges and triangles.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.edges().len() as i64 + self.n_triangles() as i64
    }

    /// Closed boundary loops as vertex cycles, outer loop first (largest
    /// enclosed area); the remaining loops are hole (building) outlines.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        // boundary edges oriented with the domain on the left, taken from the triangles
        let mut boundary_set = HashMap::new();
        for e in &self.boundary {
            boundary_set.insert(edge_key(e.vertices[0], e.vertices[1]), ());
        }
        let mut next: HashMap<usize, usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if boundary_set.contains_key(&edge_key(a, b)) {
                    next.insert(a, b);
                }
            }
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut visited = std::collections::HashSet::new();
        let mut loops = Vec::new();
        for s in starts {
            if visited.contains(&s) {
                continue;
            }
            let mut cycle = vec![s];
            visited.insert(s);
            let mut cur = next[&s];
            while cur != s {
                if !visited.insert(cur) {
                    break;
                }
                cycle.push(cur);
                cur = match next.get(&cur) {
                    Some(&n) => n,
                    None => break,
                };
            }
            loops.push(cycle);
        }
        let loop_area = |l: &Vec<usize>| {
            let n = l.len();
            (0..n)
                .map(|i| {
                    let (p, q) = (self.vertices[l[i]], self.vertices[l[(i + 1) % n]]);
                    p[0] * q[1] - q[0] * p[1]
                })
                .sum::<f64>()
                * 0.5
        };
        // outer loop is counter-clockwise (positive), holes clockwise
        loops.sort_by(|a, b| loop_area(b).partial_cmp(&loop_area(a)).unwrap());
        loops
    }

    /// Uniform midpoint refinement: every triangle is split into four. The
    /// existing vertices keep their indices; edge midpoints are appended.
    pub fn refine_uniform(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut boundary = Vec::with_capacity(2 * self.boundary.len());
        for e in &self.boundary {
            let [a, b] = e.vertices;
            let m = midpoint(a, b, &mut vertices);
            boundary.push(BoundaryEdge { vertices: [a, m], tag: e.tag });
            boundary.push(BoundaryEdge { vertices: [m, b], tag: e.tag });
        }
        Mesh {
            vertices,
            triangles,
            boundary,
            characteristic_length: self.characteristic_length,
            enclosed: self.enclosed,
        }
    }

    /// Content hash over the canonical text serialization.
    pub fn hash(&self) -> String {
        let text = write_mesh_text(self);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn unit_square() -> Mesh {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let triangles = vec![[0, 1, 2], [0, 2, 3]];
        let boundary = vec![
            BoundaryEdge { vertices: [3, 0], tag: BoundaryTag::Inflow },
            BoundaryEdge { vertices: [1, 2], tag: BoundaryTag::Outflow },
            BoundaryEdge { vertices: [0, 1], tag: BoundaryTag::NoSlip },
            BoundaryEdge { vertices: [2, 3], tag: BoundaryTag::NoSlip },
        ];
        Mesh::new(vertices, triangles, boundary, None, false).unwrap()
    }

    #[test]
    fn minimal_mesh() {
        let m = unit_square();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.boundary().len(), 4);
        assert_eq!(m.characteristic_length(), 1.0);
        assert!((m.area() - 1.0).abs() < 1e-15);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn clockwise_triangles_are_reoriented() {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let triangles = vec![[0, 2, 1], [0, 3, 2]];
        let boundary = vec![
            BoundaryEdge { vertices: [3, 0], tag: BoundaryTag::Inflow },
            BoundaryEdge { vertices: [1, 2], tag: BoundaryTag::Outflow },
            BoundaryEdge { vertices: [0, 1], tag: BoundaryTag::NoSlip },
            BoundaryEdge { vertices: [2, 3], tag: BoundaryTag::NoSlip },
        ];
        let m = Mesh::new(vertices, triangles, boundary, None, false).unwrap();
        for c in 0..m.n_triangles() {
            assert!(m.geometry(c).area > 0.0);
        }
    }

    #[test]
    fn untagged_edges_are_listed() {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let triangles = vec![[0, 1, 2], [0, 2, 3]];
        let boundary = vec![
            BoundaryEdge { vertices: [3, 0], tag: BoundaryTag::Inflow },
            BoundaryEdge { vertices: [1, 2], tag: BoundaryTag::Outflow },
        ];
        match Mesh::new(vertices, triangles, boundary, None, false) {
            Err(Error::Validation { edges, .. }) => assert_eq!(edges, vec![[0, 1], [2, 3]]),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn interior_edge_cannot_be_tagged() {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let triangles = vec![[0, 1, 2], [0, 2, 3]];
        let mut boundary = unit_square().boundary().to_vec();
        boundary.push(BoundaryEdge { vertices: [0, 2], tag: BoundaryTag::NoSlip });
        assert!(matches!(
            Mesh::new(vertices, triangles, boundary, None, false),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn refinement_quadruples_and_keeps_vertices() {
        let m = unit_square();
        let r = m.refine_uniform();
        assert_eq!(r.n_triangles(), 8);
        assert_eq!(&r.vertices()[..4], m.vertices());
        assert_eq!(r.boundary().len(), 8);
        assert!((r.area() - 1.0).abs() < 1e-15);
        assert_eq!(r.euler_characteristic(), 1);
        // revalidate through the public constructor
        Mesh::new(r.vertices.clone(), r.triangles.clone(), r.boundary.clone(), None, false).unwrap();
    }

    #[test]
    fn structured_grid_counts() {
        let n = 8;
        let m = unit_square_grid(n).unwrap();
        assert_eq!(m.n_vertices(), (n + 1) * (n + 1));
        assert_eq!(m.n_triangles(), 2 * n * n);
        assert_eq!(m.edges().len(), m.n_vertices() + m.n_triangles() - 1);
    }
}
