//! Reference-element machinery for affine triangles: quadrature, P1/P2 shape
//! functions and the local kernels shared by the full-order solvers and the
//! hyper-reduced online evaluation.
//!
//! Local P2 node order is the three vertices followed by the midpoints of
//! edges (0,1), (1,2), (2,0). Local velocity vectors are laid out as
//! `[ux_0..ux_5, uy_0..uy_5]`.

/// Degree-5 symmetric rule (7 points), exact for every integrand the solvers
/// build on affine P2/P1 elements. Barycentric coordinates and weights
/// normalized to unit area.
pub const QUAD_DEG5: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82; // (9 - 2√15)/21
    const B1: f64 = 0.470_142_064_105_115_1; // (6 + √15)/21
    const W1: f64 = 0.132_394_152_788_506_2; // (155 + √15)/1200
    const A2: f64 = 0.797_426_985_353_087_3; // (9 + 2√15)/21
    const B2: f64 = 0.101_286_507_323_456_3; // (6 - √15)/21
    const W2: f64 = 0.125_939_180_544_827_1; // (155 - √15)/1200
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

pub type Point = [f64; 2];

/// Geometry of an affine triangle.
#[derive(Clone, Copy, Debug)]
pub struct TriGeom {
    pub vertices: [Point; 3],
    pub area: f64,
    /// Constant gradients of the barycentric coordinates.
    pub grad_lambda: [Point; 3],
}

impl TriGeom {
    /// Returns `None` for degenerate or negatively oriented triangles.
    pub fn new(vertices: [Point; 3]) -> Option<Self> {
        let [p0, p1, p2] = vertices;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        if !(det > 0.0) {
            return None;
        }
        let inv = 1.0 / det;
        let grad_lambda = [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ];
        Some(Self { vertices, area: 0.5 * det, grad_lambda })
    }

    /// Longest edge length.
    pub fn diameter(&self) -> f64 {
        let [a, b, c] = self.vertices;
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    pub fn map(&self, l: [f64; 3]) -> Point {
        let [a, b, c] = self.vertices;
        [
            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        ]
    }

    pub fn centroid(&self) -> Point {
        self.map([1.0 / 3.0; 3])
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p2_gradients(l: [f64; 3], g: &[Point; 3]) -> [Point; 6] {
    let comb = |a: f64, ga: Point, b: f64, gb: Point| [4.0 * (a * gb[0] + b * ga[0]), 4.0 * (a * gb[1] + b * ga[1])];
    [
        [(4.0 * l[0] - 1.0) * g[0][0], (4.0 * l[0] - 1.0) * g[0][1]],
        [(4.0 * l[1] - 1.0) * g[1][0], (4.0 * l[1] - 1.0) * g[1][1]],
        [(4.0 * l[2] - 1.0) * g[2][0], (4.0 * l[2] - 1.0) * g[2][1]],
        comb(l[0], g[0], l[1], g[1]),
        comb(l[1], g[1], l[2], g[2]),
        comb(l[2], g[2], l[0], g[0]),
    ]
}

/// Values and gradients of the P2 basis at every point of [`QUAD_DEG5`].
#[derive(Clone, Debug)]
pub struct P2Tabulation {
    pub values: [[f64; 6]; 7],
    pub grads: [[Point; 6]; 7],
    pub weights: [f64; 7],
}

impl P2Tabulation {
    pub fn new(geom: &TriGeom) -> Self {
        let mut values = [[0.0; 6]; 7];
        let mut grads = [[[0.0; 2]; 6]; 7];
        let mut weights = [0.0; 7];
        for (q, (l, w)) in QUAD_DEG5.iter().enumerate() {
            values[q] = p2_values(*l);
            grads[q] = p2_gradients(*l, &geom.grad_lambda);
            weights[q] = w * geom.area;
        }
        Self { values, grads, weights }
    }
}

/// Velocity, and its gradient `du[c][d] = ∂u_c/∂x_d`, at quadrature point `q`.
#[inline]
pub fn velocity_at(tab: &P2Tabulation, q: usize, u_loc: &[f64; 12]) -> (Point, [[f64; 2]; 2]) {
    let mut u = [0.0; 2];
    let mut du = [[0.0; 2]; 2];
    for a in 0..6 {
        let phi = tab.values[q][a];
        let g = tab.grads[q][a];
        for c in 0..2 {
            let coef = u_loc[6 * c + a];
            u[c] += coef * phi;
            du[c][0] += coef * g[0];
            du[c][1] += coef * g[1];
        }
    }
    (u, du)
}

/// Local convection vector `N_i = ∫ (u·∇u)·φ_i` and, optionally, its Jacobian
/// `∂N_i/∂u_j = ∫ (φ_j·∇u + u·∇φ_j)·φ_i` for a P2 velocity.
pub fn convection_local(tab: &P2Tabulation, u_loc: &[f64; 12], jac: Option<&mut [[f64; 12]; 12]>) -> [f64; 12] {
    let mut n_loc = [0.0; 12];
    let mut jac = jac;
    if let Some(j) = jac.as_deref_mut() {
        *j = [[0.0; 12]; 12];
    }
    for q in 0..7 {
        let w = tab.weights[q];
        let (u, du) = velocity_at(tab, q, u_loc);
        let conv = [u[0] * du[0][0] + u[1] * du[0][1], u[0] * du[1][0] + u[1] * du[1][1]];
        let phi = &tab.values[q];
        for a in 0..6 {
            n_loc[a] += w * conv[0] * phi[a];
            n_loc[6 + a] += w * conv[1] * phi[a];
        }
        if let Some(j) = jac.as_deref_mut() {
            for b in 0..6 {
                let pb = phi[b];
                let gb = tab.grads[q][b];
                let adv = u[0] * gb[0] + u[1] * gb[1];
                for a in 0..6 {
                    let wa = w * phi[a];
                    // (δ·∇u)_c = δ_0 ∂_0 u_c + δ_1 ∂_1 u_c ; (u·∇δ)_c = adv δ_c
                    j[a][b] += wa * (pb * du[0][0] + adv);
                    j[a][6 + b] += wa * (pb * du[0][1]);
                    j[6 + a][b] += wa * (pb * du[1][0]);
                    j[6 + a][6 + b] += wa * (pb * du[1][1] + adv);
                }
            }
        }
    }
    n_loc
}

/// Picard convection matrix `C_ij = ∫ (w·∇φ_j) φ_i` for a frozen P2 velocity `w`,
/// one 6×6 block shared by both components.
pub fn convection_picard_local(tab: &P2Tabulation, w_loc: &[f64; 12]) -> [[f64; 6]; 6] {
    let mut c = [[0.0; 6]; 6];
    for q in 0..7 {
        let (u, _) = velocity_at(tab, q, w_loc);
        let w = tab.weights[q];
        for b in 0..6 {
            let gb = tab.grads[q][b];
            let adv = u[0] * gb[0] + u[1] * gb[1];
            for a in 0..6 {
                c[a][b] += w * tab.values[q][a] * adv;
            }
        }
    }
    c
}

/// P2 stiffness `∫ ∇φ_a·∇φ_b`.
pub fn p2_stiffness(tab: &P2Tabulation) -> [[f64; 6]; 6] {
    let mut k = [[0.0; 6]; 6];
    for q in 0..7 {
        let w = tab.weights[q];
        for a in 0..6 {
            for b in 0..6 {
                let (ga, gb) = (tab.grads[q][a], tab.grads[q][b]);
                k[a][b] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
            }
        }
    }
    k
}

/// P2 mass `∫ φ_a φ_b`.
pub fn p2_mass(tab: &P2Tabulation) -> [[f64; 6]; 6] {
    let mut m = [[0.0; 6]; 6];
    for q in 0..7 {
        let w = tab.weights[q];
        for a in 0..6 {
            for b in 0..6 {
                m[a][b] += w * tab.values[q][a] * tab.values[q][b];
            }
        }
    }
    m
}

/// Divergence block `B_kj = -∫ ψ_k ∇·φ_j` with ψ the P1 pressure basis,
/// columns in local velocity layout.
pub fn divergence_local(tab: &P2Tabulation) -> [[f64; 12]; 3] {
    let mut b = [[0.0; 12]; 3];
    for (q, (l, _)) in QUAD_DEG5.iter().enumerate() {
        let w = tab.weights[q];
        for k in 0..3 {
            for a in 0..6 {
                let g = tab.grads[q][a];
                b[k][a] -= w * l[k] * g[0];
                b[k][6 + a] -= w * l[k] * g[1];
            }
        }
    }
    b
}

/// Exact P1 mass matrix of a triangle.
pub fn p1_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// P1 stiffness `∫ ∇λ_a·∇λ_b`.
pub fn p1_stiffness(geom: &TriGeom) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let (ga, gb) = (geom.grad_lambda[a], geom.grad_lambda[b]);
            k[a][b] = geom.area * (ga[0] * gb[0] + ga[1] * gb[1]);
        }
    }
    k
}
