//! Structured generators: urban block layouts and plain rectangles.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BoundaryEdge, BoundaryTag, Mesh};
use crate::{Error, Result};

/// Side of the outer rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    South,
    East,
    North,
    West,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::South => Side::North,
            Side::North => Side::South,
            Side::East => Side::West,
            Side::West => Side::East,
        }
    }
}

/// A rectangle of `block_rows × block_cols` lots, each holding one centred
/// rectangular building separated from its neighbours by `street_width`.
///
/// Outer boundary convention: the `inflow` side is tagged Inflow, the
/// opposite side Outflow and the remaining two sides NoSlip. With `enclosed`
/// set, the whole outer boundary is tagged Inflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UrbanLayout {
    pub width: f64,
    pub height: f64,
    pub block_rows: usize,
    pub block_cols: usize,
    pub street_width: f64,
    pub refine_level: usize,
    /// Target edge length of the base grid before refinement.
    pub spacing: f64,
    pub inflow: Side,
    pub enclosed: bool,
}

impl Default for UrbanLayout {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            block_rows: 2,
            block_cols: 3,
            street_width: 200.0,
            refine_level: 1,
            spacing: 75.0,
            inflow: Side::South,
            enclosed: false,
        }
    }
}

/// Builds the mesh described by `layout`.
pub fn synth_urban_mesh(layout: &UrbanLayout) -> Result<Mesh> {
    let UrbanLayout { width, height, block_rows, block_cols, street_width, .. } = *layout;
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(Error::Geometry("domain extents must be positive".into()));
    }
    if block_rows == 0 || block_cols == 0 {
        return Err(Error::Geometry("block_rows and block_cols must be at least 1".into()));
    }
    if !(street_width > 0.0) {
        return Err(Error::Geometry("street_width must be positive".into()));
    }
    if !(layout.spacing > 0.0) {
        return Err(Error::Geometry("spacing must be positive".into()));
    }
    let lot_w = width / block_cols as f64;
    let lot_h = height / block_rows as f64;
    if street_width >= lot_w || street_width >= lot_h {
        return Err(Error::Geometry(format!(
            "street width {street_width} leaves no building in a {lot_w} × {lot_h} lot"
        )));
    }
    let half = 0.5 * street_width;
    let breaks = |n: usize, lot: f64| {
        let mut v = vec![0.0];
        for k in 0..n {
            v.push(k as f64 * lot + half);
            v.push((k + 1) as f64 * lot - half);
        }
        v.push(n as f64 * lot);
        v
    };
    let xb = breaks(block_cols, lot_w);
    let yb = breaks(block_rows, lot_h);
    let xs = subdivide(&xb, layout.spacing);
    let ys = subdivide(&yb, layout.spacing);

    let solid = |xc: f64, yc: f64| {
        let i = ((xc / lot_w) as usize).min(block_cols - 1);
        let j = ((yc / lot_h) as usize).min(block_rows - 1);
        let lx = xc - i as f64 * lot_w;
        let ly = yc - j as f64 * lot_h;
        lx > half && lx < lot_w - half && ly > half && ly < lot_h - half
    };
    let tags = outer_tags(layout.inflow, layout.enclosed);
    let base = grid_mesh(&xs, &ys, solid, tags, layout.enclosed)?;
    let mut mesh = base;
    for _ in 0..layout.refine_level {
        mesh = mesh.refine_uniform();
    }
    Ok(mesh)
}

/// Axis-aligned rectangle `[0, width] × [0, height]` split into `nx × ny`
/// quads with "/" diagonals. `tags` are given as `[south, east, north, west]`.
pub fn rectangle_mesh(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    tags: [BoundaryTag; 4],
    enclosed: bool,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 || !(width > 0.0) || !(height > 0.0) {
        return Err(Error::Geometry("rectangle needs positive extents and cell counts".into()));
    }
    let xs: Vec<f64> = (0..=nx).map(|i| width * i as f64 / nx as f64).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| height * j as f64 / ny as f64).collect();
    grid_mesh(&xs, &ys, |_, _| false, tags, enclosed)
}

/// Unit square `N × N` grid with the west side Inflow, east side Outflow and
/// south/north NoSlip.
pub fn unit_square_grid(n: usize) -> Result<Mesh> {
    use BoundaryTag::*;
    rectangle_mesh(1.0, 1.0, n, n, [NoSlip, Outflow, NoSlip, Inflow], false)
}

fn outer_tags(inflow: Side, enclosed: bool) -> [BoundaryTag; 4] {
    if enclosed {
        return [BoundaryTag::Inflow; 4];
    }
    let mut tags = [BoundaryTag::NoSlip; 4];
    let idx = |s: Side| match s {
        Side::South => 0,
        Side::East => 1,
        Side::North => 2,
        Side::West => 3,
    };
    tags[idx(inflow)] = BoundaryTag::Inflow;
    tags[idx(inflow.opposite())] = BoundaryTag::Outflow;
    tags
}

fn subdivide(breaks: &[f64], spacing: f64) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let n = ((len / spacing) - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(if k == n { w[1] } else { w[0] + len * k as f64 / n as f64 });
        }
    }
    out
}

/// Tensor grid on `xs × ys` with cells whose centre satisfies `solid` removed.
fn grid_mesh(
    xs: &[f64],
    ys: &[f64],
    solid: impl Fn(f64, f64) -> bool,
    tags: [BoundaryTag; 4],
    enclosed: bool,
) -> Result<Mesh> {
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let keep: Vec<bool> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| !solid(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])))
        .collect();
    let cell = |i: usize, j: usize| keep[j * nx + i];
    let cell_at = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && cell(i as usize, j as usize);

    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        *index.entry((i, j)).or_insert_with(|| {
            vertices.push([xs[i], ys[j]]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::new();
    let mut boundary = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !cell(i, j) {
                continue;
            }
            let ll = vid(i, j, &mut vertices);
            let lr = vid(i + 1, j, &mut vertices);
            let ur = vid(i + 1, j + 1, &mut vertices);
            let ul = vid(i, j + 1, &mut vertices);
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
            let (ii, jj) = (i as isize, j as isize);
            let sides = [
                (cell_at(ii, jj - 1), j == 0, [ll, lr], 0),
                (cell_at(ii + 1, jj), i + 1 == nx, [lr, ur], 1),
                (cell_at(ii, jj + 1), j + 1 == ny, [ur, ul], 2),
                (cell_at(ii - 1, jj), i == 0, [ul, ll], 3),
            ];
            for (neighbour, outer, edge, side) in sides {
                if !neighbour {
                    let tag = if outer { tags[side] } else { BoundaryTag::NoSlip };
                    boundary.push(BoundaryEdge { vertices: edge, tag });
                }
            }
        }
    }
    Mesh::new(vertices, triangles, boundary, None, enclosed)
}
