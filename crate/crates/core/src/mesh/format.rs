//! Mesh file formats: the native text format and Gmsh MSH 2.2 ASCII import.
//!
//! Native grammar (one record per line, `#` starts a comment, blank lines
//! are skipped):
//!
//! ```text
//! windrom-mesh 1
//! characteristic_length <float> | auto
//! enclosed 0 | 1
//! vertices <n>
//! <x> <y>                 n lines
//! triangles <m>
//! <a> <b> <c>             m lines, zero-based vertex indices
//! edges <k>
//! <a> <b> <tag>           k lines, tag in {inflow, noslip, outflow}
//! end
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{BoundaryEdge, BoundaryTag, Mesh};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Text,
    Gmsh,
}

impl MeshFormat {
    /// Guesses the format from a file extension (`.msh` is Gmsh).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("msh") => MeshFormat::Gmsh,
            _ => MeshFormat::Text,
        }
    }
}

impl FromStr for MeshFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "windrom" => Ok(MeshFormat::Text),
            "gmsh" | "msh" | "msh2" => Ok(MeshFormat::Gmsh),
            _ => Err(Error::Invalid(format!("unknown mesh format '{s}'"))),
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::Text => parse_mesh_text(&text),
        MeshFormat::Gmsh => parse_gmsh(&text),
    }
}

pub fn write_mesh_text(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "windrom-mesh 1");
    let _ = writeln!(s, "characteristic_length {}", mesh.characteristic_length());
    let _ = writeln!(s, "enclosed {}", mesh.enclosed() as u8);
    let _ = writeln!(s, "vertices {}", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {}", p[0], p[1]);
    }
    let _ = writeln!(s, "triangles {}", mesh.n_triangles());
    for t in mesh.triangles() {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "edges {}", mesh.boundary().len());
    for e in mesh.boundary() {
        let _ = writeln!(s, "{} {} {}", e.vertices[0], e.vertices[1], e.tag.as_str());
    }
    let _ = writeln!(s, "end");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), last: 0 }
    }

    /// Next non-empty record with comments stripped, split into fields.
    fn next_record(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            self.last = i + 1;
            if !line.is_empty() {
                return Ok((i + 1, line.split_whitespace().collect()));
            }
        }
        Err(Error::Format { line: self.last + 1, msg: "unexpected end of file".into() })
    }

    fn keyword(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, f) = self.next_record()?;
        if f[0] != key || f.len() != 2 {
            return Err(Error::Format { line, msg: format!("expected '{key} <value>'") });
        }
        Ok((line, f))
    }
}

fn num<T: FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format { line, msg: format!("invalid {what} '{s}'") })
}

pub fn parse_mesh_text(text: &str) -> Result<Mesh> {
    let mut lines = Lines::new(text);
    let (line, header) = lines.next_record()?;
    if header != ["windrom-mesh", "1"] {
        return Err(Error::Format { line, msg: "expected header 'windrom-mesh 1'".into() });
    }
    let (line, f) = lines.keyword("characteristic_length")?;
    let length = match f[1] {
        "auto" => None,
        v => Some(num::<f64>(v, line, "characteristic length")?),
    };
    let (line, f) = lines.keyword("enclosed")?;
    let enclosed = match f[1] {
        "0" => false,
        "1" => true,
        v => return Err(Error::Format { line, msg: format!("enclosed flag must be 0 or 1, got '{v}'") }),
    };

    let (line, f) = lines.keyword("vertices")?;
    let nv: usize = num(f[1], line, "vertex count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, f) = lines.next_record()?;
        if f.len() != 2 {
            return Err(Error::Format { line, msg: "vertex line needs 2 coordinates".into() });
        }
        vertices.push([num(f[0], line, "coordinate")?, num(f[1], line, "coordinate")?]);
    }

    let (line, f) = lines.keyword("triangles")?;
    let nt: usize = num(f[1], line, "triangle count")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (line, f) = lines.next_record()?;
        if f.len() != 3 {
            return Err(Error::Format { line, msg: "triangle line needs 3 vertex indices".into() });
        }
        let mut t = [0usize; 3];
        for k in 0..3 {
            t[k] = num(f[k], line, "vertex index")?;
            if t[k] >= nv {
                return Err(Error::Format { line, msg: format!("vertex index {} out of range", t[k]) });
            }
        }
        triangles.push(t);
    }

    let (line, f) = lines.keyword("edges")?;
    let ne: usize = num(f[1], line, "edge count")?;
    let mut boundary = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (line, f) = lines.next_record()?;
        if f.len() != 3 {
            return Err(Error::Format { line, msg: "edge line needs 2 vertex indices and a tag".into() });
        }
        let a: usize = num(f[0], line, "vertex index")?;
        let b: usize = num(f[1], line, "vertex index")?;
        if a >= nv || b >= nv {
            return Err(Error::Format { line, msg: "edge vertex index out of range".into() });
        }
        let tag = BoundaryTag::parse(f[2])
            .ok_or_else(|| Error::Format { line, msg: format!("unknown boundary tag '{}'", f[2]) })?;
        boundary.push(BoundaryEdge { vertices: [a, b], tag });
    }
    let (line, f) = lines.next_record()?;
    if f != ["end"] {
        return Err(Error::Format { line, msg: "expected 'end'".into() });
    }
    Mesh::new(vertices, triangles, boundary, length, enclosed)
}

/// Imports a Gmsh MSH 2.2 ASCII file.
///
/// Triangles (element type 2) form the mesh; line elements (type 1) become
/// boundary edges. The tag of a line comes from the name of its physical
/// group (containing `inflow`, `outflow`, `noslip`, `wall` or `building`), or
/// from its numeric physical id (1 inflow, 2 no-slip, 3 outflow) when the
/// group is unnamed. A mesh without outflow edges is read as enclosed.
pub fn parse_gmsh(text: &str) -> Result<Mesh> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut names: HashMap<i64, String> = HashMap::new();
    let mut nodes: HashMap<i64, [f64; 2]> = HashMap::new();
    let mut tris: Vec<[i64; 3]> = Vec::new();
    let mut segs: Vec<(usize, [i64; 2], i64)> = Vec::new();
    let mut saw_format = false;
    let err = |line: usize, msg: &str| Error::Format { line: line + 1, msg: msg.to_string() };

    while i < lines.len() {
        let l = lines[i].trim();
        match l {
            "$MeshFormat" => {
                let v: Vec<&str> = lines.get(i + 1).ok_or_else(|| err(i, "truncated header"))?.split_whitespace().collect();
                if v.first().map(|s| s.starts_with('2')) != Some(true) || v.get(1) != Some(&"0") {
                    return Err(err(i + 1, "only MSH 2.x ASCII is supported"));
                }
                saw_format = true;
                i += 2;
            }
            "$PhysicalNames" => {
                let n: usize = num(lines.get(i + 1).unwrap_or(&"").trim(), i + 2, "count")?;
                for k in 0..n {
                    let li = i + 2 + k;
                    let l = lines.get(li).ok_or_else(|| err(li, "truncated physical names"))?;
                    let mut parts = l.splitn(3, char::is_whitespace);
                    let _dim = parts.next();
                    let tag: i64 = num(parts.next().unwrap_or(""), li + 1, "physical tag")?;
                    let name = parts.next().unwrap_or("").trim().trim_matches('"').to_string();
                    names.insert(tag, name);
                }
                i += 2 + n;
            }
            "$Nodes" => {
                let n: usize = num(lines.get(i + 1).unwrap_or(&"").trim(), i + 2, "node count")?;
                for k in 0..n {
                    let li = i + 2 + k;
                    let f: Vec<&str> =
                        lines.get(li).ok_or_else(|| err(li, "truncated node list"))?.split_whitespace().collect();
                    if f.len() < 3 {
                        return Err(err(li, "node line needs id x y [z]"));
                    }
                    nodes.insert(num(f[0], li + 1, "node id")?, [num(f[1], li + 1, "x")?, num(f[2], li + 1, "y")?]);
                }
                i += 2 + n;
            }
            "$Elements" => {
                let n: usize = num(lines.get(i + 1).unwrap_or(&"").trim(), i + 2, "element count")?;
                for k in 0..n {
                    let li = i + 2 + k;
                    let f: Vec<i64> = lines
                        .get(li)
                        .ok_or_else(|| err(li, "truncated element list"))?
                        .split_whitespace()
                        .map(|s| num(s, li + 1, "integer"))
                        .collect::<Result<_>>()?;
                    if f.len() < 3 {
                        return Err(err(li, "malformed element line"));
                    }
                    let (ty, ntags) = (f[1], f[2] as usize);
                    let phys = if ntags > 0 { f.get(3).copied().unwrap_or(0) } else { 0 };
                    let conn = &f[(3 + ntags).min(f.len())..];
                    match ty {
                        1 if conn.len() == 2 => segs.push((li + 1, [conn[0], conn[1]], phys)),
                        2 if conn.len() == 3 => tris.push([conn[0], conn[1], conn[2]]),
                        1 | 2 => return Err(err(li, "wrong node count for element")),
                        15 => {}
                        _ => return Err(err(li, &format!("unsupported element type {ty} (linear triangles only)"))),
                    }
                }
                i += 2 + n;
            }
            _ => i += 1,
        }
    }
    if !saw_format {
        return Err(Error::Format { line: 1, msg: "missing $MeshFormat section".into() });
    }

    let mut renumber: HashMap<i64, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(tris.len());
    for t in &tris {
        let mut out = [0usize; 3];
        for k in 0..3 {
            let p = *nodes.get(&t[k]).ok_or_else(|| Error::Format { line: 0, msg: format!("unknown node {}", t[k]) })?;
            out[k] = *renumber.entry(t[k]).or_insert_with(|| {
                vertices.push(p);
                vertices.len() - 1
            });
        }
        triangles.push(out);
    }
    let mut boundary = Vec::with_capacity(segs.len());
    for (line, s, phys) in segs {
        let tag = match names.get(&phys) {
            Some(name) => tag_from_name(name),
            None => match phys {
                1 => Some(BoundaryTag::Inflow),
                2 => Some(BoundaryTag::NoSlip),
                3 => Some(BoundaryTag::Outflow),
                _ => None,
            },
        }
        .ok_or_else(|| Error::Format { line, msg: format!("cannot map physical group {phys} to a boundary tag") })?;
        let a = *renumber.get(&s[0]).ok_or_else(|| Error::Format { line, msg: "edge node not on a triangle".into() })?;
        let b = *renumber.get(&s[1]).ok_or_else(|| Error::Format { line, msg: "edge node not on a triangle".into() })?;
        boundary.push(BoundaryEdge { vertices: [a, b], tag });
    }
    let enclosed = !boundary.iter().any(|e| e.tag == BoundaryTag::Outflow);
    Mesh::new(vertices, triangles, boundary, None, enclosed)
}

fn tag_from_name(name: &str) -> Option<BoundaryTag> {
    let n = name.to_ascii_lowercase();
    if n.contains("inflow") || n.contains("inlet") {
        Some(BoundaryTag::Inflow)
    } else if n.contains("outflow") || n.contains("outlet") {
        Some(BoundaryTag::Outflow)
    } else if n.contains("noslip") || n.contains("no-slip") || n.contains("wall") || n.contains("building") {
        Some(BoundaryTag::NoSlip)
    } else {
        None
    }
}
