//! JSON envelopes. Nodal arrays are base64 (standard alphabet, padded) of
//! the little-endian IEEE-754 binary64 values, in vertex order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use windrom::uq::{NodeHistogram, SampleLog, UncertaintySpec, UqResult};
use windrom::{Error, Mesh, ParameterPoint, Result};

use crate::engine::{Engine, ModelKind};

pub const ENCODING: &str = "base64-f64le";

pub fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| Error::invalid(format!("invalid base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid(format!("payload of {} bytes is not a whole number of f64 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Wind,
    Concentration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindField {
    pub ux: String,
    pub uy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeField {
    pub time: f64,
    pub values: String,
}

/// Response of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatePayload {
    pub field: Field,
    pub model: ModelKind,
    pub mesh_hash: String,
    pub artifact_hash: String,
    pub w_i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<f64>,
    pub extrapolated: bool,
    pub encoding: String,
    pub n_vertices: usize,
    /// Smallest and largest value (speed for wind fields).
    pub range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<WindField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<Vec<TimeField>>,
}

fn range(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
}

impl EvaluatePayload {
    pub(crate) fn header(engine: &Engine, kind: ModelKind, mu: &ParameterPoint, field: Field, extrapolated: bool) -> Self {
        Self {
            field,
            model: kind,
            mesh_hash: engine.mesh_hash().to_string(),
            artifact_hash: engine.artifact_hash(kind).unwrap_or_default().to_string(),
            w_i: mu.w_i,
            w_d: mu.w_d,
            extrapolated,
            encoding: ENCODING.into(),
            n_vertices: engine.mesh().n_vertices(),
            range: [0.0, 0.0],
            wind: None,
            concentration: None,
        }
    }

    pub(crate) fn with_wind(self, ux: &[f64], uy: &[f64]) -> Self {
        Self {
            range: range(ux.iter().zip(uy).map(|(x, y)| x.hypot(*y))),
            wind: Some(WindField { ux: encode_f64(ux), uy: encode_f64(uy) }),
            ..self
        }
    }

    pub(crate) fn with_concentration(self, fields: &[(f64, &[f64])]) -> Self {
        Self {
            range: range(fields.iter().flat_map(|(_, c)| c.iter().copied())),
            concentration: Some(fields.iter().map(|(t, c)| TimeField { time: *t, values: encode_f64(c) }).collect()),
            ..self
        }
    }

    /// Decoded `(ux, uy)` vertex velocities.
    pub fn wind_values(&self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        self.wind.as_ref().map(|w| Ok((decode_f64(&w.ux)?, decode_f64(&w.uy)?))).transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsField {
    pub time: f64,
    pub min: String,
    pub mean: String,
    pub max: String,
    pub variance: String,
}

/// Monte Carlo summary; the service response and the `result` of the CLI manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqPayload {
    pub spec: UncertaintySpec,
    pub model: ModelKind,
    pub mesh_hash: String,
    pub artifact_hash: String,
    pub encoding: String,
    pub n_vertices: usize,
    pub successful: usize,
    pub failures: usize,
    pub fields: Vec<StatsField>,
    pub histogram: NodeHistogram,
    /// Coordinates of the histogram node.
    pub histogram_position: [f64; 2],
    pub parameters: Vec<SampleLog>,
}

impl UqPayload {
    pub fn new(engine: &Engine, kind: ModelKind, r: &UqResult) -> Self {
        Self {
            spec: r.spec,
            model: kind,
            mesh_hash: engine.mesh_hash().to_string(),
            artifact_hash: engine.artifact_hash(kind).unwrap_or_default().to_string(),
            encoding: ENCODING.into(),
            n_vertices: engine.mesh().n_vertices(),
            successful: r.samples.len() - r.failures,
            failures: r.failures,
            fields: r
                .stats
                .iter()
                .map(|s| StatsField {
                    time: s.time,
                    min: encode_f64(&s.min),
                    mean: encode_f64(&s.mean),
                    max: encode_f64(&s.max),
                    variance: encode_f64(&s.variance),
                })
                .collect(),
            histogram: r.histogram.clone(),
            histogram_position: engine.mesh().vertices()[r.histogram.node],
            parameters: r.samples.clone(),
        }
    }
}

/// Geometry for client rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshPayload {
    pub mesh_hash: String,
    pub encoding: String,
    pub n_vertices: usize,
    /// Interleaved `x0, y0, x1, y1, …`.
    pub vertices: String,
    pub triangles: Vec<[usize; 3]>,
    /// Outer boundary loop as vertex ids.
    pub outer: Vec<usize>,
    /// Building outlines.
    pub holes: Vec<Vec<usize>>,
}

impl MeshPayload {
    pub fn new(mesh: &Mesh, hash: &str) -> Self {
        let xy: Vec<f64> = mesh.vertices().iter().flat_map(|p| [p[0], p[1]]).collect();
        let mut loops = mesh.boundary_loops().into_iter();
        Self {
            mesh_hash: hash.to_string(),
            encoding: ENCODING.into(),
            n_vertices: mesh.n_vertices(),
            vertices: encode_f64(&xy),
            triangles: mesh.triangles().to_vec(),
            outer: loops.next().unwrap_or_default(),
            holes: loops.collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_is_little_endian_base64() {
        // 1.0 = 0x3FF0000000000000
        assert_eq!(encode_f64(&[1.0]), "AAAAAAAA8D8=");
        let v = vec![0.0, -2.5, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        let back = decode_f64(&encode_f64(&v)).unwrap();
        assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(decode_f64("AAAA").is_err());
        assert!(decode_f64("not base64!").is_err());
        assert_eq!(decode_f64("").unwrap(), Vec::<f64>::new());
    }
}
