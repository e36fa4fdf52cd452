//! Study reports: the raw per-point table, derived summaries and text/JSON output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::Stats;
use super::study::{Method, StudyConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Comparison,
    DataStudy,
    Extrapolation,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Comparison => "comparison",
            StudyKind::DataStudy => "data-study",
            StudyKind::Extrapolation => "extrapolation",
        }
    }
}

/// One reduced evaluation at one test parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub method: Method,
    pub n_snapshots: usize,
    /// Requested basis size.
    pub n_rb: usize,
    /// Velocity POD modes actually used (the request limited by the snapshot rank).
    pub n_rb_used: usize,
    pub w_i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<f64>,
    pub extrapolated: bool,
    pub rel_error: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub iterations: Option<usize>,
    pub fom_seconds: Option<f64>,
    pub rom_seconds: Option<f64>,
    pub speedup: Option<f64>,
    /// Reason the evaluation produced no field.
    pub failure: Option<String>,
}

/// Ranks and hashes of one training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub n_snapshots: usize,
    pub snapshot_hash: String,
    pub velocity_rank: usize,
    pub pressure_rank: Option<usize>,
    pub deim_size: Option<usize>,
    /// Fewer snapshots than the largest requested basis.
    pub undersampled: bool,
    pub snapshot_seconds: f64,
    pub offline_seconds: f64,
    /// Correlation eigenvalues divided by the largest one.
    pub eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub study: StudyKind,
    pub version: String,
    pub mesh_hash: String,
    pub nu: f64,
    pub velocity_dofs: usize,
    pub config: StudyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_counts: Option<Vec<usize>>,
    pub training: Vec<TrainingInfo>,
    /// Sampling is equidistant; no random numbers enter a study.
    pub seed: Option<u64>,
}

/// Per method, training-set size and basis size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n_snapshots: usize,
    pub n_rb: usize,
    pub n_rb_used: usize,
    pub points: usize,
    pub failures: usize,
    pub error: Option<Stats>,
    pub max_abs_error: Option<Stats>,
    pub speedup: Option<Stats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub meta: ReportMeta,
    pub records: Vec<PointRecord>,
}

impl StudyReport {
    /// Statistics grouped by `(method, n_snapshots, n_rb)` in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Method, usize, usize)> = Vec::new();
        for r in &self.records {
            let k = (r.method, r.n_snapshots, r.n_rb);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(method, n_snapshots, n_rb)| {
                let rows: Vec<&PointRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.method == method && r.n_snapshots == n_snapshots && r.n_rb == n_rb)
                    .collect();
                let collect = |f: fn(&PointRecord) -> Option<f64>| -> Vec<f64> { rows.iter().filter_map(|r| f(r)).collect() };
                SummaryRow {
                    method,
                    n_snapshots,
                    n_rb,
                    n_rb_used: rows[0].n_rb_used,
                    points: rows.len(),
                    failures: rows.iter().filter(|r| r.failure.is_some()).count(),
                    error: Stats::of(&collect(|r| r.rel_error)),
                    max_abs_error: Stats::of(&collect(|r| r.max_abs_error)),
                    speedup: Stats::of(&collect(|r| r.speedup)),
                }
            })
            .collect()
    }

    /// Summary rows of one method and training-set size, ordered by basis size.
    pub fn curve(&self, method: Method, n_snapshots: usize) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> =
            self.summary().into_iter().filter(|r| r.method == method && r.n_snapshots == n_snapshots).collect();
        rows.sort_by_key(|r| r.n_rb);
        rows
    }

    pub fn failures(&self) -> impl Iterator<Item = &PointRecord> {
        self.records.iter().filter(|r| r.failure.is_some())
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = Vec::new();
        for r in &self.records {
            if !m.contains(&r.method) {
                m.push(r.method);
            }
        }
        m
    }

    pub fn snapshot_counts(&self) -> Vec<usize> {
        self.meta.training.iter().map(|t| t.n_snapshots).collect()
    }

    /// The per-point table without timing columns, for reproducibility checks.
    pub fn error_table(&self) -> Vec<PointRecord> {
        self.records
            .iter()
            .map(|r| PointRecord { fom_seconds: None, rom_seconds: None, speedup: None, ..r.clone() })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Container(e.to_string()))?;
        v["summary"] = serde_json::to_value(self.summary()).map_err(|e| Error::Container(e.to_string()))?;
        serde_json::to_string_pretty(&v).map_err(|e| Error::Container(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Container(e.to_string()))
    }

    /// Self-describing text: `#` header lines, the summary table and the raw table,
    /// both tab-separated with a column header.
    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "# study: {}", m.study.as_str());
        let _ = writeln!(s, "# version: {}", m.version);
        let _ = writeln!(s, "# mesh_hash: {}", m.mesh_hash);
        let _ = writeln!(s, "# nu: {}", m.nu);
        let _ = writeln!(s, "# velocity_dofs: {}", m.velocity_dofs);
        let _ = writeln!(s, "# domain_w_i: {:?}", m.config.domain.w_i);
        if let Some(d) = m.config.domain.w_d {
            let _ = writeln!(s, "# domain_w_d: {d:?}");
        }
        if let Some(r) = m.train_range {
            let _ = writeln!(s, "# train_range: {r:?}");
        }
        let _ = writeln!(s, "# sizes: {:?}", m.config.sizes);
        let _ = writeln!(s, "# deim_size: {}", m.config.deim_size);
        let _ = writeln!(s, "# repetitions: {}", m.config.repetitions);
        for t in &m.training {
            let _ = writeln!(
                s,
                "# training n_s={} hash={} velocity_rank={} pressure_rank={} deim={} undersampled={} snapshots={:.3}s offline={:.3}s",
                t.n_snapshots,
                t.snapshot_hash,
                t.velocity_rank,
                opt(t.pressure_rank),
                opt(t.deim_size),
                t.undersampled,
                t.snapshot_seconds,
                t.offline_seconds
            );
        }
        let _ = writeln!(s, "\n[summary]");
        let _ = writeln!(
            s,
            "method\tn_s\tn_rb\tn_rb_used\tpoints\tfailures\terr_min\terr_mean\terr_max\tmaxabs_min\tmaxabs_mean\tmaxabs_max\tspeedup_min\tspeedup_mean\tspeedup_max"
        );
        for r in self.summary() {
            let st = |x: Option<Stats>| match x {
                Some(x) => format!("{:.6e}\t{:.6e}\t{:.6e}", x.min, x.mean, x.max),
                None => "-\t-\t-".into(),
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method.as_str(),
                r.n_snapshots,
                r.n_rb,
                r.n_rb_used,
                r.points,
                r.failures,
                st(r.error),
                st(r.max_abs_error),
                st(r.speedup)
            );
        }
        let _ = writeln!(s, "\n[points]");
        let _ = writeln!(
            s,
            "method\tn_s\tn_rb\tn_rb_used\tw_i\tw_d\textrapolated\trel_error\tmax_abs_error\titerations\tfom_s\trom_s\tspeedup\tfailure"
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method.as_str(),
                r.n_snapshots,
                r.n_rb,
                r.n_rb_used,
                r.w_i,
                opt(r.w_d),
                r.extrapolated,
                opt_e(r.rel_error),
                opt_e(r.max_abs_error),
                opt(r.iterations),
                opt_e(r.fom_seconds),
                opt_e(r.rom_seconds),
                opt_e(r.speedup),
                r.failure.as_deref().unwrap_or("-")
            );
        }
        s
    }
}

fn opt<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map_or_else(|| "-".into(), |v| v.to_string())
}

fn opt_e(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}
