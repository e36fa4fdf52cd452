//! Comparison studies of the reduced models against the full-order solver.
//!
//! A study solves the training and test snapshots once, trains every
//! requested method on the same [`crate::pod::SnapshotSet`] and records one
//! [`PointRecord`] per method, basis size and test point. Summaries and plots
//! are always derived from that raw table.

mod metrics;
mod plot;
mod report;
mod study;

pub use metrics::{clock_granularity, max_abs_velocity_error, measure_speedup, median_time, relative_l2_error, Speedup, Stats};
pub use plot::{charts, Chart, Series};
pub use report::{PointRecord, ReportMeta, StudyKind, StudyReport, SummaryRow, TrainingInfo};
pub use study::{
    run_comparison, run_data_study, run_extrapolation_study, Method, ParameterDomain, Placement, SamplePlan, StudyConfig,
};
