//! Monte Carlo propagation of inflow uncertainty through a reduced wind
//! model and the full-order transport solver.
//!
//! Parameters are drawn sequentially from one seeded stream, so the draws
//! depend only on the specification. Samples are then solved in fixed-size
//! chunks whose accumulators are merged in chunk order, which keeps the
//! statistics independent of the number of worker threads.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fom_ad::{solve_ad_recording, AdProblem};
use crate::fom_ins::{ParameterBounds, ParameterPoint};
use crate::rom_podg::PodgArtifact;
use crate::rom_podi::PodiArtifact;
use crate::{Error, Result};

/// Samples solved sequentially by one worker before merging.
const CHUNK: usize = 8;

/// Uniform distribution on `[mean − half_width, mean + half_width]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Uniform {
    pub mean: f64,
    pub half_width: f64,
}

impl Uniform {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x: f64 = rng.random_range(-1.0..=1.0);
        self.mean + self.half_width * x
    }
}

/// What to do with a draw outside the model's training box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfBounds {
    /// Draw again, up to 1000 times per sample.
    #[default]
    Redraw,
    /// Keep the draw and mark the sample as extrapolated.
    Flag,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySpec {
    pub w_i: Uniform,
    /// Wind direction [deg]; draws are wrapped into `[0, 360)`.
    pub w_d: Option<Uniform>,
    pub samples: usize,
    pub seed: u64,
    pub out_of_bounds: OutOfBounds,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self {
            w_i: Uniform { mean: 4.0, half_width: 0.2 },
            w_d: Some(Uniform { mean: 97.0, half_width: 10.0 }),
            samples: 5000,
            seed: 0,
            out_of_bounds: OutOfBounds::Redraw,
        }
    }
}

impl UncertaintySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |u: &Uniform| u.mean.is_finite() && u.half_width.is_finite() && u.half_width >= 0.0;
        if !ok(&self.w_i) || self.w_d.as_ref().is_some_and(|u| !ok(u)) {
            return Err(Error::invalid("distribution means must be finite and half-widths non-negative"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("the sample count must be at least 1"));
        }
        if self.w_i.mean - self.w_i.half_width < 0.0 {
            return Err(Error::invalid("wind speed distribution reaches negative values"));
        }
        Ok(())
    }

    /// The parameter draws, in sample order.
    pub fn draws(&self, bounds: Option<&ParameterBounds>) -> Result<Vec<SampleLog>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|index| {
                let mut redraws = 0;
                loop {
                    let w_i = self.w_i.draw(&mut rng);
                    let mu = match &self.w_d {
                        Some(d) => ParameterPoint::wind(w_i, d.draw(&mut rng).rem_euclid(360.0) % 360.0),
                        None => ParameterPoint::speed(w_i),
                    };
                    let inside = bounds.is_none_or(|b| b.contains(&mu));
                    if inside || self.out_of_bounds == OutOfBounds::Flag {
                        return Ok(SampleLog { index, mu, redraws, extrapolated: !inside, failure: None });
                    }
                    redraws += 1;
                    if redraws >= 1000 {
                        return Err(Error::invalid(format!("sample {index}: 1000 draws fell outside the model bounds")));
                    }
                }
            })
            .collect()
    }
}

/// Per-sample parameter record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLog {
    pub index: usize,
    pub mu: ParameterPoint,
    /// Draws rejected before this one.
    pub redraws: usize,
    pub extrapolated: bool,
    pub failure: Option<String>,
}

/// Reduced wind models usable as Monte Carlo surrogates.
pub trait WindModel: Sync {
    fn bounds(&self) -> &ParameterBounds;
    /// Full-order velocity vector at `mu`.
    fn wind(&self, mu: &ParameterPoint) -> Result<Vec<f64>>;
}

impl WindModel for PodiArtifact {
    fn bounds(&self) -> &ParameterBounds {
        &self.bounds
    }

    fn wind(&self, mu: &ParameterPoint) -> Result<Vec<f64>> {
        Ok(self.evaluate(mu)?.u)
    }
}

impl WindModel for PodgArtifact {
    fn bounds(&self) -> &ParameterBounds {
        &self.bounds
    }

    fn wind(&self, mu: &ParameterPoint) -> Result<Vec<f64>> {
        Ok(self.evaluate(mu)?.1)
    }
}

/// Streaming nodal count, mean, sum of squared deviations, min and max.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    pub count: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Accumulator {
    pub fn new(n: usize) -> Self {
        Self { count: 0, mean: vec![0.0; n], m2: vec![0.0; n], min: vec![f64::INFINITY; n], max: vec![f64::NEG_INFINITY; n] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for (i, &v) in x.iter().enumerate() {
            let d = v - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (v - self.mean[i]);
            self.min[i] = self.min[i].min(v);
            self.max[i] = self.max[i].max(v);
        }
    }

    /// Combines two disjoint sample sets.
    pub fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
        }
        self.count += other.count;
    }

    /// Sample variance with the `n − 1` normalization; zero for a single sample.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|m| (m / (self.count - 1) as f64).max(0.0)).collect()
    }

    /// Mean clamped into `[min, max]` against round-off.
    fn bounded_mean(&self) -> Vec<f64> {
        self.mean.iter().zip(self.min.iter().zip(&self.max)).map(|(m, (lo, hi))| m.clamp(*lo, *hi)).collect()
    }
}

/// Nodal statistics at one output time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub time: f64,
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Sample distribution at the node of largest variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeHistogram {
    pub time: f64,
    pub node: usize,
    /// All variances are zero; the node is the tie-break choice.
    pub degenerate: bool,
    /// Values of the successful samples in sample order.
    pub values: Vec<f64>,
    pub bins: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqResult {
    pub spec: UncertaintySpec,
    pub stats: Vec<TimeStats>,
    pub histogram: NodeHistogram,
    pub samples: Vec<SampleLog>,
    pub failures: usize,
    /// Per-sample fields `[sample][time][node]`, kept only on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqOptions {
    /// Retain every sample field (memory grows with samples × times × nodes).
    pub keep_samples: bool,
    pub bins: usize,
    /// Time of the histogram; the last output time when `None`.
    pub histogram_time: Option<f64>,
}

impl Default for UqOptions {
    fn default() -> Self {
        Self { keep_samples: false, bins: 20, histogram_time: None }
    }
}

impl UqResult {
    pub fn at(&self, t: f64) -> Option<&TimeStats> {
        self.stats.iter().find(|s| (s.time - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

/// Argmax of the nodal variance at `t`, lowest id on ties, with a flag set
/// when every variance is zero.
pub fn highest_variance_node(result: &UqResult, t: f64) -> Result<(usize, bool)> {
    let s = result.at(t).ok_or_else(|| Error::invalid(format!("time {t} is not among the stored times")))?;
    Ok(argmax(&s.variance))
}

fn argmax(v: &[f64]) -> (usize, bool) {
    let (node, best) = v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) });
    (node, !(best > 0.0))
}

fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let Some(lo) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = values.iter().copied().fold(lo, f64::max);
    if !(hi > lo) {
        return vec![HistogramBin { lo, hi, count: values.len() }];
    }
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> =
        (0..bins).map(|k| HistogramBin { lo: lo + width * k as f64, hi: lo + width * (k + 1) as f64, count: 0 }).collect();
    out[bins - 1].hi = hi;
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        out[k].count += 1;
    }
    out
}

struct Chunk {
    acc: Vec<Accumulator>,
    /// `(sample index, field at the histogram time)` of successful samples.
    hist: Vec<(usize, Vec<f64>)>,
    kept: Vec<(usize, Vec<Vec<f64>>)>,
    failures: Vec<(usize, String)>,
}

/// Draws `spec.samples` parameters, evaluates the wind model, solves the
/// transport problem of `template` with that wind and accumulates nodal
/// statistics at `times`.
pub fn run_monte_carlo<M: WindModel>(
    model: &M,
    template: &AdProblem,
    spec: &UncertaintySpec,
    times: &[f64],
    opts: &UqOptions,
) -> Result<UqResult> {
    template.validate()?;
    if times.is_empty() {
        return Err(Error::invalid("at least one output time is required"));
    }
    let grid = template.times();
    // output times snap to the time grid of the transport solver
    let mut snapped: Vec<f64> = Vec::new();
    for &t in times {
        if !(t >= 0.0 && t <= template.t_end * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!("output time {t} outside [0, {}]", template.t_end)));
        }
        let g = grid.iter().copied().min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs())).unwrap();
        if !snapped.contains(&g) {
            snapped.push(g);
        }
    }
    snapped.sort_by(f64::total_cmp);
    let hist_time = match opts.histogram_time {
        Some(t) => *snapped
            .iter()
            .min_by(|a, b| (*a - t).abs().total_cmp(&(*b - t).abs()))
            .filter(|g| (*g - t).abs() <= template.dt)
            .ok_or_else(|| Error::invalid(format!("histogram time {t} is not an output time")))?,
        None => *snapped.last().unwrap(),
    };
    let hist_slot = snapped.iter().position(|&t| t == hist_time).unwrap();

    let mut samples = spec.draws(Some(model.bounds()))?;
    let n_nodes = template.mesh.n_vertices();
    let chunks: Vec<Chunk> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut c = Chunk {
                acc: vec![Accumulator::new(n_nodes); snapped.len()],
                hist: Vec::new(),
                kept: Vec::new(),
                failures: Vec::new(),
            };
            for s in chunk {
                match solve_sample(model, template, &s.mu, &snapped) {
                    Ok(fields) => {
                        for (a, f) in c.acc.iter_mut().zip(&fields) {
                            a.push(f);
                        }
                        c.hist.push((s.index, fields[hist_slot].clone()));
                        if opts.keep_samples {
                            c.kept.push((s.index, fields));
                        }
                    }
                    Err(e) => {
                        warn!("sample {} at {} failed: {e}", s.index, s.mu);
                        c.failures.push((s.index, e.to_string()));
                    }
                }
            }
            c
        })
        .collect();

    let mut acc = vec![Accumulator::new(n_nodes); snapped.len()];
    let mut hist_fields = Vec::new();
    let mut kept = Vec::new();
    let mut failures = 0;
    for c in chunks {
        for (a, b) in acc.iter_mut().zip(&c.acc) {
            a.merge(b);
        }
        hist_fields.extend(c.hist);
        kept.extend(c.kept);
        for (i, msg) in c.failures {
            samples[i].failure = Some(msg);
            failures += 1;
        }
    }
    if acc[0].count == 0 {
        return Err(Error::invalid("every Monte Carlo sample failed"));
    }
    let stats: Vec<TimeStats> = snapped
        .iter()
        .zip(&acc)
        .map(|(&time, a)| TimeStats { time, min: a.min.clone(), mean: a.bounded_mean(), max: a.max.clone(), variance: a.variance() })
        .collect();
    let (node, degenerate) = argmax(&stats[hist_slot].variance);
    let values: Vec<f64> = hist_fields.iter().map(|(_, f)| f[node]).collect();
    let histogram = NodeHistogram { time: hist_time, node, degenerate, bins: histogram(&values, opts.bins), values };
    Ok(UqResult {
        spec: *spec,
        stats,
        histogram,
        samples,
        failures,
        fields: opts.keep_samples.then(|| kept.into_iter().map(|(_, f)| f).collect()),
    })
}

fn solve_sample<M: WindModel>(model: &M, template: &AdProblem, mu: &ParameterPoint, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let wind = model.wind(mu)?;
    let problem = AdProblem { wind, ..template.clone() };
    let series = solve_ad_recording(&problem, Some(times))?;
    times
        .iter()
        .map(|&t| series.at(t).map(<[f64]>::to_vec).ok_or_else(|| Error::invalid(format!("time {t} missing from the transport output"))))
        .collect()
}
