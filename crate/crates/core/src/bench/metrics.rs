//! Error norms, summary statistics and wall-clock timing.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::linalg::CsrMatrix;
use crate::{Error, Result};

/// `‖u_ref − u_approx‖ / ‖u_ref‖` in the inner product of `metric`
/// (Euclidean when `None`).
pub fn relative_l2_error(u_ref: &[f64], u_approx: &[f64], metric: Option<&CsrMatrix>) -> Result<f64> {
    if u_ref.len() != u_approx.len() {
        return Err(Error::Dimension { expected: u_ref.len(), got: u_approx.len() });
    }
    if let Some(m) = metric {
        if m.nrows() != u_ref.len() {
            return Err(Error::Dimension { expected: m.nrows(), got: u_ref.len() });
        }
    }
    let d: Vec<f64> = u_ref.iter().zip(u_approx).map(|(a, b)| a - b).collect();
    let norm2 = |x: &[f64]| match metric {
        Some(m) => m.bilinear(x, x),
        None => x.iter().map(|v| v * v).sum(),
    };
    let reference = norm2(u_ref);
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok((norm2(&d).max(0.0) / reference).sqrt())
}

/// Largest nodal velocity difference `max_n |u_ref(x_n) − u(x_n)|` for
/// component-blocked velocity vectors.
pub fn max_abs_velocity_error(u_ref: &[f64], u_approx: &[f64]) -> Result<f64> {
    if u_ref.len() != u_approx.len() || !u_ref.len().is_multiple_of(2) {
        return Err(Error::Dimension { expected: u_ref.len(), got: u_approx.len() });
    }
    let nn = u_ref.len() / 2;
    Ok((0..nn)
        .map(|n| (u_ref[n] - u_approx[n]).hypot(u_ref[nn + n] - u_approx[nn + n]))
        .fold(0.0, f64::max))
}

/// Minimum, mean and maximum of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (values.iter().sum::<f64>() / values.len() as f64).clamp(min, max);
        Some(Self { min, mean, max })
    }
}

/// Smallest observable step of [`Instant`].
pub fn clock_granularity() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..20 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

/// Median wall time of `action` over `reps` repetitions after one discarded
/// warm-up run. Actions faster than ten clock ticks are batched and the
/// batch time divided.
pub fn median_time<F: FnMut()>(mut action: F, reps: usize) -> Result<f64> {
    if reps == 0 {
        return Err(Error::invalid("timing needs at least one repetition"));
    }
    let t = Instant::now();
    action();
    let warm = t.elapsed();
    let floor = clock_granularity() * 10;
    let batch = if warm >= floor { 1 } else { (floor.as_secs_f64() / warm.as_secs_f64().max(1e-9)).ceil() as usize * 4 };
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..batch {
                action();
            }
            t.elapsed().as_secs_f64() / batch as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    Ok(if samples.len() % 2 == 1 { samples[mid] } else { 0.5 * (samples[mid - 1] + samples[mid]) })
}

/// Timings of a full-order and a reduced evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub fom_seconds: f64,
    pub rom_seconds: f64,
    pub ratio: f64,
}

/// Median FOM time over median ROM time, each from `reps ≥ 3` runs.
pub fn measure_speedup<F: FnMut(), R: FnMut()>(fom_solve: F, rom_eval: R, reps: usize) -> Result<Speedup> {
    if reps < 3 {
        return Err(Error::invalid(format!("speed-up needs at least 3 repetitions, got {reps}")));
    }
    let fom_seconds = median_time(fom_solve, reps)?;
    let rom_seconds = median_time(rom_eval, reps)?;
    Ok(Speedup { fom_seconds, rom_seconds, ratio: fom_seconds / rom_seconds })
}
