#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use windrom::fom_ins::{FlowSolution, InsProblem, NewtonOptions};
use windrom::linalg::CsrMatrix;
use windrom::mesh::{synth_urban_mesh, UrbanLayout};
use windrom::ParameterPoint;

pub const NU: f64 = 280.0;

pub struct Fixture {
    pub problem: InsProblem,
    pub mass: Arc<CsrMatrix>,
    pub train: Vec<FlowSolution>,
    pub test: Vec<FlowSolution>,
}

pub fn equidistant(lo: f64, hi: f64, n: usize) -> Vec<ParameterPoint> {
    (0..n).map(|k| ParameterPoint::speed(lo + (hi - lo) * k as f64 / (n - 1) as f64)).collect()
}

/// Midpoints of `n` equal cells of `[lo, hi]`.
pub fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<ParameterPoint> {
    (0..n).map(|k| ParameterPoint::speed(lo + (hi - lo) * (k as f64 + 0.5) / n as f64)).collect()
}

fn build(refine_level: usize, train: Vec<ParameterPoint>, test: Vec<ParameterPoint>) -> Fixture {
    let mesh = Arc::new(synth_urban_mesh(&UrbanLayout { refine_level, ..Default::default() }).unwrap());
    let problem = InsProblem::new(mesh.clone(), NU).unwrap();
    let opts = NewtonOptions::default();
    let train = problem.solve_many(&train, &opts).unwrap();
    let test = problem.solve_many(&test, &opts).unwrap();
    let mass = Arc::new(problem.space().velocity_mass(&mesh));
    Fixture { problem, mass, train, test }
}

/// Coarse urban mesh, 30 snapshots over `[0.5, 20]` m/s and 10 interior test points.
pub fn coarse() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(0, equidistant(0.5, 20.0, 30), midpoints(0.5, 20.0, 10)))
}

pub fn rel_err(mass: &CsrMatrix, approx: &[f64], reference: &[f64]) -> f64 {
    let d: Vec<f64> = approx.iter().zip(reference).map(|(a, b)| a - b).collect();
    (mass.bilinear(&d, &d) / mass.bilinear(reference, reference)).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
