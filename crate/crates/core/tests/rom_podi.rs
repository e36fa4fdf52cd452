mod common;

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{coarse, mean, rel_err};
use windrom::container::Container;
use windrom::fom_ins::{FlowSolution, InsProblem, NewtonOptions};
use windrom::linalg::CsrMatrix;
use windrom::mesh::{synth_urban_mesh, UrbanLayout};
use windrom::pod::{compute_pod, SnapshotSet, Truncation};
use windrom::rom_podi::{train_podi, AngleMode, Kernel, PodiArtifact, PodiOptions, RbfInterpolant};
use windrom::{Error, ParameterPoint};

fn velocity_set() -> SnapshotSet {
    let f = coarse();
    SnapshotSet::velocity(&f.train).unwrap().with_mass(f.mass.clone()).unwrap()
}

fn rank() -> usize {
    compute_pod(&velocity_set(), Truncation::Energy(1.0)).unwrap().size()
}

fn m_norm(mass: &CsrMatrix, x: &[f64]) -> f64 {
    mass.bilinear(x, x).sqrt()
}

#[test]
fn training_points_reproduce_projection() {
    let f = coarse();
    let set = velocity_set();
    for n in [1, 3, rank()] {
        let art = train_podi(&set, &PodiOptions { size: n, ..Default::default() }).unwrap();
        for s in &f.train {
            let eval = art.evaluate(&s.mu).unwrap();
            let proj = art.velocity.basis.lift(&art.velocity.basis.project(&s.u).unwrap()).unwrap();
            let d_eval: Vec<f64> = eval.u.iter().zip(&s.u).map(|(a, b)| a - b).collect();
            let d_proj: Vec<f64> = proj.iter().zip(&s.u).map(|(a, b)| a - b).collect();
            let gap = (m_norm(&f.mass, &d_eval) - m_norm(&f.mass, &d_proj)).abs();
            assert!(gap <= 1e-8 * m_norm(&f.mass, &s.u), "n = {n}, w_i = {}: {gap:e}", s.mu.w_i);
        }
    }
}

#[test]
fn single_mode_is_a_scaled_mode() {
    let f = coarse();
    let art = train_podi(&velocity_set(), &PodiOptions { size: 1, ..Default::default() }).unwrap();
    let mode: Vec<f64> = art.velocity.basis.modes().column(0).iter().copied().collect();
    let eval = art.evaluate(&f.test[3].mu).unwrap();
    assert_eq!(eval.coefficients.len(), 1);
    let c = eval.coefficients[0];
    for (u, m) in eval.u.iter().zip(&mode) {
        assert!((u - c * m).abs() <= 1e-14 * c.abs());
    }
}

#[test]
fn two_snapshots_are_reproduced() {
    let f = coarse();
    let sols = vec![f.train[3].clone(), f.train[20].clone()];
    let set = SnapshotSet::velocity(&sols).unwrap().with_mass(f.mass.clone()).unwrap();
    let art = train_podi(&set, &PodiOptions { size: 2, ..Default::default() }).unwrap();
    for s in &sols {
        assert!(rel_err(&f.mass, &art.evaluate(&s.mu).unwrap().u, &s.u) < 1e-8);
    }
}

#[test]
fn midpoints_are_within_five_percent() {
    let f = coarse();
    let art = train_podi(&velocity_set(), &PodiOptions { size: 15.min(rank()), ..Default::default() }).unwrap();
    let errs: Vec<f64> = f.test.iter().map(|s| rel_err(&f.mass, &art.evaluate(&s.mu).unwrap().u, &s.u)).collect();
    assert!(errs.iter().all(|&e| e < 0.05), "{errs:?}");
    assert!(mean(&errs) < 0.01);
}

#[test]
fn training_order_does_not_matter() {
    let f = coarse();
    let set = velocity_set();
    let n = set.len();
    let perm: Vec<usize> = (0..n).map(|k| (7 * k + 3) % n).collect();
    let shuffled = set.select(&perm).unwrap();
    // trailing modes near the eigenvalue floor are fixed only up to round-off
    let opts = PodiOptions { size: 6, ..Default::default() };
    let (a, b) = (train_podi(&set, &opts).unwrap(), train_podi(&shuffled, &opts).unwrap());
    for s in &f.test {
        let (ua, ub) = (a.evaluate(&s.mu).unwrap().u, b.evaluate(&s.mu).unwrap().u);
        let e = rel_err(&f.mass, &ua, &ub);
        assert!(e < 1e-10, "{e:e}");
    }
}

#[test]
fn parameter_units_do_not_matter() {
    let f = coarse();
    let to_kmh = |p: &ParameterPoint| ParameterPoint::speed(p.w_i * 3.6);
    let set = velocity_set();
    let params: Vec<ParameterPoint> = set.params().iter().map(to_kmh).collect();
    let scaled = SnapshotSet::new(set.matrix().clone(), params, set.kind()).unwrap().with_mass(f.mass.clone()).unwrap();
    let opts = PodiOptions { size: rank(), ..Default::default() };
    let (a, b) = (train_podi(&set, &opts).unwrap(), train_podi(&scaled, &opts).unwrap());
    for s in &f.test {
        let (ua, ub) = (a.evaluate(&s.mu).unwrap().u, b.evaluate(&to_kmh(&s.mu)).unwrap().u);
        let e = rel_err(&f.mass, &ua, &ub);
        assert!(e < 1e-10, "{e:e}");
    }
}

#[test]
fn duplicate_parameters_are_rejected() {
    let f = coarse();
    let sols = vec![f.train[1].clone(), f.train[2].clone()];
    let mut set = SnapshotSet::velocity(&sols).unwrap();
    assert!(set.len() == 2);
    let centers = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
    let values = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
    assert!(matches!(RbfInterpolant::fit(Kernel::ThinPlate, centers, &values, false), Err(Error::Rbf(_))));
    set = set.select(&[0]).unwrap();
    assert!(train_podi(&set, &PodiOptions { size: 1, ..Default::default() }).is_err());
}

#[test]
fn extrapolation_is_flagged() {
    let art = train_podi(&velocity_set(), &PodiOptions { size: 3, ..Default::default() }).unwrap();
    let e = art.evaluate(&ParameterPoint::speed(30.0)).unwrap();
    assert!(e.extrapolated);
    assert!(e.u.iter().all(|x| x.is_finite()));
    assert!(!art.evaluate(&ParameterPoint::speed(10.0)).unwrap().extrapolated);
    assert!(matches!(art.evaluate(&ParameterPoint::wind(5.0, 10.0)), Err(Error::Dimension { .. })));
}

#[test]
fn container_round_trip_preserves_evaluation() {
    let f = coarse();
    let set = velocity_set();
    let p = SnapshotSet::pressure(&f.train).unwrap();
    for polynomial in [false, true] {
        let art = train_podi(&set, &PodiOptions { size: 4, polynomial, ..Default::default() })
            .unwrap()
            .with_pressure(&p, 3)
            .unwrap();
        let bytes = art.to_container().unwrap().to_bytes();
        let back = PodiArtifact::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, art);
        let mu = f.test[5].mu;
        assert_eq!(back.evaluate(&mu).unwrap(), art.evaluate(&mu).unwrap());
    }
}

struct Directional {
    mass: Arc<CsrMatrix>,
    sols: Vec<FlowSolution>,
}

fn directional() -> &'static Directional {
    static D: OnceLock<Directional> = OnceLock::new();
    D.get_or_init(|| {
        let mesh = Arc::new(synth_urban_mesh(&UrbanLayout { refine_level: 0, enclosed: true, ..Default::default() }).unwrap());
        let problem = InsProblem::new(mesh.clone(), common::NU).unwrap();
        let params: Vec<ParameterPoint> =
            [3.0, 6.0].iter().flat_map(|&w| (0..12).map(move |k| ParameterPoint::wind(w, 30.0 * k as f64))).collect();
        let sols = problem.solve_many(&params, &NewtonOptions::default()).unwrap();
        Directional { mass: Arc::new(problem.space().velocity_mass(&mesh)), sols }
    })
}

#[test]
fn direction_is_continuous_across_north() {
    let d = directional();
    let set = SnapshotSet::velocity(&d.sols).unwrap().with_mass(d.mass.clone()).unwrap();
    let size = compute_pod(&set, Truncation::Energy(1.0)).unwrap().size().min(20);
    let diff = |angle: AngleMode| {
        let art = train_podi(&set, &PodiOptions { size, angle, ..Default::default() }).unwrap();
        let a = art.evaluate(&ParameterPoint::wind(4.5, 359.9)).unwrap().u;
        let b = art.evaluate(&ParameterPoint::wind(4.5, 0.1)).unwrap().u;
        let dv: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        m_norm(&d.mass, &dv)
    };
    // largest change per degree between neighbouring training directions
    let lipschitz = d
        .sols
        .iter()
        .flat_map(|s| d.sols.iter().map(move |t| (s, t)))
        .filter(|(s, t)| s.mu.w_i == t.mu.w_i && (t.mu.w_d.unwrap() - s.mu.w_d.unwrap()).rem_euclid(360.0) == 30.0)
        .map(|(s, t)| {
            let dv: Vec<f64> = s.u.iter().zip(&t.u).map(|(x, y)| x - y).collect();
            m_norm(&d.mass, &dv) / 30.0
        })
        .fold(0.0, f64::max);
    let embedded = diff(AngleMode::Embed);
    assert!(embedded <= 0.2 * lipschitz, "jump {embedded:e} vs bound {:e}", 0.2 * lipschitz);
    assert!(diff(AngleMode::Scalar) > 10.0 * embedded);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn interpolant_reproduces_scattered_data(
        pts in prop::collection::btree_set((0u32..1000, 0u32..1000), 3..25),
        seed in 0u64..1000,
        polynomial in any::<bool>(),
    ) {
        let pts: Vec<(u32, u32)> = pts.into_iter().collect();
        let n = pts.len();
        let centers = DMatrix::from_fn(n, 2, |i, j| if j == 0 { pts[i].0 as f64 } else { pts[i].1 as f64 } / 1000.0);
        let values = DMatrix::from_fn(n, 3, |i, j| ((seed as f64 + 1.0) * (i + 2 * j + 1) as f64).sin());
        if let Ok(rbf) = RbfInterpolant::fit(Kernel::ThinPlate, centers.clone(), &values, polynomial) {
            for i in 0..n {
                let y = rbf.eval(&[centers[(i, 0)], centers[(i, 1)]]);
                for j in 0..3 {
                    prop_assert!((y[j] - values[(i, j)]).abs() < 1e-8);
                }
            }
        }
    }
}
