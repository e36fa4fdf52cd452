mod common;

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{coarse, equidistant, mean, rel_err, NU};
use windrom::container::Container;
use windrom::fom_ins::{assemble_ins, InsProblem, NewtonOptions};
use windrom::mesh::{synth_urban_mesh, UrbanLayout};
use windrom::pod::{compute_pod, FieldKind, SnapshotSet, Truncation};
use windrom::rom_podg::{build_deim, train_podg, NonlinearModel, PodgArtifact, PodgOffline, PodgOptions};
use windrom::{Error, ParameterPoint};

/// Velocity rank, pressure rank and DEIM rank of the coarse fixture.
fn ranks() -> (usize, usize, usize) {
    let f = coarse();
    let u = SnapshotSet::velocity(&f.train).unwrap().with_mass(f.mass.clone()).unwrap();
    let p = SnapshotSet::pressure(&f.train).unwrap();
    let ru = compute_pod(&u, Truncation::Energy(1.0)).unwrap().size();
    let rp = compute_pod(&p, Truncation::Energy(1.0)).unwrap().size();
    let rd = match PodgOffline::new(&f.problem, &u, &p, ru, rp, 50) {
        Err(Error::DeimRank { attainable, .. }) => attainable,
        other => panic!("expected a DEIM rank limit, got {:?}", other.err()),
    };
    (ru, rp, rd)
}

fn offline() -> &'static PodgOffline<'static> {
    static OFF: OnceLock<PodgOffline<'static>> = OnceLock::new();
    OFF.get_or_init(|| {
        let f = coarse();
        let (ru, rp, rd) = ranks();
        let u = SnapshotSet::velocity(&f.train).unwrap().with_mass(f.mass.clone()).unwrap();
        let p = SnapshotSet::pressure(&f.train).unwrap();
        PodgOffline::new(&f.problem, &u, &p, ru, rp, rd).unwrap()
    })
}

fn opts(n: usize, m: usize, nonlinear: NonlinearModel) -> PodgOptions {
    PodgOptions { velocity_size: n, pressure_size: Some(m), nonlinear, ..Default::default() }
}

fn full_rank(off: &PodgOffline) -> PodgArtifact {
    let n = off.velocity_pod().size();
    let m = off.pressure_pod().size();
    let d = off.deim().unwrap().size();
    off.artifact(&opts(n, m, NonlinearModel::Deim { size: d })).unwrap()
}

fn test_errors(art: &PodgArtifact) -> Vec<f64> {
    let f = coarse();
    f.test.iter().map(|s| rel_err(&f.mass, &art.evaluate(&s.mu).unwrap().1, &s.u)).collect()
}

#[test]
fn full_rank_model_reproduces_training_snapshots() {
    let f = coarse();
    let art = full_rank(offline());
    for s in &f.train {
        let (sol, u) = art.evaluate(&s.mu).unwrap();
        assert!(rel_err(&f.mass, &u, &s.u) < 1e-6, "w_i = {}", s.mu.w_i);
        assert!(!sol.extrapolated);
    }
}

#[test]
fn zero_wind_gives_zero_field() {
    let f = coarse();
    let mut mus = equidistant(0.5, 20.0, 8);
    mus.insert(0, ParameterPoint::speed(0.0));
    let sols = f.problem.solve_many(&mus, &NewtonOptions::default()).unwrap();
    let art = train_podg(&f.problem, &sols, &opts(4, 4, NonlinearModel::Deim { size: 6 })).unwrap();
    let (sol, u) = art.evaluate(&ParameterPoint::speed(0.0)).unwrap();
    assert!(sol.a.iter().all(|&a| a == 0.0));
    assert!(u.iter().all(|&x| x == 0.0));
}

#[test]
fn galerkin_beats_interpolation_and_improves_with_size() {
    let f = coarse();
    let off = offline();
    let (ru, rp, rd) = (off.velocity_pod().size(), off.pressure_pod().size(), off.deim().unwrap().size());
    let small = off.artifact(&opts(5.min(ru), 5.min(rp), NonlinearModel::Deim { size: rd })).unwrap();
    // sizes above the snapshot rank are limited to it
    let large = full_rank(off);
    let (e5, e20) = (mean(&test_errors(&small)), mean(&test_errors(&large)));
    assert!(e20 <= e5, "{e20} > {e5}");
    let u = SnapshotSet::velocity(&f.train).unwrap().with_mass(f.mass.clone()).unwrap();
    let podi = windrom::rom_podi::train_podi(&u, &windrom::rom_podi::PodiOptions { size: 5.min(ru), ..Default::default() }).unwrap();
    let ei: Vec<f64> = f.test.iter().map(|s| rel_err(&f.mass, &podi.evaluate(&s.mu).unwrap().u, &s.u)).collect();
    assert!(e5 < mean(&ei), "galerkin {e5} interpolation {}", mean(&ei));
}

#[test]
fn tensor_model_satisfies_projected_residual() {
    let f = coarse();
    let off = offline();
    let art = off.artifact(&opts(4, 4, NonlinearModel::Tensor)).unwrap();
    let nh = f.problem.space().velocity_dofs();
    let np = f.problem.space().pressure_dofs();
    for s in &f.test[..3] {
        let (sol, u) = art.evaluate(&s.mu).unwrap();
        let mut x = u.clone();
        x.extend(art.pressure(&sol));
        x.resize(f.problem.system_size(), 0.0);
        let g = f.problem.dirichlet_values(&s.mu).unwrap();
        let r = f.problem.residual(&x, &g);
        let ru = DVector::from_column_slice(&r[..nh]);
        let rp = DVector::from_column_slice(&r[nh..nh + np]);
        let pv = art.velocity_modes().transpose() * &ru;
        let pp = art.pressure_modes().transpose() * &rp;
        let scale = art.velocity_modes().column_iter().map(|c| c.norm()).fold(0.0, f64::max) * ru.norm().max(1.0);
        assert!(pv.amax() < 1e-8 * scale.max(1.0), "velocity {}", pv.amax());
        assert!(pp.amax() < 1e-8, "pressure {}", pp.amax());
        // the unprojected residual is not small
        assert!(ru.amax() > 1e3 * pv.amax());
    }
}

#[test]
fn reduced_operators_match_direct_projection() {
    let f = coarse();
    let art = full_rank(offline());
    let sys = assemble_ins(&f.problem, &vec![0.0; f.problem.space().velocity_dofs()]).unwrap();
    let v = art.velocity_modes();
    let l = art.lifting();
    let mu = f.test[4].mu;
    let theta = DVector::from_vec(f.problem.bc_coefficients(&mu).unwrap());
    let a = DVector::from_fn(v.ncols(), |i, _| 0.1 * (i as f64 + 1.0));
    let u: Vec<f64> = (v * &a + l * &theta).data.into();
    let direct = v.transpose() * DVector::from_vec(sys.a.mul_vec(&u)) * NU;
    let (a_vv, a_vl, _, _) = art.operators();
    let affine = (a_vv * &a + a_vl * &theta) * NU;
    assert!((&direct - &affine).amax() <= 1e-10 * direct.amax());
}

#[test]
fn deim_reconstructs_collateral_span_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 300;
    let basis = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
    let coef = DMatrix::from_fn(6, 12, |_, _| rng.random_range(-1.0..1.0));
    let snaps = &basis * coef;
    let params = (0..12).map(|k| ParameterPoint::speed(k as f64 + 1.0)).collect();
    let set = SnapshotSet::new(snaps.clone(), params, FieldKind::Nonlinear).unwrap();
    let d = build_deim(&set, 6).unwrap();
    for j in 0..12 {
        let col: Vec<f64> = snaps.column(j).iter().copied().collect();
        let rec = d.reconstruct(&col).unwrap();
        let err = rec.iter().zip(&col).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10 * col.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    assert!(matches!(build_deim(&set, 7), Err(Error::DeimRank { requested: 7, attainable: 6 })));
}

#[test]
fn deim_error_is_close_to_best_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400;
    let (rank, m) = (12, 40);
    let basis = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let decay = DMatrix::from_fn(rank, m, |i, _| rng.random_range(-1.0..1.0) * 0.5f64.powi(i as i32));
    let snaps = &basis * decay;
    let params = (0..m).map(|k| ParameterPoint::speed(k as f64 + 1.0)).collect();
    let set = SnapshotSet::new(snaps.clone(), params, FieldKind::Nonlinear).unwrap();
    let size = 6;
    let d = build_deim(&set, size).unwrap();
    let (mut deim, mut best) = (0.0, 0.0);
    for j in 0..m {
        let col = snaps.column(j).into_owned();
        let rec = DVector::from_vec(d.reconstruct(col.as_slice()).unwrap());
        let proj = &d.basis * (d.basis.transpose() * &col);
        deim += (&col - rec).norm_squared();
        best += (&col - proj).norm_squared();
    }
    assert!(deim.sqrt() <= 10.0 * best.sqrt(), "deim {} best {}", deim.sqrt(), best.sqrt());
}

#[test]
fn online_cost_does_not_grow_with_the_mesh() {
    let time = |refine_level: usize| {
        let mesh = Arc::new(synth_urban_mesh(&UrbanLayout { refine_level, ..Default::default() }).unwrap());
        let problem = InsProblem::new(mesh, NU).unwrap();
        let sols = problem.solve_many(&equidistant(0.5, 20.0, 8), &NewtonOptions::default()).unwrap();
        let art = train_podg(&problem, &sols, &opts(4, 4, NonlinearModel::Deim { size: 6 })).unwrap();
        let mu = ParameterPoint::speed(7.3);
        let mut samples: Vec<f64> = (0..41)
            .map(|_| {
                let t = Instant::now();
                let s = art.solve(&mu).unwrap();
                std::hint::black_box(s);
                t.elapsed().as_secs_f64()
            })
            .skip(1)
            .collect();
        samples.sort_by(f64::total_cmp);
        (samples[samples.len() / 2], problem.space().velocity_dofs())
    };
    let (t0, n0) = time(0);
    let (t1, n1) = time(1);
    assert!(n1 > 3 * n0);
    let ratio = t1 / t0;
    assert!((0.8..=1.2).contains(&ratio), "online time ratio {ratio} ({t0:e} s vs {t1:e} s)");
}

#[test]
fn extrapolation_is_flagged_or_fails_cleanly() {
    let f = coarse();
    let art = full_rank(offline());
    for w in [25.0, 40.0, 80.0] {
        match art.evaluate(&ParameterPoint::speed(w)) {
            Ok((sol, u)) => {
                assert!(sol.extrapolated);
                assert!(u.iter().all(|x| x.is_finite()));
            }
            Err(e) => assert!(matches!(e, Error::NonConvergence { .. }), "{e}"),
        }
    }
    assert!(!art.evaluate(&f.test[0].mu).unwrap().0.extrapolated);
}

#[test]
fn container_round_trip_preserves_evaluation() {
    let f = coarse();
    let art = full_rank(offline());
    let bytes = art.to_container().unwrap().to_bytes();
    let back = PodgArtifact::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.source_hash(), art.source_hash());
    let mu = f.test[2].mu;
    let (a, b) = (art.evaluate(&mu).unwrap(), back.evaluate(&mu).unwrap());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);

    let tensor = offline().artifact(&opts(3, 3, NonlinearModel::Tensor)).unwrap();
    let bytes = tensor.to_container().unwrap().to_bytes();
    let back = PodgArtifact::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.evaluate(&mu).unwrap().1, tensor.evaluate(&mu).unwrap().1);
}

#[test]
fn error_levels_off_once_the_spectrum_is_exhausted() {
    // modal energy counted with singular values, matching how the
    // coefficients scale with the snapshots
    let off = offline();
    let sv: Vec<f64> = off.velocity_pod().sigma().iter().map(|s| s.sqrt()).collect();
    let total: f64 = sv.iter().sum();
    let (m, d) = (off.pressure_pod().size(), off.deim().unwrap().size());
    let errors: Vec<f64> = (1..=sv.len() + 3)
        .map(|n| {
            let n = n.min(sv.len());
            mean(&test_errors(&off.artifact(&opts(n, n.min(m), NonlinearModel::Deim { size: d })).unwrap()))
        })
        .collect();
    let start = (1..=sv.len()).find(|&n| sv[..n].iter().sum::<f64>() / total > 1.0 - 1e-10).unwrap();
    for n in start..errors.len() {
        let change = (errors[n] - errors[n - 1]).abs() / errors[n - 1];
        assert!(change < 0.1, "N = {} changes the error by {change}", n + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn interior_evaluations_stay_close_to_neighbours(w in 1.0f64..19.0) {
        let f = coarse();
        let art = full_rank(offline());
        let (_, u) = art.evaluate(&ParameterPoint::speed(w)).unwrap();
        let k = f.train.iter().min_by(|a, b| (a.mu.w_i - w).abs().total_cmp(&(b.mu.w_i - w).abs())).unwrap();
        prop_assert!(rel_err(&f.mass, &u, &k.u) < 0.2);
    }
}
