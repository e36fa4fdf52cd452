use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windrom::linalg::CsrMatrix;
use windrom::pod::*;
use windrom::ParameterPoint;

fn params(n: usize) -> Vec<ParameterPoint> {
    (0..n).map(|i| ParameterPoint::speed(0.5 + i as f64)).collect()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Snapshots with a decaying spectrum so truncation is meaningful.
fn graded_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let a = random_matrix(rows, cols, seed).qr().q();
    let b = random_matrix(cols, cols, seed + 1).qr().q();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(cols, |i, _| 10f64.powf(-0.3 * i as f64)));
    a * s * b.transpose()
}

fn random_mass(n: usize, seed: u64) -> Arc<CsrMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 2.0 + rng.random::<f64>()));
        if i + 1 < n {
            let c = 0.5 * rng.random::<f64>();
            t.push((i, i + 1, c));
            t.push((i + 1, i, c));
        }
    }
    Arc::new(CsrMatrix::from_triplets(n, n, &t))
}

/// Largest sine of the principal angles between two orthonormal column spaces.
fn max_principal_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r = b - a * (a.transpose() * b);
    r.singular_values().max()
}

#[test]
fn correlation_basis_matches_direct_svd() {
    let s = random_matrix(200, 20, 7);
    let set = SnapshotSet::new(s.clone(), params(20), FieldKind::Velocity).unwrap();
    let basis = compute_pod(&set, Truncation::Size(10)).unwrap();
    let svd = s.clone().svd(true, false);
    let mut order: Vec<usize> = (0..20).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = svd.u.unwrap().select_columns(&order[..10]);
    assert!(max_principal_sine(&u, basis.modes()) < 1e-8);
    for (k, &i) in order.iter().enumerate() {
        let sv = svd.singular_values[i];
        assert!((basis.sigma()[k] - sv * sv).abs() < 1e-10 * sv * sv);
    }
    for j in 0..10 {
        let col = basis.modes().column(j);
        let dot = col.dot(&u.column(j)).abs();
        assert!((dot - 1.0).abs() < 1e-8);
        assert!(col[col.iamax()] > 0.0);
    }
}

#[test]
fn modes_are_mass_orthonormal() {
    let s = graded_matrix(60, 12, 3);
    let m = random_mass(60, 4);
    let set = SnapshotSet::new(s, params(12), FieldKind::Velocity).unwrap().with_mass(m.clone()).unwrap();
    let b = compute_pod(&set, Truncation::Size(12)).unwrap();
    let gram = b.modes().transpose() * m.mul_dense(b.modes());
    assert!((gram - DMatrix::identity(12, 12)).amax() < 1e-10);
    assert!(b.sigma().windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
}

#[test]
fn projection_error_equals_eigenvalue_tail() {
    let s = graded_matrix(80, 15, 11);
    let m = random_mass(80, 12);
    let set = SnapshotSet::new(s, params(15), FieldKind::Velocity).unwrap().with_mass(m).unwrap();
    let full = compute_pod(&set, Truncation::Size(15)).unwrap();
    for n in [1, 4, 8, 14] {
        let b = full.truncate(n).unwrap();
        let delta = projection_error(&b, &set).unwrap();
        let tail: f64 = full.sigma()[n..].iter().sum();
        assert!((delta - tail).abs() <= 1e-8 * tail, "n={n}: {delta} vs {tail}");
    }
}

#[test]
fn pod_beats_random_bases() {
    let s = graded_matrix(40, 10, 21);
    let set = SnapshotSet::new(s, params(10), FieldKind::Velocity).unwrap();
    let n = 4;
    let pod = compute_pod(&set, Truncation::Size(n)).unwrap();
    let best = projection_error(&pod, &set).unwrap();
    for seed in 0..100 {
        let w = random_matrix(40, n, 1000 + seed).qr().q();
        let basis = SnapshotSet::new(w, params(n), FieldKind::Velocity).unwrap();
        let wb = compute_pod(&basis, Truncation::Size(n)).unwrap();
        assert!(projection_error(&wb, &set).unwrap() >= best);
    }
}

#[test]
fn column_order_does_not_change_the_span() {
    let s = graded_matrix(50, 12, 31);
    let set = SnapshotSet::new(s, params(12), FieldKind::Velocity).unwrap();
    let perm: Vec<usize> = vec![5, 2, 11, 0, 7, 1, 9, 3, 10, 4, 8, 6];
    let a = compute_pod(&set, Truncation::Size(6)).unwrap();
    let b = compute_pod(&set.select(&perm).unwrap(), Truncation::Size(6)).unwrap();
    assert!(max_principal_sine(a.modes(), b.modes()) < 1e-10);
}

#[test]
fn energy_truncation_picks_smallest_size() {
    let s = graded_matrix(50, 12, 41);
    let set = SnapshotSet::new(s, params(12), FieldKind::Velocity).unwrap();
    let b = compute_pod(&set, Truncation::Energy(0.99)).unwrap();
    let e = retained_energy(b.sigma(), b.size()).unwrap();
    assert!(e >= 0.99);
    assert!(retained_energy(b.sigma(), b.size() - 1).unwrap() < 0.99);
    assert!(compute_pod(&set, Truncation::Energy(1.5)).is_err());
}

#[test]
fn projection_of_modes_and_orthogonal_complement() {
    let s = graded_matrix(30, 6, 51);
    let set = SnapshotSet::new(s, params(6), FieldKind::Velocity).unwrap();
    let b = compute_pod(&set, Truncation::Size(3)).unwrap();
    let phi: Vec<f64> = b.modes().column(0).iter().copied().collect();
    let back = b.lift(&b.project(&phi).unwrap()).unwrap();
    assert!(back.iter().zip(&phi).all(|(x, y)| (x - y).abs() < 1e-14));
    let x = random_matrix(30, 1, 52);
    let r = &x - b.modes() * (b.modes().transpose() * &x);
    let a = b.project(r.as_slice()).unwrap();
    assert!(a.iter().all(|v| v.abs() < 1e-13));
    assert!(b.project(&[1.0; 29]).is_err());
    assert!(b.lift(&[1.0; 4]).is_err());
}

#[test]
fn basis_round_trips_through_container() {
    let s = graded_matrix(20, 5, 61);
    let set = SnapshotSet::new(s, params(5), FieldKind::Pressure).unwrap().with_mass(random_mass(20, 62)).unwrap();
    let b = compute_pod(&set, Truncation::Size(3)).unwrap();
    let c = windrom::container::Container::from_bytes(&b.to_container().unwrap().to_bytes()).unwrap();
    assert_eq!(ReducedBasis::from_container(&c).unwrap(), b);
    assert_eq!(b.source_hash(), set.hash());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn project_after_lift_is_identity(seed in 0u64..1000, a in prop::collection::vec(-5.0f64..5.0, 4)) {
        let set = SnapshotSet::new(graded_matrix(25, 6, seed), params(6), FieldKind::Velocity)
            .unwrap()
            .with_mass(random_mass(25, seed + 7))
            .unwrap();
        let b = compute_pod(&set, Truncation::Size(4)).unwrap();
        let back = b.project(&b.lift(&a).unwrap()).unwrap();
        for (x, y) in back.iter().zip(&a) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn energy_is_monotone_in_size(sigma in prop::collection::vec(0.0f64..10.0, 1..12)) {
        let mut s = sigma.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(s[0] > 0.0);
        let mut prev = 0.0;
        for n in 0..=s.len() {
            let e = retained_energy(&s, n).unwrap();
            prop_assert!(e >= prev && e <= 1.0 + 1e-15);
            prev = e;
        }
    }
}
