//! Proper orthogonal decomposition through the snapshot correlation matrix.
//!
//! For `N_s` snapshots the basis comes from the `N_s × N_s` eigenproblem
//! `K ψ = λ ψ` with `K_ij = (s_i, s_j)_M`; modes are `Φ_i = S ψ_i / √λ_i`.
//! The stored spectrum `sigma` holds the eigenvalues `λ_i`, so the squared
//! projection error over the training set equals the sum of the discarded
//! `sigma` entries.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{hash_f64, Container};
use crate::fom_ins::{FlowSolution, ParameterPoint};
use crate::linalg::CsrMatrix;
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest are discarded.
pub const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Velocity,
    Pressure,
    /// Convective-term vectors used to build DEIM bases.
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerProduct {
    Euclidean,
    Mass,
}

/// Snapshot matrix with its parameter points; column `k` belongs to `params[k]`.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    matrix: DMatrix<f64>,
    params: Vec<ParameterPoint>,
    kind: FieldKind,
    mass: Option<Arc<CsrMatrix>>,
}

impl SnapshotSet {
    pub fn new(matrix: DMatrix<f64>, params: Vec<ParameterPoint>, kind: FieldKind) -> Result<Self> {
        if matrix.ncols() != params.len() {
            return Err(Error::Dimension { expected: params.len(), got: matrix.ncols() });
        }
        for (i, a) in params.iter().enumerate() {
            if let Some(j) = params[..i].iter().position(|b| b == a) {
                return Err(Error::invalid(format!("duplicate parameter point {a} at columns {j} and {i}")));
            }
        }
        Ok(Self { matrix, params, kind, mass: None })
    }

    /// Builds a snapshot set from column vectors.
    pub fn from_columns(columns: &[Vec<f64>], params: Vec<ParameterPoint>, kind: FieldKind) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension { expected: n, got: c.len() });
        }
        let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Self::new(matrix, params, kind)
    }

    pub fn velocity(solutions: &[FlowSolution]) -> Result<Self> {
        let cols: Vec<Vec<f64>> = solutions.iter().map(|s| s.u.clone()).collect();
        Self::from_columns(&cols, solutions.iter().map(|s| s.mu).collect(), FieldKind::Velocity)
    }

    pub fn pressure(solutions: &[FlowSolution]) -> Result<Self> {
        let cols: Vec<Vec<f64>> = solutions.iter().map(|s| s.p.clone()).collect();
        Self::from_columns(&cols, solutions.iter().map(|s| s.mu).collect(), FieldKind::Pressure)
    }

    /// Uses the given mass matrix as inner product.
    pub fn with_mass(mut self, mass: Arc<CsrMatrix>) -> Result<Self> {
        if mass.nrows() != self.matrix.nrows() || mass.ncols() != self.matrix.nrows() {
            return Err(Error::Dimension { expected: self.matrix.nrows(), got: mass.nrows() });
        }
        self.mass = Some(mass);
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn params(&self) -> &[ParameterPoint] {
        &self.params
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn mass(&self) -> Option<&Arc<CsrMatrix>> {
        self.mass.as_ref()
    }

    pub fn inner_product(&self) -> InnerProduct {
        if self.mass.is_some() {
            InnerProduct::Mass
        } else {
            InnerProduct::Euclidean
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Column subset in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        let params = columns.iter().map(|&j| self.params[j]).collect();
        let mut s = Self::new(self.matrix.select_columns(columns), params, self.kind)?;
        s.mass = self.mass.clone();
        Ok(s)
    }

    /// Content hash over the snapshot values and parameters.
    pub fn hash(&self) -> String {
        let coords: Vec<f64> = self
            .params
            .iter()
            .flat_map(|p| [p.w_i, p.w_d.unwrap_or(f64::NAN)])
            .collect();
        hash_f64([self.matrix.as_slice(), coords.as_slice()])
    }

    fn apply_mass(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.mass {
            Some(mass) => mass.mul_dense(m),
            None => m.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Size(usize),
    /// Smallest basis whose retained energy reaches the threshold in `(0, 1]`.
    Energy(f64),
}

/// M-orthonormal POD basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    modes: DMatrix<f64>,
    /// `M V`, used for projection; absent for the Euclidean inner product.
    dual: Option<DMatrix<f64>>,
    sigma: Vec<f64>,
    kind: FieldKind,
    source_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct BasisMeta {
    kind: FieldKind,
    inner_product: InnerProduct,
    dim: usize,
    size: usize,
    source_hash: String,
}

impl ReducedBasis {
    pub const KIND: &'static str = "reduced-basis";

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// `M V` (or `V` for the Euclidean inner product).
    pub fn dual(&self) -> &DMatrix<f64> {
        self.dual.as_ref().unwrap_or(&self.modes)
    }

    /// Correlation eigenvalues above the floor, descending.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn size(&self) -> usize {
        self.modes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn inner_product(&self) -> InnerProduct {
        if self.dual.is_some() {
            InnerProduct::Mass
        } else {
            InnerProduct::Euclidean
        }
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    /// First `n` modes; the spectrum is kept whole.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n > self.size() {
            return Err(Error::Truncation { requested: n, attainable: self.size() });
        }
        Ok(Self {
            modes: self.modes.columns(0, n).into_owned(),
            dual: self.dual.as_ref().map(|d| d.columns(0, n).into_owned()),
            sigma: self.sigma.clone(),
            kind: self.kind,
            source_hash: self.source_hash.clone(),
        })
    }

    /// Reduced coefficients `Vᵀ M x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let d = self.dual();
        Ok((0..self.size()).map(|j| crate::linalg::dot(d.column(j).as_slice(), x)).collect())
    }

    /// Full vector `V a`.
    pub fn lift(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.size() {
            return Err(Error::Dimension { expected: self.size(), got: a.len() });
        }
        let v = &self.modes * DVector::from_column_slice(a);
        Ok(v.data.into())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(Self::KIND, serde_json::Value::Null)?;
        let meta = self.push_to(&mut c, "");
        c.meta = serde_json::to_value(meta).map_err(|e| Error::Container(e.to_string()))?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        Self::pull_from(c, "", c.meta_as()?)
    }

    /// Writes the basis blocks under `prefix` and returns the header to store alongside.
    pub(crate) fn push_to(&self, c: &mut Container, prefix: &str) -> BasisMeta {
        c.push_matrix(&format!("{prefix}modes"), &self.modes);
        if let Some(d) = &self.dual {
            c.push_matrix(&format!("{prefix}dual"), d);
        }
        c.push_vec(&format!("{prefix}sigma"), &self.sigma);
        BasisMeta {
            kind: self.kind,
            inner_product: self.inner_product(),
            dim: self.dim(),
            size: self.size(),
            source_hash: self.source_hash.clone(),
        }
    }

    pub(crate) fn pull_from(c: &Container, prefix: &str, meta: BasisMeta) -> Result<Self> {
        let modes = c.matrix(&format!("{prefix}modes"))?;
        if modes.shape() != (meta.dim, meta.size) {
            return Err(Error::Container("basis shape disagrees with header".into()));
        }
        let dual = match meta.inner_product {
            InnerProduct::Mass => Some(c.matrix(&format!("{prefix}dual"))?),
            InnerProduct::Euclidean => None,
        };
        if dual.as_ref().is_some_and(|d| d.shape() != modes.shape()) {
            return Err(Error::Container("dual basis shape disagrees with modes".into()));
        }
        Ok(Self { modes, dual, sigma: c.vec(&format!("{prefix}sigma"))?, kind: meta.kind, source_hash: meta.source_hash })
    }
}

/// `Σ_{i<n} σ_i / Σ_k σ_k`.
pub fn retained_energy(sigma: &[f64], n: usize) -> Result<f64> {
    if n > sigma.len() {
        return Err(Error::Truncation { requested: n, attainable: sigma.len() });
    }
    let total: f64 = sigma.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedEnergy);
    }
    Ok(sigma[..n].iter().sum::<f64>() / total)
}

/// Smallest `n` whose retained energy reaches `threshold`.
pub fn size_for_energy(sigma: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("energy threshold {threshold} outside (0, 1]")));
    }
    let total: f64 = sigma.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedEnergy);
    }
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s;
        // relative slack so that threshold 1 is met despite summation order
        if acc >= threshold * total * (1.0 - 4.0 * f64::EPSILON) {
            return Ok(i + 1);
        }
    }
    Ok(sigma.len())
}

/// Correlation matrix `K = Sᵀ M S`, symmetrized.
pub fn correlation_matrix(snapshots: &SnapshotSet) -> DMatrix<f64> {
    let s = snapshots.matrix();
    let ms = snapshots.apply_mass(s);
    let ns = s.ncols();
    let entries: Vec<(usize, usize, f64)> = (0..ns)
        .into_par_iter()
        .flat_map_iter(|i| (0..=i).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, s.column(i).dot(&ms.column(j))))
        .collect();
    let mut k = DMatrix::zeros(ns, ns);
    for (i, j, v) in entries {
        k[(i, j)] = v;
        k[(j, i)] = v;
    }
    k
}

/// POD basis of a snapshot set.
pub fn compute_pod(snapshots: &SnapshotSet, truncation: Truncation) -> Result<ReducedBasis> {
    if snapshots.is_empty() {
        return Err(Error::invalid("POD needs at least one snapshot"));
    }
    let k = correlation_matrix(snapshots);
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lmax = eig.eigenvalues[order[0]];
    let kept: Vec<usize> = order
        .into_iter()
        .take_while(|&i| lmax > 0.0 && eig.eigenvalues[i] > EIGEN_FLOOR * lmax)
        .collect();
    let sigma: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = match truncation {
        Truncation::Size(n) if n > sigma.len() => {
            return Err(Error::Truncation { requested: n, attainable: sigma.len() });
        }
        Truncation::Size(n) => n,
        Truncation::Energy(t) => size_for_energy(&sigma, t)?,
    };

    let s = snapshots.matrix();
    let mut modes = DMatrix::zeros(s.nrows(), n);
    for (c, &i) in kept.iter().take(n).enumerate() {
        let col = s * eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt();
        modes.set_column(c, &col);
    }
    // two passes of modified Gram-Schmidt restore orthonormality lost to round-off
    for _ in 0..2 {
        orthonormalize(&mut modes, snapshots.mass().map(|m| m.as_ref()))?;
    }
    for mut col in modes.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let dual = snapshots.mass().map(|m| m.mul_dense(&modes));
    Ok(ReducedBasis { modes, dual, sigma, kind: snapshots.kind(), source_hash: snapshots.hash() })
}

fn orthonormalize(v: &mut DMatrix<f64>, mass: Option<&CsrMatrix>) -> Result<()> {
    let weighted = |x: &[f64]| -> Vec<f64> { mass.map_or_else(|| x.to_vec(), |m| m.mul_vec(x)) };
    for j in 0..v.ncols() {
        let mut col: Vec<f64> = v.column(j).iter().copied().collect();
        for i in 0..j {
            let vi = v.column(i);
            let w = weighted(vi.as_slice());
            let c = crate::linalg::dot(&w, &col);
            col.iter_mut().zip(vi.iter()).for_each(|(x, y)| *x -= c * y);
        }
        let norm = crate::linalg::dot(&weighted(&col), &col).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Truncation { requested: v.ncols(), attainable: j });
        }
        v.set_column(j, &DVector::from_vec(col.iter().map(|x| x / norm).collect()));
    }
    Ok(())
}

/// Squared projection error `Σ_k ‖s_k − V Vᵀ M s_k‖²_M` of a basis over a snapshot set.
pub fn projection_error(basis: &ReducedBasis, snapshots: &SnapshotSet) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..snapshots.len() {
        let s: Vec<f64> = snapshots.matrix().column(j).iter().copied().collect();
        let r: Vec<f64> = basis.lift(&basis.project(&s)?)?.iter().zip(&s).map(|(a, b)| b - a).collect();
        total += match snapshots.mass() {
            Some(m) => m.bilinear(&r, &r),
            None => crate::linalg::dot(&r, &r),
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize) -> Vec<ParameterPoint> {
        (0..n).map(|i| ParameterPoint::speed(i as f64)).collect()
    }

    #[test]
    fn repeated_snapshot_has_rank_one() {
        let s: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        let cols = vec![s.clone(); 5];
        let set = SnapshotSet::from_columns(&cols, params(5), FieldKind::Velocity).unwrap();
        let b = compute_pod(&set, Truncation::Size(1)).unwrap();
        assert_eq!(b.sigma().len(), 1);
        let norm = crate::linalg::norm2(&s);
        let sign = if b.modes()[(0, 0)] * s[0] > 0.0 { 1.0 } else { -1.0 };
        for i in 0..30 {
            assert!((b.modes()[(i, 0)] - sign * s[i] / norm).abs() < 1e-13);
        }
        assert!(matches!(
            compute_pod(&set, Truncation::Size(2)),
            Err(Error::Truncation { requested: 2, attainable: 1 })
        ));
    }

    #[test]
    fn energy_examples() {
        let s = [10.0, 1.0, 0.1];
        assert_eq!(retained_energy(&s, 3).unwrap(), 1.0);
        assert_eq!(retained_energy(&s, 0).unwrap(), 0.0);
        assert!((retained_energy(&s, 1).unwrap() - 10.0 / 11.1).abs() < 1e-15);
        assert!(matches!(retained_energy(&[0.0, 0.0], 1), Err(Error::UndefinedEnergy)));
        assert_eq!(size_for_energy(&s, 1.0).unwrap(), 3);
        assert_eq!(size_for_energy(&s, 0.9).unwrap(), 1);
    }

    #[test]
    fn duplicate_parameters_are_rejected() {
        let cols = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let p = vec![ParameterPoint::speed(1.0); 2];
        assert!(SnapshotSet::from_columns(&cols, p, FieldKind::Velocity).is_err());
    }

    #[test]
    fn zero_snapshots_have_no_energy() {
        let set = SnapshotSet::from_columns(&[vec![0.0; 4], vec![0.0; 4]], params(2), FieldKind::Velocity).unwrap();
        assert!(matches!(compute_pod(&set, Truncation::Energy(0.9)), Err(Error::UndefinedEnergy)));
        assert!(compute_pod(&set, Truncation::Size(0)).unwrap().size() == 0);
    }
}
