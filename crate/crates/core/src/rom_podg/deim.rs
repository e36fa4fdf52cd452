//! Discrete empirical interpolation of a nonlinear term.

use nalgebra::{DMatrix, DVector};

use crate::pod::{compute_pod, SnapshotSet, Truncation};
use crate::{Error, Result};

/// Collateral basis `U`, interpolation indices `℘` and `(℘ᵀU)⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeimData {
    pub basis: DMatrix<f64>,
    pub indices: Vec<usize>,
    pub interp_inverse: DMatrix<f64>,
}

impl DeimData {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// Coefficients in the collateral basis from values at the interpolation indices.
    pub fn coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.size() {
            return Err(Error::Dimension { expected: self.size(), got: values.len() });
        }
        Ok((&self.interp_inverse * DVector::from_column_slice(values)).data.into())
    }

    /// `U (℘ᵀU)⁻¹ f[℘]` for a full vector `f`.
    pub fn reconstruct(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != self.basis.nrows() {
            return Err(Error::Dimension { expected: self.basis.nrows(), got: full.len() });
        }
        let vals: Vec<f64> = self.indices.iter().map(|&i| full[i]).collect();
        let c = self.coefficients(&vals)?;
        Ok((&self.basis * DVector::from_vec(c)).data.into())
    }

    /// `Wᵀ U (℘ᵀU)⁻¹`, mapping interpolated values to the test space of `W`.
    pub fn projector(&self, test: &DMatrix<f64>) -> DMatrix<f64> {
        test.transpose() * &self.basis * &self.interp_inverse
    }
}

/// Greedy DEIM on the leading `size` POD modes of the nonlinear snapshots.
pub fn build_deim(snapshots: &SnapshotSet, size: usize) -> Result<DeimData> {
    if size == 0 {
        return Err(Error::invalid("DEIM size must be at least one"));
    }
    let pod = compute_pod(snapshots, Truncation::Size(size)).map_err(|e| match e {
        Error::Truncation { requested, attainable } => Error::DeimRank { requested, attainable },
        other => other,
    })?;
    let u = pod.modes().clone();
    let indices = greedy_indices(&u)?;
    let p = DMatrix::from_fn(size, size, |i, j| u[(indices[i], j)]);
    let interp_inverse = p.try_inverse().ok_or(Error::DeimRank { requested: size, attainable: size - 1 })?;
    Ok(DeimData { basis: u, indices, interp_inverse })
}

fn argmax_abs(v: impl Iterator<Item = f64>) -> (usize, f64) {
    v.enumerate().fold((0, -1.0), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
}

/// Interpolation indices of the classical greedy selection; ties go to the lowest index.
pub fn greedy_indices(u: &DMatrix<f64>) -> Result<Vec<usize>> {
    let m = u.ncols();
    let mut indices: Vec<usize> = Vec::with_capacity(m);
    let scale = u.column_iter().map(|c| c.amax()).fold(0.0, f64::max);
    for l in 0..m {
        let col = u.column(l);
        let r: DVector<f64> = if l == 0 {
            col.into_owned()
        } else {
            let p = DMatrix::from_fn(l, l, |i, j| u[(indices[i], j)]);
            let rhs = DVector::from_fn(l, |i, _| col[indices[i]]);
            let c = p.lu().solve(&rhs).ok_or(Error::DeimRank { requested: m, attainable: l })?;
            col - u.columns(0, l) * c
        };
        let (i, v) = argmax_abs(r.iter().copied());
        if !(v > 1e-14 * scale) || indices.contains(&i) {
            return Err(Error::DeimRank { requested: m, attainable: l });
        }
        indices.push(i);
    }
    Ok(indices)
}
