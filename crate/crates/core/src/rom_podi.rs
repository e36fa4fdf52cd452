//! Non-intrusive reduced model: POD coefficients interpolated over the
//! parameter space with thin-plate-spline radial basis functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::fom_ins::{ParameterBounds, ParameterPoint};
use crate::pod::{compute_pod, BasisMeta, ReducedBasis, SnapshotSet, Truncation};
use crate::{Error, Result};

/// Thin-plate spline `φ(d) = d² log d`, with `φ(0) = 0`.
pub fn tps_kernel(d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("kernel argument must be non-negative, got {d}")));
    }
    Ok(if d == 0.0 { 0.0 } else { d * d * d.ln() })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    ThinPlate,
}

impl Kernel {
    fn eval(self, d: f64) -> f64 {
        match self {
            Kernel::ThinPlate => if d == 0.0 { 0.0 } else { d * d * d.ln() },
        }
    }
}

/// Treatment of the wind direction in the interpolation metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// `w_d` enters as `(cos w_d, sin w_d)`, so 0° and 360° coincide.
    #[default]
    Embed,
    /// `w_d` enters as a plain scalar.
    Scalar,
}

/// Affine map of parameter features onto the unit cube of the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub angle: AngleMode,
    pub dim: usize,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    fn raw(angle: AngleMode, p: &ParameterPoint) -> Vec<f64> {
        match (p.w_d, angle) {
            (None, _) => vec![p.w_i],
            (Some(d), AngleMode::Scalar) => vec![p.w_i, d],
            (Some(d), AngleMode::Embed) => vec![p.w_i, d.to_radians().cos(), d.to_radians().sin()],
        }
    }

    pub fn fit(points: &[ParameterPoint], angle: AngleMode) -> Result<Self> {
        let dim = ParameterBounds::from_points(points)?.dim();
        let raw: Vec<Vec<f64>> = points.iter().map(|p| Self::raw(angle, p)).collect();
        let nf = raw[0].len();
        let mut offset = vec![0.0; nf];
        let mut scale = vec![1.0; nf];
        for k in 0..nf {
            let lo = raw.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = raw.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            offset[k] = lo;
            if hi > lo {
                scale[k] = 1.0 / (hi - lo);
            }
        }
        Ok(Self { angle, dim, offset, scale })
    }

    /// Normalized feature vector of a parameter point.
    pub fn apply(&self, p: &ParameterPoint) -> Result<Vec<f64>> {
        if p.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: p.dim() });
        }
        Ok(Self::raw(self.angle, p)
            .iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| (x - o) * s)
            .collect())
    }

    pub fn features(&self) -> usize {
        self.offset.len()
    }
}

/// Vector-valued RBF interpolant on normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfInterpolant {
    kernel: Kernel,
    centers: DMatrix<f64>,
    /// One column of weights per output component.
    weights: DMatrix<f64>,
    /// Linear polynomial coefficients, rows `[1, x_1, …, x_d]`.
    poly: Option<DMatrix<f64>>,
    length: f64,
}

impl RbfInterpolant {
    /// Fits `values` (rows = centers, columns = outputs) at `centers` (rows = points).
    pub fn fit(kernel: Kernel, centers: DMatrix<f64>, values: &DMatrix<f64>, polynomial: bool) -> Result<Self> {
        let (n, nf) = centers.shape();
        if values.nrows() != n {
            return Err(Error::Dimension { expected: n, got: values.nrows() });
        }
        for i in 0..n {
            for j in 0..i {
                if (centers.row(i) - centers.row(j)).norm() == 0.0 {
                    return Err(Error::Rbf(format!("training points {j} and {i} coincide after normalization")));
                }
            }
        }
        // distances in the unit cube stay below √d, so d/ℓ < 1/2 keeps φ away from its root at 1
        let length = 2.0 * (nf.max(1) as f64).sqrt();
        let np = if polynomial { nf + 1 } else { 0 };
        let mut a = DMatrix::zeros(n + np, n + np);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = kernel.eval((centers.row(i) - centers.row(j)).norm() / length);
            }
            if polynomial {
                a[(i, n)] = 1.0;
                a[(n, i)] = 1.0;
                for k in 0..nf {
                    a[(i, n + 1 + k)] = centers[(i, k)];
                    a[(n + 1 + k, i)] = centers[(i, k)];
                }
            }
        }
        let mut rhs = DMatrix::zeros(n + np, values.ncols());
        rhs.rows_mut(0, n).copy_from(values);
        let lu = a.lu();
        let sol = lu.solve(&rhs).ok_or_else(|| Error::Rbf("singular interpolation system".into()))?;
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(Error::Rbf("interpolation system produced non-finite weights".into()));
        }
        Ok(Self {
            kernel,
            weights: sol.rows(0, n).into_owned(),
            poly: polynomial.then(|| sol.rows(n, np).into_owned()),
            centers,
            length,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x).transpose();
        let phi = DVector::from_fn(self.centers.nrows(), |i, _| {
            self.kernel.eval((self.centers.row(i) - &xv).norm() / self.length)
        });
        let mut out = self.weights.transpose() * phi;
        if let Some(p) = &self.poly {
            let mut basis = vec![1.0];
            basis.extend_from_slice(x);
            out += p.transpose() * DVector::from_vec(basis);
        }
        out.data.into()
    }

    /// Restriction to the first `m` output components.
    pub fn outputs(&self, m: usize) -> Self {
        Self {
            kernel: self.kernel,
            centers: self.centers.clone(),
            weights: self.weights.columns(0, m).into_owned(),
            poly: self.poly.as_ref().map(|p| p.columns(0, m).into_owned()),
            length: self.length,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodiOptions {
    pub size: usize,
    pub kernel: Kernel,
    pub angle: AngleMode,
    /// Augment the kernel expansion with a linear polynomial.
    pub polynomial: bool,
}

impl Default for PodiOptions {
    fn default() -> Self {
        Self { size: 20, kernel: Kernel::ThinPlate, angle: AngleMode::Embed, polynomial: false }
    }
}

/// Basis, projected training coefficients and their interpolant for one field.
#[derive(Clone, Debug, PartialEq)]
pub struct PodiField {
    pub basis: ReducedBasis,
    /// `Vᵀ M S`, one column per training point.
    pub coefficients: DMatrix<f64>,
    pub interpolant: RbfInterpolant,
}

impl PodiField {
    fn train(basis: ReducedBasis, snapshots: &SnapshotSet, centers: &DMatrix<f64>, opts: &PodiOptions) -> Result<Self> {
        if basis.dim() != snapshots.dim() {
            return Err(Error::Dimension { expected: basis.dim(), got: snapshots.dim() });
        }
        let mut coefficients = DMatrix::zeros(basis.size(), snapshots.len());
        for j in 0..snapshots.len() {
            let s: Vec<f64> = snapshots.matrix().column(j).iter().copied().collect();
            coefficients.set_column(j, &DVector::from_vec(basis.project(&s)?));
        }
        let interpolant = RbfInterpolant::fit(opts.kernel, centers.clone(), &coefficients.transpose(), opts.polynomial)?;
        let field = Self { basis, coefficients, interpolant };
        field.check_reproduction(centers)?;
        Ok(field)
    }

    fn check_reproduction(&self, centers: &DMatrix<f64>) -> Result<()> {
        let largest = self.coefficients.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        for k in 0..centers.nrows() {
            let x: Vec<f64> = centers.row(k).iter().copied().collect();
            let pi = DVector::from_vec(self.interpolant.eval(&x));
            let target = self.coefficients.column(k);
            let err = (pi - target).norm();
            if err > 1e-8 * target.norm() + 1e-12 * largest {
                return Err(Error::Rbf(format!("training point {k} reproduced with error {err:.3e}")));
            }
        }
        Ok(())
    }

    fn truncate(&self, n: usize) -> Result<Self> {
        Ok(Self {
            basis: self.basis.truncate(n)?,
            coefficients: self.coefficients.rows(0, n).into_owned(),
            interpolant: self.interpolant.outputs(n),
        })
    }

    fn evaluate(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.interpolant.eval(x);
        let full = self.basis.lift(&a).expect("coefficient count matches basis size");
        (a, full)
    }
}

/// Trained non-intrusive model.
#[derive(Clone, Debug, PartialEq)]
pub struct PodiArtifact {
    pub options: PodiOptions,
    pub params: Vec<ParameterPoint>,
    pub bounds: ParameterBounds,
    pub normalization: Normalization,
    pub velocity: PodiField,
    pub pressure: Option<PodiField>,
}

/// Output of one online evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PodiEvaluation {
    pub u: Vec<f64>,
    pub p: Option<Vec<f64>>,
    pub coefficients: Vec<f64>,
    /// The parameter lies outside the training box.
    pub extrapolated: bool,
}

/// Trains on velocity snapshots, computing the POD basis of size `opts.size`.
pub fn train_podi(snapshots: &SnapshotSet, opts: &PodiOptions) -> Result<PodiArtifact> {
    let basis = compute_pod(snapshots, Truncation::Size(opts.size))?;
    train_podi_with_basis(basis, snapshots, opts)
}

/// Trains with a precomputed basis (of any size; `opts.size` is ignored).
pub fn train_podi_with_basis(basis: ReducedBasis, snapshots: &SnapshotSet, opts: &PodiOptions) -> Result<PodiArtifact> {
    if snapshots.len() < 2 {
        return Err(Error::invalid("PODI needs at least two training points"));
    }
    let params = snapshots.params().to_vec();
    let normalization = Normalization::fit(&params, opts.angle)?;
    let centers = centers(&normalization, &params)?;
    let velocity = PodiField::train(basis, snapshots, &centers, opts)?;
    Ok(PodiArtifact {
        options: PodiOptions { size: velocity.basis.size(), ..*opts },
        bounds: ParameterBounds::from_points(&params)?,
        params,
        normalization,
        velocity,
        pressure: None,
    })
}

fn centers(norm: &Normalization, params: &[ParameterPoint]) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = params.iter().map(|p| norm.apply(p)).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), norm.features(), |i, j| rows[i][j]))
}

impl PodiArtifact {
    pub const KIND: &'static str = "podi-artifact";

    /// Adds a pressure interpolant trained on the same parameter points.
    pub fn with_pressure(mut self, snapshots: &SnapshotSet, size: usize) -> Result<Self> {
        if snapshots.params() != self.params.as_slice() {
            return Err(Error::invalid("pressure snapshots must share the velocity training parameters"));
        }
        let basis = compute_pod(snapshots, Truncation::Size(size))?;
        let c = centers(&self.normalization, &self.params)?;
        self.pressure = Some(PodiField::train(basis, snapshots, &c, &self.options)?);
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.velocity.basis.size()
    }

    /// Same model restricted to the first `n` velocity modes.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        Ok(Self {
            options: PodiOptions { size: n, ..self.options },
            velocity: self.velocity.truncate(n)?,
            ..self.clone()
        })
    }

    pub fn evaluate(&self, mu: &ParameterPoint) -> Result<PodiEvaluation> {
        let x = self.normalization.apply(mu)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("parameter {mu} is not finite")));
        }
        let (coefficients, u) = self.velocity.evaluate(&x);
        let p = self.pressure.as_ref().map(|f| f.evaluate(&x).1);
        Ok(PodiEvaluation { u, p, coefficients, extrapolated: !self.bounds.contains(mu) })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(Self::KIND, serde_json::Value::Null)?;
        let velocity = push_field(&mut c, "velocity.", &self.velocity);
        let pressure = self.pressure.as_ref().map(|f| push_field(&mut c, "pressure.", f));
        let meta = PodiMeta {
            format: 1,
            options: self.options,
            params: self.params.clone(),
            bounds: self.bounds,
            normalization: self.normalization.clone(),
            length: self.velocity.interpolant.length,
            velocity,
            pressure,
        };
        c.meta = serde_json::to_value(meta).map_err(|e| Error::Container(e.to_string()))?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let meta: PodiMeta = c.meta_as()?;
        if meta.format != 1 {
            return Err(Error::Container(format!("unsupported PODI format {}", meta.format)));
        }
        let centers = centers(&meta.normalization, &meta.params)?;
        let pull = |prefix: &str, basis: BasisMeta| -> Result<PodiField> {
            let basis = ReducedBasis::pull_from(c, prefix, basis)?;
            let coefficients = c.matrix(&format!("{prefix}coefficients"))?;
            let weights = c.matrix(&format!("{prefix}weights"))?;
            let poly = if meta.options.polynomial { Some(c.matrix(&format!("{prefix}poly"))?) } else { None };
            if weights.shape() != (meta.params.len(), basis.size()) || coefficients.shape() != (basis.size(), meta.params.len()) {
                return Err(Error::Container("PODI block shapes disagree with header".into()));
            }
            let interpolant = RbfInterpolant { kernel: meta.options.kernel, centers: centers.clone(), weights, poly, length: meta.length };
            Ok(PodiField { basis, coefficients, interpolant })
        };
        Ok(Self {
            velocity: pull("velocity.", meta.velocity.clone())?,
            pressure: meta.pressure.clone().map(|b| pull("pressure.", b)).transpose()?,
            options: meta.options,
            params: meta.params,
            bounds: meta.bounds,
            normalization: meta.normalization,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PodiMeta {
    format: u32,
    options: PodiOptions,
    params: Vec<ParameterPoint>,
    bounds: ParameterBounds,
    normalization: Normalization,
    length: f64,
    velocity: BasisMeta,
    pressure: Option<BasisMeta>,
}

fn push_field(c: &mut Container, prefix: &str, f: &PodiField) -> BasisMeta {
    let meta = f.basis.push_to(c, prefix);
    c.push_matrix(&format!("{prefix}coefficients"), &f.coefficients);
    c.push_matrix(&format!("{prefix}weights"), &f.interpolant.weights);
    if let Some(p) = &f.interpolant.poly {
        c.push_matrix(&format!("{prefix}poly"), p);
    }
    meta
}
