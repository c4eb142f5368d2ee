//! Moment transforms: the mean of `g(z)`, its covariance, and its cross
//! covariance with `z` for a Gaussian `z`, under linear, first-order Taylor
//! and sigma-point rules.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::gaussian::{symmetrize_and_repair, GaussianDensity, NoiseModel};
use crate::linalg::{cov_sqrt, SpdFactor};

/// A vector-valued function `ℝⁿ → ℝᵐ`.
///
/// Implementations must be callable from several threads at once.
pub trait VectorFunction: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Jacobian at `x`, if the function provides one.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

pub type SharedFunction = Arc<dyn VectorFunction>;

impl fmt::Debug for dyn VectorFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorFunction({} -> {})", self.input_dim(), self.output_dim())
    }
}

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Closure-backed [`VectorFunction`].
pub struct FnFunction {
    input_dim: usize,
    output_dim: usize,
    f: Box<EvalFn>,
    jac: Option<Box<JacFn>>,
}

impl FnFunction {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        FnFunction { input_dim, output_dim, f: Box::new(f), jac: None }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }

    pub fn shared(self) -> SharedFunction {
        Arc::new(self)
    }
}

impl VectorFunction for FnFunction {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.f)(x))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        self.jac.as_ref().map(|j| Ok(j(x)))
    }
}

/// `g(z) = J z + b`.
#[derive(Clone, Debug)]
pub struct AffineFunction {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineFunction {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != offset.len() {
            return Err(Error::dim("AffineFunction::new", "offset length differs from row count"));
        }
        Ok(AffineFunction { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        AffineFunction { matrix, offset }
    }

    pub fn shared(self) -> SharedFunction {
        Arc::new(self)
    }
}

impl VectorFunction for AffineFunction {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * x + &self.offset)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(self.matrix.clone()))
    }
}

/// Evaluate `g` and check the output length and finiteness.
pub fn eval_checked(g: &dyn VectorFunction, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != g.input_dim() {
        return Err(Error::dim(
            "evaluate",
            format!("input has length {}, function expects {}", x.len(), g.input_dim()),
        ));
    }
    let y = g.eval(x)?;
    if y.len() != g.output_dim() {
        return Err(Error::Evaluation(format!("output has length {}, function declares {}", y.len(), g.output_dim())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite function value".into()));
    }
    Ok(y)
}

/// The three expectations of `g(z)`: mean, covariance, and cross covariance with `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTriple {
    pub mean: DVector<f64>,
    /// `m × m`.
    pub cov: DMatrix<f64>,
    /// `n × m`, rows ordered as `z`.
    pub cross: DMatrix<f64>,
    pub cost: Cost,
}

/// Weighted deterministic samples of a Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim());
        for (p, w) in self.points.iter().zip(&self.mean_weights) {
            mean.axpy(*w, p, 1.0);
        }
        mean
    }

    /// Weighted scatter about `center`.
    pub fn weighted_scatter(&self, center: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut cov = DMatrix::zeros(n, n);
        for (p, w) in self.points.iter().zip(&self.cov_weights) {
            let d = p - center;
            cov.ger(*w, &d, &d, 1.0);
        }
        cov
    }
}

/// Classical unscented κ: `3 − n` for `n < 3`, otherwise 0.
pub fn default_kappa(n: usize) -> f64 {
    if n < 3 {
        3.0 - n as f64
    } else {
        0.0
    }
}

/// `2n+1` unscented points `μ, μ ± √(n+κ)·Lᵢ` with `L` the lower Cholesky factor.
pub fn unscented_points(z: &GaussianDensity, kappa: f64) -> Result<SigmaPointSet> {
    let n = z.dim();
    let spread = n as f64 + kappa;
    if spread <= 0.0 {
        return Err(Error::Config(format!("unscented spread n+κ = {spread} must be positive")));
    }
    let l = cov_sqrt(z.cov(), "unscented_points")? * spread.sqrt();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(z.mean().clone());
    for i in 0..n {
        points.push(z.mean() + l.column(i));
    }
    for i in 0..n {
        points.push(z.mean() - l.column(i));
    }
    let w0 = kappa / spread;
    let wi = 1.0 / (2.0 * spread);
    let mut weights = vec![wi; 2 * n + 1];
    weights[0] = w0;
    Ok(SigmaPointSet { points, mean_weights: weights.clone(), cov_weights: weights })
}

/// `2n` third-degree spherical-radial cubature points `μ ± √n·Lᵢ`, weights `1/(2n)`.
pub fn cubature_points(z: &GaussianDensity) -> Result<SigmaPointSet> {
    let n = z.dim();
    if n == 0 {
        return Err(Error::dim("cubature_points", "zero-dimensional density"));
    }
    let l = cov_sqrt(z.cov(), "cubature_points")? * (n as f64).sqrt();
    let mut points = Vec::with_capacity(2 * n);
    for i in 0..n {
        points.push(z.mean() + l.column(i));
    }
    for i in 0..n {
        points.push(z.mean() - l.column(i));
    }
    let weights = vec![1.0 / (2 * n) as f64; 2 * n];
    Ok(SigmaPointSet { points, mean_weights: weights.clone(), cov_weights: weights })
}

/// `rotations` copies of the cubature set, each turned by a random orthogonal
/// matrix, with equal weights. Every copy matches the mean and covariance.
pub fn rotated_cubature_points(z: &GaussianDensity, rotations: usize, seed: u64) -> Result<SigmaPointSet> {
    let n = z.dim();
    if n == 0 || rotations == 0 {
        return Err(Error::Config("randomized cubature needs a positive dimension and rotation count".into()));
    }
    let l = cov_sqrt(z.cov(), "rotated_cubature_points")? * (n as f64).sqrt();
    let mut rng = crate::random::rng_from_seed(seed);
    let mut points = Vec::with_capacity(2 * n * rotations);
    for _ in 0..rotations {
        let q = &l * crate::random::random_orthogonal(&mut rng, n);
        for i in 0..n {
            points.push(z.mean() + q.column(i));
        }
        for i in 0..n {
            points.push(z.mean() - q.column(i));
        }
    }
    let weights = vec![1.0 / points.len() as f64; points.len()];
    Ok(SigmaPointSet { points, mean_weights: weights.clone(), cov_weights: weights })
}

/// Which moment approximation to use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// First-order Taylor expansion at the mean.
    Ekf,
    /// Unscented rule; `None` selects [`default_kappa`].
    Unscented { kappa: Option<f64> },
    /// Third-degree cubature rule.
    Cubature,
    /// Average of `rotations` randomly rotated cubature rules (`2n` points
    /// each), seeded for reproducibility.
    Randomized { rotations: usize, seed: u64 },
}

impl Transform {
    pub fn unscented() -> Self {
        Transform::Unscented { kappa: None }
    }

    /// True for rules of the weighted-point form.
    pub fn uses_points(&self) -> bool {
        !matches!(self, Transform::Ekf)
    }

    pub fn point_count(&self, n: usize) -> usize {
        match self {
            Transform::Ekf => 1,
            Transform::Unscented { .. } => 2 * n + 1,
            Transform::Cubature => 2 * n,
            Transform::Randomized { rotations, .. } => 2 * n * rotations,
        }
    }

    /// Sigma points for `z`; `None` for derivative-based transforms.
    pub fn points(&self, z: &GaussianDensity) -> Result<Option<SigmaPointSet>> {
        match *self {
            Transform::Ekf => Ok(None),
            Transform::Unscented { kappa } => {
                unscented_points(z, kappa.unwrap_or_else(|| default_kappa(z.dim()))).map(Some)
            }
            Transform::Cubature => cubature_points(z).map(Some),
            Transform::Randomized { rotations, seed } => rotated_cubature_points(z, rotations, seed).map(Some),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Ekf => write!(f, "ekf"),
            Transform::Unscented { kappa: None } => write!(f, "ukf"),
            Transform::Unscented { kappa: Some(k) } => write!(f, "ukf(kappa={k})"),
            Transform::Cubature => write!(f, "ckf"),
            Transform::Randomized { rotations, seed } => write!(f, "rckf(rotations={rotations},seed={seed})"),
        }
    }
}

/// Moments of `J z + b`.
pub fn linear_transform(j: &DMatrix<f64>, b: &DVector<f64>, z: &GaussianDensity) -> Result<MomentTriple> {
    let (m, n) = j.shape();
    if n != z.dim() || b.len() != m {
        return Err(Error::dim("linear_transform", format!("J is {m}x{n}, offset {}, density {}", b.len(), z.dim())));
    }
    let cross = z.cov() * j.transpose();
    let cov = j * &cross;
    let (cov, _) = symmetrize_and_repair(&cov);
    Ok(MomentTriple {
        mean: j * z.mean() + b,
        cov,
        cross,
        cost: Cost::flops(cost::matmul(n, n, m) + cost::matmul(m, n, m)),
    })
}

/// Central-difference Jacobian with step `max(1e-6, 1e-6·|xᵢ|)`.
pub fn finite_difference_jacobian(g: &dyn VectorFunction, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(g.output_dim(), n);
    let mut probe = x.clone();
    for i in 0..n {
        let h = (1e-6 * x[i].abs()).max(1e-6);
        probe[i] = x[i] + h;
        let up = eval_checked(g, &probe)?;
        probe[i] = x[i] - h;
        let down = eval_checked(g, &probe)?;
        probe[i] = x[i];
        jac.set_column(i, &((up - down) / (2.0 * h)));
    }
    Ok(jac)
}

/// First-order Taylor moments at the mean.
pub fn ekf_transform(g: &dyn VectorFunction, z: &GaussianDensity) -> Result<MomentTriple> {
    let n = z.dim();
    let m = g.output_dim();
    let mean = eval_checked(g, z.mean())?;
    let (jac, evals) = match g.jacobian(z.mean()) {
        Some(j) => (j?, 1),
        None => (finite_difference_jacobian(g, z.mean())?, 1 + 2 * n as u64),
    };
    if jac.shape() != (m, n) {
        return Err(Error::dim("ekf_transform", format!("Jacobian is {:?}, expected ({m}, {n})", jac.shape())));
    }
    let cross = z.cov() * jac.transpose();
    let (cov, _) = symmetrize_and_repair(&(&jac * &cross));
    Ok(MomentTriple {
        mean,
        cov,
        cross,
        cost: Cost { evals, flops: cost::matmul(n, n, m) + cost::matmul(m, n, m), sigma_points: 1, point_cov_work: 0 },
    })
}

/// Weighted-point moments of `g` for points drawn from `z`.
pub fn sigma_transform(g: &dyn VectorFunction, points: &SigmaPointSet, z: &GaussianDensity) -> Result<MomentTriple> {
    let n = z.dim();
    let m = g.output_dim();
    if points.dim() != n && !points.is_empty() {
        return Err(Error::dim("sigma_transform", "sigma points do not match the density"));
    }
    let ys = points.points.iter().map(|p| eval_checked(g, p)).collect::<Result<Vec<_>>>()?;
    let mut mean = DVector::zeros(m);
    for (y, w) in ys.iter().zip(&points.mean_weights) {
        mean.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(n, m);
    for ((p, y), w) in points.points.iter().zip(&ys).zip(&points.cov_weights) {
        let dy = y - &mean;
        let dz = p - z.mean();
        cov.ger(*w, &dy, &dy, 1.0);
        cross.ger(*w, &dz, &dy, 1.0);
    }
    let (cov, _) = symmetrize_and_repair(&cov);
    let count = points.len();
    Ok(MomentTriple {
        mean,
        cov,
        cross,
        cost: Cost {
            evals: count as u64,
            flops: cost::matmul(count, m, m) + cost::matmul(count, n, m),
            sigma_points: count,
            point_cov_work: (m * m) as u64,
        },
    })
}

/// Dispatch to the selected transform.
pub fn transform_moments(g: &dyn VectorFunction, z: &GaussianDensity, transform: Transform) -> Result<MomentTriple> {
    if g.input_dim() != z.dim() {
        return Err(Error::dim(
            "transform_moments",
            format!("function takes {} inputs, density has dimension {}", g.input_dim(), z.dim()),
        ));
    }
    match transform.points(z)? {
        None => ekf_transform(g, z),
        Some(points) => {
            let mut t = sigma_transform(g, &points, z)?;
            t.cost.flops += cost::solve(z.dim(), 0);
            Ok(t)
        }
    }
}

/// Statistical linearization `J = P_gz P_zz⁻¹`.
pub fn statistical_jacobian(t: &MomentTriple, z: &GaussianDensity) -> Result<DMatrix<f64>> {
    if t.cross.nrows() != z.dim() {
        return Err(Error::dim("statistical_jacobian", "cross covariance rows differ from density dimension"));
    }
    if t.cross.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(t.cross.ncols(), t.cross.nrows()));
    }
    let factor = SpdFactor::new(z.cov(), "statistical_jacobian")?;
    Ok(factor.solve(&t.cross).transpose())
}

/// Moments of `g(x) + ε` computed on the state dimension only.
///
/// The returned cross covariance is with respect to `x`.
pub fn additive_noise_transform(
    g: &dyn VectorFunction,
    x: &GaussianDensity,
    noise: &NoiseModel,
    inner: Transform,
) -> Result<MomentTriple> {
    if !noise.is_independent() {
        return Err(Error::Noise("additive-noise shortcut requires noise independent of the state".into()));
    }
    if noise.dim() != g.output_dim() {
        return Err(Error::dim(
            "additive_noise_transform",
            format!("noise dimension {} differs from output dimension {}", noise.dim(), g.output_dim()),
        ));
    }
    let mut t = transform_moments(g, x, inner)?;
    t.mean += noise.mean();
    t.cov += noise.cov();
    Ok(t)
}
