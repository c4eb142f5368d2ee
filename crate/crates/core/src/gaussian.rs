//! Gaussian densities, augmentation with noise, and conditioning.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{select_block, select_vec, SpdFactor};

/// Eigenvalues below `-CLAMP_FLOOR·λ_max` are clamped to zero.
pub const CLAMP_FLOOR: f64 = 1e-14;
/// Eigenvalues below `-REPAIR_THRESHOLD·λ_max` are reported as a repair event.
pub const REPAIR_THRESHOLD: f64 = 1e-10;

/// A covariance that had to be pulled back onto the PSD cone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepairEvent {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Symmetrize `cov` and clamp negative eigenvalues.
///
/// Returns the repaired matrix and, when the most negative eigenvalue was
/// below `-1e-10·λ_max`, a [`RepairEvent`] (also logged at warn level).
pub fn symmetrize_and_repair(cov: &DMatrix<f64>) -> (DMatrix<f64>, Option<RepairEvent>) {
    let sym = (cov + cov.transpose()) * 0.5;
    if sym.nrows() == 0 {
        return (sym, None);
    }
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    let scale = max.abs().max(min.abs());
    if min >= -CLAMP_FLOOR * scale {
        return (sym, None);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    let event = if max <= 0.0 || min < -REPAIR_THRESHOLD * max {
        log::warn!("covariance repaired: eigenvalue {min:e} clamped (largest {max:e})");
        Some(RepairEvent { min_eigenvalue: min, max_eigenvalue: max })
    } else {
        None
    };
    (rebuilt, event)
}

/// A multivariate normal density `N(mean, cov)`.
///
/// The covariance is symmetrized and repaired on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dim(
                "GaussianDensity::new",
                format!("mean has length {n}, covariance is {}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "GaussianDensity::new" });
        }
        let (cov, _) = symmetrize_and_repair(&cov);
        Ok(GaussianDensity { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let n = mean.len();
        if cov_row_major.len() != n * n {
            return Err(Error::dim("GaussianDensity::from_slices", "covariance length is not n²"));
        }
        Self::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(n, n, cov_row_major))
    }

    pub fn standard(n: usize) -> Self {
        GaussianDensity { mean: DVector::zeros(n), cov: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Marginal over the listed coordinates, in the listed order.
    pub fn marginal(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::dim("marginal", format!("index {bad} out of range for dimension {}", self.dim())));
        }
        Ok(GaussianDensity { mean: select_vec(&self.mean, indices), cov: select_block(&self.cov, indices, indices) })
    }
}

/// Two disjoint ordered index lists that together cover `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexPartition {
    first: Vec<usize>,
    second: Vec<usize>,
}

impl IndexPartition {
    pub fn new(first: Vec<usize>, second: Vec<usize>) -> Result<Self> {
        let n = first.len() + second.len();
        let mut seen = vec![false; n];
        for &i in first.iter().chain(&second) {
            if i >= n {
                return Err(Error::Partition(format!("index {i} out of range 0..{n}")));
            }
            if seen[i] {
                return Err(Error::Partition(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(IndexPartition { first, second })
    }

    /// `first = 0..k`, `second = k..n`.
    pub fn leading(k: usize, n: usize) -> Result<Self> {
        if k > n {
            return Err(Error::Partition(format!("split {k} exceeds dimension {n}")));
        }
        Ok(IndexPartition { first: (0..k).collect(), second: (k..n).collect() })
    }

    pub fn first(&self) -> &[usize] {
        &self.first
    }

    pub fn second(&self) -> &[usize] {
        &self.second
    }

    pub fn len(&self) -> usize {
        self.first.len() + self.second.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Noise entering a state transition or a measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Cross covariance with the state (`n_x × n_ε`), if any.
    cross: Option<DMatrix<f64>>,
}

impl NoiseModel {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = GaussianDensity::new(mean, cov).map_err(|e| Error::Noise(e.to_string()))?;
        let (mean, cov) = d.into_parts();
        Ok(NoiseModel { mean, cov, cross: None })
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(cov.nrows()), cov)
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::zero_mean(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    /// Attach a state/noise cross covariance (`n_x × n_ε`).
    pub fn with_cross(mut self, cross: DMatrix<f64>) -> Result<Self> {
        if cross.ncols() != self.dim() {
            return Err(Error::Noise(format!(
                "cross covariance has {} columns, noise dimension is {}",
                cross.ncols(),
                self.dim()
            )));
        }
        self.cross = Some(cross);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cross(&self) -> Option<&DMatrix<f64>> {
        self.cross.as_ref()
    }

    pub fn is_independent(&self) -> bool {
        self.cross.as_ref().is_none_or(|c| c.iter().all(|v| *v == 0.0))
    }

    /// Same noise with the covariance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        NoiseModel {
            mean: self.mean.clone(),
            cov: &self.cov * factor,
            cross: self.cross.as_ref().map(|c| c * factor.sqrt()),
        }
    }
}

/// Joint density of `[x; ε]`.
pub fn augment(state: &GaussianDensity, noise: &NoiseModel) -> Result<GaussianDensity> {
    let n = state.dim();
    let q = noise.dim();
    let mut mean = DVector::zeros(n + q);
    mean.rows_mut(0, n).copy_from(state.mean());
    mean.rows_mut(n, q).copy_from(noise.mean());
    let mut cov = DMatrix::zeros(n + q, n + q);
    cov.view_mut((0, 0), (n, n)).copy_from(state.cov());
    cov.view_mut((n, n), (q, q)).copy_from(noise.cov());
    if let Some(cross) = noise.cross() {
        if cross.nrows() != n {
            return Err(Error::dim(
                "augment",
                format!("cross covariance has {} rows, state dimension is {n}", cross.nrows()),
            ));
        }
        cov.view_mut((0, n), (n, q)).copy_from(cross);
        cov.view_mut((n, 0), (q, n)).copy_from(&cross.transpose());
    }
    GaussianDensity::new(mean, cov)
}

/// Density of the `second` block given that the `first` block equals `value_of_first`.
pub fn condition(
    joint: &GaussianDensity,
    partition: &IndexPartition,
    value_of_first: &DVector<f64>,
) -> Result<GaussianDensity> {
    if partition.len() != joint.dim() {
        return Err(Error::dim(
            "condition",
            format!("partition covers {} indices, density has {}", partition.len(), joint.dim()),
        ));
    }
    let (a, b) = (partition.first(), partition.second());
    if value_of_first.len() != a.len() {
        return Err(Error::dim("condition", "conditioning value length"));
    }
    let p_aa = select_block(joint.cov(), a, a);
    let p_ab = select_block(joint.cov(), a, b);
    let p_bb = select_block(joint.cov(), b, b);
    let factor = SpdFactor::new(&p_aa, "condition")?;
    // Gᵀ = P_aa⁻¹ P_ab, where G = P_ba P_aa⁻¹ is the regression matrix.
    let gain_t = factor.solve(&p_ab);
    let innovation = value_of_first - select_vec(joint.mean(), a);
    let mean = select_vec(joint.mean(), b) + gain_t.transpose() * innovation;
    let cov = p_bb - p_ab.transpose() * gain_t;
    GaussianDensity::new(mean, cov)
}
