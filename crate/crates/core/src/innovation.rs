//! Cheaper innovation solves: sequential block updates and the matrix
//! inversion lemma for `S = P_s + U P_v Uᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::filter::{update, Measurement, UpdateReport};
use crate::gaussian::GaussianDensity;
use crate::linalg::{block_diag, SpdFactor};
use crate::transforms::{SharedFunction, Transform};

/// Independent measurement blocks, applied in the stored order.
#[derive(Clone, Default)]
pub struct BlockMeasurement {
    blocks: Vec<(SharedFunction, Measurement)>,
}

impl BlockMeasurement {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a block; `h` acts on `[x; ε_i]`.
    pub fn push(&mut self, h: SharedFunction, meas: Measurement) -> &mut Self {
        self.blocks.push((h, meas));
        self
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[(SharedFunction, Measurement)] {
        &self.blocks
    }

    /// The same blocks in the order given by `order` (a permutation).
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Config("block order is not a permutation".into()));
        }
        Ok(BlockMeasurement { blocks: order.iter().map(|&i| self.blocks[i].clone()).collect() })
    }
}

/// Apply each block as a separate update, each against the partially updated state.
///
/// For linear models the result equals a joint update with block-diagonal
/// noise; for nonlinear models each block is relinearized at the running
/// estimate, so the order can change the result. The report concatenates the
/// per-block predicted measurements and gains, places the per-block
/// innovation covariances on a block diagonal, and sums the work counters.
pub fn block_update(
    state: &GaussianDensity,
    blocks: &BlockMeasurement,
    transform: Transform,
) -> Result<(GaussianDensity, UpdateReport)> {
    if blocks.is_empty() {
        return Err(Error::Config("block update needs at least one block".into()));
    }
    let mut current = state.clone();
    let mut reports = Vec::with_capacity(blocks.len());
    for (h, meas) in blocks.blocks() {
        let (next, report) = update(&current, h.as_ref(), meas, transform)?;
        current = next;
        reports.push(report);
    }
    let mut work = Cost::default();
    for r in &reports {
        work += r.cost();
    }
    let predicted = DVector::from_iterator(
        reports.iter().map(|r| r.predicted_measurement.len()).sum(),
        reports.iter().flat_map(|r| r.predicted_measurement.iter().copied()),
    );
    let covs: Vec<&DMatrix<f64>> = reports.iter().map(|r| &r.innovation_cov).collect();
    let gains: Vec<&DMatrix<f64>> = reports.iter().map(|r| &r.gain).collect();
    let gain = DMatrix::from_fn(state.dim(), predicted.len(), {
        let mut offsets = Vec::new();
        let mut acc = 0;
        for g in &gains {
            offsets.push(acc);
            acc += g.ncols();
        }
        move |i, j| {
            let b = offsets.iter().rposition(|&o| o <= j).unwrap();
            gains[b][(i, j - offsets[b])]
        }
    });
    let report = UpdateReport {
        predicted_measurement: predicted,
        innovation_cov: block_diag(&covs),
        gain,
        function_eval_count: 0,
        flop_proxy: 0,
        sigma_points: 0,
        point_cov_work: 0,
    }
    .with_cost(work);
    Ok((current, report))
}

/// `S = P_s + U P_v Uᵀ` with diagonal `P_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredInnovation {
    ps_diag: DVector<f64>,
    u: DMatrix<f64>,
    pv: DMatrix<f64>,
}

impl StructuredInnovation {
    pub fn new(ps_diag: DVector<f64>, u: DMatrix<f64>, pv: DMatrix<f64>) -> Result<Self> {
        if ps_diag.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::Config("diagonal of P_s must be positive".into()));
        }
        if u.nrows() != ps_diag.len() || u.ncols() != pv.nrows() || !pv.is_square() {
            return Err(Error::dim(
                "StructuredInnovation::new",
                format!("P_s {}, U {:?}, P_v {:?}", ps_diag.len(), u.shape(), pv.shape()),
            ));
        }
        Ok(StructuredInnovation { ps_diag, u, pv })
    }

    /// Outer dimension (size of `S`).
    pub fn dim(&self) -> usize {
        self.ps_diag.len()
    }

    /// Inner dimension (size of `P_v`).
    pub fn inner_dim(&self) -> usize {
        self.pv.nrows()
    }

    pub fn ps_diag(&self) -> &DVector<f64> {
        &self.ps_diag
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn pv(&self) -> &DMatrix<f64> {
        &self.pv
    }

    /// Dense `S`, for diagnostics and reference solves.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut s = &self.u * &self.pv * self.u.transpose();
        for i in 0..self.dim() {
            s[(i, i)] += self.ps_diag[i];
        }
        s
    }
}

/// Flop proxy of the dense Cholesky route for the same system.
pub fn dense_solve_flops(dim: usize, rhs: usize) -> u64 {
    cost::solve(dim, rhs)
}

/// `S⁻¹ · rhs` via the matrix inversion lemma,
/// `S⁻¹ = P_s⁻¹ − P_s⁻¹ U (P_v⁻¹ + Uᵀ P_s⁻¹ U)⁻¹ Uᵀ P_s⁻¹`.
///
/// Only inner-dimension matrices are factored. Returns the solution and its
/// flop proxy.
pub fn woodbury_solve(s: &StructuredInnovation, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, u64)> {
    let outer = s.dim();
    let inner = s.inner_dim();
    let cols = rhs.ncols();
    if rhs.nrows() != outer {
        return Err(Error::dim("woodbury_solve", format!("rhs has {} rows, S is {outer}x{outer}", rhs.nrows())));
    }
    let ps_inv = s.ps_diag.map(|d| 1.0 / d);
    let scaled_rhs = DMatrix::from_fn(outer, cols, |i, j| ps_inv[i] * rhs[(i, j)]);
    if inner == 0 {
        return Ok((scaled_rhs, 0));
    }
    let scaled_u = DMatrix::from_fn(outer, inner, |i, j| ps_inv[i] * s.u[(i, j)]);
    let mut core = s.u.transpose() * &scaled_u;
    let pv_inv = SpdFactor::new(&s.pv, "woodbury_solve")?.inverse();
    core += pv_inv;
    let core = SpdFactor::new(&core, "woodbury_solve")?;
    let projected = s.u.transpose() * &scaled_rhs;
    let correction = &scaled_u * core.solve(&projected);
    let flops = cost::sym_product(inner, outer)
        + cost::solve(inner, inner)
        + cost::solve(inner, cols)
        + cost::matmul(inner, outer, cols)
        + cost::matmul(outer, inner, cols);
    Ok((scaled_rhs - correction, flops))
}

/// Pair-differencing matrix: one row per microphone pair `(i, j)`, `i < j`,
/// ordered `(1,2), (1,3), …, (1,m), (2,3), …`, with `+1` at `i` and `−1` at `j`.
pub fn pair_difference_matrix(mics: usize) -> DMatrix<f64> {
    let pairs = mics * mics.saturating_sub(1) / 2;
    let mut a = DMatrix::zeros(pairs, mics);
    let mut row = 0;
    for i in 0..mics {
        for j in i + 1..mics {
            a[(row, i)] = 1.0;
            a[(row, j)] = -1.0;
            row += 1;
        }
    }
    a
}

/// Package the TDoA innovation `S = D₂ + A (P_gg + D₁) Aᵀ`.
///
/// `range_cov` is the covariance of the per-microphone ranges, `mic_var` the
/// diagonal of `D₁`, and `pair_var` the diagonal of `D₂`.
pub fn tdoa_innovation(
    range_cov: &DMatrix<f64>,
    mic_var: &DVector<f64>,
    pair_var: &DVector<f64>,
) -> Result<StructuredInnovation> {
    let m = mic_var.len();
    let pairs = m * m.saturating_sub(1) / 2;
    if m < 2 || range_cov.shape() != (m, m) || pair_var.len() != pairs {
        return Err(Error::dim(
            "tdoa_innovation",
            format!(
                "{m} microphones need a {m}x{m} range covariance and {pairs} pair variances, got {:?} and {}",
                range_cov.shape(),
                pair_var.len()
            ),
        ));
    }
    if mic_var.iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::Config("microphone noise variances must be positive".into()));
    }
    let pv = range_cov + DMatrix::from_diagonal(mic_var);
    StructuredInnovation::new(pair_var.clone(), pair_difference_matrix(m), pv)
}
