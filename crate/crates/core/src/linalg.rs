//! Dense linear-algebra helpers shared by the filters.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter factor used when a Cholesky factorization fails.
pub const DEFAULT_JITTER: f64 = 1e-12;
/// Number of times the jitter is doubled before giving up.
pub const JITTER_DOUBLINGS: u32 = 8;
/// Environment variable overriding [`DEFAULT_JITTER`].
pub const JITTER_ENV: &str = "STRUCTURED_KFE_JITTER";

pub fn jitter_factor() -> f64 {
    static FACTOR: OnceLock<f64> = OnceLock::new();
    *FACTOR.get_or_init(|| {
        let Ok(raw) = std::env::var(JITTER_ENV) else {
            return DEFAULT_JITTER;
        };
        match raw.trim().parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => v,
            _ => {
                log::warn!("ignoring {JITTER_ENV}={raw:?}: expected a positive number");
                DEFAULT_JITTER
            }
        }
    })
}

/// Cholesky factor of a symmetric positive (semi)definite matrix, possibly
/// after adding diagonal jitter.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factor `m`. A plain factorization is tried first; on failure the
    /// diagonal is loaded with `jitter_factor()·trace/n`, doubling up to
    /// [`JITTER_DOUBLINGS`] times.
    pub fn new(m: &DMatrix<f64>, op: &'static str) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim(op, format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        if let Some(chol) = m.clone().cholesky() {
            return Ok(SpdFactor { chol, jitter: 0.0 });
        }
        let n = m.nrows();
        let trace = m.trace();
        if n == 0 || trace <= 0.0 {
            return Err(Error::Singular { op });
        }
        let mut jitter = jitter_factor() * trace / n as f64;
        for _ in 0..=JITTER_DOUBLINGS {
            let mut loaded = m.clone();
            for i in 0..n {
                loaded[(i, i)] += jitter;
            }
            if let Some(chol) = loaded.cholesky() {
                log::debug!("{op}: Cholesky succeeded with jitter {jitter:e}");
                return Ok(SpdFactor { chol, jitter });
            }
            jitter *= 2.0;
        }
        Err(Error::Singular { op })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `M⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `B M⁻¹` (M is symmetric).
    pub fn solve_right(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(&b.transpose()).transpose()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Lower square root `L` with `L Lᵀ = P`. A zero matrix maps to zero.
pub fn cov_sqrt(p: &DMatrix<f64>, op: &'static str) -> Result<DMatrix<f64>> {
    if p.is_square() && p.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(p.nrows(), p.ncols()));
    }
    Ok(SpdFactor::new(p, op)?.lower())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute error when `b` is zero.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Smallest/largest singular value ratio of `m` exceeds `tol`.
pub fn has_full_row_rank(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if m.nrows() > m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > tol * max
}

pub fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter().enumerate().all(|(k, v)| {
            let (i, j) = (k % m.nrows(), k / m.nrows());
            *v == if i == j { 1.0 } else { 0.0 }
        })
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_solves_against_explicit_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let f = SpdFactor::new(&m, "test").unwrap();
        assert_eq!(f.jitter(), 0.0);
        let expected = m.clone().try_inverse().unwrap() * &b;
        assert!(rel_frobenius(&f.solve(&b), &expected) < 1e-14);
        let right = f.solve_right(&b.transpose());
        assert!(rel_frobenius(&right, &expected.transpose()) < 1e-14);
    }

    #[test]
    fn singular_psd_matrix_gets_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = SpdFactor::new(&m, "test").unwrap();
        assert!(f.jitter() > 0.0);
        assert!(f.jitter() <= DEFAULT_JITTER * 256.0);
    }

    #[test]
    fn zero_and_indefinite_matrices_are_rejected() {
        assert!(matches!(SpdFactor::new(&DMatrix::zeros(2, 2), "zero"), Err(Error::Singular { op: "zero" })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SpdFactor::new(&m, "indef").is_err());
        let nan = DMatrix::from_element(1, 1, f64::NAN);
        assert!(matches!(SpdFactor::new(&nan, "nan"), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn zero_covariance_has_zero_root() {
        assert_eq!(cov_sqrt(&DMatrix::zeros(3, 3), "t").unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn rank_check() {
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(has_full_row_rank(&t, 1e-10));
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(!has_full_row_rank(&t, 1e-10));
    }
}
