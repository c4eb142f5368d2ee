//! Deterministic operation counting.
//!
//! The flop proxy counts a dense `n×m` by `m×k` product as `n·m·k`, a
//! symmetric product that only needs one triangle as `n(n+1)/2·k`, and an SPD
//! solve of dimension `d` with `rhs` right-hand sides as `d³/3 + rhs·d²`.
//! Element-wise and diagonal scalings are not counted.

use std::ops::{Add, AddAssign};

use serde::Serialize;

pub fn matmul(n: usize, m: usize, k: usize) -> u64 {
    (n as u64) * (m as u64) * (k as u64)
}

pub fn sym_product(n: usize, k: usize) -> u64 {
    let n = n as u64;
    n * (n + 1) / 2 * k as u64
}

pub fn solve(d: usize, rhs: usize) -> u64 {
    let d = d as u64;
    d * d * d / 3 + rhs as u64 * d * d
}

/// Work done by a moment computation or a filter step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    /// Function evaluations (sigma points, Jacobian probes).
    pub evals: u64,
    pub flops: u64,
    /// Largest sigma-point set used by any transform in the step.
    pub sigma_points: usize,
    /// Covariance elements accumulated per evaluated point (output dim squared).
    pub point_cov_work: u64,
}

impl Cost {
    pub fn flops(flops: u64) -> Self {
        Cost { flops, ..Cost::default() }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Self) {
        self.evals += rhs.evals;
        self.flops += rhs.flops;
        self.sigma_points = self.sigma_points.max(rhs.sigma_points);
        self.point_cov_work = self.point_cov_work.max(rhs.point_cov_work);
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(mut self, rhs: Self) -> Cost {
        self += rhs;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_rules() {
        assert_eq!(matmul(2, 3, 4), 24);
        assert_eq!(sym_product(3, 10), 60);
        assert_eq!(solve(3, 2), 9 + 18);
    }

    #[test]
    fn accumulation_takes_max_of_point_counts() {
        let a = Cost { evals: 5, flops: 10, sigma_points: 5, point_cov_work: 4 };
        let b = Cost { evals: 17, flops: 1, sigma_points: 17, point_cov_work: 1 };
        let c = a + b;
        assert_eq!(c.evals, 22);
        assert_eq!(c.flops, 11);
        assert_eq!(c.sigma_points, 17);
        assert_eq!(c.point_cov_work, 4);
    }
}
