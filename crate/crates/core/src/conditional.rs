//! Sigma-point moments for functions that are linear in part of their input
//! once the rest is fixed: `g(z) = g_n(z_n) + G_n(z_n) z_l`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::gaussian::{symmetrize_and_repair, GaussianDensity, IndexPartition};
use crate::linalg::{select_block, select_vec, SpdFactor};
use crate::transforms::{eval_checked, MomentTriple, SharedFunction, SigmaPointSet, Transform, VectorFunction};

pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;

/// `g(z) = g_n(z_n) + G_n(z_n) z_l` where the partition's first block is `z_n`.
#[derive(Clone)]
pub struct ConditionallyLinearFunction {
    partition: IndexPartition,
    g_n: SharedFunction,
    big_g: MatrixFn,
}

impl fmt::Debug for ConditionallyLinearFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConditionallyLinearFunction")
            .field("partition", &self.partition)
            .field("output_dim", &self.g_n.output_dim())
            .finish()
    }
}

impl ConditionallyLinearFunction {
    pub fn new(partition: IndexPartition, g_n: SharedFunction, big_g: MatrixFn) -> Result<Self> {
        if g_n.input_dim() != partition.first().len() {
            return Err(Error::dim(
                "ConditionallyLinearFunction::new",
                format!("g_n takes {} inputs, nonlinear block has {}", g_n.input_dim(), partition.first().len()),
            ));
        }
        Ok(ConditionallyLinearFunction { partition, g_n, big_g })
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.partition
    }

    fn g_matrix(&self, zn: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = (self.big_g)(zn)?;
        let expected = (self.g_n.output_dim(), self.partition.second().len());
        if g.shape() != expected {
            return Err(Error::dim(
                "ConditionallyLinearFunction",
                format!("G_n is {:?}, expected {expected:?}", g.shape()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("non-finite G_n value".into()));
        }
        Ok(g)
    }

    pub fn shared(self) -> SharedFunction {
        Arc::new(self)
    }
}

impl VectorFunction for ConditionallyLinearFunction {
    fn input_dim(&self) -> usize {
        self.partition.len()
    }

    fn output_dim(&self) -> usize {
        self.g_n.output_dim()
    }

    fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let zn = select_vec(z, self.partition.first());
        let zl = select_vec(z, self.partition.second());
        Ok(eval_checked(self.g_n.as_ref(), &zn)? + self.g_matrix(&zn)? * zl)
    }
}

/// Moments of `f` under `z`, with sigma points drawn from the `z_n` marginal
/// by a weighted-point rule. Derivative-based transforms are rejected.
pub fn conditional_moments(
    f: &ConditionallyLinearFunction,
    z: &GaussianDensity,
    transform: Transform,
) -> Result<MomentTriple> {
    if !transform.uses_points() {
        return Err(Error::IncompatibleTransform { op: "conditional_moments", transform: transform.to_string() });
    }
    if z.dim() != f.input_dim() {
        return Err(Error::dim(
            "conditional_moments",
            format!("function takes {}, density has {}", f.input_dim(), z.dim()),
        ));
    }
    let marginal = z.marginal(f.partition.first())?;
    let points = transform.points(&marginal)?.expect("weighted-point transform yields points");
    let mut t = conditional_sigma_moments(f, z, &points)?;
    t.cost.flops += cost::solve(marginal.dim(), 0);
    Ok(t)
}

/// Weighted-point moments using points `χ_i` on `z_n` and the exact
/// conditional Gaussian of `z_l` given each point.
pub fn conditional_sigma_moments(
    f: &ConditionallyLinearFunction,
    z: &GaussianDensity,
    points: &SigmaPointSet,
) -> Result<MomentTriple> {
    let nl = f.partition.first();
    let li = f.partition.second();
    let (dn, dl, m, n) = (nl.len(), li.len(), f.output_dim(), z.dim());
    if n != f.input_dim() {
        return Err(Error::dim("conditional_sigma_moments", "density dimension"));
    }
    if points.dim() != dn {
        return Err(Error::dim(
            "conditional_sigma_moments",
            format!("points have dimension {}, nonlinear block has {dn}", points.dim()),
        ));
    }
    let mu_n = select_vec(z.mean(), nl);
    let mu_l = select_vec(z.mean(), li);
    let p_nn = select_block(z.cov(), nl, nl);
    let p_ln = select_block(z.cov(), li, nl);
    let p_ll = select_block(z.cov(), li, li);
    // Both conditional quantities are shared by every point.
    let regress = SpdFactor::new(&p_nn, "conditional_sigma_moments")?.solve_right(&p_ln);
    let (p_cond, _) = symmetrize_and_repair(&(&p_ll - &regress * p_ln.transpose()));

    let count = points.len();
    let mut ys = Vec::with_capacity(count);
    let mut cond_means = Vec::with_capacity(count);
    let mut gs = Vec::with_capacity(count);
    for chi in &points.points {
        let mu_cond = &mu_l + &regress * (chi - &mu_n);
        let g = f.g_matrix(chi)?;
        ys.push(eval_checked(f.g_n.as_ref(), chi)? + &g * &mu_cond);
        cond_means.push(mu_cond);
        gs.push(g);
    }
    let mut mean = DVector::zeros(m);
    for (y, w) in ys.iter().zip(&points.mean_weights) {
        mean.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(m, m);
    let mut cross_n = DMatrix::zeros(dn, m);
    let mut cross_l = DMatrix::zeros(dl, m);
    for i in 0..count {
        let w = points.cov_weights[i];
        let dy = &ys[i] - &mean;
        let pg = &p_cond * gs[i].transpose();
        cov.ger(w, &dy, &dy, 1.0);
        cov += (&gs[i] * &pg) * w;
        cross_n.ger(w, &(&points.points[i] - &mu_n), &dy, 1.0);
        cross_l.ger(w, &(&cond_means[i] - &mu_l), &dy, 1.0);
        cross_l += pg * w;
    }
    let mut cross = DMatrix::zeros(n, m);
    for (k, &i) in nl.iter().enumerate() {
        cross.row_mut(i).copy_from(&cross_n.row(k));
    }
    for (k, &i) in li.iter().enumerate() {
        cross.row_mut(i).copy_from(&cross_l.row(k));
    }
    let (cov, _) = symmetrize_and_repair(&cov);
    let per_point = cost::matmul(dl, dn, 1)
        + cost::matmul(m, dl, 1)
        + cost::matmul(dl, dl, m)
        + cost::matmul(m, dl, m)
        + cost::matmul(1, m, m)
        + cost::matmul(n, 1, m);
    Ok(MomentTriple {
        mean,
        cov,
        cross,
        cost: Cost {
            evals: count as u64,
            flops: cost::solve(dn, dl) + cost::matmul(dl, dn, dl) + count as u64 * per_point,
            sigma_points: count,
            point_cov_work: (m * m) as u64,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use crate::random::{normal_matrix, random_gaussian, rng_from_seed};
    use crate::transforms::{linear_transform, sigma_transform, FnFunction};

    fn polar(mu_l: f64, sigma_l: f64, sigma: f64) -> (ConditionallyLinearFunction, GaussianDensity) {
        let f = ConditionallyLinearFunction::new(
            IndexPartition::new(vec![0], vec![1]).unwrap(),
            FnFunction::new(1, 2, |_| DVector::zeros(2)).shared(),
            Arc::new(|t: &DVector<f64>| Ok(DMatrix::from_column_slice(2, 1, &[t[0].cos(), t[0].sin()]))),
        )
        .unwrap();
        let z = GaussianDensity::from_slices(&[0.0, mu_l], &[sigma * sigma, 0.0, 0.0, sigma_l * sigma_l]).unwrap();
        (f, z)
    }

    #[test]
    fn constant_parts_give_affine_moments() {
        let mut rng = rng_from_seed(20);
        let z = random_gaussian(&mut rng, 5);
        let g0 = normal_matrix(&mut rng, 3, 3);
        let c = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
        let partition = IndexPartition::new(vec![3, 0], vec![1, 2, 4]).unwrap();
        let c2 = c.clone();
        let g02 = g0.clone();
        let f = ConditionallyLinearFunction::new(
            partition,
            FnFunction::new(2, 3, move |_| c2.clone()).shared(),
            Arc::new(move |_: &DVector<f64>| Ok(g02.clone())),
        )
        .unwrap();
        let t = conditional_moments(&f, &z, Transform::unscented()).unwrap();
        let mut j = DMatrix::zeros(3, 5);
        for (k, &i) in [1, 2, 4].iter().enumerate() {
            j.set_column(i, &g0.column(k));
        }
        let expected = linear_transform(&j, &c, &z).unwrap();
        assert!((&t.mean - &expected.mean).norm() < 1e-10);
        assert!(rel_frobenius(&t.cov, &expected.cov) < 1e-10);
        assert!(rel_frobenius(&t.cross, &expected.cross) < 1e-10);
    }

    #[test]
    fn cosine_moment_matches_closed_form() {
        let (f, z) = polar(0.7, 0.05, 0.1);
        let t = conditional_moments(&f, &z, Transform::unscented()).unwrap();
        let exact = 0.7 * (-0.01f64 / 2.0).exp();
        assert!((t.mean[0] - exact).abs() < 1e-2);
        assert!(t.mean[1].abs() < 1e-12);
    }

    #[test]
    fn vanishing_angle_spread_is_deterministic() {
        let (f, z) = polar(0.7, 0.05, 1e-8);
        let t = conditional_moments(&f, &z, Transform::Cubature).unwrap();
        assert!((t.mean[0] - 0.7).abs() < 1e-9);
        assert!(t.mean[1].abs() < 1e-9);
    }

    #[test]
    fn one_nonlinear_coordinate_uses_three_points() {
        let mut rng = rng_from_seed(21);
        let z = random_gaussian(&mut rng, 7);
        let f = ConditionallyLinearFunction::new(
            IndexPartition::new(vec![0], (1..7).collect()).unwrap(),
            FnFunction::new(1, 2, |t| DVector::from_column_slice(&[t[0].sin(), t[0] * t[0]])).shared(),
            Arc::new(|t: &DVector<f64>| Ok(DMatrix::from_fn(2, 6, |i, j| (t[0] * (i + j) as f64).cos()))),
        )
        .unwrap();
        let t = conditional_moments(&f, &z, Transform::unscented()).unwrap();
        assert_eq!(t.cost.sigma_points, 3);
        assert_eq!(t.cost.evals, 3);
    }

    #[test]
    fn ekf_is_rejected() {
        let (f, z) = polar(1.0, 0.1, 0.1);
        let err = conditional_moments(&f, &z, Transform::Ekf).unwrap_err();
        assert!(matches!(err, Error::IncompatibleTransform { .. }));
    }

    #[test]
    fn agrees_with_full_sigma_rule_when_exact() {
        // For g linear in z_l with correlated inputs and a quadratic g_n, the
        // cubature rule on z_n integrates polynomials up to degree 3 exactly,
        // so both routes give the same mean.
        let z = GaussianDensity::from_slices(&[0.3, 1.0], &[0.2, 0.05, 0.05, 0.1]).unwrap();
        let f = ConditionallyLinearFunction::new(
            IndexPartition::new(vec![0], vec![1]).unwrap(),
            FnFunction::new(1, 1, |t| DVector::from_element(1, t[0] * t[0])).shared(),
            Arc::new(|t: &DVector<f64>| Ok(DMatrix::from_element(1, 1, t[0]))),
        )
        .unwrap();
        let t = conditional_moments(&f, &z, Transform::Cubature).unwrap();
        let full = sigma_transform(&f, &Transform::Cubature.points(&z).unwrap().unwrap(), &z).unwrap();
        // E[x²] + E[x y] = (0.09 + 0.2) + (0.3 + 0.05)
        assert!((t.mean[0] - 0.64).abs() < 1e-12);
        assert!((full.mean[0] - 0.64).abs() < 1e-12);
    }

    #[test]
    fn wrong_matrix_shape_is_reported() {
        let f = ConditionallyLinearFunction::new(
            IndexPartition::new(vec![0], vec![1]).unwrap(),
            FnFunction::new(1, 2, |_| DVector::zeros(2)).shared(),
            Arc::new(|_: &DVector<f64>| Ok(DMatrix::zeros(3, 1))),
        )
        .unwrap();
        let z = GaussianDensity::standard(2);
        assert!(matches!(conditional_moments(&f, &z, Transform::Cubature), Err(Error::Dimension { .. })));
    }
}
