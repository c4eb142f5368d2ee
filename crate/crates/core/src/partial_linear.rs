//! Moments of partially linear functions `g(z) = A g_n(T z) + H z`.
//!
//! Only the reduced variable `z̃ = T z` goes through the nonlinear transform;
//! the linear part is handled in closed form and the cross covariance with
//! `z` is recovered from the one with `z̃`.

use nalgebra::{DMatrix, DVector};

use crate::conditional::{conditional_moments, ConditionallyLinearFunction};
use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::filter::{correct, InnovationSolve, Measurement, UpdateReport};
use crate::gaussian::{augment, symmetrize_and_repair, GaussianDensity, NoiseModel};
use crate::linalg::{has_full_row_rank, is_identity, SpdFactor};
use crate::transforms::{linear_transform, transform_moments, MomentTriple, SharedFunction, Transform, VectorFunction};

/// Relative singular-value threshold for the rank check on `T`.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// The nonlinear part `g_n`.
#[derive(Clone, Debug)]
pub enum InnerFunction {
    /// Any function; moments come from the selected transform.
    General(SharedFunction),
    /// A conditionally linear function; sigma points cover its nonlinear block only.
    Conditional(ConditionallyLinearFunction),
}

impl InnerFunction {
    pub fn input_dim(&self) -> usize {
        match self {
            InnerFunction::General(g) => g.input_dim(),
            InnerFunction::Conditional(g) => g.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            InnerFunction::General(g) => g.output_dim(),
            InnerFunction::Conditional(g) => g.output_dim(),
        }
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            InnerFunction::General(g) => g.eval(x),
            InnerFunction::Conditional(g) => g.eval(x),
        }
    }

    pub fn moments(&self, z: &GaussianDensity, transform: Transform) -> Result<MomentTriple> {
        match self {
            InnerFunction::General(g) => transform_moments(g.as_ref(), z, transform),
            InnerFunction::Conditional(g) => conditional_moments(g, z, transform),
        }
    }
}

/// `g(z) = A g_n(T z) + H z` with `T` of full row rank.
#[derive(Clone, Debug)]
pub struct PartiallyLinearModel {
    a: DMatrix<f64>,
    t: DMatrix<f64>,
    h: DMatrix<f64>,
    inner: InnerFunction,
    t_is_identity: bool,
    a_is_identity: bool,
    a_is_zero: bool,
    h_is_zero: bool,
}

impl PartiallyLinearModel {
    pub fn new(a: DMatrix<f64>, t: DMatrix<f64>, h: DMatrix<f64>, inner: InnerFunction) -> Result<Self> {
        let (m, p) = a.shape();
        let (r, n) = t.shape();
        if h.shape() != (m, n) || inner.input_dim() != r || inner.output_dim() != p {
            return Err(Error::dim(
                "PartiallyLinearModel::new",
                format!(
                    "A {:?}, T {:?}, H {:?}, g_n {} -> {}",
                    a.shape(),
                    t.shape(),
                    h.shape(),
                    inner.input_dim(),
                    inner.output_dim()
                ),
            ));
        }
        if !has_full_row_rank(&t, RANK_TOLERANCE) {
            return Err(Error::Rank(format!("T ({r}x{n}) does not have full row rank")));
        }
        Ok(PartiallyLinearModel {
            t_is_identity: is_identity(&t),
            a_is_identity: is_identity(&a),
            a_is_zero: a.iter().all(|v| *v == 0.0),
            h_is_zero: h.iter().all(|v| *v == 0.0),
            a,
            t,
            h,
            inner,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn inner(&self) -> &InnerFunction {
        &self.inner
    }

    /// Dimension `r` of `z̃ = T z`.
    pub fn reduced_dim(&self) -> usize {
        self.t.nrows()
    }
}

impl VectorFunction for PartiallyLinearModel {
    fn input_dim(&self) -> usize {
        self.t.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let zr = &self.t * z;
        Ok(&self.a * self.inner.eval(&zr)? + &self.h * z)
    }
}

/// Moments of `g(z)` with the transform applied to `z̃ = T z` only.
///
/// The cross covariance is lifted as `P_zg_n = P Tᵀ (T P Tᵀ)⁻¹ P_z̃g_n`,
/// using an `r`-dimensional solve.
pub fn reduced_moments(model: &PartiallyLinearModel, z: &GaussianDensity, inner: Transform) -> Result<MomentTriple> {
    let n = z.dim();
    let (m, p) = model.a.shape();
    let r = model.reduced_dim();
    if model.input_dim() != n {
        return Err(Error::dim("reduced_moments", format!("model takes {}, density has {n}", model.input_dim())));
    }
    if model.a_is_zero {
        return linear_transform(&model.h, &DVector::zeros(m), z);
    }
    let mut work = Cost::default();
    let (reduced, p_tt) = if model.t_is_identity {
        (z.clone(), None)
    } else {
        let pt = z.cov() * model.t.transpose();
        let tpt = &model.t * &pt;
        work.flops += cost::matmul(n, n, r) + cost::sym_product(r, n);
        (GaussianDensity::new(&model.t * z.mean(), tpt)?, Some(pt))
    };
    let t_inner = model.inner.moments(&reduced, inner)?;
    work += t_inner.cost;
    if model.t_is_identity && model.a_is_identity && model.h_is_zero {
        return Ok(MomentTriple { cost: work, ..t_inner });
    }

    let p_zn = match p_tt {
        None => t_inner.cross.clone(),
        Some(pt) => {
            let factor = SpdFactor::new(reduced.cov(), "reduced_moments")?;
            work.flops += cost::solve(r, p) + cost::matmul(n, r, p);
            pt * factor.solve(&t_inner.cross)
        }
    };

    let (mean, a_pnn_at, p_zn_at) = if model.a_is_identity {
        (t_inner.mean.clone(), t_inner.cov.clone(), p_zn)
    } else {
        work.flops += cost::matmul(m, p, p) + cost::matmul(m, p, m) + cost::matmul(n, p, m);
        (&model.a * &t_inner.mean, &model.a * &t_inner.cov * model.a.transpose(), p_zn * model.a.transpose())
    };
    let (mean, cov, cross) = if model.h_is_zero {
        (mean, a_pnn_at, p_zn_at)
    } else {
        let p_ht = z.cov() * model.h.transpose();
        let mixed = &model.h * &p_zn_at;
        let cov = a_pnn_at + &mixed + mixed.transpose() + &model.h * &p_ht;
        work.flops += cost::matmul(n, n, m) + 2 * cost::matmul(m, n, m);
        (mean + &model.h * z.mean(), cov, p_zn_at + p_ht)
    };
    let (cov, _) = symmetrize_and_repair(&cov);
    Ok(MomentTriple { mean, cov, cross, cost: work })
}

/// Prediction through a partially linear transition acting on `[x; ε]`.
pub fn predict_partial(
    state: &GaussianDensity,
    noise: &NoiseModel,
    model: &PartiallyLinearModel,
    inner: Transform,
) -> Result<(GaussianDensity, Cost)> {
    if model.output_dim() != state.dim() {
        return Err(Error::dim(
            "predict_partial",
            format!("model outputs {}, state has {}", model.output_dim(), state.dim()),
        ));
    }
    let z = augment(state, noise)?;
    let t = reduced_moments(model, &z, inner)?;
    Ok((GaussianDensity::new(t.mean, t.cov)?, t.cost))
}

/// Update with a partially linear measurement function acting on `[x; ε]`.
pub fn update_partial(
    state: &GaussianDensity,
    meas: &Measurement,
    model: &PartiallyLinearModel,
    inner: Transform,
) -> Result<(GaussianDensity, UpdateReport)> {
    if model.output_dim() != meas.dim() {
        return Err(Error::dim("update_partial", "measurement dimension"));
    }
    let z = augment(state, &meas.noise)?;
    let t = reduced_moments(model, &z, inner)?;
    let p_xh = t.cross.rows(0, state.dim()).into_owned();
    correct(state, &meas.value, t.mean, t.cov, p_xh, t.cost, InnovationSolve::Dense)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::update;
    use crate::linalg::rel_frobenius;
    use crate::random::{normal_matrix, normal_vector, random_gaussian, random_lower_triangular, rng_from_seed};
    use crate::transforms::{sigma_transform, AffineFunction, FnFunction};

    fn affine_inner(mat: &DMatrix<f64>) -> InnerFunction {
        InnerFunction::General(AffineFunction::linear(mat.clone()).shared())
    }

    fn bumpy(r: usize, p: usize) -> InnerFunction {
        InnerFunction::General(
            FnFunction::new(r, p, move |x| {
                DVector::from_fn(p, |i, _| (x[i % r] + 0.3 * i as f64).sin() * x[(i + 1) % r])
            })
            .shared(),
        )
    }

    #[test]
    fn zero_a_reduces_to_linear_transform() {
        let mut rng = rng_from_seed(30);
        let z = random_gaussian(&mut rng, 4);
        let h = normal_matrix(&mut rng, 3, 4);
        let model =
            PartiallyLinearModel::new(DMatrix::zeros(3, 2), normal_matrix(&mut rng, 2, 4), h.clone(), bumpy(2, 2))
                .unwrap();
        let got = reduced_moments(&model, &z, Transform::unscented()).unwrap();
        let expected = linear_transform(&h, &DVector::zeros(3), &z).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn identity_structure_is_the_inner_transform() {
        let mut rng = rng_from_seed(31);
        let z = random_gaussian(&mut rng, 3);
        let inner = bumpy(3, 3);
        let model = PartiallyLinearModel::new(
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
            inner.clone(),
        )
        .unwrap();
        for tr in [Transform::unscented(), Transform::Cubature, Transform::Ekf] {
            let got = reduced_moments(&model, &z, tr).unwrap();
            let direct = inner.moments(&z, tr).unwrap();
            assert_eq!(got, direct);
        }
    }

    #[test]
    fn affine_inner_matches_composite_linear_map() {
        let mut rng = rng_from_seed(32);
        for n in [2, 5, 11, 20] {
            let z = random_gaussian(&mut rng, n);
            let r = 1 + n / 3;
            let (m, p) = (3, 2);
            let mm = normal_matrix(&mut rng, p, r);
            let a = normal_matrix(&mut rng, m, p);
            let t = normal_matrix(&mut rng, r, n);
            let h = normal_matrix(&mut rng, m, n);
            let model = PartiallyLinearModel::new(a.clone(), t.clone(), h.clone(), affine_inner(&mm)).unwrap();
            let got = reduced_moments(&model, &z, Transform::unscented()).unwrap();
            let expected = linear_transform(&(&a * &mm * &t + &h), &DVector::zeros(m), &z).unwrap();
            assert!((&got.mean - &expected.mean).norm() <= 1e-9 * (1.0 + expected.mean.norm()));
            assert!(rel_frobenius(&got.cov, &expected.cov) < 1e-9);
            assert!(rel_frobenius(&got.cross, &expected.cross) < 1e-9);
        }
    }

    #[test]
    fn lower_triangular_t_matches_naive_sigma_rule() {
        let mut rng = rng_from_seed(33);
        let n = 4;
        let z = random_gaussian(&mut rng, n);
        let t = random_lower_triangular(&mut rng, n);
        let model =
            PartiallyLinearModel::new(normal_matrix(&mut rng, 2, 3), t, normal_matrix(&mut rng, 2, n), bumpy(n, 3))
                .unwrap();
        for tr in [Transform::unscented(), Transform::Cubature] {
            let got = reduced_moments(&model, &z, tr).unwrap();
            let naive = sigma_transform(&model, &tr.points(&z).unwrap().unwrap(), &z).unwrap();
            assert!((&got.mean - &naive.mean).norm() < 1e-9);
            assert!(rel_frobenius(&got.cov, &naive.cov) < 1e-9);
            assert!(rel_frobenius(&got.cross, &naive.cross) < 1e-9);
        }
    }

    #[test]
    fn inner_point_count_is_reduced() {
        let mut rng = rng_from_seed(34);
        let z = random_gaussian(&mut rng, 8);
        let t = normal_matrix(&mut rng, 2, 8);
        let model = PartiallyLinearModel::new(DMatrix::identity(2, 2), t, DMatrix::zeros(2, 8), bumpy(2, 2)).unwrap();
        let got = reduced_moments(&model, &z, Transform::unscented()).unwrap();
        assert_eq!(got.cost.sigma_points, 5);
        assert!(got.cost.sigma_points < Transform::unscented().point_count(8));
    }

    #[test]
    fn rank_deficient_t_is_rejected() {
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let err = PartiallyLinearModel::new(DMatrix::identity(2, 2), t, DMatrix::zeros(2, 3), bumpy(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Rank(_)));
    }

    #[test]
    fn linear_prediction_matches_kalman() {
        let mut rng = rng_from_seed(35);
        let x = random_gaussian(&mut rng, 3);
        let f = normal_matrix(&mut rng, 3, 3);
        let q = [0.1, 0.2, 0.3];
        let noise = NoiseModel::diagonal(&q).unwrap();
        // g(z) = A (M T z) + H z with x' = F x + ε split as A M T = [F 0], H = [0 I].
        let t = DMatrix::from_fn(3, 6, |i, j| if i == j { 1.0 } else { 0.0 });
        let h = DMatrix::from_fn(3, 6, |i, j| if j == i + 3 { 1.0 } else { 0.0 });
        let model = PartiallyLinearModel::new(DMatrix::identity(3, 3), t, h, affine_inner(&f)).unwrap();
        let (got, _) = predict_partial(&x, &noise, &model, Transform::unscented()).unwrap();
        let mean = &f * x.mean();
        let cov = &f * x.cov() * f.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(&q));
        assert!((got.mean() - mean).norm() < 1e-12);
        assert!(rel_frobenius(got.cov(), &cov) < 1e-12);
    }

    #[test]
    fn zero_noise_identity_keeps_state() {
        let mut rng = rng_from_seed(36);
        let x = random_gaussian(&mut rng, 2);
        let noise = NoiseModel::zero_mean(DMatrix::identity(2, 2) * 1e-300).unwrap();
        let h = DMatrix::from_fn(2, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let model = PartiallyLinearModel::new(
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]),
            h,
            InnerFunction::General(FnFunction::new(1, 1, |_| DVector::zeros(1)).shared()),
        )
        .unwrap();
        let (got, _) = predict_partial(&x, &noise, &model, Transform::Cubature).unwrap();
        assert_eq!(got.mean(), x.mean());
        assert!(rel_frobenius(got.cov(), x.cov()) < 1e-15);
    }

    #[test]
    fn linear_update_matches_kalman() {
        let mut rng = rng_from_seed(37);
        let x = random_gaussian(&mut rng, 4);
        let hx = normal_matrix(&mut rng, 2, 4);
        let meas = Measurement::new(normal_vector(&mut rng, 2), NoiseModel::diagonal(&[0.3, 0.4]).unwrap());
        let t = DMatrix::from_fn(4, 6, |i, j| if i == j { 1.0 } else { 0.0 });
        let h = DMatrix::from_fn(2, 6, |i, j| if j == i + 4 { 1.0 } else { 0.0 });
        let model = PartiallyLinearModel::new(DMatrix::identity(2, 2), t, h.clone(), affine_inner(&hx)).unwrap();
        let (got, _) = update_partial(&x, &meas, &model, Transform::unscented()).unwrap();
        let mut full = h;
        full.view_mut((0, 0), (2, 4)).copy_from(&hx);
        let (expected, _) = update(&x, &AffineFunction::linear(full), &meas, Transform::Ekf).unwrap();
        assert!((got.mean() - expected.mean()).norm() < 1e-10);
        assert!(rel_frobenius(got.cov(), expected.cov()) < 1e-10);
    }

    #[test]
    fn measurement_at_prediction_keeps_mean() {
        let mut rng = rng_from_seed(38);
        let x = random_gaussian(&mut rng, 3);
        let t = DMatrix::from_fn(2, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let h = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let model = PartiallyLinearModel::new(DMatrix::identity(2, 2), t, h, bumpy(2, 2)).unwrap();
        let noise = NoiseModel::diagonal(&[0.1]).unwrap();
        let z = augment(&x, &noise).unwrap();
        let y = reduced_moments(&model, &z, Transform::Cubature).unwrap().mean;
        let (got, report) =
            update_partial(&x, &Measurement::new(y.clone(), noise), &model, Transform::Cubature).unwrap();
        assert_eq!(report.predicted_measurement, y);
        assert!((got.mean() - x.mean()).norm() < 1e-14);
    }
}
