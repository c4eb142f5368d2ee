//! Generic predict/update cycle of a Kalman filter extension.
//!
//! State transitions and measurement functions act on the augmented vector
//! `z = [x; ε]`, state first.

use nalgebra::{DMatrix, DVector};

use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::gaussian::{augment, GaussianDensity, NoiseModel};
use crate::innovation::{woodbury_solve, StructuredInnovation};
use crate::linalg::SpdFactor;
use crate::transforms::{additive_noise_transform, transform_moments, Transform, VectorFunction};

/// A realized measurement together with its noise model.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub value: DVector<f64>,
    pub noise: NoiseModel,
}

impl Measurement {
    pub fn new(value: DVector<f64>, noise: NoiseModel) -> Self {
        Measurement { value, noise }
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }
}

/// Diagnostics from one measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub predicted_measurement: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub function_eval_count: u64,
    pub flop_proxy: u64,
    pub sigma_points: usize,
    pub point_cov_work: u64,
}

impl UpdateReport {
    pub(crate) fn with_cost(mut self, cost: Cost) -> Self {
        self.function_eval_count = cost.evals;
        self.flop_proxy = cost.flops;
        self.sigma_points = cost.sigma_points;
        self.point_cov_work = cost.point_cov_work;
        self
    }

    pub fn cost(&self) -> Cost {
        Cost {
            evals: self.function_eval_count,
            flops: self.flop_proxy,
            sigma_points: self.sigma_points,
            point_cov_work: self.point_cov_work,
        }
    }
}

/// Prior for the next step: `μ⁻ = μ_f(z)`, `P⁻ = P_f(z)f(z)`.
pub fn predict(
    state: &GaussianDensity,
    f: &dyn VectorFunction,
    noise: &NoiseModel,
    transform: Transform,
) -> Result<GaussianDensity> {
    predict_with_cost(state, f, noise, transform).map(|(d, _)| d)
}

pub fn predict_with_cost(
    state: &GaussianDensity,
    f: &dyn VectorFunction,
    noise: &NoiseModel,
    transform: Transform,
) -> Result<(GaussianDensity, Cost)> {
    if f.output_dim() != state.dim() {
        return Err(Error::dim(
            "predict",
            format!("transition outputs {} values, state has {}", f.output_dim(), state.dim()),
        ));
    }
    let z = augment(state, noise)?;
    let t = transform_moments(f, &z, transform)?;
    Ok((GaussianDensity::new(t.mean, t.cov)?, t.cost))
}

/// Prediction for `f(x) + ε` with the transform run on the state dimension only.
pub fn predict_additive(
    state: &GaussianDensity,
    f: &dyn VectorFunction,
    noise: &NoiseModel,
    transform: Transform,
) -> Result<(GaussianDensity, Cost)> {
    let t = additive_noise_transform(f, state, noise, transform)?;
    Ok((GaussianDensity::new(t.mean, t.cov)?, t.cost))
}

/// Measurement update with `h` acting on `[x; ε]`.
pub fn update(
    state: &GaussianDensity,
    h: &dyn VectorFunction,
    meas: &Measurement,
    transform: Transform,
) -> Result<(GaussianDensity, UpdateReport)> {
    if h.output_dim() != meas.dim() {
        return Err(Error::dim(
            "update",
            format!("measurement function outputs {}, measurement has {}", h.output_dim(), meas.dim()),
        ));
    }
    let n = state.dim();
    let z = augment(state, &meas.noise)?;
    let t = transform_moments(h, &z, transform)?;
    let p_xh = t.cross.rows(0, n).into_owned();
    correct(state, &meas.value, t.mean, t.cov, p_xh, t.cost, InnovationSolve::Dense)
}

/// Measurement update for `h(x) + ε` using the additive-noise shortcut.
pub fn update_additive(
    state: &GaussianDensity,
    h: &dyn VectorFunction,
    meas: &Measurement,
    transform: Transform,
) -> Result<(GaussianDensity, UpdateReport)> {
    if h.output_dim() != meas.dim() {
        return Err(Error::dim("update_additive", "measurement dimension"));
    }
    let t = additive_noise_transform(h, state, &meas.noise, transform)?;
    correct(state, &meas.value, t.mean, t.cov, t.cross, t.cost, InnovationSolve::Dense)
}

/// How `S⁻¹` is applied when forming the gain.
pub enum InnovationSolve<'a> {
    /// Cholesky factorization of the dense `S`.
    Dense,
    /// Matrix inversion lemma on `S = P_s + U P_v Uᵀ`.
    Structured(&'a StructuredInnovation),
}

/// Kalman correction from precomputed moments.
///
/// The gain is obtained from `K S = P_xh` without forming `S⁻¹`. The dense
/// path uses `P = P⁻ − K S Kᵀ`; the structured path uses the equivalent
/// `P = P⁻ − K P_xhᵀ`, which does not need `S` itself.
pub fn correct(
    prior: &GaussianDensity,
    y: &DVector<f64>,
    y_pred: DVector<f64>,
    s: DMatrix<f64>,
    p_xh: DMatrix<f64>,
    mut work: Cost,
    solve: InnovationSolve<'_>,
) -> Result<(GaussianDensity, UpdateReport)> {
    let n = prior.dim();
    let m = y.len();
    if y_pred.len() != m || s.shape() != (m, m) || p_xh.shape() != (n, m) {
        return Err(Error::dim("update", "moment dimensions do not match the measurement"));
    }
    let innovation = y - &y_pred;
    let (gain, cov) = match solve {
        InnovationSolve::Dense => {
            let factor = SpdFactor::new(&s, "update")?;
            let gain = factor.solve_right(&p_xh);
            work.flops += cost::solve(m, n) + cost::matmul(n, m, m) + cost::matmul(n, m, n);
            let cov = prior.cov() - &gain * &s * gain.transpose();
            (gain, cov)
        }
        InnovationSolve::Structured(structured) => {
            if structured.dim() != m {
                return Err(Error::dim("update", "structured innovation dimension"));
            }
            let (gain_t, flops) = woodbury_solve(structured, &p_xh.transpose())?;
            work.flops += flops + cost::matmul(n, m, n);
            let gain = gain_t.transpose();
            let cov = prior.cov() - &gain * p_xh.transpose();
            (gain, cov)
        }
    };
    let mean = prior.mean() + &gain * innovation;
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "update" });
    }
    let posterior = GaussianDensity::new(mean, cov)?;
    let report = UpdateReport {
        predicted_measurement: y_pred,
        innovation_cov: s,
        gain,
        function_eval_count: 0,
        flop_proxy: 0,
        sigma_points: 0,
        point_cov_work: 0,
    }
    .with_cost(work);
    Ok((posterior, report))
}
