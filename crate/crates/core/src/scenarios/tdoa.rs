//! Sound-source tracking from pairwise range differences.
//!
//! With `m` microphones at `r_i`, the measurement for pair `(i, j)` is
//! `‖r_i − x‖ − ‖r_j − x‖ + ε_i − ε_j + ε_ij` (speed of sound multiplied
//! out). The augmented vector is `z = [x; ε_mic; ε_pair]`, so
//! `h(z) = A (g(x_{1:3}) + ε_mic) + ε_pair` with `A` the pair-differencing
//! matrix and `g` the `m` microphone ranges.

use nalgebra::{DMatrix, DVector};

use crate::cost;
use crate::error::{Error, Result};
use crate::filter::{correct, update, InnovationSolve, Measurement, UpdateReport};
use crate::gaussian::{GaussianDensity, NoiseModel};
use crate::innovation::tdoa_innovation;
use crate::linalg::{select_block, SpdFactor};
use crate::transforms::{transform_moments, FnFunction, SharedFunction, Transform};

use super::config::TdoaConfig;

/// Speed of sound in air (m/s). Measurements are expressed in metres, so
/// the model never divides by it.
pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TdoaMode {
    /// Transform on the full augmented vector, dense innovation solve.
    Naive,
    /// Transform on the position only, structured innovation solve.
    Structured,
}

impl TdoaMode {
    pub const ALL: [TdoaMode; 2] = [TdoaMode::Naive, TdoaMode::Structured];

    pub fn name(self) -> &'static str {
        match self {
            TdoaMode::Naive => "naive",
            TdoaMode::Structured => "structured",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "naive" => Ok(TdoaMode::Naive),
            "structured" => Ok(TdoaMode::Structured),
            other => Err(Error::Config(format!("unknown tdoa mode `{other}` (expected naive, structured or all)"))),
        }
    }
}

/// Microphone geometry, noise levels and the range function.
#[derive(Clone, Debug)]
pub struct TdoaModel {
    mics: Vec<[f64; 3]>,
    mic_var: DVector<f64>,
    pair_var: DVector<f64>,
    ranges: SharedFunction,
    pairs: Vec<(usize, usize)>,
    dt: f64,
    accel_var: f64,
}

/// Distances from a 3-D position to each microphone, with analytic Jacobian.
pub fn range_function(mics: &[[f64; 3]]) -> SharedFunction {
    let m = mics.len();
    let (a, b) = (mics.to_vec(), mics.to_vec());
    FnFunction::new(3, m, move |p| {
        DVector::from_fn(m, |i, _| {
            ((p[0] - a[i][0]).powi(2) + (p[1] - a[i][1]).powi(2) + (p[2] - a[i][2]).powi(2)).sqrt()
        })
    })
    .with_jacobian(move |p| {
        DMatrix::from_fn(m, 3, |i, k| {
            let d = ((p[0] - b[i][0]).powi(2) + (p[1] - b[i][1]).powi(2) + (p[2] - b[i][2]).powi(2)).sqrt();
            (p[k] - b[i][k]) / d
        })
    })
    .shared()
}

impl TdoaModel {
    pub fn new(cfg: &TdoaConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.mics.len();
        let pairs = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        Ok(TdoaModel {
            ranges: range_function(&cfg.mics),
            mics: cfg.mics.clone(),
            mic_var: cfg.mic_variances(),
            pair_var: cfg.pair_variances(),
            pairs,
            dt: cfg.dt,
            accel_var: cfg.accel_var,
        })
    }

    /// Replace the range function, e.g. by an affine stand-in for testing.
    pub fn with_ranges(mut self, ranges: SharedFunction) -> Result<Self> {
        if ranges.input_dim() != 3 || ranges.output_dim() != self.mic_count() {
            return Err(Error::dim("TdoaModel::with_ranges", "range function must map 3 -> m"));
        }
        self.ranges = ranges;
        Ok(self)
    }

    pub fn mic_count(&self) -> usize {
        self.mics.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn ranges(&self) -> &SharedFunction {
        &self.ranges
    }

    /// Noise of `[ε_mic; ε_pair]`.
    pub fn measurement_noise(&self) -> NoiseModel {
        let d = DVector::from_iterator(
            self.mic_count() + self.pair_count(),
            self.mic_var.iter().chain(self.pair_var.iter()).copied(),
        );
        NoiseModel::zero_mean(DMatrix::from_diagonal(&d)).expect("validated variances")
    }

    fn differences(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.pairs.len(), self.pairs.iter().map(|&(i, j)| v[i] - v[j]))
    }

    /// `h(z)` on `z = [x; ε_mic; ε_pair]`.
    pub fn full_measurement(&self) -> SharedFunction {
        let (m, pairs) = (self.mic_count(), self.pair_count());
        let me = self.clone();
        FnFunction::new(6 + m + pairs, pairs, move |z| {
            let p = z.rows(0, 3).into_owned();
            let g = me.ranges.eval(&p).expect("range evaluation") + z.rows(6, m);
            me.differences(&g) + z.rows(6 + m, pairs)
        })
        .shared()
    }

    /// Noise-free pairwise differences at a true position.
    pub fn ideal_measurement(&self, position: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.differences(&self.ranges.eval(position)?))
    }

    /// Measurement with sampled microphone and pair noise.
    pub fn simulate<R: rand::Rng + ?Sized>(&self, rng: &mut R, position: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = self.ranges.eval(position)?;
        for i in 0..g.len() {
            g[i] += self.mic_var[i].sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let mut y = self.differences(&g);
        for k in 0..y.len() {
            y[k] += self.pair_var[k].sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        Ok(y)
    }

    /// Constant-velocity transition matrix.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let mut f = DMatrix::identity(6, 6);
        for k in 0..3 {
            f[(k, k + 3)] = self.dt;
        }
        f
    }

    /// Discretized white-noise acceleration covariance.
    pub fn process_noise(&self) -> NoiseModel {
        let dt = self.dt;
        let q = self.accel_var;
        let mut p = DMatrix::zeros(6, 6);
        for k in 0..3 {
            p[(k, k)] = q * dt.powi(3) / 3.0;
            p[(k, k + 3)] = q * dt.powi(2) / 2.0;
            p[(k + 3, k)] = q * dt.powi(2) / 2.0;
            p[(k + 3, k + 3)] = q * dt;
        }
        NoiseModel::zero_mean(p).expect("positive process noise")
    }
}

/// Update with a vector of `m(m−1)/2` pairwise differences.
pub fn tdoa_update(
    model: &TdoaModel,
    state: &GaussianDensity,
    y: &DVector<f64>,
    mode: TdoaMode,
    transform: Transform,
) -> Result<(GaussianDensity, UpdateReport)> {
    if state.dim() != 6 || y.len() != model.pair_count() {
        return Err(Error::dim(
            "tdoa_update",
            format!("state {} (expected 6), measurement {} (expected {})", state.dim(), y.len(), model.pair_count()),
        ));
    }
    match mode {
        TdoaMode::Naive => {
            let meas = Measurement::new(y.clone(), model.measurement_noise());
            update(state, model.full_measurement().as_ref(), &meas, transform)
        }
        TdoaMode::Structured => structured_update(model, state, y, transform),
    }
}

fn structured_update(
    model: &TdoaModel,
    state: &GaussianDensity,
    y: &DVector<f64>,
    transform: Transform,
) -> Result<(GaussianDensity, UpdateReport)> {
    let (m, pairs) = (model.mic_count(), model.pair_count());
    let pos = [0, 1, 2];
    let all: Vec<usize> = (0..6).collect();
    let position = state.marginal(&pos)?;
    let t = transform_moments(model.ranges.as_ref(), &position, transform)?;
    // Lift the position/range cross covariance to the whole state.
    let p_xp = select_block(state.cov(), &all, &pos);
    let p_xg = p_xp * SpdFactor::new(position.cov(), "tdoa_update")?.solve(&t.cross);
    let s = tdoa_innovation(&t.cov, &model.mic_var, &model.pair_var)?;
    let y_pred = model.differences(&t.mean);
    let p_xh = DMatrix::from_fn(6, pairs, |r, k| {
        let (i, j) = model.pairs[k];
        p_xg[(r, i)] - p_xg[(r, j)]
    });
    let mut work = t.cost;
    work.flops += cost::solve(3, m) + cost::matmul(6, 3, m);
    let dense = s.to_dense();
    correct(state, y, y_pred, dense, p_xh, work, InnovationSolve::Structured(&s))
}
