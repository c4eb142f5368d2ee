//! Range-only positioning with a recursive update filter.
//!
//! A measurement of three ranges is applied as `j` EKF updates, each with
//! noise covariance `j·R` and relinearized at the running mean. Only the
//! position is observed, so in the static-partition mode the iterations run
//! on the 3×3 position block and the 9-dimensional joint is rebuilt once.

use nalgebra::{DMatrix, DVector};

use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::filter::{update, Measurement};
use crate::gaussian::{GaussianDensity, IndexPartition, NoiseModel};
use crate::static_state::all_static_extract;
use crate::transforms::{FnFunction, SharedFunction, Transform};

use super::config::RufConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RufMode {
    /// Every partial update acts on the 9-dimensional state.
    FullState,
    /// Partial updates act on the position; the rest is extracted afterwards.
    StaticPartition,
}

impl RufMode {
    pub const ALL: [RufMode; 2] = [RufMode::FullState, RufMode::StaticPartition];

    pub fn name(self) -> &'static str {
        match self {
            RufMode::FullState => "full-state",
            RufMode::StaticPartition => "static-partition",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "full-state" | "full" => Ok(RufMode::FullState),
            "static-partition" | "static" => Ok(RufMode::StaticPartition),
            other => {
                Err(Error::Config(format!("unknown ruf mode `{other}` (expected full-state, static-partition or all)")))
            }
        }
    }
}

/// Covariance-update counts of one recursive update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RufWork {
    /// Updates of the 3×3 position covariance.
    pub position_cov_updates: usize,
    /// Updates of the 9×9 joint covariance.
    pub full_cov_updates: usize,
    pub cost: Cost,
}

#[derive(Clone, Debug)]
pub struct RufModel {
    stations: [[f64; 3]; 3],
    meas_var: f64,
    full: SharedFunction,
    position: SharedFunction,
}

/// Ranges from the first three inputs to each station plus additive noise
/// taken from the last three inputs; `state_dim` inputs precede the noise.
fn range_measurement(stations: [[f64; 3]; 3], state_dim: usize) -> SharedFunction {
    let dist = move |x: &DVector<f64>, i: usize| {
        let s = stations[i];
        ((x[0] - s[0]).powi(2) + (x[1] - s[1]).powi(2) + (x[2] - s[2]).powi(2)).sqrt()
    };
    FnFunction::new(state_dim + 3, 3, move |x| DVector::from_fn(3, |i, _| dist(x, i) + x[state_dim + i]))
        .with_jacobian(move |x| {
            let mut j = DMatrix::zeros(3, state_dim + 3);
            for i in 0..3 {
                let d = dist(x, i);
                for k in 0..3 {
                    j[(i, k)] = (x[k] - stations[i][k]) / d;
                }
                j[(i, state_dim + i)] = 1.0;
            }
            j
        })
        .shared()
}

impl RufModel {
    pub fn new(cfg: &RufConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(RufModel {
            stations: cfg.stations,
            meas_var: cfg.meas_var,
            full: range_measurement(cfg.stations, 9),
            position: range_measurement(cfg.stations, 3),
        })
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::diagonal(&[self.meas_var; 3]).expect("positive variance")
    }

    /// `h([x; ε])` on the 9-dimensional state.
    pub fn full_measurement(&self) -> &SharedFunction {
        &self.full
    }

    /// `h([p; ε])` on the position only.
    pub fn position_measurement(&self) -> &SharedFunction {
        &self.position
    }

    pub fn simulate<R: rand::Rng + ?Sized>(&self, rng: &mut R, position: &DVector<f64>) -> DVector<f64> {
        let sd = self.meas_var.sqrt();
        DVector::from_fn(3, |i, _| {
            let s = self.stations[i];
            ((position[0] - s[0]).powi(2) + (position[1] - s[1]).powi(2) + (position[2] - s[2]).powi(2)).sqrt()
                + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
    }
}

fn recursive(
    state: &GaussianDensity,
    h: &SharedFunction,
    y: &DVector<f64>,
    noise: &NoiseModel,
    iterations: usize,
) -> Result<(GaussianDensity, Cost)> {
    let meas = Measurement::new(y.clone(), noise.scaled(iterations as f64));
    let mut current = state.clone();
    let mut work = Cost::default();
    for _ in 0..iterations {
        let (next, report) = update(&current, h.as_ref(), &meas, Transform::Ekf)?;
        current = next;
        work += report.cost();
    }
    Ok((current, work))
}

/// Apply `y` in `iterations` parts.
pub fn ruf_update(
    model: &RufModel,
    state: &GaussianDensity,
    y: &DVector<f64>,
    mode: RufMode,
    iterations: usize,
) -> Result<(GaussianDensity, RufWork)> {
    if state.dim() != 9 || y.len() != 3 {
        return Err(Error::dim("ruf_update", "expects a 9-dimensional state and 3 ranges"));
    }
    if iterations == 0 {
        return Err(Error::Config("ruf iterations must be at least 1".into()));
    }
    match mode {
        RufMode::FullState => {
            let (post, cost) = recursive(state, &model.full, y, &model.noise(), iterations)?;
            Ok((post, RufWork { position_cov_updates: 0, full_cov_updates: iterations, cost }))
        }
        RufMode::StaticPartition => static_partition_update(model, state, None, y, iterations),
    }
}

/// Static-partition update against a joint frozen at an earlier time.
///
/// `frozen` is the joint when deferral began and `active` the running
/// position density since then (the whole state is static throughout).
/// With `active = None` the position marginal of `frozen` is used.
pub fn static_partition_update(
    model: &RufModel,
    frozen: &GaussianDensity,
    active: Option<&GaussianDensity>,
    y: &DVector<f64>,
    iterations: usize,
) -> Result<(GaussianDensity, RufWork)> {
    let (_, joint, work) = static_partition_step(model, frozen, active, y, iterations)?;
    Ok((joint, work))
}

/// As [`static_partition_update`], also returning the running position density.
pub fn static_partition_step(
    model: &RufModel,
    frozen: &GaussianDensity,
    active: Option<&GaussianDensity>,
    y: &DVector<f64>,
    iterations: usize,
) -> Result<(GaussianDensity, GaussianDensity, RufWork)> {
    let partition = IndexPartition::leading(3, 9)?;
    let start = match active {
        Some(a) => a.clone(),
        None => frozen.marginal(partition.first())?,
    };
    let (position, mut cost) = recursive(&start, &model.position, y, &model.noise(), iterations)?;
    let joint = all_static_extract(frozen, &partition, &position)?;
    cost.flops += cost::solve(3, 6) + cost::matmul(6, 3, 3) + cost::matmul(6, 3, 6) + cost::matmul(6, 3, 3);
    Ok((position, joint, RufWork { position_cov_updates: iterations, full_cov_updates: 1, cost }))
}
