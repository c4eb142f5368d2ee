//! Pedestrian dead reckoning propagation.
//!
//! State `x = (r₁, r₂, θ, l)` and noise `ε = (ε_r1, ε_r2, ε_θ, ε_l)` with
//! `ε_θ ~ N(Δ, σ_θ²)`. One step moves the position by `(l+ε_l)` along the
//! heading `θ+ε_θ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conditional::ConditionallyLinearFunction;
use crate::cost::Cost;
use crate::error::{Error, Result};
use crate::filter::predict_with_cost;
use crate::gaussian::{GaussianDensity, IndexPartition, NoiseModel};
use crate::partial_linear::{predict_partial, InnerFunction, PartiallyLinearModel};
use crate::transforms::{FnFunction, SharedFunction, Transform};

use super::config::PdrConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PdrMode {
    /// Transform on the full 8-dimensional augmented state.
    NaiveAugmented,
    /// Transform on `(θ+ε_θ, l+ε_l)` only.
    PartialLinear,
    /// As above, with sigma points on the heading only.
    PartialConditional,
}

impl PdrMode {
    pub const ALL: [PdrMode; 3] = [PdrMode::NaiveAugmented, PdrMode::PartialLinear, PdrMode::PartialConditional];

    pub fn name(self) -> &'static str {
        match self {
            PdrMode::NaiveAugmented => "naive-augmented",
            PdrMode::PartialLinear => "partial-linear",
            PdrMode::PartialConditional => "partial-plus-conditional",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "naive-augmented" | "naive" => Ok(PdrMode::NaiveAugmented),
            "partial-linear" | "partial" => Ok(PdrMode::PartialLinear),
            "partial-plus-conditional" | "conditional" => Ok(PdrMode::PartialConditional),
            other => Err(Error::Config(format!(
                "unknown pdr mode `{other}` (expected naive-augmented, partial-linear, partial-plus-conditional or all)"
            ))),
        }
    }
}

/// The transition in its three forms.
#[derive(Clone, Debug)]
pub struct PdrModel {
    noise: NoiseModel,
    full: SharedFunction,
    partial: PartiallyLinearModel,
    conditional: PartiallyLinearModel,
}

fn step_function() -> SharedFunction {
    FnFunction::new(8, 4, |z| {
        let heading = z[2] + z[6];
        let length = z[3] + z[7];
        DVector::from_column_slice(&[
            z[0] + length * heading.cos() + z[4],
            z[1] + length * heading.sin() + z[5],
            heading,
            length,
        ])
    })
    .shared()
}

impl PdrModel {
    pub fn new(cfg: &PdrConfig) -> Result<Self> {
        let noise = NoiseModel::new(
            DVector::from_column_slice(&[0.0, 0.0, cfg.delta, 0.0]),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[
                cfg.sigma_r * cfg.sigma_r,
                cfg.sigma_r * cfg.sigma_r,
                cfg.sigma_theta * cfg.sigma_theta,
                cfg.sigma_l * cfg.sigma_l,
            ])),
        )?;
        // z̃ = (θ + ε_θ, l + ε_l)
        let t = DMatrix::from_fn(2, 8, |i, j| if j == i + 2 || j == i + 6 { 1.0 } else { 0.0 });
        let a = DMatrix::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let h = DMatrix::from_fn(4, 8, |i, j| if j == i || j == i + 4 { 1.0 } else { 0.0 });
        let polar = FnFunction::new(2, 2, |v| DVector::from_column_slice(&[v[1] * v[0].cos(), v[1] * v[0].sin()]))
            .with_jacobian(|v| {
                DMatrix::from_row_slice(2, 2, &[-v[1] * v[0].sin(), v[0].cos(), v[1] * v[0].cos(), v[0].sin()])
            })
            .shared();
        let partial = PartiallyLinearModel::new(a.clone(), t.clone(), h.clone(), InnerFunction::General(polar))?;
        let heading_only = ConditionallyLinearFunction::new(
            IndexPartition::new(vec![0], vec![1])?,
            FnFunction::new(1, 2, |_| DVector::zeros(2)).shared(),
            Arc::new(|v: &DVector<f64>| Ok(DMatrix::from_column_slice(2, 1, &[v[0].cos(), v[0].sin()]))),
        )?;
        let conditional = PartiallyLinearModel::new(a, t, h, InnerFunction::Conditional(heading_only))?;
        Ok(PdrModel { noise, full: step_function(), partial, conditional })
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// `f([x; ε])` on the full augmented state.
    pub fn transition(&self) -> &SharedFunction {
        &self.full
    }

    pub fn partial_model(&self) -> &PartiallyLinearModel {
        &self.partial
    }

    pub fn conditional_model(&self) -> &PartiallyLinearModel {
        &self.conditional
    }
}

/// One propagation step in the selected mode.
pub fn pdr_propagate(
    model: &PdrModel,
    state: &GaussianDensity,
    mode: PdrMode,
    transform: Transform,
) -> Result<(GaussianDensity, Cost)> {
    if state.dim() != 4 {
        return Err(Error::dim("pdr_propagate", format!("state must be 4-dimensional, got {}", state.dim())));
    }
    match mode {
        PdrMode::NaiveAugmented => predict_with_cost(state, model.full.as_ref(), &model.noise, transform),
        PdrMode::PartialLinear => predict_partial(state, &model.noise, &model.partial, transform),
        PdrMode::PartialConditional => predict_partial(state, &model.noise, &model.conditional, transform),
    }
}
