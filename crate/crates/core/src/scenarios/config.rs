//! JSON run configuration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianDensity;
use crate::transforms::Transform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Pdr,
    Tdoa,
    Ruf,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Pdr => "pdr",
            ScenarioKind::Tdoa => "tdoa",
            ScenarioKind::Ruf => "ruf",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pdr" => Ok(ScenarioKind::Pdr),
            "tdoa" => Ok(ScenarioKind::Tdoa),
            "ruf" => Ok(ScenarioKind::Ruf),
            other => Err(Error::Config(format!("unknown scenario `{other}` (expected pdr, tdoa or ruf)"))),
        }
    }
}

/// Moment approximation named in a config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Ukf,
    Ckf,
}

impl FilterKind {
    pub fn transform(self) -> Transform {
        match self {
            FilterKind::Ekf => Transform::Ekf,
            FilterKind::Ukf => Transform::unscented(),
            FilterKind::Ckf => Transform::Cubature,
        }
    }
}

/// Top-level run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub filter: FilterKind,
    /// A mode name of the scenario, or `all`.
    pub mode: String,
    pub seed: u64,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdr: Option<PdrConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdoa: Option<TdoaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ruf: Option<RufConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("field `horizon` must be at least 1".into()));
        }
        let stray = [
            ("pdr", self.pdr.is_some() && self.scenario != ScenarioKind::Pdr),
            ("tdoa", self.tdoa.is_some() && self.scenario != ScenarioKind::Tdoa),
            ("ruf", self.ruf.is_some() && self.scenario != ScenarioKind::Ruf),
        ];
        if let Some((name, _)) = stray.iter().find(|(_, bad)| *bad) {
            return Err(Error::Config(format!("field `{name}` does not apply to scenario `{}`", self.scenario.name())));
        }
        match self.scenario {
            ScenarioKind::Pdr => self.pdr_config().validate(),
            ScenarioKind::Tdoa => self.tdoa_config().validate(),
            ScenarioKind::Ruf => self.ruf_config().validate(),
        }
    }

    pub fn pdr_config(&self) -> PdrConfig {
        self.pdr.clone().unwrap_or_default()
    }

    pub fn tdoa_config(&self) -> TdoaConfig {
        self.tdoa.clone().unwrap_or_default()
    }

    pub fn ruf_config(&self) -> RufConfig {
        self.ruf.clone().unwrap_or_default()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("field `{name}` must be positive, got {v}")))
    }
}

fn square(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("field `{name}` must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn diag_rows(d: &[f64]) -> Vec<Vec<f64>> {
    (0..d.len()).map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect()
}

/// Pedestrian dead reckoning: state `(r₁, r₂, θ, l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdrConfig {
    /// Measured heading change per step (rad); mean of the heading noise.
    pub delta: f64,
    pub sigma_theta: f64,
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub prior_mean: [f64; 4],
    /// Row-major 4×4 prior covariance.
    pub prior_cov: Vec<Vec<f64>>,
}

impl Default for PdrConfig {
    fn default() -> Self {
        let (sigma_r, sigma_l) = (0.01, 0.05);
        PdrConfig {
            delta: 0.05,
            sigma_theta: 0.1,
            sigma_l,
            sigma_r,
            prior_mean: [0.0, 0.0, 0.0, 0.7],
            prior_cov: diag_rows(&[sigma_r * sigma_r, sigma_r * sigma_r, 1e-4, sigma_l * sigma_l]),
        }
    }
}

impl PdrConfig {
    pub fn validate(&self) -> Result<()> {
        positive("pdr.sigma_theta", self.sigma_theta)?;
        positive("pdr.sigma_l", self.sigma_l)?;
        positive("pdr.sigma_r", self.sigma_r)?;
        self.prior().map(|_| ())
    }

    pub fn prior(&self) -> Result<GaussianDensity> {
        GaussianDensity::new(DVector::from_column_slice(&self.prior_mean), square("pdr.prior_cov", &self.prior_cov, 4)?)
    }
}

/// Acoustic source tracking with pairwise time differences; state `(position, velocity)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdoaConfig {
    pub mics: Vec<[f64; 3]>,
    /// Per-microphone noise variances, or a single value for all.
    pub mic_var: Vec<f64>,
    /// Per-pair noise variances, or a single value for all.
    pub pair_var: Vec<f64>,
    pub dt: f64,
    /// White-noise acceleration intensity of the constant-velocity model.
    pub accel_var: f64,
    pub initial_position: [f64; 3],
    pub initial_velocity: [f64; 3],
    /// Prior standard deviations of position and velocity.
    pub prior_std: [f64; 2],
}

impl Default for TdoaConfig {
    fn default() -> Self {
        TdoaConfig {
            mics: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.5, 0.5, 0.6]],
            mic_var: vec![1e-4],
            pair_var: vec![1e-4],
            dt: 0.1,
            accel_var: 0.05,
            initial_position: [4.0, 3.0, 1.5],
            initial_velocity: [0.3, -0.2, 0.0],
            prior_std: [0.3, 0.2],
        }
    }
}

impl TdoaConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.mics.len();
        if m < 2 {
            return Err(Error::Config("field `tdoa.mics` needs at least two microphones".into()));
        }
        let pairs = m * (m - 1) / 2;
        if self.mic_var.len() != 1 && self.mic_var.len() != m {
            return Err(Error::Config(format!("field `tdoa.mic_var` needs 1 or {m} entries")));
        }
        if self.pair_var.len() != 1 && self.pair_var.len() != pairs {
            return Err(Error::Config(format!("field `tdoa.pair_var` needs 1 or {pairs} entries")));
        }
        for v in self.mic_var.iter().chain(&self.pair_var) {
            positive("tdoa noise variance", *v)?;
        }
        positive("tdoa.dt", self.dt)?;
        if !(self.accel_var >= 0.0 && self.accel_var.is_finite()) {
            return Err(Error::Config("field `tdoa.accel_var` must be non-negative".into()));
        }
        for s in self.prior_std {
            if s.is_nan() || s < 0.0 {
                return Err(Error::Config("field `tdoa.prior_std` must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn mic_variances(&self) -> DVector<f64> {
        broadcast(&self.mic_var, self.mics.len())
    }

    pub fn pair_variances(&self) -> DVector<f64> {
        let m = self.mics.len();
        broadcast(&self.pair_var, m * (m - 1) / 2)
    }
}

fn broadcast(v: &[f64], n: usize) -> DVector<f64> {
    if v.len() == 1 {
        DVector::from_element(n, v[0])
    } else {
        DVector::from_column_slice(v)
    }
}

/// Range-only positioning with a recursive update; state `(position, velocity, acceleration)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RufConfig {
    pub stations: [[f64; 3]; 3],
    pub meas_var: f64,
    /// Number of partial updates per measurement.
    pub iterations: usize,
    pub truth: [f64; 3],
    /// Offset of the prior position mean from the truth.
    pub prior_bias: [f64; 3],
    /// Prior standard deviations of position, velocity and acceleration.
    pub prior_std: [f64; 3],
    /// Correlation between the position, velocity and acceleration of one axis.
    pub correlation: f64,
}

impl Default for RufConfig {
    fn default() -> Self {
        RufConfig {
            stations: [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]],
            meas_var: 0.01,
            iterations: 10,
            truth: [3.0, 4.0, 4.0],
            prior_bias: [2.5, -2.5, 2.0],
            prior_std: [3.0, 1.0, 0.5],
            correlation: 0.5,
        }
    }
}

impl RufConfig {
    pub fn validate(&self) -> Result<()> {
        positive("ruf.meas_var", self.meas_var)?;
        if self.iterations == 0 {
            return Err(Error::Config("field `ruf.iterations` must be at least 1".into()));
        }
        for s in self.prior_std {
            positive("ruf.prior_std", s)?;
        }
        if self.correlation.is_nan() || self.correlation.abs() >= 1.0 {
            return Err(Error::Config("field `ruf.correlation` must lie in (-1, 1)".into()));
        }
        Ok(())
    }

    /// Per-axis covariance of `(p, v, a)` expanded to the 9-dimensional state.
    pub fn prior_cov(&self) -> DMatrix<f64> {
        let s = self.prior_std;
        let axis = DMatrix::from_fn(3, 3, |i, j| if i == j { s[i] * s[i] } else { self.correlation * s[i] * s[j] });
        DMatrix::from_fn(9, 9, |i, j| if i % 3 == j % 3 { axis[(i / 3, j / 3)] } else { 0.0 })
    }

    pub fn prior(&self) -> Result<GaussianDensity> {
        let mut mean = DVector::zeros(9);
        for k in 0..3 {
            mean[k] = self.truth[k] + self.prior_bias[k];
        }
        GaussianDensity::new(mean, self.prior_cov())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"scenario":"pdr","filter":"ukf","mode":"all","seed":1,"horizon":3}"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.pdr_config(), PdrConfig::default());
        assert_eq!(cfg.filter.transform(), Transform::unscented());
    }

    #[test]
    fn unknown_top_level_field_is_named() {
        let text = MINIMAL.replace("\"horizon\":3", "\"horizon\":3,\"colour\":1");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn unknown_nested_field_is_named() {
        let text = MINIMAL.replace("\"horizon\":3", "\"horizon\":3,\"pdr\":{\"sigma_x\":1}");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("sigma_x"), "{err}");
    }

    #[test]
    fn mismatched_scenario_object_is_rejected() {
        let text = MINIMAL.replace("\"horizon\":3", "\"horizon\":3,\"ruf\":{}");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("`ruf`"), "{err}");
    }

    #[test]
    fn ruf_prior_is_block_structured() {
        let p = RufConfig::default().prior_cov();
        assert_eq!(p[(0, 3)], 0.5 * 3.0 * 1.0);
        assert_eq!(p[(0, 1)], 0.0);
        assert_eq!(p[(8, 8)], 0.25);
    }

    #[test]
    fn tdoa_pair_variance_length_checked() {
        let cfg = TdoaConfig { pair_var: vec![1.0, 2.0], ..TdoaConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
