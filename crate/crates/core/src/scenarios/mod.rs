//! Seeded simulations of three example problems, each run in a naive and
//! one or more structured modes.

pub mod config;
pub mod pdr;
pub mod ruf;
pub mod tdoa;

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::cost::Cost;
use crate::error::{Error, Result};
use crate::filter::predict_additive;
use crate::gaussian::{GaussianDensity, NoiseModel};
use crate::random::{rng_from_seed, sample, SimRng};
use crate::transforms::{AffineFunction, Transform};

pub use config::{FilterKind, PdrConfig, RufConfig, RunConfig, ScenarioKind, TdoaConfig};
pub use pdr::{pdr_propagate, PdrMode, PdrModel};
pub use ruf::{ruf_update, RufMode, RufModel, RufWork};
pub use tdoa::{tdoa_update, TdoaMode, TdoaModel};

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub mode: String,
    pub mean: Vec<f64>,
    pub cov_trace: f64,
    pub eval_count: u64,
    pub flop_proxy: u64,
    pub wall_ns: u64,
}

/// Per-mode totals for the summary file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub steps: usize,
    pub final_mean: Vec<f64>,
    pub final_cov_trace: f64,
    /// Distance between the final position estimate and the simulated truth.
    pub final_position_error: f64,
    pub total_evals: u64,
    pub total_flops: u64,
    pub max_sigma_points: usize,
    pub point_cov_work: u64,
    pub total_wall_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub filter: String,
    pub seed: u64,
    pub horizon: usize,
    pub state_dim: usize,
    pub modes: Vec<ModeSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRun {
    pub state_dim: usize,
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

impl ScenarioRun {
    pub fn csv_header(&self) -> String {
        let means: Vec<String> = (0..self.state_dim).map(|i| format!("mean_{i}")).collect();
        format!("step,mode,{},cov_trace,eval_count,flop_proxy,wall_ns", means.join(","))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        for r in &self.records {
            let means: Vec<String> = r.mean.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(
                w,
                "{},{},{},{:.17e},{},{},{}",
                r.step,
                r.mode,
                means.join(","),
                r.cov_trace,
                r.eval_count,
                r.flop_proxy,
                r.wall_ns
            )?;
        }
        Ok(())
    }
}

fn select_modes<M: Copy>(name: &str, all: &[M], parse: impl Fn(&str) -> Result<M>) -> Result<Vec<M>> {
    if name == "all" {
        Ok(all.to_vec())
    } else {
        name.split(',').map(|s| parse(s.trim())).collect()
    }
}

/// Validate the mode string of `cfg` against its scenario.
pub fn check_modes(cfg: &RunConfig) -> Result<()> {
    match cfg.scenario {
        ScenarioKind::Pdr => select_modes(&cfg.mode, &PdrMode::ALL, PdrMode::parse).map(|_| ()),
        ScenarioKind::Tdoa => select_modes(&cfg.mode, &TdoaMode::ALL, TdoaMode::parse).map(|_| ()),
        ScenarioKind::Ruf => select_modes(&cfg.mode, &RufMode::ALL, RufMode::parse).map(|_| ()),
    }
}

struct Recorder {
    timing: bool,
    records: Vec<StepRecord>,
    modes: Vec<ModeSummary>,
}

impl Recorder {
    fn record(&mut self, step: usize, mode: &str, state: &GaussianDensity, cost: Cost, wall: u64) {
        let wall_ns = if self.timing { wall } else { 0 };
        self.records.push(StepRecord {
            step,
            mode: mode.to_string(),
            mean: state.mean().iter().copied().collect(),
            cov_trace: state.cov().trace(),
            eval_count: cost.evals,
            flop_proxy: cost.flops,
            wall_ns,
        });
        match self.modes.last_mut() {
            Some(s) if s.mode == mode => {
                s.steps += 1;
                s.total_evals += cost.evals;
                s.total_flops += cost.flops;
                s.max_sigma_points = s.max_sigma_points.max(cost.sigma_points);
                s.point_cov_work = s.point_cov_work.max(cost.point_cov_work);
                s.total_wall_ns += wall_ns;
            }
            _ => self.modes.push(ModeSummary {
                mode: mode.to_string(),
                steps: 1,
                final_mean: Vec::new(),
                final_cov_trace: 0.0,
                final_position_error: 0.0,
                total_evals: cost.evals,
                total_flops: cost.flops,
                max_sigma_points: cost.sigma_points,
                point_cov_work: cost.point_cov_work,
                total_wall_ns: wall_ns,
            }),
        }
    }

    fn finish_mode(&mut self, state: &GaussianDensity, truth_position: &[f64]) {
        if let Some(s) = self.modes.last_mut() {
            s.final_mean = state.mean().iter().copied().collect();
            s.final_cov_trace = state.cov().trace();
            s.final_position_error =
                truth_position.iter().enumerate().map(|(i, t)| (state.mean()[i] - t).powi(2)).sum::<f64>().sqrt();
        }
    }
}

fn elapsed(t: Instant) -> u64 {
    t.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

/// Simulate the configured scenario and run every requested mode on the
/// same simulated data. Wall times are recorded only when `timing` is set,
/// so that the numeric records are reproducible byte for byte.
pub fn run_scenario(cfg: &RunConfig, timing: bool) -> Result<ScenarioRun> {
    cfg.validate()?;
    let transform = cfg.filter.transform();
    let mut rng = rng_from_seed(cfg.seed);
    let mut rec = Recorder { timing, records: Vec::new(), modes: Vec::new() };
    let state_dim = match cfg.scenario {
        ScenarioKind::Pdr => run_pdr(cfg, transform, &mut rng, &mut rec)?,
        ScenarioKind::Tdoa => run_tdoa(cfg, transform, &mut rng, &mut rec)?,
        ScenarioKind::Ruf => run_ruf(cfg, &mut rng, &mut rec)?,
    };
    let summary = RunSummary {
        scenario: cfg.scenario.name().to_string(),
        filter: transform.to_string(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        state_dim,
        modes: rec.modes,
    };
    Ok(ScenarioRun { state_dim, records: rec.records, summary })
}

fn run_pdr(cfg: &RunConfig, transform: Transform, rng: &mut SimRng, rec: &mut Recorder) -> Result<usize> {
    let modes = select_modes(&cfg.mode, &PdrMode::ALL, PdrMode::parse)?;
    let pc = cfg.pdr_config();
    let model = PdrModel::new(&pc)?;
    let prior = pc.prior()?;
    let noise_density = GaussianDensity::new(model.noise().mean().clone(), model.noise().cov().clone())?;
    let mut truth = sample(rng, &prior);
    for _ in 0..cfg.horizon {
        let eps = sample(rng, &noise_density);
        let z = DVector::from_iterator(8, truth.iter().chain(eps.iter()).copied());
        truth = model.transition().eval(&z)?;
    }
    for mode in modes {
        let mut state = prior.clone();
        for step in 1..=cfg.horizon {
            let t = Instant::now();
            let (next, cost) =
                pdr_propagate(&model, &state, mode, transform).map_err(|e| e.at_step(step, mode.name()))?;
            rec.record(step, mode.name(), &next, cost, elapsed(t));
            state = next;
        }
        rec.finish_mode(&state, &truth.as_slice()[..2]);
    }
    Ok(4)
}

fn run_tdoa(cfg: &RunConfig, transform: Transform, rng: &mut SimRng, rec: &mut Recorder) -> Result<usize> {
    let modes = select_modes(&cfg.mode, &TdoaMode::ALL, TdoaMode::parse)?;
    let tc = cfg.tdoa_config();
    let model = TdoaModel::new(&tc)?;
    let f = model.transition_matrix();
    let q: NoiseModel = model.process_noise();
    let q_density = GaussianDensity::new(DVector::zeros(6), q.cov().clone())?;
    let truth0 = DVector::from_iterator(6, tc.initial_position.iter().chain(&tc.initial_velocity).copied());
    let (sp, sv) = (tc.prior_std[0], tc.prior_std[1]);
    let prior_cov = nalgebra::DMatrix::from_fn(6, 6, |i, j| {
        if i != j {
            0.0
        } else if i < 3 {
            sp * sp
        } else {
            sv * sv
        }
    });
    let prior_mean = &truth0
        + nalgebra::DMatrix::from_diagonal(&prior_cov.diagonal().map(f64::sqrt)) * crate::random::normal_vector(rng, 6);
    let prior = GaussianDensity::new(prior_mean, prior_cov)?;

    let mut truth = truth0;
    let mut measurements = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        truth = &f * truth + sample(rng, &q_density);
        measurements.push(model.simulate(rng, &truth.rows(0, 3).into_owned())?);
    }
    let transition = AffineFunction::linear(f);
    for mode in modes {
        let mut state = prior.clone();
        for (k, y) in measurements.iter().enumerate() {
            let step = k + 1;
            let t = Instant::now();
            let (predicted, mut cost) =
                predict_additive(&state, &transition, &q, Transform::Ekf).map_err(|e| e.at_step(step, mode.name()))?;
            let (next, report) =
                tdoa_update(&model, &predicted, y, mode, transform).map_err(|e| e.at_step(step, mode.name()))?;
            cost += report.cost();
            rec.record(step, mode.name(), &next, cost, elapsed(t));
            state = next;
        }
        rec.finish_mode(&state, &truth.as_slice()[..3]);
    }
    Ok(6)
}

fn run_ruf(cfg: &RunConfig, rng: &mut SimRng, rec: &mut Recorder) -> Result<usize> {
    let modes = select_modes(&cfg.mode, &RufMode::ALL, RufMode::parse)?;
    let rc = cfg.ruf_config();
    let model = RufModel::new(&rc)?;
    let prior = rc.prior()?;
    let truth = DVector::from_column_slice(&rc.truth);
    let measurements: Vec<DVector<f64>> = (0..cfg.horizon).map(|_| model.simulate(rng, &truth)).collect();
    for mode in modes {
        let mut state = prior.clone();
        let mut position: Option<GaussianDensity> = None;
        for (k, y) in measurements.iter().enumerate() {
            let step = k + 1;
            let t = Instant::now();
            let (next, work) = match mode {
                RufMode::FullState => ruf_update(&model, &state, y, mode, rc.iterations),
                RufMode::StaticPartition => {
                    ruf::static_partition_step(&model, &prior, position.as_ref(), y, rc.iterations).map(
                        |(p, joint, w)| {
                            position = Some(p);
                            (joint, w)
                        },
                    )
                }
            }
            .map_err(|e| e.at_step(step, mode.name()))?;
            rec.record(step, mode.name(), &next, work.cost, elapsed(t));
            state = next;
        }
        rec.finish_mode(&state, &rc.truth);
    }
    Ok(9)
}

/// Reject anything but known scenario and mode names before running.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let cfg = RunConfig::from_json(text)?;
    check_modes(&cfg)?;
    Ok(cfg)
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
