//! Work counts of naive and structured modes across problem sizes.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::random::rng_from_seed;
use crate::scenarios::{
    pdr_propagate, ruf_update, tdoa_update, PdrConfig, PdrMode, PdrModel, RufConfig, RufMode, RufModel, ScenarioKind,
    TdoaConfig, TdoaMode, TdoaModel,
};
use crate::transforms::Transform;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub size: usize,
    pub mode: String,
    pub sigma_points: usize,
    pub eval_count: u64,
    pub flop_proxy: u64,
    pub point_cov_work: u64,
    pub position_cov_updates: usize,
    pub full_cov_updates: usize,
    pub wall_ns: u64,
}

pub const BENCH_HEADER: &str =
    "scenario,size,mode,sigma_points,eval_count,flop_proxy,point_cov_work,position_cov_updates,full_cov_updates,wall_ns";

pub fn write_rows<W: Write>(rows: &[BenchRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.size,
            r.mode,
            r.sigma_points,
            r.eval_count,
            r.flop_proxy,
            r.point_cov_work,
            r.position_cov_updates,
            r.full_cov_updates,
            r.wall_ns
        )?;
    }
    Ok(())
}

/// Parse `5,10,20`.
pub fn parse_sizes(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| Error::Config(format!("invalid size `{}` in --sizes", s.trim())))
        })
        .collect()
}

/// Microphones spread over two rings so every size has a well-posed geometry.
pub fn ring_array(m: usize) -> Vec<[f64; 3]> {
    (0..m)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / m as f64;
            [a.cos(), a.sin(), if i % 2 == 0 { 0.0 } else { 0.4 }]
        })
        .collect()
}

/// Bench rows for `scenario`. For `tdoa` the sizes are microphone counts,
/// for `ruf` iteration counts; `pdr` has a single fixed size.
pub fn run_bench(scenario: ScenarioKind, sizes: &[usize], seed: u64, timing: bool) -> Result<Vec<BenchRow>> {
    let clock = |t: Instant| if timing { t.elapsed().as_nanos() as u64 } else { 0 };
    let mut rows = Vec::new();
    match scenario {
        ScenarioKind::Pdr => {
            let cfg = PdrConfig::default();
            let model = PdrModel::new(&cfg)?;
            let prior = cfg.prior()?;
            for mode in PdrMode::ALL {
                let t = Instant::now();
                let (_, cost) = pdr_propagate(&model, &prior, mode, Transform::unscented())?;
                rows.push(BenchRow {
                    scenario: "pdr".into(),
                    size: 4,
                    mode: mode.name().into(),
                    sigma_points: cost.sigma_points,
                    eval_count: cost.evals,
                    flop_proxy: cost.flops,
                    point_cov_work: cost.point_cov_work,
                    position_cov_updates: 0,
                    full_cov_updates: 0,
                    wall_ns: clock(t),
                });
            }
        }
        ScenarioKind::Tdoa => {
            for &m in sizes {
                if m < 2 {
                    return Err(Error::Config(format!("tdoa size {m} needs at least two microphones")));
                }
                let cfg = TdoaConfig { mics: ring_array(m), ..TdoaConfig::default() };
                let model = TdoaModel::new(&cfg)?;
                let truth = DVector::from_column_slice(&cfg.initial_position);
                let mut rng = rng_from_seed(seed);
                let y = model.simulate(&mut rng, &truth)?;
                let mut cov = nalgebra::DMatrix::identity(6, 6) * 0.04;
                cov.view_mut((3, 3), (3, 3)).fill_diagonal(0.01);
                let mut mean = DVector::zeros(6);
                mean.rows_mut(0, 3).copy_from(&(&truth + DVector::from_element(3, 0.1)));
                let prior = crate::gaussian::GaussianDensity::new(mean, cov)?;
                for mode in TdoaMode::ALL {
                    let t = Instant::now();
                    let (_, report) = tdoa_update(&model, &prior, &y, mode, Transform::unscented())?;
                    rows.push(BenchRow {
                        scenario: "tdoa".into(),
                        size: m,
                        mode: mode.name().into(),
                        sigma_points: report.sigma_points,
                        eval_count: report.function_eval_count,
                        flop_proxy: report.flop_proxy,
                        point_cov_work: report.point_cov_work,
                        position_cov_updates: 0,
                        full_cov_updates: 1,
                        wall_ns: clock(t),
                    });
                }
            }
        }
        ScenarioKind::Ruf => {
            let cfg = RufConfig::default();
            let model = RufModel::new(&cfg)?;
            let prior = cfg.prior()?;
            let mut rng = rng_from_seed(seed);
            let y = model.simulate(&mut rng, &DVector::from_column_slice(&cfg.truth));
            for &j in sizes {
                if j == 0 {
                    return Err(Error::Config("ruf sizes are iteration counts and must be at least 1".into()));
                }
                for mode in RufMode::ALL {
                    let t = Instant::now();
                    let (_, work) = ruf_update(&model, &prior, &y, mode, j)?;
                    rows.push(BenchRow {
                        scenario: "ruf".into(),
                        size: j,
                        mode: mode.name().into(),
                        sigma_points: work.cost.sigma_points,
                        eval_count: work.cost.evals,
                        flop_proxy: work.cost.flops,
                        point_cov_work: work.cost.point_cov_work,
                        position_cov_updates: work.position_cov_updates,
                        full_cov_updates: work.full_cov_updates,
                        wall_ns: clock(t),
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tdoa_flop_ratio_grows_with_microphones() {
        let rows = run_bench(ScenarioKind::Tdoa, &[5, 10, 20], 1, false).unwrap();
        let ratios: Vec<f64> = rows.chunks(2).map(|p| p[0].flop_proxy as f64 / p[1].flop_proxy as f64).collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
        assert!(ratios[0] > 1.0);
    }

    #[test]
    fn pdr_point_row() {
        let rows = run_bench(ScenarioKind::Pdr, &[], 0, false).unwrap();
        let pts: Vec<usize> = rows.iter().map(|r| r.sigma_points).collect();
        assert_eq!(pts, vec![17, 5, 3]);
    }

    #[test]
    fn ruf_covariance_update_counts() {
        let rows = run_bench(ScenarioKind::Ruf, &[1, 4, 10], 0, false).unwrap();
        for pair in rows.chunks(2) {
            let j = pair[0].size;
            assert_eq!((pair[0].full_cov_updates, pair[0].position_cov_updates), (j, 0));
            assert_eq!((pair[1].full_cov_updates, pair[1].position_cov_updates), (1, j));
        }
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_sizes("5, 10,20").unwrap(), vec![5, 10, 20]);
        assert!(parse_sizes("5,x").is_err());
    }
}
