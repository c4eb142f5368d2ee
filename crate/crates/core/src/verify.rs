//! Randomized equivalence suites comparing each structured path with a
//! plain reference computation.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::conditional::{conditional_moments, ConditionallyLinearFunction};
use crate::error::{Error, Result};
use crate::filter::{predict, update, Measurement};
use crate::gaussian::{GaussianDensity, IndexPartition, NoiseModel};
use crate::innovation::{block_update, dense_solve_flops, woodbury_solve, BlockMeasurement, StructuredInnovation};
use crate::linalg::{block_diag, rel_frobenius, rel_vec};
use crate::partial_linear::{reduced_moments, InnerFunction, PartiallyLinearModel};
use crate::random::{
    normal_matrix, normal_vector, permutation, random_gaussian, random_lower_triangular, random_spd, rng_from_seed,
    SimRng,
};
use crate::static_state::{deferred_step, extract_full, ActivePartitionModel, StaticAux};
use crate::transforms::{linear_transform, sigma_transform, AffineFunction, FnFunction, MomentTriple, Transform};

pub const SUITES: [&str; 5] = ["partial-linear", "conditional", "static-deferral", "block-update", "woodbury"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountCheck {
    pub name: String,
    pub expected: u64,
    pub actual: u64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub label: String,
    pub wall_ns: u64,
}

/// Outcome of one suite. The largest error is kept whether or not it passed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub cases: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst_case: String,
    pub count_checks: Vec<CountCheck>,
    pub timing: Vec<TimingRow>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64, tolerance: f64) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            seed,
            cases: 0,
            tolerance,
            max_rel_error: 0.0,
            worst_case: String::new(),
            count_checks: Vec::new(),
            timing: Vec::new(),
        }
    }

    fn observe(&mut self, err: f64, case: impl FnOnce() -> String) {
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst_case = case();
        }
    }

    fn count(&mut self, name: impl Into<String>, expected: u64, actual: u64, passed: bool) {
        self.count_checks.push(CountCheck { name: name.into(), expected, actual, passed });
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.count_checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "suite {}: {} ({} cases, seed {}, max rel err {:.3e}, tolerance {:.0e})",
            self.suite,
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases,
            self.seed,
            self.max_rel_error,
            self.tolerance
        )?;
        for c in &self.count_checks {
            if !c.passed {
                writeln!(f, "  count {}: expected {}, got {} FAIL", c.name, c.expected, c.actual)?;
            }
        }
        let ok = self.count_checks.iter().filter(|c| c.passed).count();
        if !self.count_checks.is_empty() {
            writeln!(f, "  count checks passed: {ok}/{}", self.count_checks.len())?;
        }
        for t in &self.timing {
            writeln!(f, "  time {}: {} ns", t.label, t.wall_ns)?;
        }
        if !self.passed() {
            writeln!(f, "  worst case: {}", self.worst_case)?;
        }
        Ok(())
    }
}

fn triple_error(a: &MomentTriple, b: &MomentTriple) -> f64 {
    rel_vec(&a.mean, &b.mean).max(rel_frobenius(&a.cov, &b.cov)).max(rel_frobenius(&a.cross, &b.cross))
}

fn density_error(a: &GaussianDensity, b: &GaussianDensity) -> f64 {
    rel_vec(a.mean(), b.mean()).max(rel_frobenius(a.cov(), b.cov()))
}

fn timed<T>(report: &mut SuiteReport, label: &str, f: impl FnOnce(&mut SuiteReport) -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f(report)?;
    report.timing.push(TimingRow { label: label.into(), wall_ns: start.elapsed().as_nanos() as u64 });
    Ok(out)
}

/// Run one suite by name (or `all`).
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<SuiteReport>> {
    match name {
        "all" => SUITES.iter().map(|s| run_one(s, seed)).collect(),
        other => run_one(other, seed).map(|r| vec![r]),
    }
}

fn run_one(name: &str, seed: u64) -> Result<SuiteReport> {
    match name {
        "partial-linear" => partial_linear_suite(seed),
        "conditional" => conditional_suite(seed),
        "static-deferral" => static_deferral_suite(seed),
        "block-update" => block_update_suite(seed),
        "woodbury" => woodbury_suite(seed),
        other => Err(Error::Config(format!("unknown suite `{other}` (valid: {}, all)", SUITES.join(", ")))),
    }
}

fn wavy(r: usize, p: usize, rng: &mut SimRng) -> InnerFunction {
    let phase = normal_vector(rng, p);
    InnerFunction::General(
        FnFunction::new(r, p, move |x| {
            DVector::from_fn(p, |i, _| (x[i % r] + phase[i]).sin() + 0.1 * x[(i + 1) % r] * x[i % r])
        })
        .shared(),
    )
}

fn partial_linear_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("partial-linear", seed, 1e-9);
    let mut rng = rng_from_seed(seed);
    timed(&mut rep, "affine reduced models", |rep| {
        for case in 0..20 {
            let n = rng.random_range(2..=20);
            let r = rng.random_range(1..n);
            let (m, p) = (rng.random_range(1..=10), rng.random_range(1..=4));
            let z = random_gaussian(&mut rng, n);
            let (a, mm, t, h) = (
                normal_matrix(&mut rng, m, p),
                normal_matrix(&mut rng, p, r),
                normal_matrix(&mut rng, r, n),
                normal_matrix(&mut rng, m, n),
            );
            let model = PartiallyLinearModel::new(
                a.clone(),
                t.clone(),
                h.clone(),
                InnerFunction::General(AffineFunction::linear(mm.clone()).shared()),
            )?;
            let got = reduced_moments(&model, &z, Transform::unscented())?;
            let oracle = linear_transform(&(&a * &mm * &t + &h), &DVector::zeros(m), &z)?;
            rep.observe(triple_error(&got, &oracle), || format!("affine case {case}: n={n} r={r} m={m} p={p}"));
            rep.count(
                format!("affine case {case} points"),
                2 * r as u64 + 1,
                got.cost.sigma_points as u64,
                got.cost.sigma_points == 2 * r + 1,
            );
            rep.cases += 1;
        }
        Ok(())
    })?;
    timed(&mut rep, "square triangular T", |rep| {
        for case in 0..20 {
            let n = rng.random_range(1..=8);
            let (m, p) = (rng.random_range(1..=5), rng.random_range(1..=4));
            let z = random_gaussian(&mut rng, n);
            let inner = wavy(n, p, &mut rng);
            let model = PartiallyLinearModel::new(
                normal_matrix(&mut rng, m, p),
                random_lower_triangular(&mut rng, n),
                normal_matrix(&mut rng, m, n),
                inner,
            )?;
            for tr in [Transform::unscented(), Transform::Cubature] {
                let got = reduced_moments(&model, &z, tr)?;
                let naive = sigma_transform(&model, &tr.points(&z)?.expect("point rule"), &z)?;
                rep.observe(triple_error(&got, &naive), || format!("nonlinear case {case}: n={n} m={m} p={p} {tr}"));
            }
            rep.cases += 1;
        }
        Ok(())
    })?;
    Ok(rep)
}

fn conditional_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("conditional", seed, 1e-9);
    let mut rng = rng_from_seed(seed);
    timed(&mut rep, "constant G", |rep| {
        for case in 0..30 {
            let n = rng.random_range(2..=12);
            let dn = rng.random_range(1..n);
            let m = rng.random_range(1..=6);
            let order = permutation(&mut rng, n);
            let (nl, li) = (order[..dn].to_vec(), order[dn..].to_vec());
            let z = random_gaussian(&mut rng, n);
            let c = normal_vector(&mut rng, m);
            let g0 = normal_matrix(&mut rng, m, n - dn);
            let (c2, g2) = (c.clone(), g0.clone());
            let f = ConditionallyLinearFunction::new(
                IndexPartition::new(nl.clone(), li.clone())?,
                FnFunction::new(dn, m, move |_| c2.clone()).shared(),
                Arc::new(move |_: &DVector<f64>| Ok(g2.clone())),
            )?;
            let mut j = DMatrix::zeros(m, n);
            for (k, &i) in li.iter().enumerate() {
                j.set_column(i, &g0.column(k));
            }
            let oracle = linear_transform(&j, &c, &z)?;
            for tr in [Transform::unscented(), Transform::Cubature] {
                let got = conditional_moments(&f, &z, tr)?;
                rep.observe(triple_error(&got, &oracle), || format!("case {case}: n={n} |z_n|={dn} m={m} {tr}"));
                let expected = tr.point_count(dn);
                rep.count(
                    format!("case {case} {tr} points"),
                    expected as u64,
                    got.cost.sigma_points as u64,
                    got.cost.sigma_points == expected,
                );
            }
            rep.cases += 1;
        }
        Ok(())
    })?;
    Ok(rep)
}

/// A random linear model where only the active block moves and is observed.
pub(crate) fn random_static_model(
    rng: &mut SimRng,
    na: usize,
    nu: usize,
    m: usize,
) -> Result<(IndexPartition, AffineFunction, NoiseModel, AffineFunction, NoiseModel)> {
    let n = na + nu;
    let order = permutation(rng, n);
    let part = IndexPartition::new(order[..na].to_vec(), order[na..].to_vec())?;
    let a = part.first();
    let fa = normal_matrix(rng, na, na) * (0.5 / (na as f64).sqrt()) + DMatrix::identity(na, na);
    let ha = normal_matrix(rng, m, na);
    let mut f = DMatrix::identity(n, n + na);
    let mut h = DMatrix::zeros(m, n + m);
    for (i, &ri) in a.iter().enumerate() {
        for (j, &rj) in a.iter().enumerate() {
            f[(ri, rj)] = fa[(i, j)];
        }
        f[(ri, n + i)] = 1.0;
        for k in 0..m {
            h[(k, ri)] = ha[(k, i)];
        }
    }
    for k in 0..m {
        h[(k, n + k)] = 1.0;
    }
    let q = NoiseModel::zero_mean(random_spd(rng, na) * 0.1)?;
    let r = NoiseModel::zero_mean(random_spd(rng, m) * 0.5)?;
    Ok((part, AffineFunction::linear(f), q, AffineFunction::linear(h), r))
}

fn static_deferral_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("static-deferral", seed, 1e-9);
    let mut rng = rng_from_seed(seed);
    timed(&mut rep, "linear deferral", |rep| {
        for case in 0..20 {
            let (na, nu) = (rng.random_range(1..=4), rng.random_range(1..=30));
            let m = rng.random_range(1..=3);
            let (part, f, q, h, r) = random_static_model(&mut rng, na, nu, m)?;
            let joint = random_gaussian(&mut rng, na + nu);
            let model = ActivePartitionModel::from_full(
                part.clone(),
                Some((f.clone().shared(), q.clone())),
                h.clone().shared(),
                joint.mean(),
            )?;
            let (mut active, mut aux) = StaticAux::new(&joint, &part)?;
            rep.count(
                format!("case {case} storage"),
                (2 * na * na + na) as u64,
                aux.storage_scalars() as u64,
                aux.storage_scalars() == 2 * na * na + na,
            );
            let mut full = joint;
            for step in 0..50 {
                let meas = Measurement::new(normal_vector(&mut rng, m) * 2.0, r.clone());
                let (a, x, _) = deferred_step(&active, &aux, &model, Some(&meas), Transform::Ekf)?;
                active = a;
                aux = x;
                full = predict(&full, &f, &q, Transform::Ekf)?;
                full = update(&full, &h, &meas, Transform::Ekf)?.0;
                let err = density_error(&extract_full(&active, &aux)?, &full);
                rep.observe(err, || format!("case {case}: n_a={na} n_u={nu} m={m} step {step}"));
            }
            rep.cases += 1;
        }
        Ok(())
    })?;
    Ok(rep)
}

fn block_update_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("block-update", seed, 1e-9);
    let mut rng = rng_from_seed(seed);
    timed(&mut rep, "linear blocks", |rep| {
        for case in 0..20 {
            let n = rng.random_range(1..=8);
            let k = rng.random_range(2..=6);
            let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=3)).collect();
            let state = random_gaussian(&mut rng, n);
            let mut blocks = BlockMeasurement::new();
            let mut hs = Vec::new();
            let mut rs = Vec::new();
            let mut ys = Vec::new();
            for &s in &sizes {
                let h = normal_matrix(&mut rng, s, n);
                let r = random_spd(&mut rng, s);
                let y = normal_vector(&mut rng, s);
                blocks.push(with_noise(&h).shared(), Measurement::new(y.clone(), NoiseModel::zero_mean(r.clone())?));
                hs.push(h);
                rs.push(r);
                ys.push(y);
            }
            let total: usize = sizes.iter().sum();
            let mut h = DMatrix::zeros(total, n);
            let mut row = 0;
            for hb in &hs {
                h.view_mut((row, 0), (hb.nrows(), n)).copy_from(hb);
                row += hb.nrows();
            }
            let r_refs: Vec<&DMatrix<f64>> = rs.iter().collect();
            let y = DVector::from_iterator(total, ys.iter().flat_map(|v| v.iter().copied()));
            let joint = Measurement::new(y, NoiseModel::zero_mean(block_diag(&r_refs))?);
            let (oracle, _) = update(&state, &with_noise(&h), &joint, Transform::Ekf)?;
            for _ in 0..10 {
                let order = permutation(&mut rng, k);
                let (got, _) = block_update(&state, &blocks.reordered(&order)?, Transform::unscented())?;
                rep.observe(density_error(&got, &oracle), || {
                    format!("case {case}: n={n} blocks {sizes:?} order {order:?}")
                });
            }
            rep.cases += 1;
        }
        Ok(())
    })?;
    Ok(rep)
}

/// `[H I]` acting on `[x; ε]`.
fn with_noise(h: &DMatrix<f64>) -> AffineFunction {
    let (m, n) = h.shape();
    let mut full = DMatrix::zeros(m, n + m);
    full.view_mut((0, 0), (m, n)).copy_from(h);
    full.view_mut((0, n), (m, m)).fill_with_identity();
    AffineFunction::linear(full)
}

fn woodbury_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("woodbury", seed, 1e-8);
    let mut rng = rng_from_seed(seed);
    timed(&mut rep, "structured solves", |rep| {
        for case in 0..30 {
            let outer = rng.random_range(2..=200);
            let inner = rng.random_range(1..=25.min(outer - 1));
            let d = DVector::from_fn(outer, |_, _| 0.1 + rng.random::<f64>());
            let s = StructuredInnovation::new(d, normal_matrix(&mut rng, outer, inner), random_spd(&mut rng, inner))?;
            let rhs = normal_matrix(&mut rng, outer, 1);
            let (x, flops) = woodbury_solve(&s, &rhs)?;
            let dense = s.to_dense().cholesky().ok_or(Error::Singular { op: "woodbury suite oracle" })?.solve(&rhs);
            rep.observe(rel_frobenius(&x, &dense), || format!("case {case}: outer={outer} inner={inner}"));
            if 2 * inner < outer {
                let reference = dense_solve_flops(outer, 1);
                rep.count(format!("case {case} flops"), reference, flops, flops < reference);
            }
            rep.cases += 1;
        }
        Ok(())
    })?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_on_a_fixed_seed() {
        for rep in run_suite("all", 7).unwrap() {
            assert!(rep.passed(), "{rep}");
            assert!(rep.cases > 0);
        }
    }

    #[test]
    fn unknown_suite_lists_names() {
        let err = run_suite("bogus", 1).unwrap_err().to_string();
        assert!(err.contains("woodbury") && err.contains("static-deferral"), "{err}");
    }
}
