//! Deferred updates for state blocks that are static and unobserved.
//!
//! The filter runs on the active block only. Three small auxiliary
//! quantities (`ψ`, `c`, `Φ`) accumulate what the inactive block would have
//! received, so the full joint can be rebuilt on demand.

use nalgebra::{DMatrix, DVector};

use crate::cost::{self, Cost};
use crate::error::{Error, Result};
use crate::filter::{correct, InnovationSolve, Measurement};
use crate::gaussian::{augment, GaussianDensity, IndexPartition, NoiseModel};
use crate::linalg::{select_block, select_rows, select_vec, symmetrize, SpdFactor};
use crate::transforms::{statistical_jacobian, transform_moments, SharedFunction, Transform, VectorFunction};

/// Absolute tolerance (relative to output magnitude) for the probe self-test.
pub const PROBE_TOLERANCE: f64 = 1e-12;

/// Inactive-block quantities frozen when deferral starts.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBlocks {
    pub mean_u: DVector<f64>,
    pub cov_uu: DMatrix<f64>,
    /// `n_a × n_u`.
    pub cov_au: DMatrix<f64>,
}

/// Auxiliary recursion state; starts at `ψ = 0`, `c = 0`, `Φ = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticAux {
    pub psi: DMatrix<f64>,
    pub c: DVector<f64>,
    pub phi: DMatrix<f64>,
    frozen: FrozenBlocks,
    partition: IndexPartition,
}

impl StaticAux {
    /// Split `joint` into the running active density and fresh auxiliaries.
    /// The partition's first block is active.
    pub fn new(joint: &GaussianDensity, partition: &IndexPartition) -> Result<(GaussianDensity, StaticAux)> {
        if partition.len() != joint.dim() {
            return Err(Error::dim(
                "StaticAux::new",
                format!("partition covers {}, density has {}", partition.len(), joint.dim()),
            ));
        }
        let (a, u) = (partition.first(), partition.second());
        let na = a.len();
        let active = joint.marginal(a)?;
        let aux = StaticAux {
            psi: DMatrix::zeros(na, na),
            c: DVector::zeros(na),
            phi: DMatrix::identity(na, na),
            frozen: FrozenBlocks {
                mean_u: select_vec(joint.mean(), u),
                cov_uu: select_block(joint.cov(), u, u),
                cov_au: select_block(joint.cov(), a, u),
            },
            partition: partition.clone(),
        };
        Ok((active, aux))
    }

    pub fn active_dim(&self) -> usize {
        self.c.len()
    }

    pub fn frozen(&self) -> &FrozenBlocks {
        &self.frozen
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.partition
    }

    /// Scalars carried by the recursion: `2 n_a² + n_a`.
    pub fn storage_scalars(&self) -> usize {
        let na = self.active_dim();
        2 * na * na + na
    }
}

/// Restricts a full-state function to `[x_a; ε]`, holding the inactive
/// coordinates at a reference value and optionally keeping only some outputs.
struct Embedded {
    inner: SharedFunction,
    active: Vec<usize>,
    base: DVector<f64>,
    rows: Option<Vec<usize>>,
}

impl Embedded {
    fn full_input(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.base.len();
        let noise = v.len() - self.active.len();
        let mut z = DVector::zeros(n + noise);
        z.rows_mut(0, n).copy_from(&self.base);
        for (k, &i) in self.active.iter().enumerate() {
            z[i] = v[k];
        }
        z.rows_mut(n, noise).copy_from(&v.rows(self.active.len(), noise));
        z
    }
}

impl VectorFunction for Embedded {
    fn input_dim(&self) -> usize {
        self.inner.input_dim() - self.base.len() + self.active.len()
    }

    fn output_dim(&self) -> usize {
        self.rows.as_ref().map_or(self.inner.output_dim(), |r| r.len())
    }

    fn eval(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.inner.eval(&self.full_input(v))?;
        Ok(match &self.rows {
            Some(r) => select_vec(&y, r),
            None => y,
        })
    }

    fn jacobian(&self, v: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let n = self.base.len();
        let cols: Vec<usize> = self.active.iter().copied().chain(n..self.inner.input_dim()).collect();
        self.inner.jacobian(&self.full_input(v)).map(|j| {
            j.map(|j| {
                let j = DMatrix::from_fn(j.nrows(), cols.len(), |r, c| j[(r, cols[c])]);
                match &self.rows {
                    Some(r) => select_rows(&j, r),
                    None => j,
                }
            })
        })
    }
}

/// Active-only transition and measurement functions for a partitioned state.
#[derive(Clone)]
pub struct ActivePartitionModel {
    partition: IndexPartition,
    transition: Option<(SharedFunction, NoiseModel)>,
    measurement: SharedFunction,
}

impl std::fmt::Debug for ActivePartitionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActivePartitionModel")
            .field("partition", &self.partition)
            .field("has_transition", &self.transition.is_some())
            .finish()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= PROBE_TOLERANCE * (1.0 + b.abs())
}

impl ActivePartitionModel {
    /// Build from full-state functions.
    ///
    /// `transition` acts on `[x; ε_f]` and returns the next full state; `h`
    /// acts on `[x; ε_y]`. With no transition the whole state is static.
    /// Both are probed around `reference`: perturbing inactive coordinates
    /// must leave `h` and the active outputs of the transition unchanged, and
    /// the transition must return inactive coordinates as they are.
    pub fn from_full(
        partition: IndexPartition,
        transition: Option<(SharedFunction, NoiseModel)>,
        h: SharedFunction,
        reference: &DVector<f64>,
    ) -> Result<Self> {
        let n = partition.len();
        if reference.len() != n {
            return Err(Error::dim("ActivePartitionModel", "reference point dimension"));
        }
        if h.input_dim() < n {
            return Err(Error::dim("ActivePartitionModel", "measurement function takes fewer inputs than the state"));
        }
        let (a, u) = (partition.first().to_vec(), partition.second().to_vec());
        let probes = probe_points(reference, &u);

        let h_ref = h.eval(&with_zero_noise(reference, h.input_dim()))?;
        for p in &probes {
            let y = h.eval(&with_zero_noise(p, h.input_dim()))?;
            if y.iter().zip(h_ref.iter()).any(|(a, b)| !close(*a, *b)) {
                return Err(Error::Contract("measurement depends on an inactive state coordinate".into()));
            }
        }
        let transition = match transition {
            None => None,
            Some((f, noise)) => {
                if f.output_dim() != n || f.input_dim() != n + noise.dim() {
                    return Err(Error::dim("ActivePartitionModel", "transition must map [x; ε] to the full state"));
                }
                let f_ref = f.eval(&with_zero_noise(reference, f.input_dim()))?;
                let mut inputs: Vec<DVector<f64>> = probes.iter().map(|p| with_zero_noise(p, f.input_dim())).collect();
                let mut noisy = with_zero_noise(reference, f.input_dim());
                for k in n..f.input_dim() {
                    noisy[k] = 0.5 + 0.25 * (k - n) as f64;
                }
                inputs.push(noisy);
                for z in &inputs {
                    let y = f.eval(z)?;
                    if u.iter().any(|&i| !close(y[i], z[i])) {
                        return Err(Error::Contract("transition changes an inactive state coordinate".into()));
                    }
                    if z.rows(n, f.input_dim() - n).iter().all(|v| *v == 0.0)
                        && a.iter().any(|&i| !close(y[i], f_ref[i]))
                    {
                        return Err(Error::Contract(
                            "active transition depends on an inactive state coordinate".into(),
                        ));
                    }
                }
                let embedded = Embedded { inner: f, active: a.clone(), base: reference.clone(), rows: Some(a.clone()) };
                Some((std::sync::Arc::new(embedded) as SharedFunction, noise))
            }
        };
        let measurement = std::sync::Arc::new(Embedded { inner: h, active: a, base: reference.clone(), rows: None });
        Ok(ActivePartitionModel { partition, transition, measurement })
    }

    /// Build from functions that already act on `[x_a; ε]`; no probing is done.
    pub fn from_active(
        partition: IndexPartition,
        transition: Option<(SharedFunction, NoiseModel)>,
        h: SharedFunction,
    ) -> Result<Self> {
        let na = partition.first().len();
        if let Some((f, noise)) = &transition {
            if f.output_dim() != na || f.input_dim() != na + noise.dim() {
                return Err(Error::dim("ActivePartitionModel", "active transition dimensions"));
            }
        }
        if h.input_dim() < na {
            return Err(Error::dim("ActivePartitionModel", "active measurement dimensions"));
        }
        Ok(ActivePartitionModel { partition, transition, measurement: h })
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.partition
    }

    pub fn transition(&self) -> Option<&(SharedFunction, NoiseModel)> {
        self.transition.as_ref()
    }

    pub fn measurement(&self) -> &SharedFunction {
        &self.measurement
    }
}

fn with_zero_noise(x: &DVector<f64>, total: usize) -> DVector<f64> {
    let mut z = DVector::zeros(total);
    z.rows_mut(0, x.len()).copy_from(x);
    z
}

fn probe_points(reference: &DVector<f64>, inactive: &[usize]) -> Vec<DVector<f64>> {
    let shift = |v: f64, k: usize| v + (0.5 + 0.1 * k as f64) * (1.0 + v.abs());
    let mut out = Vec::with_capacity(inactive.len() + 1);
    for (k, &i) in inactive.iter().enumerate() {
        let mut p = reference.clone();
        p[i] = shift(p[i], k);
        out.push(p);
    }
    if inactive.len() > 1 {
        let mut p = reference.clone();
        for (k, &i) in inactive.iter().enumerate() {
            p[i] = -shift(p[i], k);
        }
        out.push(p);
    }
    out
}

/// One predict (when the model has a transition) and update (when a
/// measurement is given) of the active block, with the auxiliaries advanced
/// from the same moments.
pub fn deferred_step(
    active: &GaussianDensity,
    aux: &StaticAux,
    model: &ActivePartitionModel,
    meas: Option<&Measurement>,
    transform: Transform,
) -> Result<(GaussianDensity, StaticAux, Cost)> {
    let na = aux.active_dim();
    if active.dim() != na || model.partition.first().len() != na {
        return Err(Error::dim("deferred_step", "active dimension differs from the auxiliaries"));
    }
    let mut work = Cost::default();
    let mut next = aux.clone();
    let mut prior = active.clone();

    if let Some((f, noise)) = &model.transition {
        let z = augment(active, noise)?;
        let t = transform_moments(f.as_ref(), &z, transform)?;
        let jac = statistical_jacobian(&t, &z)?;
        let f_a = jac.columns(0, na).into_owned();
        next.phi = &f_a * &aux.phi;
        work += t.cost;
        work.flops += cost::solve(z.dim(), na) + cost::matmul(na, na, na);
        prior = GaussianDensity::new(t.mean, t.cov)?;
    }

    let Some(meas) = meas else {
        return Ok((prior, next, work));
    };
    let h = &model.measurement;
    let z = augment(&prior, &meas.noise)?;
    let t = transform_moments(h.as_ref(), &z, transform)?;
    let p_ah = t.cross.rows(0, na).into_owned();
    let s = t.cov.clone();
    let innovation = &meas.value - &t.mean;
    let (posterior, report) = correct(&prior, &meas.value, t.mean, t.cov, p_ah, t.cost, InnovationSolve::Dense)?;
    work += report.cost();

    let m = meas.dim();
    // B = P_aa⁻¹ K; the second factor P_aa⁻¹ P_ah is B S, so one solve serves both.
    let b = SpdFactor::new(prior.cov(), "deferred_step")?.solve(&report.gain);
    let jt = &b * &s;
    let phi_prior = &next.phi;
    let bt_phi = b.transpose() * phi_prior;
    next.psi = symmetrize(&(&next.psi + bt_phi.transpose() * &s * &bt_phi));
    next.c += bt_phi.transpose() * innovation;
    next.phi = (DMatrix::identity(na, na) - &report.gain * jt.transpose()) * phi_prior;
    work.flops += cost::solve(na, m)
        + cost::matmul(na, m, m)
        + cost::matmul(m, na, na)
        + cost::matmul(na, m, m)
        + cost::matmul(na, m, na)
        + cost::matmul(na, na, na)
        + cost::matmul(na, na, m);
    Ok((posterior, next, work))
}

/// Rebuild the full joint from the running active density and the auxiliaries.
pub fn extract_full(active: &GaussianDensity, aux: &StaticAux) -> Result<GaussianDensity> {
    if active.dim() != aux.active_dim() {
        return Err(Error::dim("extract_full", "active dimension differs from the auxiliaries"));
    }
    let fz = &aux.frozen;
    let mean_u = &fz.mean_u + fz.cov_au.transpose() * &aux.c;
    let cov_uu = &fz.cov_uu - fz.cov_au.transpose() * &aux.psi * &fz.cov_au;
    let cov_au = &aux.phi * &fz.cov_au;
    assemble(&aux.partition, active.mean(), active.cov(), &mean_u, &cov_uu, &cov_au)
}

/// Full joint when the whole state has been static since `frozen` and only
/// the active block was updated, using `L = P_ua P_aa⁻¹` at the frozen time.
pub fn all_static_extract(
    frozen: &GaussianDensity,
    partition: &IndexPartition,
    active_now: &GaussianDensity,
) -> Result<GaussianDensity> {
    let (a, u) = (partition.first(), partition.second());
    if partition.len() != frozen.dim() || active_now.dim() != a.len() {
        return Err(Error::dim("all_static_extract", "partition and densities disagree"));
    }
    let p_aa0 = select_block(frozen.cov(), a, a);
    let p_au0 = select_block(frozen.cov(), a, u);
    let l = SpdFactor::new(&p_aa0, "all_static_extract")?.solve(&p_au0).transpose();
    let mean_u = select_vec(frozen.mean(), u) + &l * (active_now.mean() - select_vec(frozen.mean(), a));
    let cov_ua = &l * active_now.cov();
    let cov_uu = select_block(frozen.cov(), u, u) - &l * (p_aa0 - active_now.cov()) * l.transpose();
    assemble(partition, active_now.mean(), active_now.cov(), &mean_u, &cov_uu, &cov_ua.transpose())
}

fn assemble(
    partition: &IndexPartition,
    mean_a: &DVector<f64>,
    cov_aa: &DMatrix<f64>,
    mean_u: &DVector<f64>,
    cov_uu: &DMatrix<f64>,
    cov_au: &DMatrix<f64>,
) -> Result<GaussianDensity> {
    let (a, u) = (partition.first(), partition.second());
    let n = partition.len();
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    for (i, &ri) in a.iter().enumerate() {
        mean[ri] = mean_a[i];
        for (j, &rj) in a.iter().enumerate() {
            cov[(ri, rj)] = cov_aa[(i, j)];
        }
        for (j, &uj) in u.iter().enumerate() {
            cov[(ri, uj)] = cov_au[(i, j)];
            cov[(uj, ri)] = cov_au[(i, j)];
        }
    }
    for (i, &ui) in u.iter().enumerate() {
        mean[ui] = mean_u[i];
        for (j, &uj) in u.iter().enumerate() {
            cov[(ui, uj)] = cov_uu[(i, j)];
        }
    }
    GaussianDensity::new(mean, cov)
}
