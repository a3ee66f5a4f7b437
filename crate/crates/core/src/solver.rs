//! Pathwise solvers for `du = 1/2 u_xx dt + b(u) dt + dW` and the mild-form
//! quantities built on a computed path.
//!
//! Both schemes write `u = psi + V` with `V` the exact stochastic convolution
//! of the same noise, and advance the remainder `psi = P_t u0 + K` with an
//! explicit drift step:
//!
//! * `SplittingExact`: `psi_{m+1} = P_dt (psi_m + dt b(u_m))`,
//! * `SemiImplicit`:   `psi_{m+1} = (1 - dt A)^{-1} (psi_m + dt b(u_m))`,
//!
//! with `A = 1/2 d^2/dx^2`. The drift part `K` obeys the same recursion
//! started from zero.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::drift::{DriftEval, MollifiedDrift};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, TimeGrid};
use crate::noise::{ConvolutionLaw, ConvolutionStepper, NoiseRealization, StochasticConvolution};
use crate::spectral::SpectralBasis;

/// Partial sums of drift integrals above this size abort with [`Error::Diverged`].
pub const DIVERGENCE_SENTINEL: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    SplittingExact,
    SemiImplicit,
}

/// A scheme together with the (bounded) drift it evaluates.
#[derive(Clone)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub drift: Arc<dyn DriftEval>,
}

impl std::fmt::Debug for SchemeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SchemeSpec").field("kind", &self.kind).finish_non_exhaustive()
    }
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, drift: Arc<dyn DriftEval>) -> Self {
        SchemeSpec { kind, drift }
    }

    /// Uses the interpolation table of a mollified drift.
    pub fn mollified(kind: SchemeKind, drift: &MollifiedDrift) -> Self {
        SchemeSpec { kind, drift: Arc::new(drift.tabulate_default()) }
    }
}

/// Mollification level tied to a grid: `1/n = max(dt, dx^2)`.
pub fn grid_level(grid: &Grid1D, tgrid: &TimeGrid) -> u64 {
    let eps = tgrid.dt.max(grid.dx * grid.dx);
    (1.0 / eps).round().max(1.0) as u64
}

/// A solution path for one noise realization.
#[derive(Debug, Clone)]
pub struct FieldPath {
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    pub kind: SchemeKind,
    pub u0: Vec<f64>,
    /// `u[m][i] = u_{t_m}(x_i)`.
    pub u: Vec<Vec<f64>>,
    /// The drift part `K`, with `u = P_t u0 + K + V`.
    pub k: Vec<Vec<f64>>,
    pub v: StochasticConvolution,
}

impl FieldPath {
    /// `u_m - V_m`.
    pub fn psi(&self, m: usize) -> Vec<f64> {
        self.u[m].iter().zip(&self.v.values[m]).map(|(a, b)| a - b).collect()
    }
}

/// Solver state at one grid time.
#[derive(Debug, Clone)]
pub struct StepState {
    pub m: usize,
    pub u: Vec<f64>,
    pub psi: Vec<f64>,
    pub k: Vec<f64>,
}

/// Reusable per-grid data: the eigenbasis, the law of `V` and the one-step
/// multipliers. Cheap to clone and safe to share across workers.
#[derive(Debug, Clone)]
pub struct Solver {
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    law: ConvolutionLaw,
    decay: Arc<Vec<f64>>,
    resolvent: Arc<Vec<f64>>,
}

impl Solver {
    pub fn new(grid: &Grid1D, tgrid: &TimeGrid) -> Self {
        let law = ConvolutionLaw::new(grid, tgrid);
        let dt = tgrid.dt;
        let eig = law.basis().eigenvalues();
        let decay = eig.iter().map(|l| (-l * dt).exp()).collect();
        let resolvent = eig.iter().map(|l| 1.0 / (1.0 + l * dt)).collect();
        Solver { grid: *grid, tgrid: *tgrid, law, decay: Arc::new(decay), resolvent: Arc::new(resolvent) }
    }

    pub fn basis(&self) -> &SpectralBasis {
        self.law.basis()
    }

    pub fn law(&self) -> &ConvolutionLaw {
        &self.law
    }

    fn propagate(&self, kind: SchemeKind, f: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let basis = self.law.basis();
        basis.forward_into(f, scratch);
        let mult = match kind {
            SchemeKind::SplittingExact => &self.decay,
            SchemeKind::SemiImplicit => &self.resolvent,
        };
        for (c, m) in scratch.iter_mut().zip(mult.iter()) {
            *c *= m;
        }
        basis.inverse_into(scratch, out);
    }

    pub fn initial_state(&self, u0: &[f64]) -> Result<StepState> {
        self.grid.check_field(u0)?;
        if u0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("initial condition must be bounded".into()));
        }
        Ok(StepState { m: 0, u: u0.to_vec(), psi: u0.to_vec(), k: vec![0.0; u0.len()] })
    }

    /// Advances `state` by one slice, given `V` at the new time.
    pub fn step(&self, scheme: &SchemeSpec, state: &StepState, v_next: &[f64]) -> Result<StepState> {
        let dt = self.tgrid.dt;
        let n = state.u.len();
        let mut b = vec![0.0; n];
        for (o, &x) in b.iter_mut().zip(&state.u) {
            *o = scheme.drift.eval(x);
            if !o.is_finite() {
                return Err(Error::NonFinite { step: state.m });
            }
        }
        let mut scratch = vec![0.0; self.basis().len()];
        let mut psi = vec![0.0; n];
        let mut k = vec![0.0; n];
        let tmp: Vec<f64> = state.psi.iter().zip(&b).map(|(p, b)| p + dt * b).collect();
        self.propagate(scheme.kind, &tmp, &mut psi, &mut scratch);
        let tmp: Vec<f64> = state.k.iter().zip(&b).map(|(p, b)| p + dt * b).collect();
        self.propagate(scheme.kind, &tmp, &mut k, &mut scratch);
        let u: Vec<f64> = psi.iter().zip(v_next).map(|(p, v)| p + v).collect();
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: state.m + 1 });
        }
        Ok(StepState { m: state.m + 1, u, psi, k })
    }

    /// Solves on the whole time grid. A non-finite value aborts the
    /// realization with [`Error::NonFinite`].
    pub fn solve(&self, scheme: &SchemeSpec, u0: &[f64], noise: &NoiseRealization) -> Result<FieldPath> {
        if noise.grid != self.grid || noise.tgrid != self.tgrid {
            return Err(Error::Invalid("noise grid does not match the solver grid".into()));
        }
        let nt = self.tgrid.n_time;
        let mut state = self.initial_state(u0)?;
        let mut stepper = ConvolutionStepper::new(&self.law);
        let mut u = Vec::with_capacity(nt + 1);
        let mut k = Vec::with_capacity(nt + 1);
        let mut v = Vec::with_capacity(nt + 1);
        u.push(state.u.clone());
        k.push(state.k.clone());
        v.push(vec![0.0; u0.len()]);
        for m in 0..nt {
            let v_next = stepper.advance(noise, m).to_vec();
            state = self.step(scheme, &state, &v_next)?;
            u.push(state.u.clone());
            k.push(state.k.clone());
            v.push(v_next);
        }
        let conv = StochasticConvolution { grid: self.grid, tgrid: self.tgrid, values: v, rho: self.law.rho.clone() };
        Ok(FieldPath { grid: self.grid, tgrid: self.tgrid, kind: scheme.kind, u0: u0.to_vec(), u, k, v: conv })
    }
}

/// One-shot [`Solver::solve`].
pub fn solve(scheme: &SchemeSpec, u0: &[f64], noise: &NoiseRealization) -> Result<FieldPath> {
    Solver::new(&noise.grid, &noise.tgrid).solve(scheme, u0, noise)
}

/// `int_{t_m}^{t_{m+1}} e^{-lambda (t - r)} dr` for the slice ending `lag = t - t_{m+1}`
/// before `t`.
pub(crate) fn slice_mass(lambda: f64, lag: f64, dt: f64) -> f64 {
    if lambda == 0.0 {
        dt
    } else {
        (-lambda * lag).exp() * (-(-lambda * dt).exp_m1()) / lambda
    }
}

fn time_index(tgrid: &TimeGrid, t: f64) -> Result<usize> {
    tgrid.step_of(t).ok_or_else(|| Error::Domain(format!("time {t} is not on the time grid")))
}

/// All partial integrals `D_{s, t_m} = int_s^{t_m} P_{t_m - r} f(u_{kappa(r)}) dr`
/// for `m = ms..=n_time`, with the kernel integrated exactly over each slice
/// and `f` frozen at the left end of the slice. Entry `0` is `D_{s,s} = 0`.
pub fn drift_integral_path(
    path: &FieldPath,
    basis: &SpectralBasis,
    drift: &dyn DriftEval,
    ms: usize,
) -> Result<Vec<Vec<f64>>> {
    integral_range(path, basis, drift, ms, path.tgrid.n_time)
}

fn integral_range(
    path: &FieldPath,
    basis: &SpectralBasis,
    drift: &dyn DriftEval,
    ms: usize,
    nt: usize,
) -> Result<Vec<Vec<f64>>> {
    if ms > nt || nt > path.tgrid.n_time {
        return Err(Error::Domain(format!("step range {ms}..{nt} outside the grid")));
    }
    let dt = path.tgrid.dt;
    let eig = basis.eigenvalues();
    let decay: Vec<f64> = eig.iter().map(|l| (-l * dt).exp()).collect();
    let mass: Vec<f64> = eig.iter().map(|&l| slice_mass(l, 0.0, dt)).collect();
    let np = path.grid.n_points();
    let mut modes = vec![0.0; basis.len()];
    let mut bm = vec![0.0; basis.len()];
    let mut bf = vec![0.0; np];
    let mut out = Vec::with_capacity(nt + 1 - ms);
    out.push(vec![0.0; np]);
    for m in ms..nt {
        for (o, &x) in bf.iter_mut().zip(&path.u[m]) {
            *o = drift.eval(x);
        }
        if bf.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: m });
        }
        basis.forward_into(&bf, &mut bm);
        for k in 0..modes.len() {
            modes[k] = decay[k] * modes[k] + mass[k] * bm[k];
        }
        let field = basis.inverse(&modes);
        let peak = field.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if peak > DIVERGENCE_SENTINEL {
            return Err(Error::Diverged(peak));
        }
        out.push(field);
    }
    Ok(out)
}

/// `int_s^t int_D p_{t-r}(x_i, y) f(u_r(y)) dy dr` over the whole grid.
pub fn drift_integral_field(
    path: &FieldPath,
    basis: &SpectralBasis,
    drift: &dyn DriftEval,
    s: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if s > t {
        return Err(Error::Domain(format!("need s <= t, got s = {s}, t = {t}")));
    }
    let ms = time_index(&path.tgrid, s)?;
    let mt = time_index(&path.tgrid, t)?;
    let mut all = integral_range(path, basis, drift, ms, mt)?;
    Ok(all.pop().unwrap())
}

/// The drift integral at one grid point.
pub fn drift_integral_k(
    path: &FieldPath,
    basis: &SpectralBasis,
    drift: &dyn DriftEval,
    s: f64,
    t: f64,
    i: usize,
) -> Result<f64> {
    if i >= path.grid.n_points() {
        return Err(Error::Domain(format!("grid index {i} out of range")));
    }
    Ok(drift_integral_field(path, basis, drift, s, t)?[i])
}

/// `u_t - P_t u0 - int_0^t P_{t-r} f(u_r) dr - V_t` at every grid point.
pub fn mild_residual_field(path: &FieldPath, basis: &SpectralBasis, drift: &dyn DriftEval, t: f64) -> Result<Vec<f64>> {
    let mt = time_index(&path.tgrid, t)?;
    let d = drift_integral_field(path, basis, drift, 0.0, t)?;
    let pu0 = basis.apply_heat(&path.u0, path.tgrid.time(mt));
    Ok((0..path.grid.n_points()).map(|i| path.u[mt][i] - pu0[i] - d[i] - path.v.values[mt][i]).collect())
}

pub fn mild_residual(path: &FieldPath, basis: &SpectralBasis, drift: &dyn DriftEval, t: f64, i: usize) -> Result<f64> {
    if i >= path.grid.n_points() {
        return Err(Error::Domain(format!("grid index {i} out of range")));
    }
    Ok(mild_residual_field(path, basis, drift, t)?[i])
}

/// Largest mild residual over all grid times and the probe lattice.
pub fn max_mild_residual(path: &FieldPath, basis: &SpectralBasis, drift: &dyn DriftEval, probes: &ProbeLattice) -> Result<f64> {
    let d = drift_integral_path(path, basis, drift, 0)?;
    let mut worst = 0.0f64;
    for m in probes.times(&path.tgrid) {
        let pu0 = basis.apply_heat(&path.u0, path.tgrid.time(m));
        for i in probes.points(&path.grid) {
            let r = path.u[m][i] - pu0[i] - d[m][i] - path.v.values[m][i];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Probe lattice approximating a sup over `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeLattice {
    pub time_stride: usize,
    pub space_stride: usize,
}

impl Default for ProbeLattice {
    fn default() -> Self {
        ProbeLattice { time_stride: 1, space_stride: 4 }
    }
}

impl ProbeLattice {
    pub fn times(&self, tgrid: &TimeGrid) -> impl Iterator<Item = usize> {
        (0..=tgrid.n_time).step_by(self.time_stride.max(1))
    }

    /// Probe indices, restricted to the observation window on the whole line.
    pub fn points(&self, grid: &Grid1D) -> Vec<usize> {
        (0..grid.n_points()).step_by(self.space_stride.max(1)).filter(|&i| grid.in_window(i)).collect()
    }
}

/// Cauchy differences of the regularized drift integrals along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedReport {
    pub levels: Vec<u64>,
    /// `sup_{probes} |K^{n_k} - K^{n_{k+1}}|`.
    pub differences: Vec<f64>,
    pub probes: ProbeLattice,
    pub decreasing: bool,
}

/// `sup |int_0^t P_{t-r} (b^n - b^m)(u_r) dr|` over the probe lattice for
/// consecutive levels of a ladder, all along the same path.
pub fn regularized_mild_limit_check(
    path: &FieldPath,
    basis: &SpectralBasis,
    levels: &[u64],
    drifts: &[&dyn DriftEval],
    probes: &ProbeLattice,
) -> Result<RegularizedReport> {
    if levels.len() != drifts.len() || levels.len() < 2 {
        return Err(Error::Invalid("need at least two levels, one drift per level".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("levels must increase".into()));
    }
    let integrals: Vec<Vec<Vec<f64>>> =
        drifts.iter().map(|d| drift_integral_path(path, basis, *d, 0)).collect::<Result<_>>()?;
    let pts = probes.points(&path.grid);
    let differences: Vec<f64> = integrals
        .windows(2)
        .map(|w| {
            let mut worst = 0.0f64;
            for m in probes.times(&path.tgrid) {
                for &i in &pts {
                    worst = worst.max((w[0][m][i] - w[1][m][i]).abs());
                }
            }
            worst
        })
        .collect();
    let decreasing = differences.windows(2).all(|w| w[1] < w[0]);
    Ok(RegularizedReport { levels: levels.to_vec(), differences, probes: *probes, decreasing })
}

/// The random control `lambda_{s,t}(x) = P_{T-t} w_{s,t}(x)` of the path,
/// with `w_{s,t} = int_s^t P_{t-r} |f|(u_r) dr`. Times are grid indices
/// `ms <= mt <= m_end`.
pub fn random_control(
    path: &FieldPath,
    basis: &SpectralBasis,
    drift: &dyn DriftEval,
    ms: usize,
    mt: usize,
    m_end: usize,
) -> Result<Vec<f64>> {
    if !(ms <= mt && mt <= m_end && m_end <= path.tgrid.n_time) {
        return Err(Error::Domain(format!("need s <= t <= T on the grid, got {ms}, {mt}, {m_end}")));
    }
    let abs = |x: f64| drift.eval(x).abs();
    let w = drift_integral_field(path, basis, &abs, path.tgrid.time(ms), path.tgrid.time(mt))?;
    Ok(basis.apply_heat(&w, path.tgrid.time(m_end) - path.tgrid.time(mt)))
}
