//! Test functions, duality pairings and the weak-form identities of a path.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::drift::DriftEval;
use crate::error::{Error, Result};
use crate::grid::{DomainKind, Grid1D, TimeGrid};
use crate::noise::NoiseRealization;
use crate::quad;
use crate::solver::{FieldPath, RegularizedReport};
use crate::spectral::SpectralBasis;

/// Highest derivative order available on test functions.
pub const MAX_DERIVATIVE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum TestFamily {
    /// `cos(2 pi k x)` for `k >= 0`, `sin(2 pi |k| x)` for `k < 0`.
    TrigPeriodic { k: i64 },
    /// `cos(pi k x)`.
    CosineNeumann { k: u32 },
    /// Normalized Hermite function `h_k(x / scale) / sqrt(scale)`.
    HermiteWholeLine { k: u32, scale: f64 },
    /// `exp(-(x - center)^2 / (2 width^2))`, made periodic or reflected to
    /// fit the domain.
    GaussianBump { center: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub family: TestFamily,
    pub coefficient: f64,
    pub domain: DomainKind,
    /// Torus width on the whole line, used for periodic images.
    pub period: f64,
}

fn hermite_functions(x: f64, n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n + 1];
    h[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if n >= 1 {
        h[1] = 2f64.sqrt() * x * h[0];
    }
    for k in 1..n {
        let kf = k as f64;
        h[k + 1] = (2.0 / (kf + 1.0)).sqrt() * x * h[k] - (kf / (kf + 1.0)).sqrt() * h[k - 1];
    }
    h
}

/// `d^order h_k` as coefficients on `h_0..h_{k+order}`, using
/// `h_j' = sqrt(j/2) h_{j-1} - sqrt((j+1)/2) h_{j+1}`.
fn hermite_derivative_coefficients(k: usize, order: usize) -> Vec<f64> {
    let mut c = vec![0.0; k + order + 2];
    c[k] = 1.0;
    for _ in 0..order {
        let mut next = vec![0.0; c.len()];
        for (j, &a) in c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            if j >= 1 {
                next[j - 1] += a * (j as f64 / 2.0).sqrt();
            }
            if j + 1 < next.len() {
                next[j + 1] -= a * ((j as f64 + 1.0) / 2.0).sqrt();
            }
        }
        c = next;
    }
    c
}

/// Probabilists' Hermite polynomial `He_n(y)`.
fn he(n: usize, y: f64) -> f64 {
    let (mut a, mut b) = (1.0, y);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = y * b - k as f64 * a;
        a = b;
        b = c;
    }
    b
}

fn bump_derivative(x: f64, center: f64, width: f64, order: usize) -> f64 {
    let y = (x - center) / width;
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    sign * he(order, y) * (-0.5 * y * y).exp() / width.powi(order as i32)
}

impl TestFunction {
    pub fn new(family: TestFamily, grid: &Grid1D) -> Result<Self> {
        let domain = grid.kind();
        let ok = match family {
            TestFamily::TrigPeriodic { .. } => domain == DomainKind::PeriodicUnit,
            TestFamily::CosineNeumann { .. } => domain == DomainKind::NeumannUnit,
            TestFamily::HermiteWholeLine { scale, .. } => domain == DomainKind::WholeLine && scale > 0.0,
            TestFamily::GaussianBump { width, .. } => width > 0.0,
        };
        if !ok {
            return Err(Error::Invalid(format!("{family:?} is not a test function on {domain:?}")));
        }
        Ok(TestFunction { family, coefficient: 1.0, domain, period: grid.setup.extent() })
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.coefficient *= c;
        self
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// `d^order phi / dx^order` at `x`, for `order <= MAX_DERIVATIVE`.
    pub fn derivative(&self, order: usize, x: f64) -> f64 {
        debug_assert!(order <= MAX_DERIVATIVE);
        let raw = match self.family {
            TestFamily::TrigPeriodic { k } => {
                let w = 2.0 * PI * k.unsigned_abs() as f64;
                let phase = if k >= 0 { 0.0 } else { -0.5 * PI };
                if w == 0.0 {
                    if order == 0 && k == 0 { 1.0 } else { 0.0 }
                } else {
                    w.powi(order as i32) * (w * x + phase + 0.5 * PI * order as f64).cos()
                }
            }
            TestFamily::CosineNeumann { k } => {
                let w = PI * k as f64;
                if w == 0.0 {
                    if order == 0 { 1.0 } else { 0.0 }
                } else {
                    w.powi(order as i32) * (w * x + 0.5 * PI * order as f64).cos()
                }
            }
            TestFamily::HermiteWholeLine { k, scale } => {
                let c = hermite_derivative_coefficients(k as usize, order);
                let mut total = 0.0;
                for image in [-1.0, 0.0, 1.0] {
                    let y = (x + image * self.period) / scale;
                    let h = hermite_functions(y, c.len() - 1);
                    total += c.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                }
                total / scale.powi(order as i32) / scale.sqrt()
            }
            TestFamily::GaussianBump { center, width } => match self.domain {
                DomainKind::NeumannUnit => (-3i32..=3)
                    .map(|n| {
                        let s = 2.0 * n as f64;
                        bump_derivative(x, center + s, width, order) + bump_derivative(x, -center + s, width, order)
                    })
                    .sum(),
                _ => (-1i32..=1)
                    .map(|n| bump_derivative(x, center + n as f64 * self.period, width, order))
                    .sum(),
            },
        };
        self.coefficient * raw
    }

    /// `1/2 phi''`.
    pub fn half_laplacian(&self, x: f64) -> f64 {
        0.5 * self.derivative(2, x)
    }

    pub fn on_grid(&self, grid: &Grid1D) -> Vec<f64> {
        grid.nodes().into_iter().map(|x| self.value(x)).collect()
    }

    /// Integration range and breakpoints for quadrature over the domain.
    fn support(&self) -> Vec<f64> {
        match (self.domain, self.family) {
            (DomainKind::WholeLine, TestFamily::HermiteWholeLine { k, scale }) => {
                let reach = scale * ((2.0 * k as f64 + 1.0).sqrt() + 12.0);
                (0..=64).map(|i| -reach + 2.0 * reach * i as f64 / 64.0).collect()
            }
            (DomainKind::WholeLine, TestFamily::GaussianBump { center, width }) => {
                (0..=64).map(|i| center - 14.0 * width + 28.0 * width * i as f64 / 64.0).collect()
            }
            _ => (0..=64).map(|i| i as f64 / 64.0).collect(),
        }
    }
}

/// Grid quadrature `<f, phi>`; on the whole line only the observation
/// window contributes.
pub fn pair(grid: &Grid1D, f: &[f64], phi: &TestFunction) -> Result<f64> {
    grid.check_field(f)?;
    Ok(pair_values(grid, f, &phi.on_grid(grid)))
}

fn pair_values(grid: &Grid1D, f: &[f64], phi: &[f64]) -> f64 {
    (0..grid.n_points())
        .filter(|&i| grid.in_window(i))
        .map(|i| f[i] * phi[i] * grid.weight(i))
        .sum()
}

/// `sum_{i<=m} int_D (1 + |x|^m)^2 |phi^{(i)}(x)|^2 dx`.
pub fn schwartz_seminorm(phi: &TestFunction, m: usize) -> Result<f64> {
    if m > MAX_DERIVATIVE {
        return Err(Error::Domain(format!("seminorm order {m} exceeds {MAX_DERIVATIVE}")));
    }
    let breaks = phi.support();
    let mut total = 0.0;
    for i in 0..=m {
        let f = |x: f64| {
            let w = 1.0 + x.abs().powi(m as i32);
            let d = phi.derivative(i, x);
            w * w * d * d
        };
        // fixed-rule estimate to set a relative tolerance
        let scale = quad::integrate_pieces(f, &breaks, f64::INFINITY).abs().max(1e-300);
        total += quad::integrate_pieces(f, &breaks, 1e-11 * scale);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftTerm {
    DirectIntegral,
    RiemannK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidualReport {
    pub phi: TestFunction,
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub drift_term_used: DriftTerm,
}

impl WeakResidualReport {
    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, r| a.max(r.abs()))
    }
}

fn check_noise(path: &FieldPath, noise: &NoiseRealization) -> Result<()> {
    if path.grid != noise.grid || path.tgrid != noise.tgrid {
        return Err(Error::Invalid("noise and path grids differ".into()));
    }
    Ok(())
}

/// Residual of the weak identity at every grid time:
/// `<u_t,phi> - <u_0,phi> - int_0^t <u_s, phi''/2> ds - int_0^t <f(u_s), phi> ds - W_t(phi)`,
/// with both time integrals by the trapezoid rule.
pub fn weak_residual_report(
    path: &FieldPath,
    noise: &NoiseRealization,
    drift: &dyn DriftEval,
    phi: &TestFunction,
) -> Result<WeakResidualReport> {
    Ok(weak_residual_reports(path, noise, drift, std::slice::from_ref(phi))?.remove(0))
}

/// [`weak_residual_report`] for a family, evaluating the drift once.
pub fn weak_residual_reports(
    path: &FieldPath,
    noise: &NoiseRealization,
    drift: &dyn DriftEval,
    phis: &[TestFunction],
) -> Result<Vec<WeakResidualReport>> {
    check_noise(path, noise)?;
    let g = &path.grid;
    let nodes = g.nodes();
    let dt = path.tgrid.dt;
    let nt = path.tgrid.n_time;
    let b: Vec<Vec<f64>> = path.u.iter().map(|row| row.iter().map(|&x| drift.eval(x)).collect()).collect();
    let times: Vec<f64> = (0..=nt).map(|m| path.tgrid.time(m)).collect();
    let mut out = Vec::with_capacity(phis.len());
    for phi in phis {
        let phi_v: Vec<f64> = nodes.iter().map(|&x| phi.value(x)).collect();
        let lap_v: Vec<f64> = nodes.iter().map(|&x| phi.half_laplacian(x)).collect();
        let w_path = noise.pair_path(&window_masked(g, &phi_v));
        let integrand: Vec<f64> =
            (0..=nt).map(|m| pair_values(g, &path.u[m], &lap_v) + pair_values(g, &b[m], &phi_v)).collect();
        let paired: Vec<f64> = (0..=nt).map(|m| pair_values(g, &path.u[m], &phi_v)).collect();
        let mut residuals = Vec::with_capacity(nt + 1);
        let mut acc = 0.0;
        residuals.push(0.0);
        for m in 1..=nt {
            acc += 0.5 * dt * (integrand[m - 1] + integrand[m]);
            residuals.push(paired[m] - paired[0] - acc - w_path[m]);
        }
        out.push(WeakResidualReport {
            phi: *phi,
            times: times.clone(),
            residuals,
            drift_term_used: DriftTerm::DirectIntegral,
        });
    }
    Ok(out)
}

fn window_masked(g: &Grid1D, v: &[f64]) -> Vec<f64> {
    v.iter().enumerate().map(|(i, x)| if g.in_window(i) { *x } else { 0.0 }).collect()
}

/// The weak residual at one grid time.
pub fn weak_residual(
    path: &FieldPath,
    noise: &NoiseRealization,
    drift: &dyn DriftEval,
    phi: &TestFunction,
    t: f64,
) -> Result<f64> {
    let m = path.tgrid.step_of(t).ok_or_else(|| Error::Domain(format!("time {t} is not on the time grid")))?;
    Ok(weak_residual_report(path, noise, drift, phi)?.residuals[m])
}

/// A process `H_t(phi)` sampled at the path's grid times.
pub trait TimeFunctional {
    fn tgrid(&self) -> &TimeGrid;
    /// `H_{t_m}(phi)` for a test function given by its grid values.
    fn eval(&self, m: usize, phi: &[f64]) -> f64;
}

/// `H_t(phi) = int_0^t <f(u_s), phi> ds` with the left-point rule of the scheme.
pub struct DriftFunctional {
    grid: Grid1D,
    tgrid: TimeGrid,
    /// `cumulative[m] = sum_{l<m} dt f(u_l)`.
    cumulative: Vec<Vec<f64>>,
}

impl DriftFunctional {
    pub fn new(path: &FieldPath, drift: &dyn DriftEval) -> Self {
        let dt = path.tgrid.dt;
        let np = path.grid.n_points();
        let mut cumulative = Vec::with_capacity(path.tgrid.n_time + 1);
        let mut acc = vec![0.0; np];
        cumulative.push(acc.clone());
        for m in 0..path.tgrid.n_time {
            for (a, &x) in acc.iter_mut().zip(&path.u[m]) {
                *a += dt * drift.eval(x);
            }
            cumulative.push(acc.clone());
        }
        DriftFunctional { grid: path.grid, tgrid: path.tgrid, cumulative }
    }

    /// `sum_{l<m} dt f(u_l)` on the grid.
    pub fn cumulative(&self, m: usize) -> &[f64] {
        &self.cumulative[m]
    }
}

impl TimeFunctional for DriftFunctional {
    fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    fn eval(&self, m: usize, phi: &[f64]) -> f64 {
        pair_values(&self.grid, &self.cumulative[m], phi)
    }
}

/// `sum_{i=1}^{floor(n t)} (H_{i/n}(f_{(i-1)/n}) - H_{(i-1)/n}(f_{(i-1)/n}))`.
/// `f` maps a time to grid values; `n` must divide the number of grid steps
/// per unit time.
pub fn riemann_nonlinear_integral(
    h: &dyn TimeFunctional,
    f: &dyn Fn(f64) -> Vec<f64>,
    t: f64,
    n: u64,
) -> Result<f64> {
    let tg = *h.tgrid();
    let per_unit = (tg.n_time as f64 / tg.horizon).round() as u64;
    if n == 0 || per_unit % n != 0 {
        return Err(Error::Domain(format!("level {n} does not divide the grid ({per_unit} steps per unit time)")));
    }
    if !(0.0..=tg.horizon + 1e-12).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, {}]", tg.horizon)));
    }
    let stride = (per_unit / n) as usize;
    let count = crate::grid::kappa_n(t.min(1.0), n)? * n as f64;
    let count = count.round() as usize;
    let mut total = 0.0;
    for i in 1..=count {
        let m0 = (i - 1) * stride;
        let fv = f(tg.time(m0));
        total += h.eval(m0 + stride, &fv) - h.eval(m0, &fv);
    }
    Ok(total)
}

/// Richardson fit `R + a sqrt(eps) + c eps` through the last three points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    pub differences: Vec<f64>,
    pub extrapolated: f64,
    /// `u_t(x) - P_t u0(x) - V_t(x)`.
    pub mild_target: f64,
    pub cauchy: bool,
}

fn richardson(eps: &[f64], vals: &[f64]) -> f64 {
    let n = eps.len();
    if n < 3 {
        return *vals.last().unwrap_or(&0.0);
    }
    // solve [1 sqrt(e) e] [R a c]^T = v on the last three points
    let rows: Vec<[f64; 4]> =
        (n - 3..n).map(|k| [1.0, eps[k].sqrt(), eps[k], vals[k]]).collect();
    let mut m = [rows[0], rows[1], rows[2]];
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    m[0][3] / m[0][0]
}

/// Reconstructs `R(t, x_i) = lim_{eps -> 0} int_0^{t-eps} H(dr, p_{t-r}(x_i, .))`
/// from left-point Riemann sums on the path grid.
pub fn reconstruct_r(
    path: &FieldPath,
    basis: &SpectralBasis,
    h: &DriftFunctional,
    t: f64,
    i: usize,
    epsilons: &[f64],
) -> Result<ReconstructionReport> {
    let tg = &path.tgrid;
    let mt = tg.step_of(t).ok_or_else(|| Error::Domain(format!("time {t} is not on the time grid")))?;
    if i >= path.grid.n_points() {
        return Err(Error::Domain(format!("grid index {i} out of range")));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("epsilons must decrease".into()));
    }
    if epsilons.iter().any(|&e| e < 2.0 * tg.dt - 1e-12 || e > t) {
        return Err(Error::Invalid(format!("epsilons must lie in [2 dt, t] = [{}, {t}]", 2.0 * tg.dt)));
    }
    // per-slice contributions (P_{t - t_l} f(u_l))(x_i) dt
    let mut contrib = Vec::with_capacity(mt);
    for l in 0..mt {
        let inc: Vec<f64> = h.cumulative(l + 1).iter().zip(h.cumulative(l)).map(|(a, b)| a - b).collect();
        contrib.push(basis.apply_heat(&inc, tg.time(mt) - tg.time(l))[i]);
    }
    let mut values = Vec::with_capacity(epsilons.len());
    let mut used = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        // slices lying inside [0, t - eps]
        let k = tg.floor_step(t - e + 1e-12 * tg.dt).min(mt);
        values.push(contrib[..k].iter().sum::<f64>());
        used.push(t - tg.time(k));
    }
    let differences: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let cauchy = differences.windows(2).all(|w| w[1] <= w[0] * 1.05 + 1e-13);
    let extrapolated = richardson(&used, &values);
    let pu0 = basis.apply_heat(&path.u0, tg.time(mt));
    let mild_target = path.u[mt][i] - pu0[i] - path.v.values[mt][i];
    Ok(ReconstructionReport { epsilons: epsilons.to_vec(), values, differences, extrapolated, mild_target, cauchy })
}

/// `sup_t max_phi |int_0^t <phi, (b^{n_k} - b^{n_{k+1}})(u_r)> dr|` along one path.
pub fn regularized_weak_limit_check(
    path: &FieldPath,
    levels: &[u64],
    drifts: &[&dyn DriftEval],
    tests: &[TestFunction],
) -> Result<RegularizedReport> {
    if levels.len() != drifts.len() || levels.len() < 2 {
        return Err(Error::Invalid("need at least two levels, one drift per level".into()));
    }
    let phis: Vec<Vec<f64>> = tests.iter().map(|p| p.on_grid(&path.grid)).collect();
    let series: Vec<Vec<Vec<f64>>> = drifts
        .iter()
        .map(|d| {
            let h = DriftFunctional::new(path, *d);
            (0..=path.tgrid.n_time).map(|m| phis.iter().map(|p| h.eval(m, p)).collect()).collect()
        })
        .collect();
    let differences: Vec<f64> = series
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max)
        })
        .collect();
    let decreasing = differences.windows(2).all(|w| w[1] < w[0]);
    Ok(RegularizedReport {
        levels: levels.to_vec(),
        differences,
        probes: crate::solver::ProbeLattice { time_stride: 1, space_stride: 1 },
        decreasing,
    })
}

/// Default family on a grid: trigonometric or cosine modes, or Hermite
/// functions, followed by Gaussian bumps.
pub fn default_family(grid: &Grid1D, n_modes: usize, n_bumps: usize) -> Result<Vec<TestFunction>> {
    let mut out = Vec::new();
    match grid.kind() {
        DomainKind::PeriodicUnit => {
            let half = (n_modes / 2) as i64;
            for k in 1..=half {
                out.push(TestFunction::new(TestFamily::TrigPeriodic { k }, grid)?);
                out.push(TestFunction::new(TestFamily::TrigPeriodic { k: -k }, grid)?);
            }
        }
        DomainKind::NeumannUnit => {
            for k in 0..n_modes as u32 {
                out.push(TestFunction::new(TestFamily::CosineNeumann { k }, grid)?);
            }
        }
        DomainKind::WholeLine => {
            let w = grid.setup.extent() / 4.0;
            let scale = w / ((2.0 * n_modes as f64 + 1.0).sqrt() + 8.0);
            for k in 0..n_modes as u32 {
                out.push(TestFunction::new(TestFamily::HermiteWholeLine { k, scale }, grid)?);
            }
        }
    }
    let (lo, hi, width) = match grid.kind() {
        DomainKind::WholeLine => {
            let w = grid.setup.extent() / 4.0;
            (-0.6 * w, 0.6 * w, 0.06 * w)
        }
        _ => (0.2, 0.8, 0.03),
    };
    for i in 0..n_bumps {
        let c = if n_bumps == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n_bumps - 1) as f64 };
        out.push(TestFunction::new(TestFamily::GaussianBump { center: c, width }, grid)?);
    }
    Ok(out)
}

/// Result of fitting `sup_t |<u_t, phi>| <= Gamma ||phi||_m^{1/2}` on part of
/// a family and checking it on the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationFit {
    pub m: usize,
    pub gamma: f64,
    /// Worst ratio `sup_t |<u_t, phi>| / (Gamma ||phi||_m^{1/2})` over all tested functions.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Safety factor applied to the fitted domination constant.
pub const DOMINATION_SAFETY: f64 = 2.0;

/// Smallest `m <= MAX_DERIVATIVE` for which the constant fitted on `train`
/// (times [`DOMINATION_SAFETY`]) dominates every function in `train` and
/// `holdout`.
pub fn fit_seminorm_domination(
    path: &FieldPath,
    train: &[TestFunction],
    holdout: &[TestFunction],
) -> Result<DominationFit> {
    let sup_pair = |phi: &TestFunction| {
        let v = phi.on_grid(&path.grid);
        path.u.iter().map(|row| pair_values(&path.grid, row, &v).abs()).fold(0.0, f64::max)
    };
    let train_sup: Vec<f64> = train.iter().map(sup_pair).collect();
    let hold_sup: Vec<f64> = holdout.iter().map(sup_pair).collect();
    let mut last = None;
    for m in 0..=MAX_DERIVATIVE {
        let tn: Vec<f64> = train.iter().map(|p| schwartz_seminorm(p, m).map(f64::sqrt)).collect::<Result<_>>()?;
        let hn: Vec<f64> = holdout.iter().map(|p| schwartz_seminorm(p, m).map(f64::sqrt)).collect::<Result<_>>()?;
        let gamma = DOMINATION_SAFETY
            * train_sup.iter().zip(&tn).map(|(s, n)| if *n > 0.0 { s / n } else { 0.0 }).fold(0.0, f64::max);
        let worst = train_sup
            .iter()
            .zip(&tn)
            .chain(hold_sup.iter().zip(&hn))
            .map(|(s, n)| if *s == 0.0 { 0.0 } else { s / (gamma * n) })
            .fold(0.0, f64::max);
        let fit = DominationFit { m, gamma, worst_ratio: worst, holds: worst <= 1.0 };
        if fit.holds {
            return Ok(fit);
        }
        last = Some(fit);
    }
    Ok(last.unwrap())
}
