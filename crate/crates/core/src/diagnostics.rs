//! Monte Carlo exponent estimators and the ensemble harnesses built on the
//! solver and weak-form machinery.
//!
//! Harnesses never spawn threads. They take an [`Executor`] that maps a
//! per-realization closure over realization indices and returns the results
//! in index order; every reduction then runs sequentially in that order, so
//! the output does not depend on how the executor schedules work.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::drift::{mollify, DriftEval, DriftForm, DriftSpec};
use crate::error::{Error, Result};
use crate::grid::{dyadic_partitions, DomainKind, DomainSetup, Grid1D, TimeGrid};
use crate::noise::{sample_noise, NoiseRealization};
use crate::solver::{
    grid_level, max_mild_residual, regularized_mild_limit_check, slice_mass, FieldPath, ProbeLattice,
    SchemeKind, SchemeSpec, Solver,
};
use crate::spectral::SpectralBasis;
use crate::weak::{default_family, regularized_weak_limit_check, weak_residual_reports};

/// Runs independent work units. Implementations must return results in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

// ---------------------------------------------------------------------------
// exponent fits

pub const MIN_FIT_POINTS: usize = 5;

/// Log-log least-squares fit `value ~ C scale^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub intercept: f64,
    /// HC3 standard error of the exponent.
    pub stderr: f64,
    /// 95% half-width: `stderr` times the Student t quantile.
    pub half_width: f64,
    pub n_points: usize,
    pub residual_rms: f64,
    /// Pairs dropped for a nonpositive scale or value.
    pub dropped: usize,
}

impl ExponentFit {
    pub fn contains(&self, target: f64, tolerance: f64) -> bool {
        (self.exponent - target).abs() <= tolerance
    }
}

pub fn fit_exponent(samples: &[(f64, f64)]) -> Result<ExponentFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(s, v)| *s > 0.0 && *v > 0.0 && s.is_finite() && v.is_finite())
        .map(|(s, v)| (s.ln(), v.ln()))
        .collect();
    let dropped = samples.len() - pts.len();
    let n = pts.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::Invalid(format!("exponent fit needs {MIN_FIT_POINTS} positive pairs, got {n}")));
    }
    let nf = n as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Invalid("exponent fit needs at least two distinct scales".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let mut rss = 0.0;
    let mut meat = 0.0;
    for &(x, y) in &pts {
        let e = y - intercept - slope * x;
        let d = x - xbar;
        let h = 1.0 / nf + d * d / sxx;
        rss += e * e;
        meat += d * d * e * e / (1.0 - h).max(1e-12).powi(2);
    }
    let se = meat.sqrt() / sxx;
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::Invalid(e.to_string()))?.inverse_cdf(0.975);
    let floor = 4.0 * f64::EPSILON * slope.abs().max(1.0);
    Ok(ExponentFit {
        exponent: slope,
        intercept,
        stderr: se,
        half_width: (t * se).max(floor),
        n_points: n,
        residual_rms: (rss / nf).sqrt(),
        dropped,
    })
}

// ---------------------------------------------------------------------------
// ensemble summaries

/// Quantile level used to turn "in probability" limits into a testable statistic.
pub const IN_PROBABILITY_LEVEL: f64 = 0.9;

/// Values below this are treated as exact zeros when comparing ladders.
pub const STATISTIC_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub level: f64,
    pub value: f64,
    /// Half the spread of the order statistics one binomial standard
    /// deviation either side of the quantile.
    pub stderr: f64,
    pub n: usize,
}

fn interpolated(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile_summary(values: &[f64], level: f64) -> QuantileSummary {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return QuantileSummary { level, value: f64::NAN, stderr: f64::NAN, n: 0 };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let band = (level * (1.0 - level) / n).sqrt();
    let value = interpolated(&v, level);
    let stderr = 0.5 * (interpolated(&v, level + band) - interpolated(&v, level - band));
    QuantileSummary { level, value, stderr, n: v.len() }
}

/// Quantiles that decrease along a ladder, each step allowed to rise by at
/// most one standard error.
pub fn decreasing_in_probability(ladder: &[QuantileSummary]) -> bool {
    ladder.windows(2).all(|w| w[1].value <= w[0].value + w[0].stderr.max(w[1].stderr))
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One line of a verdict table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub experiment: String,
    pub resolution: String,
    pub statistic: String,
    pub value: f64,
    pub stderr: f64,
    pub verdict: String,
}

pub fn verdict_label(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

// ---------------------------------------------------------------------------
// shared experiment setup

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `amplitude sin(2 pi k x)`.
    Sine { amplitude: f64, k: f64 },
}

impl InitialCondition {
    pub fn field(&self, grid: &Grid1D) -> Vec<f64> {
        grid.nodes()
            .into_iter()
            .map(|x| match *self {
                InitialCondition::Zero => 0.0,
                InitialCondition::Constant { value } => value,
                InitialCondition::Sine { amplitude, k } => amplitude * (2.0 * std::f64::consts::PI * k * x).sin(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub n_space: usize,
    pub n_time: usize,
}

impl Resolution {
    pub fn label(&self) -> String {
        format!("{}x{}", self.n_space, self.n_time)
    }

    pub fn grids(&self, setup: &DomainSetup, horizon: f64) -> Result<(Grid1D, TimeGrid)> {
        setup.check_horizon(horizon)?;
        Ok((Grid1D::new(*setup, self.n_space)?, TimeGrid::new(horizon, self.n_time)?))
    }
}

/// What every ensemble experiment shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub setup: DomainSetup,
    pub horizon: f64,
    pub realizations: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub initial: InitialCondition,
    pub scheme: SchemeKind,
}

/// The bounded drift a scheme evaluates at mollification level `n`: closed
/// forms are used as given, every other form through the level-`n` table.
pub fn scheme_drift(spec: &DriftSpec, n: u64) -> Result<Arc<dyn DriftEval>> {
    match &spec.form {
        DriftForm::ClosedForm(_) => {
            let s = spec.clone();
            Ok(Arc::new(move |u: f64| s.eval(u).unwrap_or(f64::NAN)))
        }
        _ => level_drift(spec, n),
    }
}

/// `b^n` through its interpolation table, for every form.
pub fn level_drift(spec: &DriftSpec, n: u64) -> Result<Arc<dyn DriftEval>> {
    Ok(Arc::new(mollify(spec, n)?.tabulate_default()))
}

/// Checks that resolutions form a chain of joint halvings of `(dx, dt)`.
pub fn check_refinement_chain(resolutions: &[Resolution]) -> Result<()> {
    if resolutions.is_empty() {
        return Err(Error::Invalid("at least one resolution is required".into()));
    }
    for w in resolutions.windows(2) {
        if w[1].n_space != 2 * w[0].n_space || w[1].n_time != 2 * w[0].n_time {
            return Err(Error::Invalid(format!(
                "resolutions must double in space and time, got {} then {}",
                w[0].label(),
                w[1].label()
            )));
        }
    }
    Ok(())
}

/// Noise on the finest resolution and its coarsenings, coarse first.
pub fn coupled_noise(
    ensemble: &EnsembleSpec,
    resolutions: &[Resolution],
    index: u64,
) -> Result<Vec<NoiseRealization>> {
    check_refinement_chain(resolutions)?;
    let finest = resolutions.last().unwrap();
    let (g, tg) = finest.grids(&ensemble.setup, ensemble.horizon)?;
    let mut chain = vec![sample_noise(&g, &tg, ensemble.master_seed, index)];
    for _ in 1..resolutions.len() {
        let next = chain.last().unwrap().coarsen(true, true)?;
        chain.push(next);
    }
    chain.reverse();
    Ok(chain)
}

fn path_is_finite(p: &FieldPath) -> bool {
    p.u.iter().all(|r| r.iter().all(|x| x.is_finite()))
}

// ---------------------------------------------------------------------------
// kappa

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSettings {
    pub lags: Vec<f64>,
    /// Starting times are multiples of this step, excluding 0.
    pub start_step: f64,
    pub space_stride: usize,
    pub moment: f64,
}

impl Default for KappaSettings {
    fn default() -> Self {
        KappaSettings {
            lags: (3..=8).map(|k| 2f64.powi(-k)).collect(),
            start_step: 1.0 / 16.0,
            space_stride: 4,
            moment: 2.0,
        }
    }
}

pub const MIN_KAPPA_REALIZATIONS: u64 = 200;

/// `1 - 1/(4p)`.
pub fn kappa_theory(p: f64) -> f64 {
    1.0 - 0.25 / p
}

/// Sums of `|u_{s+h} - V_{s+h} - P_h(u_s - V_s)|^m` over realizations for
/// every lag, start and probe point.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaAccumulator {
    settings: KappaSettings,
    grid: Grid1D,
    tgrid: TimeGrid,
    lag_steps: Vec<Option<usize>>,
    starts: Vec<usize>,
    points: Vec<usize>,
    sums: Vec<f64>,
    scale: f64,
    count: u64,
}

impl KappaAccumulator {
    pub fn new(settings: &KappaSettings, grid: &Grid1D, tgrid: &TimeGrid) -> Result<Self> {
        if settings.moment < 1.0 {
            return Err(Error::Invalid(format!("moment order must be >= 1, got {}", settings.moment)));
        }
        let lag_steps: Vec<Option<usize>> = settings
            .lags
            .iter()
            .map(|&h| {
                let l = (h / tgrid.dt).round();
                (l >= 1.0 && (l * tgrid.dt - h).abs() <= 1e-9 * h && h < tgrid.horizon).then_some(l as usize)
            })
            .collect();
        let mut starts = Vec::new();
        let mut j = 1;
        loop {
            let s = j as f64 * settings.start_step;
            if s >= tgrid.horizon - 1e-12 {
                break;
            }
            if let Some(m) = tgrid.step_of(s) {
                starts.push(m);
            }
            j += 1;
        }
        let points = ProbeLattice { time_stride: 1, space_stride: settings.space_stride }.points(grid);
        let len = lag_steps.len() * starts.len() * points.len();
        Ok(KappaAccumulator {
            settings: settings.clone(),
            grid: *grid,
            tgrid: *tgrid,
            lag_steps,
            starts,
            points,
            sums: vec![0.0; len],
            scale: 0.0,
            count: 0,
        })
    }

    fn slot(&self, lag: usize, start: usize, point: usize) -> usize {
        (lag * self.starts.len() + start) * self.points.len() + point
    }

    pub fn add_path(&mut self, path: &FieldPath, basis: &SpectralBasis) -> Result<()> {
        if path.grid != self.grid || path.tgrid != self.tgrid {
            return Err(Error::Invalid("path grid differs from the accumulator grid".into()));
        }
        let psi: Vec<Vec<f64>> = (0..=self.tgrid.n_time).map(|m| path.psi(m)).collect();
        for row in &psi {
            for &x in row {
                self.scale = self.scale.max(x.abs());
            }
        }
        let mo = self.settings.moment;
        for li in 0..self.lag_steps.len() {
            let Some(l) = self.lag_steps[li] else { continue };
            for si in 0..self.starts.len() {
                let ms = self.starts[si];
                if ms + l > self.tgrid.n_time {
                    continue;
                }
                let ph = basis.apply_heat(&psi[ms], l as f64 * self.tgrid.dt);
                for pi in 0..self.points.len() {
                    let i = self.points[pi];
                    let d = psi[ms + l][i] - ph[i];
                    let k = self.slot(li, si, pi);
                    self.sums[k] += d.abs().powf(mo);
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Adds the statistics of `other`; associative up to rounding.
    pub fn merge(&mut self, other: &KappaAccumulator) -> Result<()> {
        if other.sums.len() != self.sums.len() || other.grid != self.grid || other.tgrid != self.tgrid {
            return Err(Error::Invalid("cannot merge accumulators over different grids".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.scale = self.scale.max(other.scale);
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Largest empirical `L_m` norm over starts and probes for each lag.
    pub fn lag_norms(&self) -> Vec<Option<f64>> {
        let n = self.count.max(1) as f64;
        (0..self.lag_steps.len())
            .map(|li| {
                let l = self.lag_steps[li]?;
                let mut best = 0.0f64;
                for si in 0..self.starts.len() {
                    if self.starts[si] + l > self.tgrid.n_time {
                        continue;
                    }
                    for pi in 0..self.points.len() {
                        best = best.max((self.sums[self.slot(li, si, pi)] / n).powf(1.0 / self.settings.moment));
                    }
                }
                Some(best)
            })
            .collect()
    }

    pub fn report(&self, p: f64) -> KappaReport {
        let norms = self.lag_norms();
        let samples: Vec<(f64, f64)> = self
            .settings
            .lags
            .iter()
            .zip(&norms)
            .filter_map(|(&h, n)| n.map(|v| (h, v)))
            .collect();
        let peak = samples.iter().fold(0.0f64, |a, s| a.max(s.1));
        let degenerate = peak <= 1e-10 * self.scale.max(1.0);
        let kappa_hat = if degenerate { None } else { fit_exponent(&samples).ok() };
        let usable = kappa_hat.as_ref().map_or(0, |f| f.n_points);
        let span = samples
            .iter()
            .filter(|s| s.1 > 0.0)
            .map(|s| s.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), h| (lo.min(h), hi.max(h)));
        let decades = if span.1 > 0.0 { (span.1 / span.0).log10() } else { 0.0 };
        KappaReport {
            p,
            kappa_hat,
            kappa_theory: kappa_theory(p),
            moment: self.settings.moment,
            lags: self.settings.lags.clone(),
            norms,
            realizations: self.count,
            degenerate,
            underpowered: !degenerate
                && (usable < MIN_FIT_POINTS || decades < 1.5 - 1e-9 || self.count < MIN_KAPPA_REALIZATIONS),
            excluded_layer: self.settings.start_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    /// Integrability of the drift; infinite for bounded drifts.
    pub p: f64,
    pub kappa_hat: Option<ExponentFit>,
    pub kappa_theory: f64,
    pub moment: f64,
    pub lags: Vec<f64>,
    /// `None` for lags that are not multiples of the time step.
    pub norms: Vec<Option<f64>>,
    pub realizations: u64,
    /// The statistic vanishes identically, so no exponent is defined.
    pub degenerate: bool,
    pub underpowered: bool,
    /// Start times below this are not probed.
    pub excluded_layer: f64,
}

impl KappaReport {
    /// Degenerate reports pass; otherwise the estimate must lie within
    /// `tolerance` of the theoretical exponent.
    pub fn verdict(&self, tolerance: f64) -> bool {
        if self.degenerate {
            return true;
        }
        self.kappa_hat.as_ref().is_some_and(|f| f.contains(self.kappa_theory, tolerance))
    }
}

/// `estimate_kappa` over an in-memory ensemble.
pub fn estimate_kappa(paths: &[FieldPath], settings: &KappaSettings, p: f64) -> Result<KappaReport> {
    let first = paths.first().ok_or_else(|| Error::Invalid("empty ensemble".into()))?;
    let basis = SpectralBasis::new(&first.grid);
    let mut acc = KappaAccumulator::new(settings, &first.grid, &first.tgrid)?;
    for p in paths {
        acc.add_path(p, &basis)?;
    }
    Ok(acc.report(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaConfig {
    pub ensemble: EnsembleSpec,
    pub resolution: Resolution,
    pub drift: DriftSpec,
    /// Overrides the grid mollification level.
    #[serde(default)]
    pub mollification_level: Option<u64>,
    #[serde(default)]
    pub settings: KappaSettings,
    /// Integrability used for the theoretical exponent; defaults to the drift's.
    #[serde(default)]
    pub p: Option<f64>,
}

/// Simulates the ensemble and estimates `kappa`. Paths with non-finite
/// values are excluded and counted.
pub fn kappa_experiment<E: Executor>(exec: &E, cfg: &KappaConfig) -> Result<(KappaReport, usize)> {
    let (g, tg) = cfg.resolution.grids(&cfg.ensemble.setup, cfg.ensemble.horizon)?;
    let solver = Solver::new(&g, &tg);
    let level = cfg.mollification_level.unwrap_or_else(|| grid_level(&g, &tg));
    let scheme = SchemeSpec::new(cfg.ensemble.scheme, scheme_drift(&cfg.drift, level)?);
    let u0 = cfg.ensemble.initial.field(&g);
    let template = KappaAccumulator::new(&cfg.settings, &g, &tg)?;
    let parts = exec.map(cfg.ensemble.realizations, |r| -> Result<Option<KappaAccumulator>> {
        let noise = sample_noise(&g, &tg, cfg.ensemble.master_seed, r as u64);
        let path = match solver.solve(&scheme, &u0, &noise) {
            Ok(p) if path_is_finite(&p) => p,
            Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Diverged(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut acc = template.clone();
        acc.add_path(&path, solver.basis())?;
        Ok(Some(acc))
    });
    let mut total = template.clone();
    let mut excluded = 0;
    for part in parts {
        match part? {
            Some(a) => total.merge(&a)?,
            None => excluded += 1,
        }
    }
    let p = cfg.p.unwrap_or_else(|| cfg.drift.integrability());
    Ok((total.report(p), excluded))
}

// ---------------------------------------------------------------------------
// germs and sewing

/// A two-time germ `A_{s,t}`.
pub trait Germ {
    fn eval(&self, s: f64, t: f64) -> Result<f64>;
}

impl<F: Fn(f64, f64) -> f64> Germ for F {
    fn eval(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self(s, t))
    }
}

/// `A_{s,t}(x) = int_s^t int_D p_{T-r}(x, y) f(V_r + P_{r-s} psi_s)(y) dy dr` on one path,
/// with the kernel integrated exactly over each time slice and the integrand
/// frozen at the slice's left end.
pub struct SheGerm<'a> {
    path: &'a FieldPath,
    basis: &'a SpectralBasis,
    drift: &'a dyn DriftEval,
    end: usize,
}

impl<'a> SheGerm<'a> {
    /// `end` is the grid index of `T`.
    pub fn new(path: &'a FieldPath, basis: &'a SpectralBasis, drift: &'a dyn DriftEval, end: usize) -> Result<Self> {
        if end > path.tgrid.n_time {
            return Err(Error::Domain(format!("end step {end} beyond the time grid")));
        }
        Ok(SheGerm { path, basis, drift, end })
    }

    pub fn field(&self, ms: usize, mt: usize) -> Result<Vec<f64>> {
        if !(ms <= mt && mt <= self.end) {
            return Err(Error::Domain(format!("need s <= t <= T, got steps {ms}, {mt}, {}", self.end)));
        }
        let tg = &self.path.tgrid;
        let dt = tg.dt;
        let eig = self.basis.eigenvalues();
        let psi_modes = self.basis.forward(&self.path.psi(ms));
        let mut acc = vec![0.0; eig.len()];
        let mut shifted = vec![0.0; eig.len()];
        let mut field = vec![0.0; self.path.grid.n_points()];
        let mut fm = vec![0.0; eig.len()];
        for l in ms..mt {
            let age = (l - ms) as f64 * dt;
            for k in 0..eig.len() {
                shifted[k] = psi_modes[k] * (-eig[k] * age).exp();
            }
            self.basis.inverse_into(&shifted, &mut field);
            for (f, v) in field.iter_mut().zip(&self.path.v.values[l]) {
                *f = self.drift.eval(*f + v);
            }
            self.basis.forward_into(&field, &mut fm);
            let lag = (self.end - l - 1) as f64 * dt;
            for k in 0..eig.len() {
                acc[k] += slice_mass(eig[k], lag, dt) * fm[k];
            }
        }
        Ok(self.basis.inverse(&acc))
    }

    /// `delta A_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t}`.
    pub fn delta(&self, ms: usize, mu: usize, mt: usize) -> Result<Vec<f64>> {
        let st = self.field(ms, mt)?;
        let su = self.field(ms, mu)?;
        let ut = self.field(mu, mt)?;
        Ok((0..st.len()).map(|i| st[i] - su[i] - ut[i]).collect())
    }

    /// The germ at one grid point as a scalar [`Germ`].
    pub fn at(&'a self, i: usize) -> ProbeGerm<'a> {
        ProbeGerm { germ: self, i }
    }
}

pub struct ProbeGerm<'a> {
    germ: &'a SheGerm<'a>,
    i: usize,
}

impl Germ for ProbeGerm<'_> {
    fn eval(&self, s: f64, t: f64) -> Result<f64> {
        let tg = &self.germ.path.tgrid;
        let step = |x: f64| tg.step_of(x).ok_or_else(|| Error::Domain(format!("time {x} is not on the time grid")));
        Ok(self.germ.field(step(s)?, step(t)?)?[self.i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingSettings {
    pub scales: Vec<f64>,
    pub starts: Vec<f64>,
    pub space_stride: usize,
    pub moment: f64,
}

impl Default for SewingSettings {
    fn default() -> Self {
        SewingSettings {
            scales: (1..=7).map(|k| 2f64.powi(-k)).collect(),
            starts: vec![0.125, 0.25, 0.375, 0.5],
            space_stride: 8,
            moment: 2.0,
        }
    }
}

/// Sums of `|A_{s,s+h}|^m` and `|delta A_{s,s+h/2,s+h}|^m` over realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct SewingAccumulator {
    settings: SewingSettings,
    grid: Grid1D,
    tgrid: TimeGrid,
    /// `(scale index, s step, h step)` of every probed pair.
    pairs: Vec<(usize, usize, usize)>,
    points: Vec<usize>,
    a_sums: Vec<f64>,
    d_sums: Vec<f64>,
    a_peak: f64,
    d_peak: f64,
    count: u64,
}

impl SewingAccumulator {
    pub fn new(settings: &SewingSettings, grid: &Grid1D, tgrid: &TimeGrid) -> Result<Self> {
        let mut pairs = Vec::new();
        for (si, &h) in settings.scales.iter().enumerate() {
            let l = (h / tgrid.dt).round() as usize;
            if l < 2 || l % 2 != 0 || (l as f64 * tgrid.dt - h).abs() > 1e-9 * h {
                continue;
            }
            for &s in &settings.starts {
                if let Some(ms) = tgrid.step_of(s) {
                    if ms + l <= tgrid.n_time {
                        pairs.push((si, ms, l));
                    }
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Invalid("no sewing scale fits the time grid".into()));
        }
        let points = ProbeLattice { time_stride: 1, space_stride: settings.space_stride }.points(grid);
        let len = pairs.len() * points.len();
        Ok(SewingAccumulator {
            settings: settings.clone(),
            grid: *grid,
            tgrid: *tgrid,
            pairs,
            points,
            a_sums: vec![0.0; len],
            d_sums: vec![0.0; len],
            a_peak: 0.0,
            d_peak: 0.0,
            count: 0,
        })
    }

    pub fn add(&mut self, germ: &SheGerm<'_>) -> Result<()> {
        if germ.path.grid != self.grid || germ.path.tgrid != self.tgrid {
            return Err(Error::Invalid("germ grid differs from the accumulator grid".into()));
        }
        let mo = self.settings.moment;
        let np = self.points.len();
        for (k, &(_, ms, l)) in self.pairs.iter().enumerate() {
            let mu = ms + l / 2;
            let st = germ.field(ms, ms + l)?;
            let su = germ.field(ms, mu)?;
            let ut = germ.field(mu, ms + l)?;
            for (j, &i) in self.points.iter().enumerate() {
                let d = st[i] - su[i] - ut[i];
                self.a_sums[k * np + j] += st[i].abs().powf(mo);
                self.d_sums[k * np + j] += d.abs().powf(mo);
                self.a_peak = self.a_peak.max(st[i].abs());
                self.d_peak = self.d_peak.max(d.abs());
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &SewingAccumulator) -> Result<()> {
        if other.a_sums.len() != self.a_sums.len() || other.grid != self.grid || other.tgrid != self.tgrid {
            return Err(Error::Invalid("cannot merge accumulators over different grids".into()));
        }
        for (a, b) in self.a_sums.iter_mut().zip(&other.a_sums) {
            *a += b;
        }
        for (a, b) in self.d_sums.iter_mut().zip(&other.d_sums) {
            *a += b;
        }
        self.a_peak = self.a_peak.max(other.a_peak);
        self.d_peak = self.d_peak.max(other.d_peak);
        self.count += other.count;
        Ok(())
    }

    fn norms(&self, sums: &[f64]) -> Vec<(f64, f64)> {
        let n = self.count.max(1) as f64;
        let np = self.points.len();
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (si, &h) in self.settings.scales.iter().enumerate() {
            let mut best: Option<f64> = None;
            for (k, &(sk, _, _)) in self.pairs.iter().enumerate() {
                if sk != si {
                    continue;
                }
                for j in 0..np {
                    let v = (sums[k * np + j] / n).powf(1.0 / self.settings.moment);
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            if let Some(b) = best {
                out.push((h, b));
            }
        }
        out
    }

    pub fn report(&self, gamma: f64, germ_tag: &str) -> SewingRateReport {
        let a_norms = self.norms(&self.a_sums);
        let d_norms = self.norms(&self.d_sums);
        let a_hat = fit_exponent(&a_norms).ok();
        let delta_vanishes = self.d_peak <= 1e-13 * self.a_peak.max(1.0);
        let alpha1_hat = if delta_vanishes { None } else { fit_exponent(&d_norms).ok() };
        let a_threshold = 1.0 + gamma / 4.0 - 0.1;
        SewingRateReport {
            germ_tag: germ_tag.to_string(),
            gamma_input: gamma,
            a_pass: a_hat.as_ref().is_some_and(|f| f.exponent >= a_threshold),
            a_hat,
            a_threshold,
            alpha1_pass: delta_vanishes || alpha1_hat.as_ref().is_some_and(|f| f.exponent > 0.5),
            alpha1_hat,
            delta_vanishes,
            delta_peak: self.d_peak,
            scales: a_norms.iter().map(|s| s.0).collect(),
            a_norms: a_norms.iter().map(|s| s.1).collect(),
            delta_norms: d_norms.iter().map(|s| s.1).collect(),
            realizations: self.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingRateReport {
    pub germ_tag: String,
    pub gamma_input: f64,
    /// Slope of `||A_{s,t}||_{L_m}` against `|t - s|`.
    pub a_hat: Option<ExponentFit>,
    /// `1 + gamma/4 - 0.1`.
    pub a_threshold: f64,
    pub a_pass: bool,
    /// Slope of `||delta A_{s,u,t}||_{L_m}`; absent when `delta A` vanishes.
    pub alpha1_hat: Option<ExponentFit>,
    /// `alpha_1 > 1/2`, or `delta A` vanishes identically.
    pub alpha1_pass: bool,
    pub delta_vanishes: bool,
    pub delta_peak: f64,
    pub scales: Vec<f64>,
    pub a_norms: Vec<f64>,
    pub delta_norms: Vec<f64>,
    pub realizations: u64,
}

impl SewingRateReport {
    pub fn pass(&self) -> bool {
        self.a_pass && self.alpha1_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingConfig {
    pub ensemble: EnsembleSpec,
    pub resolution: Resolution,
    /// The drift `f` of the germ, which also drives the path.
    pub drift: DriftSpec,
    #[serde(default)]
    pub mollification_level: Option<u64>,
    /// Regularity index `gamma` fed to the rate threshold.
    pub gamma: f64,
    #[serde(default)]
    pub settings: SewingSettings,
    #[serde(default = "default_germ_tag")]
    pub germ_tag: String,
}

fn default_germ_tag() -> String {
    "she".into()
}

pub fn sewing_rate_check<E: Executor>(exec: &E, cfg: &SewingConfig) -> Result<(SewingRateReport, usize)> {
    let (g, tg) = cfg.resolution.grids(&cfg.ensemble.setup, cfg.ensemble.horizon)?;
    let solver = Solver::new(&g, &tg);
    let level = cfg.mollification_level.unwrap_or_else(|| grid_level(&g, &tg));
    let drift = scheme_drift(&cfg.drift, level)?;
    let scheme = SchemeSpec::new(cfg.ensemble.scheme, drift.clone());
    let u0 = cfg.ensemble.initial.field(&g);
    let template = SewingAccumulator::new(&cfg.settings, &g, &tg)?;
    let parts = exec.map(cfg.ensemble.realizations, |r| -> Result<Option<SewingAccumulator>> {
        let noise = sample_noise(&g, &tg, cfg.ensemble.master_seed, r as u64);
        let path = match solver.solve(&scheme, &u0, &noise) {
            Ok(p) if path_is_finite(&p) => p,
            Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Diverged(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let germ = SheGerm::new(&path, solver.basis(), drift.as_ref(), tg.n_time)?;
        let mut acc = template.clone();
        acc.add(&germ)?;
        Ok(Some(acc))
    });
    let mut total = template;
    let mut excluded = 0;
    for part in parts {
        match part? {
            Some(a) => total.merge(&a)?,
            None => excluded += 1,
        }
    }
    Ok((total.report(cfg.gamma, &cfg.germ_tag), excluded))
}

/// Dyadic partition sums of a germ over `[0, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiemannLimitReport {
    pub levels: Vec<u32>,
    pub sums: Vec<f64>,
    pub differences: Vec<f64>,
    pub decreasing: bool,
    /// Geometric extrapolation of the last two differences.
    pub extrapolated: f64,
}

pub const MAX_PARTITION_LEVEL: u32 = 12;

pub fn riemann_sum_limit_check(germ: &dyn Germ, t: f64, levels: &[u32]) -> Result<RiemannLimitReport> {
    let top = *levels.iter().max().ok_or_else(|| Error::Invalid("no levels given".into()))?;
    if top > MAX_PARTITION_LEVEL {
        return Err(Error::Domain(format!("levels must be at most {MAX_PARTITION_LEVEL}, got {top}")));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("levels must increase".into()));
    }
    let parts = dyadic_partitions(0.0, t, top)?;
    let sums: Vec<f64> = levels
        .iter()
        .map(|&l| parts[l as usize].windows(2).map(|w| germ.eval(w[0], w[1])).sum::<Result<f64>>())
        .collect::<Result<_>>()?;
    let differences: Vec<f64> = sums.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let floor = STATISTIC_FLOOR * sums.iter().fold(1.0f64, |a, s| a.max(s.abs()));
    let decreasing = differences.windows(2).all(|w| w[1] < w[0] || w[0].max(w[1]) <= floor);
    let last = *sums.last().unwrap();
    let extrapolated = match differences.len() {
        n if n >= 2 => {
            let rho = differences[n - 1] / differences[n - 2];
            if rho < 1.0 && differences[n - 2] > floor {
                last + (sums[n] - sums[n - 1]) * rho / (1.0 - rho)
            } else {
                last
            }
        }
        _ => last,
    };
    Ok(RiemannLimitReport { levels: levels.to_vec(), sums, differences, decreasing, extrapolated })
}

// ---------------------------------------------------------------------------
// Hölder regularity of the drift part

/// Ensemble means of the pathwise sups `max |K_{t+h} - K_t|` and
/// `max |K_t(x+d) - K_t(x)|` over the probe lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderAccumulator {
    grid: Grid1D,
    tgrid: TimeGrid,
    time_lags: Vec<usize>,
    space_lags: Vec<usize>,
    points: Vec<usize>,
    time_sums: Vec<f64>,
    space_sums: Vec<f64>,
    count: u64,
}

impl HolderAccumulator {
    /// Lags `2^k` grid steps for `k = 0..levels`.
    pub fn new(grid: &Grid1D, tgrid: &TimeGrid, levels: u32, space_stride: usize) -> Self {
        let lags = |limit: usize| (0..levels).map(|k| 1usize << k).filter(|&l| l < limit).collect::<Vec<_>>();
        let time_lags = lags(tgrid.n_time);
        let space_lags = lags(grid.n_space / 2);
        HolderAccumulator {
            grid: *grid,
            tgrid: *tgrid,
            points: ProbeLattice { time_stride: 1, space_stride }.points(grid),
            time_sums: vec![0.0; time_lags.len()],
            space_sums: vec![0.0; space_lags.len()],
            time_lags,
            space_lags,
            count: 0,
        }
    }

    pub fn add_field(&mut self, k: &[Vec<f64>]) -> Result<()> {
        if k.len() != self.tgrid.n_time + 1 {
            return Err(Error::Shape { expected: self.tgrid.n_time + 1, got: k.len() });
        }
        let np = self.grid.n_points();
        let periodic = self.grid.setup.is_periodic();
        for (j, &l) in self.time_lags.iter().enumerate() {
            let mut best = 0.0f64;
            for m in 0..=self.tgrid.n_time - l {
                for &i in &self.points {
                    best = best.max((k[m + l][i] - k[m][i]).abs());
                }
            }
            self.time_sums[j] += best;
        }
        for (j, &l) in self.space_lags.iter().enumerate() {
            let mut best = 0.0f64;
            for row in k {
                for &i in &self.points {
                    let other = if periodic {
                        (i + l) % np
                    } else if i + l < np && self.grid.in_window(i + l) {
                        i + l
                    } else {
                        continue;
                    };
                    best = best.max((row[other] - row[i]).abs());
                }
            }
            self.space_sums[j] += best;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &HolderAccumulator) -> Result<()> {
        if other.time_sums.len() != self.time_sums.len() || other.space_sums.len() != self.space_sums.len() {
            return Err(Error::Invalid("cannot merge accumulators with different lags".into()));
        }
        for (a, b) in self.time_sums.iter_mut().zip(&other.time_sums) {
            *a += b;
        }
        for (a, b) in self.space_sums.iter_mut().zip(&other.space_sums) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn report(&self) -> HolderReport {
        let n = self.count.max(1) as f64;
        let time: Vec<(f64, f64)> =
            self.time_lags.iter().zip(&self.time_sums).map(|(&l, s)| (l as f64 * self.tgrid.dt, s / n)).collect();
        let space: Vec<(f64, f64)> =
            self.space_lags.iter().zip(&self.space_sums).map(|(&l, s)| (l as f64 * self.grid.dx, s / n)).collect();
        let peak = time.iter().chain(&space).fold(0.0f64, |a, s| a.max(s.1));
        let degenerate = peak <= 1e-13;
        let time_fit = if degenerate { None } else { fit_exponent(&time).ok() };
        let space_fit = if degenerate { None } else { fit_exponent(&space).ok() };
        HolderReport {
            underpowered: !degenerate && (time_fit.is_none() || space_fit.is_none()),
            time: time_fit,
            space: space_fit,
            degenerate,
            time_lags: time.iter().map(|s| s.0).collect(),
            time_sups: time.iter().map(|s| s.1).collect(),
            space_lags: space.iter().map(|s| s.0).collect(),
            space_sups: space.iter().map(|s| s.1).collect(),
            realizations: self.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub time: Option<ExponentFit>,
    pub space: Option<ExponentFit>,
    pub degenerate: bool,
    pub underpowered: bool,
    pub time_lags: Vec<f64>,
    pub time_sups: Vec<f64>,
    pub space_lags: Vec<f64>,
    pub space_sups: Vec<f64>,
    pub realizations: u64,
}

/// Hölder exponents of the drift part `K` of an ensemble of paths.
pub fn holder_field_regularity(paths: &[FieldPath], space_stride: usize) -> Result<HolderReport> {
    let first = paths.first().ok_or_else(|| Error::Invalid("empty ensemble".into()))?;
    let mut acc = HolderAccumulator::new(&first.grid, &first.tgrid, 6, space_stride);
    for p in paths {
        acc.add_field(&p.k)?;
    }
    Ok(acc.report())
}

// ---------------------------------------------------------------------------
// ladders over resolutions

/// One statistic across a refinement chain, summarized by its upper
/// quantile over the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticLadder {
    pub name: String,
    pub quantiles: Vec<QuantileSummary>,
    /// `q_k / q_{k+1}`.
    pub ratios: Vec<f64>,
    pub pass: bool,
}

impl StatisticLadder {
    pub fn new(name: &str, per_resolution: &[Vec<f64>], contraction: f64) -> Self {
        let quantiles: Vec<QuantileSummary> =
            per_resolution.iter().map(|v| quantile_summary(v, IN_PROBABILITY_LEVEL)).collect();
        let ratios: Vec<f64> = quantiles.windows(2).map(|w| w[0].value / w[1].value).collect();
        let pass = quantiles.iter().all(|q| q.n > 0)
            && quantiles
                .windows(2)
                .all(|w| w[1].value <= STATISTIC_FLOOR || w[0].value >= contraction * w[1].value);
        StatisticLadder { name: name.to_string(), quantiles, ratios, pass }
    }

    pub fn rows(&self, experiment: &str, resolutions: &[Resolution]) -> Vec<VerdictRow> {
        self.quantiles
            .iter()
            .enumerate()
            .map(|(k, q)| VerdictRow {
                experiment: experiment.to_string(),
                resolution: resolutions[k].label(),
                statistic: self.name.clone(),
                value: q.value,
                stderr: q.stderr,
                verdict: verdict_label(self.pass).to_string(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub ensemble: EnsembleSpec,
    pub resolutions: Vec<Resolution>,
    pub drift: DriftSpec,
    /// Number of oscillating (or Hermite) test functions.
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_bumps")]
    pub n_bumps: usize,
    #[serde(default)]
    pub probes: ProbeLattice,
    #[serde(default = "default_contraction")]
    pub contraction: f64,
}

fn default_modes() -> usize {
    8
}

fn default_bumps() -> usize {
    8
}

fn default_contraction() -> f64 {
    1.3
}

pub const EQUIVALENCE_STATISTICS: [&str; 4] = ["mild_residual", "weak_residual", "regularized_mild", "regularized_weak"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub resolutions: Vec<Resolution>,
    pub statistics: Vec<StatisticLadder>,
    pub excluded: usize,
    pub pass: bool,
}

impl EquivalenceReport {
    pub fn rows(&self) -> Vec<VerdictRow> {
        self.statistics.iter().flat_map(|s| s.rows("equivalence", &self.resolutions)).collect()
    }
}

/// The four statistics of one path at one resolution, in the order of
/// [`EQUIVALENCE_STATISTICS`].
pub fn equivalence_statistics(
    path: &FieldPath,
    noise: &NoiseRealization,
    basis: &SpectralBasis,
    drift: &DriftSpec,
    n_modes: usize,
    n_bumps: usize,
    probes: &ProbeLattice,
) -> Result<[f64; 4]> {
    let level = grid_level(&path.grid, &path.tgrid);
    let used = scheme_drift(drift, level)?;
    let mild = max_mild_residual(path, basis, used.as_ref(), probes)?;
    let tests = default_family(&path.grid, n_modes, n_bumps)?;
    let weak = weak_residual_reports(path, noise, used.as_ref(), &tests)?
        .iter()
        .fold(0.0f64, |a, r| a.max(r.max_abs()));
    let fine = level_drift(drift, level)?;
    let finer = level_drift(drift, 2 * level)?;
    let ladder: [&dyn DriftEval; 2] = [fine.as_ref(), finer.as_ref()];
    let reg_mild = regularized_mild_limit_check(path, basis, &[level, 2 * level], &ladder, probes)?.differences[0];
    let reg_weak = regularized_weak_limit_check(path, &[level, 2 * level], &ladder, &tests)?.differences[0];
    Ok([mild, weak, reg_mild, reg_weak])
}

pub fn equivalence_harness<E: Executor>(exec: &E, cfg: &EquivalenceConfig) -> Result<EquivalenceReport> {
    check_refinement_chain(&cfg.resolutions)?;
    cfg.drift.validate()?;
    let solvers: Vec<(Solver, Vec<f64>, SchemeSpec)> = cfg
        .resolutions
        .iter()
        .map(|r| {
            let (g, tg) = r.grids(&cfg.ensemble.setup, cfg.ensemble.horizon)?;
            let drift = scheme_drift(&cfg.drift, grid_level(&g, &tg))?;
            Ok((Solver::new(&g, &tg), cfg.ensemble.initial.field(&g), SchemeSpec::new(cfg.ensemble.scheme, drift)))
        })
        .collect::<Result<_>>()?;
    let per_path = exec.map(cfg.ensemble.realizations, |r| -> Result<Option<Vec<[f64; 4]>>> {
        let noises = coupled_noise(&cfg.ensemble, &cfg.resolutions, r as u64)?;
        let mut out = Vec::with_capacity(noises.len());
        for ((solver, u0, scheme), noise) in solvers.iter().zip(&noises) {
            let path = match solver.solve(scheme, u0, noise) {
                Ok(p) if path_is_finite(&p) => p,
                Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Diverged(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            out.push(equivalence_statistics(
                &path,
                noise,
                solver.basis(),
                &cfg.drift,
                cfg.n_modes,
                cfg.n_bumps,
                &cfg.probes,
            )?);
        }
        Ok(Some(out))
    });
    let mut excluded = 0;
    let mut values = vec![vec![Vec::new(); cfg.resolutions.len()]; 4];
    for item in per_path {
        match item? {
            Some(stats) => {
                for (ri, s) in stats.iter().enumerate() {
                    for k in 0..4 {
                        values[k][ri].push(s[k]);
                    }
                }
            }
            None => excluded += 1,
        }
    }
    let statistics: Vec<StatisticLadder> = EQUIVALENCE_STATISTICS
        .iter()
        .zip(&values)
        .map(|(name, v)| StatisticLadder::new(name, v, cfg.contraction))
        .collect();
    let pass = statistics.iter().all(|s| s.pass);
    Ok(EquivalenceReport { resolutions: cfg.resolutions.clone(), statistics, excluded, pass })
}

// ---------------------------------------------------------------------------
// regularized ladders at a fixed resolution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub ensemble: EnsembleSpec,
    pub resolution: Resolution,
    pub drift: DriftSpec,
    pub levels: Vec<u64>,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_bumps")]
    pub n_bumps: usize,
    #[serde(default)]
    pub probes: ProbeLattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub levels: Vec<u64>,
    /// Per consecutive pair of levels, over the ensemble.
    pub mild: Vec<QuantileSummary>,
    pub weak: Vec<QuantileSummary>,
    /// Fraction of paths whose own differences decrease strictly.
    pub mild_monotone_share: f64,
    pub weak_monotone_share: f64,
    pub excluded: usize,
    pub pass: bool,
}

impl LadderReport {
    pub fn rows(&self) -> Vec<VerdictRow> {
        let mut out = Vec::new();
        for (name, ladder) in [("regularized_mild", &self.mild), ("regularized_weak", &self.weak)] {
            let pass = decreasing_in_probability(ladder);
            for (k, q) in ladder.iter().enumerate() {
                out.push(VerdictRow {
                    experiment: "ladder".into(),
                    resolution: format!("{}-{}", self.levels[k], self.levels[k + 1]),
                    statistic: name.into(),
                    value: q.value,
                    stderr: q.stderr,
                    verdict: verdict_label(pass).into(),
                });
            }
        }
        out
    }
}

/// Cauchy differences of the regularized mild and weak drift integrals
/// along each path, for a ladder of mollification levels. Each path is
/// driven by the finest level of the ladder.
pub fn regularized_ladder_check<E: Executor>(exec: &E, cfg: &LadderConfig) -> Result<LadderReport> {
    if cfg.levels.len() < 2 || cfg.levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("need at least two increasing levels".into()));
    }
    let (g, tg) = cfg.resolution.grids(&cfg.ensemble.setup, cfg.ensemble.horizon)?;
    let solver = Solver::new(&g, &tg);
    let drifts: Vec<Arc<dyn DriftEval>> =
        cfg.levels.iter().map(|&n| level_drift(&cfg.drift, n)).collect::<Result<_>>()?;
    let refs: Vec<&dyn DriftEval> = drifts.iter().map(|d| d.as_ref()).collect();
    let scheme = SchemeSpec::new(cfg.ensemble.scheme, drifts.last().unwrap().clone());
    let u0 = cfg.ensemble.initial.field(&g);
    let tests = default_family(&g, cfg.n_modes, cfg.n_bumps)?;
    let per_path = exec.map(cfg.ensemble.realizations, |r| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let noise = sample_noise(&g, &tg, cfg.ensemble.master_seed, r as u64);
        let path = match solver.solve(&scheme, &u0, &noise) {
            Ok(p) if path_is_finite(&p) => p,
            Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Diverged(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let m = regularized_mild_limit_check(&path, solver.basis(), &cfg.levels, &refs, &cfg.probes)?;
        let w = regularized_weak_limit_check(&path, &cfg.levels, &refs, &tests)?;
        Ok(Some((m.differences, w.differences)))
    });
    let pairs = cfg.levels.len() - 1;
    let mut mild = vec![Vec::new(); pairs];
    let mut weak = vec![Vec::new(); pairs];
    let (mut mono_m, mut mono_w, mut kept, mut excluded) = (0usize, 0usize, 0usize, 0usize);
    for item in per_path {
        match item? {
            Some((m, w)) => {
                kept += 1;
                mono_m += m.windows(2).all(|x| x[1] < x[0]) as usize;
                mono_w += w.windows(2).all(|x| x[1] < x[0]) as usize;
                for k in 0..pairs {
                    mild[k].push(m[k]);
                    weak[k].push(w[k]);
                }
            }
            None => excluded += 1,
        }
    }
    let mild: Vec<QuantileSummary> = mild.iter().map(|v| quantile_summary(v, IN_PROBABILITY_LEVEL)).collect();
    let weak: Vec<QuantileSummary> = weak.iter().map(|v| quantile_summary(v, IN_PROBABILITY_LEVEL)).collect();
    let strictly = |l: &[QuantileSummary]| l.windows(2).all(|w| w[1].value < w[0].value);
    let share = |c: usize| if kept == 0 { 0.0 } else { c as f64 / kept as f64 };
    Ok(LadderReport {
        levels: cfg.levels.clone(),
        pass: kept > 0 && strictly(&mild) && strictly(&weak),
        mild,
        weak,
        mild_monotone_share: share(mono_m),
        weak_monotone_share: share(mono_w),
        excluded,
    })
}

// ---------------------------------------------------------------------------
// uniqueness coupling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Coupling {
    /// Two schemes with the same drift.
    Schemes { first: SchemeKind, second: SchemeKind },
    /// The ensemble scheme at mollification levels `n` and `factor * n`,
    /// with `n` the grid level.
    Ladders { factor: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessConfig {
    pub ensemble: EnsembleSpec,
    pub resolutions: Vec<Resolution>,
    pub drift: DriftSpec,
    pub coupling: Coupling,
    #[serde(default)]
    pub probes: ProbeLattice,
    #[serde(default = "default_contraction")]
    pub contraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub resolutions: Vec<Resolution>,
    pub distance: StatisticLadder,
    pub excluded: usize,
    pub pass: bool,
}

impl UniquenessReport {
    pub fn rows(&self) -> Vec<VerdictRow> {
        self.distance.rows("uniqueness", &self.resolutions)
    }
}

/// `max |u^A - u^B|` over the probe lattice.
pub fn path_distance(a: &FieldPath, b: &FieldPath, probes: &ProbeLattice) -> f64 {
    let pts = probes.points(&a.grid);
    let mut worst = 0.0f64;
    for m in probes.times(&a.tgrid) {
        for &i in &pts {
            worst = worst.max((a.u[m][i] - b.u[m][i]).abs());
        }
    }
    worst
}

pub fn uniqueness_coupling<E: Executor>(exec: &E, cfg: &UniquenessConfig) -> Result<UniquenessReport> {
    check_refinement_chain(&cfg.resolutions)?;
    let setups: Vec<(Solver, Vec<f64>, SchemeSpec, SchemeSpec)> = cfg
        .resolutions
        .iter()
        .map(|r| {
            let (g, tg) = r.grids(&cfg.ensemble.setup, cfg.ensemble.horizon)?;
            let n = grid_level(&g, &tg);
            let (a, b) = match cfg.coupling {
                Coupling::Schemes { first, second } => {
                    let d = scheme_drift(&cfg.drift, n)?;
                    (SchemeSpec::new(first, d.clone()), SchemeSpec::new(second, d))
                }
                Coupling::Ladders { factor } => {
                    if factor == 0 {
                        return Err(Error::Invalid("ladder factor must be positive".into()));
                    }
                    (
                        SchemeSpec::new(cfg.ensemble.scheme, level_drift(&cfg.drift, n)?),
                        SchemeSpec::new(cfg.ensemble.scheme, level_drift(&cfg.drift, factor * n)?),
                    )
                }
            };
            Ok((Solver::new(&g, &tg), cfg.ensemble.initial.field(&g), a, b))
        })
        .collect::<Result<_>>()?;
    let per_path = exec.map(cfg.ensemble.realizations, |r| -> Result<Option<Vec<f64>>> {
        let noises = coupled_noise(&cfg.ensemble, &cfg.resolutions, r as u64)?;
        let mut out = Vec::with_capacity(noises.len());
        for ((solver, u0, a, b), noise) in setups.iter().zip(&noises) {
            let pa = solver.solve(a, u0, noise);
            let pb = solver.solve(b, u0, noise);
            match (pa, pb) {
                (Ok(x), Ok(y)) if path_is_finite(&x) && path_is_finite(&y) => {
                    out.push(path_distance(&x, &y, &cfg.probes))
                }
                (Err(e), _) | (_, Err(e)) if !matches!(e, Error::NonFinite { .. } | Error::Diverged(_)) => {
                    return Err(e)
                }
                _ => return Ok(None),
            }
        }
        Ok(Some(out))
    });
    let mut excluded = 0;
    let mut values = vec![Vec::new(); cfg.resolutions.len()];
    for item in per_path {
        match item? {
            Some(d) => {
                for (k, x) in d.into_iter().enumerate() {
                    values[k].push(x);
                }
            }
            None => excluded += 1,
        }
    }
    let distance = StatisticLadder::new("distance", &values, cfg.contraction);
    let pass = distance.pass;
    Ok(UniquenessReport { resolutions: cfg.resolutions.clone(), distance, excluded, pass })
}

/// Whether the drift part of the domain has a probe window narrower than the grid.
pub fn windowed(setup: &DomainSetup) -> bool {
    setup.kind == DomainKind::WholeLine
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn ensemble(realizations: usize, seed: u64) -> EnsembleSpec {
        EnsembleSpec {
            setup: DomainSetup::periodic(),
            horizon: 1.0,
            realizations,
            master_seed: seed,
            initial: InitialCondition::Zero,
            scheme: SchemeKind::SplittingExact,
        }
    }

    #[test]
    fn exact_power_laws() {
        let s: Vec<(f64, f64)> = (1..=8).map(|k| {
            let h = 2f64.powi(-k);
            (h, h.powf(0.75))
        }).collect();
        let f = fit_exponent(&s).unwrap();
        assert!((f.exponent - 0.75).abs() < 1e-10);
        assert!(f.half_width > 0.0);
        let lin: Vec<(f64, f64)> = (1..=6).map(|k| (k as f64, 3.0 * k as f64)).collect();
        assert!((fit_exponent(&lin).unwrap().exponent - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law_within_half_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s: Vec<(f64, f64)> = (0..12)
            .map(|k| {
                let h = 2f64.powf(-0.5 * k as f64);
                let z: f64 = StandardNormal.sample(&mut rng);
                (h, h.sqrt() * (1.0 + 0.01 * z))
            })
            .collect();
        let f = fit_exponent(&s).unwrap();
        assert!((f.exponent - 0.5).abs() <= f.half_width, "{f:?}");
        assert!(f.half_width < 0.02);
    }

    #[test]
    fn fit_drops_nonpositive_values() {
        let mut s: Vec<(f64, f64)> = (1..=6).map(|k| (k as f64, (k as f64).powi(2))).collect();
        s.push((7.0, 0.0));
        s.push((8.0, -1.0));
        let f = fit_exponent(&s).unwrap();
        assert_eq!(f.dropped, 2);
        assert_eq!(f.n_points, 6);
        assert!(fit_exponent(&s[..4]).is_err());
    }

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let q = quantile_summary(&v, 0.9);
        assert!((q.value - 90.0).abs() < 1e-12);
        assert!(q.stderr > 0.0 && q.stderr < 5.0);
    }

    #[test]
    fn zero_drift_kappa_is_degenerate() {
        let g = Grid1D::periodic(32).unwrap();
        let tg = TimeGrid::unit(64).unwrap();
        let solver = Solver::new(&g, &tg);
        let scheme = SchemeSpec::new(SchemeKind::SplittingExact, Arc::new(|_u: f64| 0.0));
        let paths: Vec<FieldPath> = (0..4)
            .map(|r| solver.solve(&scheme, &vec![0.3; 32], &sample_noise(&g, &tg, 1, r)).unwrap())
            .collect();
        let rep = estimate_kappa(&paths, &KappaSettings::default(), f64::INFINITY).unwrap();
        assert!(rep.degenerate);
        assert!(rep.kappa_hat.is_none());
        assert!(rep.verdict(0.12));
    }

    #[test]
    fn constant_germ_is_additive() {
        let g = Grid1D::periodic(32).unwrap();
        let tg = TimeGrid::unit(128).unwrap();
        let solver = Solver::new(&g, &tg);
        let one: Arc<dyn DriftEval> = Arc::new(|_u: f64| 1.0);
        let path = solver
            .solve(&SchemeSpec::new(SchemeKind::SplittingExact, one.clone()), &vec![0.0; 32], &sample_noise(&g, &tg, 3, 0))
            .unwrap();
        let germ = SheGerm::new(&path, solver.basis(), one.as_ref(), 128).unwrap();
        let a = germ.field(16, 80).unwrap();
        assert!(a.iter().all(|x| (x - 0.5).abs() < 1e-13));
        let d = germ.delta(16, 40, 80).unwrap();
        assert!(d.iter().all(|x| x.abs() < 1e-14));
        let mut acc = SewingAccumulator::new(&SewingSettings::default(), &g, &tg).unwrap();
        acc.add(&germ).unwrap();
        let rep = acc.report(0.0, "one");
        assert!((rep.a_hat.as_ref().unwrap().exponent - 1.0).abs() < 1e-6);
        assert!(rep.delta_vanishes && rep.pass());
    }

    #[test]
    fn riemann_sums_of_simple_germs() {
        let h = |t: f64| t.sin() + t * t;
        let additive = move |s: f64, t: f64| h(t) - h(s);
        let rep = riemann_sum_limit_check(&additive, 0.8, &[2, 4, 6, 8]).unwrap();
        for s in &rep.sums {
            assert!((s - h(0.8)).abs() < 1e-13);
        }
        assert!(rep.decreasing);
        let perturbed = move |s: f64, t: f64| h(t) - h(s) + (t - s).powi(2);
        let rep = riemann_sum_limit_check(&perturbed, 1.0, &[2, 3, 4, 5, 6]).unwrap();
        // sum of squares over 2^l pieces is 2^{-l}
        for (l, s) in [2, 3, 4, 5, 6].iter().zip(&rep.sums) {
            assert!((s - h(1.0) - 2f64.powi(-l)).abs() < 1e-12);
        }
        for w in rep.differences.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 1e-9);
        }
        assert!((rep.extrapolated - h(1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_holder_is_degenerate() {
        let g = Grid1D::periodic(32).unwrap();
        let tg = TimeGrid::unit(64).unwrap();
        let path = crate::solver::solve(
            &SchemeSpec::new(SchemeKind::SplittingExact, Arc::new(|_u: f64| 0.0)),
            &vec![0.0; 32],
            &sample_noise(&g, &tg, 1, 0),
        )
        .unwrap();
        assert!(holder_field_regularity(&[path], 1).unwrap().degenerate);
    }

    #[test]
    fn zero_drift_equivalence_sits_at_the_floor() {
        let cfg = EquivalenceConfig {
            ensemble: ensemble(3, 5),
            resolutions: vec![Resolution { n_space: 16, n_time: 16 }, Resolution { n_space: 32, n_time: 32 }],
            drift: DriftSpec::zero(),
            n_modes: 4,
            n_bumps: 2,
            probes: ProbeLattice::default(),
            contraction: 1.3,
        };
        let rep = equivalence_harness(&Sequential, &cfg).unwrap();
        for s in &rep.statistics {
            if s.name != "weak_residual" {
                assert!(s.quantiles.iter().all(|q| q.value <= STATISTIC_FLOOR), "{s:?}");
            }
        }
    }

    #[test]
    fn identical_couplings_have_zero_distance() {
        let cfg = UniquenessConfig {
            ensemble: ensemble(3, 9),
            resolutions: vec![Resolution { n_space: 16, n_time: 16 }, Resolution { n_space: 32, n_time: 32 }],
            drift: DriftSpec::sine(1.0, 1.0),
            coupling: Coupling::Schemes { first: SchemeKind::SemiImplicit, second: SchemeKind::SemiImplicit },
            probes: ProbeLattice::default(),
            contraction: 1.3,
        };
        let rep = uniqueness_coupling(&Sequential, &cfg).unwrap();
        assert!(rep.distance.quantiles.iter().all(|q| q.value == 0.0));
        assert!(rep.pass);
    }

    #[test]
    fn refinement_chain_is_checked() {
        let bad = [Resolution { n_space: 16, n_time: 16 }, Resolution { n_space: 32, n_time: 16 }];
        assert!(check_refinement_chain(&bad).is_err());
    }
}
