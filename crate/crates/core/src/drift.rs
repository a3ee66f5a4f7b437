//! Drift specifications and their Gaussian mollifications `b^n = G_{1/n} b`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::quad;

/// Anything that can be evaluated as a drift `u -> b(u)`.
pub trait DriftEval: Send + Sync {
    fn eval(&self, u: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Send + Sync> DriftEval for F {
    fn eval(&self, u: f64) -> f64 {
        self(u)
    }
}

/// `|b|`, as used by the random control.
pub struct AbsDrift<'a>(pub &'a dyn DriftEval);

impl DriftEval for AbsDrift<'_> {
    fn eval(&self, u: f64) -> f64 {
        self.0.eval(u).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClosedForm {
    Constant { value: f64 },
    Sine { amplitude: f64, frequency: f64 },
    Linear { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BoundedForm {
    /// `sign(u)`, zero at the origin.
    Sign,
    /// Indicator of `[lo, hi)`.
    Indicator { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftForm {
    ClosedForm(ClosedForm),
    /// `|u|^{-exponent}` on `|u| <= radius`, zero outside.
    PowerSingularity { exponent: f64, radius: f64 },
    BoundedMeasurable(BoundedForm),
    /// `sum_j weights[j] * delta_{locations[j]}`.
    AtomicMeasure { locations: Vec<f64>, weights: Vec<f64> },
}

/// Declared regularity `b in B^beta_q`; `q = inf` means the Hölder-Zygmund scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub beta: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub form: DriftForm,
    pub declared: Regularity,
}

/// Width of the cell used when the raw power singularity is evaluated at the
/// singular point.
pub const SINGULAR_CELL: f64 = 1e-9;

impl DriftSpec {
    pub fn new(form: DriftForm, declared: Regularity) -> Result<Self> {
        let spec = DriftSpec { form, declared };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.declared.q;
        if !(q >= 1.0) {
            return Err(Error::Invalid(format!("integrability q must be >= 1, got {q}")));
        }
        match &self.form {
            DriftForm::PowerSingularity { exponent, radius } => {
                if !(*exponent > 0.0 && *exponent < 1.0) {
                    return Err(Error::Invalid(format!(
                        "power singularity exponent must lie in (0, 1) to be locally integrable, got {exponent}"
                    )));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Invalid(format!("support radius must be positive, got {radius}")));
                }
                if q * exponent >= 1.0 {
                    return Err(Error::Invalid(format!(
                        "|u|^-{exponent} is not in L_{q}; need q < {}",
                        1.0 / exponent
                    )));
                }
            }
            DriftForm::AtomicMeasure { locations, weights } => {
                if locations.is_empty() || locations.len() != weights.len() {
                    return Err(Error::Invalid("atomic measure needs matching, nonempty locations and weights".into()));
                }
                let limit = -1.0 + 1.0 / q;
                if self.declared.beta > limit + 1e-12 {
                    return Err(Error::Invalid(format!(
                        "a measure lies in B^beta_q only for beta <= -1 + 1/q = {limit}"
                    )));
                }
            }
            DriftForm::BoundedMeasurable(BoundedForm::Indicator { lo, hi }) if !(lo < hi) => {
                return Err(Error::Invalid(format!("indicator needs lo < hi, got [{lo}, {hi})")));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn constant(value: f64) -> Self {
        DriftSpec {
            form: DriftForm::ClosedForm(ClosedForm::Constant { value }),
            declared: Regularity { beta: 1.0, q: f64::INFINITY },
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        DriftSpec {
            form: DriftForm::ClosedForm(ClosedForm::Sine { amplitude, frequency }),
            declared: Regularity { beta: 1.0, q: f64::INFINITY },
        }
    }

    pub fn linear(slope: f64) -> Self {
        DriftSpec {
            form: DriftForm::ClosedForm(ClosedForm::Linear { slope }),
            declared: Regularity { beta: 1.0, q: f64::INFINITY },
        }
    }

    pub fn sign() -> Self {
        DriftSpec {
            form: DriftForm::BoundedMeasurable(BoundedForm::Sign),
            declared: Regularity { beta: 0.0, q: f64::INFINITY },
        }
    }

    /// `|u|^{-exponent}` on `[-radius, radius]`, declared in `L_p`.
    pub fn power(exponent: f64, radius: f64, p: f64) -> Result<Self> {
        Self::new(
            DriftForm::PowerSingularity { exponent, radius },
            Regularity { beta: 0.0, q: p },
        )
    }

    /// `weight * delta_0`, declared in `C^{-1}`.
    pub fn dirac(weight: f64) -> Self {
        DriftSpec {
            form: DriftForm::AtomicMeasure { locations: vec![0.0], weights: vec![weight] },
            declared: Regularity { beta: -1.0, q: f64::INFINITY },
        }
    }

    pub fn is_measure(&self) -> bool {
        matches!(self.form, DriftForm::AtomicMeasure { .. })
    }

    /// Pointwise value of a function-type drift; `None` for measures.
    pub fn eval(&self, u: f64) -> Option<f64> {
        Some(match &self.form {
            DriftForm::ClosedForm(c) => closed_form(c, u),
            DriftForm::BoundedMeasurable(b) => bounded_form(b, u),
            DriftForm::PowerSingularity { exponent, radius } => {
                let a = u.abs();
                if a > *radius {
                    0.0
                } else if a < 0.5 * SINGULAR_CELL {
                    (0.5 * SINGULAR_CELL).powf(-exponent) / (1.0 - exponent)
                } else {
                    a.powf(-exponent)
                }
            }
            DriftForm::AtomicMeasure { .. } => return None,
        })
    }

    /// Mean over the cell `[u - h/2, u + h/2]`. Only the power singularity is
    /// averaged exactly; the other function forms return the point value.
    pub fn cell_average(&self, u: f64, h: f64) -> Option<f64> {
        match &self.form {
            DriftForm::PowerSingularity { exponent, radius } if h > 0.0 => {
                let g = 1.0 - exponent;
                let prim = |v: f64| v.signum() * v.abs().min(*radius).powf(g) / g;
                Some((prim(u + 0.5 * h) - prim(u - 0.5 * h)) / h)
            }
            _ => self.eval(u),
        }
    }

    /// `L_p` norm for the forms where it is finite and known in closed form.
    pub fn lp_norm(&self, p: f64) -> Option<f64> {
        match &self.form {
            DriftForm::PowerSingularity { exponent, radius } => {
                let e = 1.0 - exponent * p;
                if e <= 0.0 || p.is_infinite() {
                    None
                } else {
                    Some((2.0 * radius.powf(e) / e).powf(1.0 / p))
                }
            }
            DriftForm::BoundedMeasurable(BoundedForm::Indicator { lo, hi }) => {
                Some(if p.is_infinite() { 1.0 } else { (hi - lo).powf(1.0 / p) })
            }
            _ => None,
        }
    }

    /// The declared integrability used by the regularity law.
    pub fn integrability(&self) -> f64 {
        self.declared.q
    }
}

fn closed_form(c: &ClosedForm, u: f64) -> f64 {
    match c {
        ClosedForm::Constant { value } => *value,
        ClosedForm::Sine { amplitude, frequency } => amplitude * (frequency * u).sin(),
        ClosedForm::Linear { slope } => slope * u,
    }
}

fn bounded_form(b: &BoundedForm, u: f64) -> f64 {
    match b {
        BoundedForm::Sign => {
            if u > 0.0 {
                1.0
            } else if u < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        BoundedForm::Indicator { lo, hi } => {
            if *lo <= u && u < *hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn gauss(eps: f64, x: f64) -> f64 {
    (-x * x / (2.0 * eps)).exp() / (2.0 * PI * eps).sqrt()
}

/// `G_eps` of `|.|^{-gamma} 1_{[-R, R]}` at `u`. The substitution
/// `s = z^{1-gamma}` removes the singularity at the origin.
fn mollified_power(gamma: f64, radius: f64, eps: f64, u: f64) -> f64 {
    let a = u.abs();
    let sd = eps.sqrt();
    let reach = 12.0 * sd;
    let pow = 1.0 / (1.0 - gamma);
    let h = |s: f64| {
        let z = s.powf(pow);
        gauss(eps, a - z) + gauss(eps, a + z)
    };
    let to_s = |z: f64| z.clamp(0.0, radius).powf(1.0 - gamma);
    let mut breaks: Vec<f64> = vec![0.0, to_s(reach)];
    if a + reach > 0.0 && a - reach < radius {
        for k in -4..=4 {
            breaks.push(to_s(a + k as f64 * 3.0 * sd));
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup();
    let scale = gauss(eps, 0.0).max(1.0);
    quad::integrate_pieces(h, &breaks, 1e-14 * scale) / (1.0 - gamma)
}

/// `G_eps b` for a drift spec.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedDrift {
    pub base: DriftSpec,
    /// Gaussian variance `eps = 1/n`.
    pub epsilon: f64,
}

/// `b^n = G_{1/n} b`.
pub fn mollify(spec: &DriftSpec, n: u64) -> Result<MollifiedDrift> {
    if n == 0 {
        return Err(Error::Domain("mollification level must be >= 1".into()));
    }
    MollifiedDrift::with_scale(spec, 1.0 / n as f64)
}

impl MollifiedDrift {
    pub fn with_scale(spec: &DriftSpec, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("mollification scale must be positive, got {epsilon}")));
        }
        spec.validate()?;
        Ok(MollifiedDrift { base: spec.clone(), epsilon })
    }

    /// Mollification level `n = 1/eps`.
    pub fn level(&self) -> f64 {
        1.0 / self.epsilon
    }

    pub fn value(&self, u: f64) -> f64 {
        let eps = self.epsilon;
        match &self.base.form {
            DriftForm::ClosedForm(ClosedForm::Constant { value }) => *value,
            DriftForm::ClosedForm(c) => quad::gaussian_smooth(|v| closed_form(c, v), eps, u),
            DriftForm::BoundedMeasurable(BoundedForm::Sign) => erf(u / (2.0 * eps).sqrt()),
            DriftForm::BoundedMeasurable(BoundedForm::Indicator { lo, hi }) => {
                let s = eps.sqrt();
                normal_cdf((hi - u) / s) - normal_cdf((lo - u) / s)
            }
            DriftForm::PowerSingularity { exponent, radius } => mollified_power(*exponent, *radius, eps, u),
            DriftForm::AtomicMeasure { locations, weights } => {
                locations.iter().zip(weights).map(|(z, w)| w * gauss(eps, u - z)).sum()
            }
        }
    }

    /// Bounded for every finite level; this is the sup over the real line.
    pub fn sup_bound(&self) -> f64 {
        match &self.base.form {
            DriftForm::ClosedForm(ClosedForm::Constant { value }) => value.abs(),
            DriftForm::ClosedForm(ClosedForm::Sine { amplitude, .. }) => amplitude.abs(),
            DriftForm::ClosedForm(ClosedForm::Linear { .. }) => f64::INFINITY,
            DriftForm::BoundedMeasurable(_) => 1.0,
            DriftForm::PowerSingularity { .. } => self.value(0.0),
            DriftForm::AtomicMeasure { weights, .. } => {
                weights.iter().map(|w| w.abs()).sum::<f64>() * gauss(self.epsilon, 0.0)
            }
        }
    }

    /// Dense interpolation table over `[lo, hi]`, falling back to direct
    /// evaluation outside. Solvers evaluate the drift millions of times, and
    /// the quadrature-based forms are too slow for that.
    pub fn tabulate(&self, lo: f64, hi: f64) -> TabulatedDrift {
        let needs_table = !matches!(
            self.base.form,
            DriftForm::ClosedForm(ClosedForm::Constant { .. })
                | DriftForm::BoundedMeasurable(_)
                | DriftForm::AtomicMeasure { .. }
        );
        if !needs_table {
            return TabulatedDrift { direct: Arc::new(self.clone()), lo, h: 0.0, values: Vec::new() };
        }
        let h = (self.epsilon.sqrt() / 16.0).min(1.0 / 64.0);
        let n = ((hi - lo) / h).ceil() as usize + 1;
        let values = (0..n).map(|i| self.value(lo + i as f64 * h)).collect();
        TabulatedDrift { direct: Arc::new(self.clone()), lo, h, values }
    }

    /// Default table range for solver use.
    pub fn tabulate_default(&self) -> TabulatedDrift {
        self.tabulate(-16.0, 16.0)
    }
}

impl DriftEval for MollifiedDrift {
    fn eval(&self, u: f64) -> f64 {
        self.value(u)
    }
}

/// Four-point Lagrange interpolation on a uniform table.
#[derive(Debug, Clone)]
pub struct TabulatedDrift {
    direct: Arc<MollifiedDrift>,
    lo: f64,
    h: f64,
    values: Vec<f64>,
}

impl TabulatedDrift {
    pub fn source(&self) -> &MollifiedDrift {
        &self.direct
    }
}

impl DriftEval for TabulatedDrift {
    fn eval(&self, u: f64) -> f64 {
        if self.values.len() < 4 {
            return self.direct.value(u);
        }
        let r = (u - self.lo) / self.h;
        let i = r.floor();
        if !(i >= 1.0 && (i as usize) + 2 < self.values.len()) {
            return self.direct.value(u);
        }
        let i = i as usize;
        let t = r - i as f64;
        let (f0, f1, f2, f3) = (self.values[i - 1], self.values[i], self.values[i + 1], self.values[i + 2]);
        let tm1 = t - 1.0;
        let tm2 = t - 2.0;
        let tp1 = t + 1.0;
        -f0 * t * tm1 * tm2 / 6.0 + f1 * tp1 * tm1 * tm2 / 2.0 - f2 * tp1 * t * tm2 / 2.0
            + f3 * tp1 * t * tm1 / 6.0
    }
}

/// `G_eps f` of an arbitrary drift evaluator, by Gauss-Hermite quadrature.
pub struct Smoothed<'a> {
    pub inner: &'a dyn DriftEval,
    pub epsilon: f64,
}

impl DriftEval for Smoothed<'_> {
    fn eval(&self, u: f64) -> f64 {
        quad::gaussian_smooth(|v| self.inner.eval(v), self.epsilon, u)
    }
}

/// Evaluates a drift on a field, failing on non-finite output.
pub fn eval_field(drift: &dyn DriftEval, u: &[f64], out: &mut [f64]) -> bool {
    let mut ok = true;
    for (o, &x) in out.iter_mut().zip(u) {
        *o = drift.eval(x);
        ok &= o.is_finite();
    }
    ok
}
