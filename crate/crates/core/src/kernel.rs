//! Heat kernels on the line, the periodic interval and the Neumann interval,
//! and the semigroup `P_t` they generate on gridded fields.
//!
//! All kernels are for the generator `1/2 d^2/dx^2`, so the Gaussian has
//! variance `t`. Image sums are truncated once the discarded Gaussian images
//! fall below the truncation tolerance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Result};
use crate::grid::{DomainKind, DomainSetup, Grid1D};
use crate::spectral::SpectralBasis;

pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-14;

/// Image-sum truncation for one kernel time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub t: f64,
    pub truncation_tol: f64,
    /// Images `|n| <= n_images` (in units of the period) are summed.
    pub n_images: i64,
}

impl KernelEval {
    pub fn new(t: f64, truncation_tol: f64) -> Result<Self> {
        Self::with_period(t, truncation_tol, 1.0)
    }

    /// Truncation for images spaced `period` apart.
    pub fn with_period(t: f64, truncation_tol: f64, period: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return domain(format!("kernel time must be positive, got {t}"));
        }
        if !(truncation_tol > 0.0 && truncation_tol < 1.0) {
            return domain(format!("truncation tolerance must lie in (0, 1), got {truncation_tol}"));
        }
        let reach = (2.0 * t * (1.0 / truncation_tol).ln()).sqrt();
        let n_images = (reach / period).ceil() as i64 + 1;
        Ok(KernelEval { t, truncation_tol, n_images })
    }
}

fn gauss(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// The Gaussian heat kernel `g_t(x)`.
pub fn gaussian_kernel(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("gaussian kernel needs t > 0, got {t}"));
    }
    Ok(gauss(t, x))
}

/// Periodic kernel on a circle of circumference `width`.
pub fn torus_kernel(t: f64, x: f64, y: f64, width: f64) -> Result<f64> {
    let ke = KernelEval::with_period(t, DEFAULT_TRUNCATION_TOL, width)?;
    Ok(torus_sum(&ke, x - y, width))
}

fn torus_sum(ke: &KernelEval, d: f64, width: f64) -> f64 {
    // Center the displacement so the image range is symmetric.
    let d = d - width * (d / width).round();
    (-ke.n_images..=ke.n_images)
        .map(|n| gauss(ke.t, d + n as f64 * width))
        .sum()
}

/// `p^per_t(x, y)` on the unit circle.
pub fn periodic_kernel(t: f64, x: f64, y: f64) -> Result<f64> {
    torus_kernel(t, x, y, 1.0)
}

/// `p^Neu_t(x, y)` on `[0, 1]`: direct and reflected images.
pub fn neumann_kernel(t: f64, x: f64, y: f64) -> Result<f64> {
    let ke = KernelEval::with_period(t, DEFAULT_TRUNCATION_TOL, 2.0)?;
    let m = ke.n_images + 1;
    Ok((-m..=m)
        .map(|n| {
            let s = 2.0 * n as f64;
            gauss(t, x - y + s) + gauss(t, x + y + s)
        })
        .sum())
}

/// Kernel of the semigroup for a given setup (the whole line uses its torus).
pub fn domain_kernel(setup: &DomainSetup, t: f64, x: f64, y: f64) -> Result<f64> {
    match setup.kind {
        DomainKind::NeumannUnit => neumann_kernel(t, x, y),
        _ => torus_kernel(t, x, y, setup.extent()),
    }
}

/// Standard normal mass of `[a, b]`, accurate in both tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a * r) - erfc(b * r))
    } else if b <= 0.0 {
        0.5 * (erfc(-b * r) - erfc(-a * r))
    } else {
        1.0 - 0.5 * (erfc(-a * r) + erfc(b * r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Spectral,
    KernelMatrix,
}

/// `P_t` on a grid.
#[derive(Debug, Clone)]
pub struct SemigroupOperator {
    pub grid: Grid1D,
    pub t: f64,
    pub representation: Representation,
    basis: SpectralBasis,
}

impl SemigroupOperator {
    pub fn new(grid: &Grid1D, t: f64, representation: Representation) -> Result<Self> {
        Self::with_basis(SpectralBasis::new(grid), t, representation)
    }

    pub fn with_basis(basis: SpectralBasis, t: f64, representation: Representation) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return domain(format!("semigroup time must be nonnegative, got {t}"));
        }
        Ok(SemigroupOperator { grid: *basis.grid(), t, representation, basis })
    }

    /// Uses the cell-integrated kernel matrix below `dx^2`.
    pub fn small_time(&self) -> bool {
        self.t < self.grid.dx * self.grid.dx
    }

    /// Dense transition matrix `M[i][j]`, so that `(P_t f)_i = sum_j M[i][j] f_j`.
    ///
    /// For `t >= dx^2` the kernel is sampled at the nodes and weighted by the
    /// node weights; for smaller `t` each entry is the exact kernel mass of
    /// the cell around node `j`.
    pub fn kernel_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let g = &self.grid;
        let n = g.n_points();
        if self.t == 0.0 {
            return Ok((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect());
        }
        let xs = g.nodes();
        let w = g.weights();
        if !self.small_time() {
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    m[i][j] = domain_kernel(&g.setup, self.t, xs[i], xs[j])? * w[j];
                }
            }
            return Ok(m);
        }
        let st = self.t.sqrt();
        let mut m = vec![vec![0.0; n]; n];
        match g.kind() {
            DomainKind::NeumannUnit => {
                let ke = KernelEval::with_period(self.t, DEFAULT_TRUNCATION_TOL, 2.0)?;
                let r = ke.n_images + 1;
                for i in 0..n {
                    let x = xs[i];
                    for j in 0..n {
                        let a = (xs[j] - 0.5 * g.dx).max(0.0);
                        let b = (xs[j] + 0.5 * g.dx).min(1.0);
                        let mut acc = 0.0;
                        for k in -r..=r {
                            let s = 2.0 * k as f64;
                            acc += normal_mass((x + s - b) / st, (x + s - a) / st);
                            acc += normal_mass((x + a + s) / st, (x + b + s) / st);
                        }
                        m[i][j] = acc;
                    }
                }
            }
            _ => {
                let width = g.setup.extent();
                let ke = KernelEval::with_period(self.t, DEFAULT_TRUNCATION_TOL, width)?;
                let r = ke.n_images + 1;
                for i in 0..n {
                    for j in 0..n {
                        let mut d = xs[j] - xs[i];
                        d -= width * (d / width).round();
                        let mut acc = 0.0;
                        for k in -r..=r {
                            let c = d + k as f64 * width;
                            acc += normal_mass((c - 0.5 * g.dx) / st, (c + 0.5 * g.dx) / st);
                        }
                        m[i][j] = acc;
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
}

/// Applies `P_t` to a gridded field.
///
/// `t = 0` is the identity. The spectral path multiplies the eigen-coefficients
/// by `exp(-lambda_k t)`; the kernel-matrix path, and every application with
/// `t < dx^2`, goes through [`SemigroupOperator::kernel_matrix`].
pub fn apply_semigroup(op: &SemigroupOperator, f: &[f64]) -> Result<Vec<f64>> {
    op.grid.check_field(f)?;
    if op.t == 0.0 {
        return Ok(f.to_vec());
    }
    if op.representation == Representation::Spectral && !op.small_time() {
        return Ok(op.basis.apply_heat(f, op.t));
    }
    let m = op.kernel_matrix()?;
    Ok(m.iter().map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum()).collect())
}

/// Spectral `P_t f` with a prebuilt basis; the hot path used by the solvers.
pub fn heat_spectral(basis: &SpectralBasis, f: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        return f.to_vec();
    }
    basis.apply_heat(f, t)
}
