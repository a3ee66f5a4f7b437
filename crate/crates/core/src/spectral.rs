//! Real orthonormal eigenbases of the discrete heat semigroup.
//!
//! Periodic and whole-line grids use the discrete Fourier basis (cos/sin pairs
//! in index space), Neumann grids the discrete cosine basis on the nodes with
//! trapezoid weights. Coefficients are taken with respect to the grid inner
//! product `sum_i w_i f_i g_i`, so `forward` followed by `inverse` is the
//! identity and Parseval holds with the grid weights.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::grid::{DomainKind, Grid1D};

#[derive(Clone)]
pub struct SpectralBasis {
    grid: Grid1D,
    eigen: Arc<[f64]>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralBasis").field("grid", &self.grid).finish()
    }
}

impl SpectralBasis {
    pub fn new(grid: &Grid1D) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_space;
        let (len, eigen): (usize, Vec<f64>) = match grid.kind() {
            DomainKind::NeumannUnit => {
                let eig = (0..=n).map(|k| 0.5 * (PI * k as f64).powi(2)).collect();
                (2 * n, eig)
            }
            _ => {
                let width = grid.setup.extent();
                let eig = (0..n)
                    .map(|idx| {
                        let k = mode_of_index(idx, n);
                        0.5 * (2.0 * PI * k as f64 / width).powi(2)
                    })
                    .collect();
                (n, eig)
            }
        };
        SpectralBasis {
            grid: *grid,
            eigen: eigen.into(),
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.eigen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigen.is_empty()
    }

    /// Eigenvalue of `-1/2 d^2/dx^2` for each coefficient index.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen
    }

    /// Wavenumber `k` (number of oscillations over the domain) carried by a
    /// coefficient index.
    pub fn wavenumber(&self, idx: usize) -> usize {
        match self.grid.kind() {
            DomainKind::NeumannUnit => idx,
            _ => mode_of_index(idx, self.grid.n_space),
        }
    }

    /// Coefficients `c_k = <f, e_k>` in the orthonormal basis.
    pub fn forward(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.forward_into(f, &mut out);
        out
    }

    pub fn forward_into(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.grid.n_points());
        let n = self.grid.n_space;
        let dx = self.grid.dx;
        match self.grid.kind() {
            DomainKind::NeumannUnit => {
                let mut buf = even_extension(f);
                self.fwd.process(&mut buf);
                let s2 = std::f64::consts::SQRT_2;
                for k in 0..=n {
                    let base = 0.5 * dx * buf[k].re;
                    out[k] = if k == 0 || k == n { base } else { s2 * base };
                }
            }
            _ => {
                let width = self.grid.setup.extent();
                let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.fwd.process(&mut buf);
                let a0 = dx / width.sqrt();
                let ak = dx * (2.0 / width).sqrt();
                out[0] = a0 * buf[0].re;
                for k in 1..n.div_ceil(2) {
                    out[2 * k - 1] = ak * buf[k].re;
                    out[2 * k] = -ak * buf[k].im;
                }
                if n % 2 == 0 {
                    out[n - 1] = a0 * buf[n / 2].re;
                }
            }
        }
    }

    /// Field with the given basis coefficients.
    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_points()];
        self.inverse_into(c, &mut out);
        out
    }

    pub fn inverse_into(&self, c: &[f64], out: &mut [f64]) {
        debug_assert_eq!(c.len(), self.len());
        let n = self.grid.n_space;
        match self.grid.kind() {
            DomainKind::NeumannUnit => {
                let s2 = std::f64::consts::FRAC_1_SQRT_2;
                let d: Vec<f64> = (0..=n)
                    .map(|k| if k == 0 || k == n { c[k] } else { s2 * c[k] })
                    .collect();
                let mut buf = even_extension(&d);
                // DCT-I is symmetric, so the forward transform inverts it up to scale.
                self.fwd.process(&mut buf);
                for (o, b) in out.iter_mut().zip(&buf[..=n]) {
                    *o = b.re;
                }
            }
            _ => {
                let width = self.grid.setup.extent();
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                buf[0] = Complex64::new(c[0] / width.sqrt(), 0.0);
                let s = 1.0 / (2.0 * width).sqrt();
                for k in 1..n.div_ceil(2) {
                    let y = Complex64::new(c[2 * k - 1] * s, -c[2 * k] * s);
                    buf[k] = y;
                    buf[n - k] = y.conj();
                }
                if n % 2 == 0 {
                    buf[n / 2] = Complex64::new(c[n - 1] / width.sqrt(), 0.0);
                }
                self.inv.process(&mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o = b.re;
                }
            }
        }
    }

    /// Applies `exp(-lambda_k t)` in coefficient space.
    pub fn apply_heat(&self, f: &[f64], t: f64) -> Vec<f64> {
        let mut c = self.forward(f);
        for (ck, lam) in c.iter_mut().zip(self.eigen.iter()) {
            *ck *= (-lam * t).exp();
        }
        self.inverse(&c)
    }

    /// Value of basis function `idx` at grid node `i`.
    pub fn basis_value(&self, idx: usize, i: usize) -> f64 {
        let n = self.grid.n_space;
        match self.grid.kind() {
            DomainKind::NeumannUnit => {
                let c = (PI * (idx * i) as f64 / n as f64).cos();
                if idx == 0 || idx == n {
                    c
                } else {
                    std::f64::consts::SQRT_2 * c
                }
            }
            _ => {
                let width = self.grid.setup.extent();
                if idx == 0 {
                    return 1.0 / width.sqrt();
                }
                if n % 2 == 0 && idx == n - 1 {
                    return if i % 2 == 0 { 1.0 } else { -1.0 } / width.sqrt();
                }
                let k = idx.div_ceil(2);
                let theta = 2.0 * PI * (k * i) as f64 / n as f64;
                let amp = (2.0 / width).sqrt();
                if idx % 2 == 1 {
                    amp * theta.cos()
                } else {
                    amp * theta.sin()
                }
            }
        }
    }

    pub fn check(&self, f: &[f64]) -> Result<()> {
        self.grid.check_field(f)
    }
}

fn mode_of_index(idx: usize, n: usize) -> usize {
    if n % 2 == 0 && idx == n - 1 {
        n / 2
    } else {
        idx.div_ceil(2)
    }
}

fn even_extension(f: &[f64]) -> Vec<Complex64> {
    let n = f.len() - 1;
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
    for (j, &v) in f.iter().enumerate() {
        buf[j].re = v;
        if j > 0 && j < n {
            buf[2 * n - j].re = v;
        }
    }
    buf
}
