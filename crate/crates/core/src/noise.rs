//! Discrete space-time white noise and the stochastic convolution
//! `V_t(x) = int_0^t int_D p_{t-r}(x, y) W(dr, dy)`.
//!
//! A realization stores the white-noise mass of every (time slice, cell)
//! pair, i.e. `W([t_m, t_{m+1}] x cell_i)`, which is `N(0, dt * w_i)`. The
//! stochastic convolution is advanced mode by mode as an exact
//! Ornstein-Uhlenbeck recursion. Because the exact update needs the
//! time-weighted integral of each mode over a slice and not just its
//! increment, every realization also carries an independent auxiliary noise
//! array of the same law; it supplies the part of the weighted integral that
//! is conditionally independent of the increment.

use std::sync::Arc;

use crate::error::{domain, Result};
use crate::grid::{DomainKind, Grid1D, TimeGrid};
use crate::rng::{normal_row, TAG_AUXILIARY, TAG_INCREMENTS, TAG_SPLIT};
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub master_seed: u64,
    pub realization_index: u64,
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    /// `increments[m][i] = W([t_m, t_{m+1}] x cell_i)`.
    pub increments: Vec<Vec<f64>>,
    /// Independent copy with the same law, used by the exact mode update.
    pub auxiliary: Vec<Vec<f64>>,
    zero: bool,
}

fn scaled_rows(grid: &Grid1D, tgrid: &TimeGrid, seed: u64, index: u64, tag: u64) -> Vec<Vec<f64>> {
    let sd: Vec<f64> = grid.weights().iter().map(|w| (tgrid.dt * w).sqrt()).collect();
    (0..tgrid.n_time)
        .map(|m| {
            let mut row = normal_row(seed, index, tag, m as u64, grid.n_points());
            for (z, s) in row.iter_mut().zip(&sd) {
                *z *= s;
            }
            row
        })
        .collect()
}

/// Draws the noise of realization `index` under `seed`.
pub fn sample_noise(grid: &Grid1D, tgrid: &TimeGrid, seed: u64, index: u64) -> NoiseRealization {
    NoiseRealization {
        master_seed: seed,
        realization_index: index,
        grid: *grid,
        tgrid: *tgrid,
        increments: scaled_rows(grid, tgrid, seed, index, TAG_INCREMENTS),
        auxiliary: scaled_rows(grid, tgrid, seed, index, TAG_AUXILIARY),
        zero: false,
    }
}

impl NoiseRealization {
    /// The noiseless realization, for deterministic runs.
    pub fn zeros(grid: &Grid1D, tgrid: &TimeGrid) -> Self {
        let rows = vec![vec![0.0; grid.n_points()]; tgrid.n_time];
        NoiseRealization {
            master_seed: 0,
            realization_index: 0,
            grid: *grid,
            tgrid: *tgrid,
            increments: rows.clone(),
            auxiliary: rows,
            zero: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Aggregates onto a grid with half the cells and/or half the steps.
    ///
    /// Time coarsening sums consecutive slices. Periodic cells merge in pairs;
    /// on the Neumann node grid every odd fine cell straddles two coarse cells,
    /// so its mass is split into two independent halves using an extra keyed
    /// draw, which keeps the coarse array exact in law.
    pub fn coarsen(&self, halve_time: bool, halve_space: bool) -> Result<NoiseRealization> {
        let grid = if halve_space { self.grid.coarsened()? } else { self.grid };
        let tgrid = if halve_time { self.tgrid.coarsened()? } else { self.tgrid };
        let coarsen_array = |rows: &[Vec<f64>], salt: u64| -> Vec<Vec<f64>> {
            let spatial: Vec<Vec<f64>> = if halve_space {
                rows.iter()
                    .enumerate()
                    .map(|(m, row)| self.coarsen_row(row, m as u64, salt))
                    .collect()
            } else {
                rows.to_vec()
            };
            if halve_time {
                spatial
                    .chunks(2)
                    .map(|pair| pair[0].iter().zip(&pair[1]).map(|(a, b)| a + b).collect())
                    .collect()
            } else {
                spatial
            }
        };
        Ok(NoiseRealization {
            master_seed: self.master_seed,
            realization_index: self.realization_index,
            grid,
            tgrid,
            increments: coarsen_array(&self.increments, 0),
            auxiliary: coarsen_array(&self.auxiliary, 1),
            zero: self.zero,
        })
    }

    fn coarsen_row(&self, row: &[f64], m: u64, salt: u64) -> Vec<f64> {
        let n = self.grid.n_space;
        match self.grid.kind() {
            DomainKind::NeumannUnit => {
                let tag = TAG_SPLIT ^ ((n as u64) << 8) ^ (salt << 40);
                let z = if self.zero {
                    vec![0.0; n]
                } else {
                    normal_row(self.master_seed, self.realization_index, tag, m, n)
                };
                let mut out = vec![0.0; n / 2 + 1];
                for (j, &xi) in row.iter().enumerate() {
                    if j % 2 == 0 {
                        out[j / 2] += xi;
                    } else {
                        let half_sd = 0.5 * (self.tgrid.dt * self.grid.weight(j)).sqrt();
                        let split = half_sd * z[j];
                        out[(j - 1) / 2] += 0.5 * xi + split;
                        out[(j + 1) / 2] += 0.5 * xi - split;
                    }
                }
                out
            }
            _ => row.chunks(2).map(|c| c.iter().sum()).collect(),
        }
    }

    /// Gridded white-noise density of slice `m` (mass divided by cell weight).
    pub fn density_row(&self, m: usize) -> Vec<f64> {
        self.increments[m].iter().enumerate().map(|(i, x)| x / self.grid.weight(i)).collect()
    }

    /// `W_t(phi)` along the whole time grid: entry `m` is `sum_{l<m} sum_i xi_{l,i} phi(x_i)`.
    pub fn pair_path(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tgrid.n_time + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for row in &self.increments {
            acc += row.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
            out.push(acc);
        }
        out
    }
}

/// `W_t(phi)` for a test function. Off-grid times are snapped down to the
/// grid; the returned flag reports the snap.
pub fn pair_with_test(noise: &NoiseRealization, phi: impl Fn(f64) -> f64, t: f64) -> Result<(f64, bool)> {
    if !(0.0..=noise.tgrid.horizon + 1e-12).contains(&t) {
        return domain(format!("time {t} outside [0, {}]", noise.tgrid.horizon));
    }
    let (m, snapped) = match noise.tgrid.step_of(t) {
        Some(m) => (m, false),
        None => (noise.tgrid.floor_step(t), true),
    };
    let values: Vec<f64> = noise.grid.nodes().into_iter().map(phi).collect();
    let total = noise.increments[..m]
        .iter()
        .map(|row| row.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok((total, snapped))
}

/// Per-mode coefficients of the exact Ornstein-Uhlenbeck update
/// `v <- decay * v + gain * dW + aux_gain * dW_aux`.
#[derive(Debug, Clone)]
struct ModeUpdate {
    decay: Vec<f64>,
    gain: Vec<f64>,
    aux_gain: Vec<f64>,
}

impl ModeUpdate {
    fn new(eigen: &[f64], dt: f64) -> Self {
        let mut decay = Vec::with_capacity(eigen.len());
        let mut gain = Vec::with_capacity(eigen.len());
        let mut aux_gain = Vec::with_capacity(eigen.len());
        for &lam in eigen {
            let x = lam * dt;
            decay.push((-x).exp());
            if x == 0.0 {
                gain.push(1.0);
                aux_gain.push(0.0);
                continue;
            }
            // Covariance of the weighted integral with the increment, over dt.
            let a = -(-x).exp_m1() / x;
            // Conditional variance of the weighted integral, over dt.
            let c2 = if x < 1e-4 {
                x * x / 12.0 - x * x * x / 12.0
            } else {
                -(-2.0 * x).exp_m1() / (2.0 * x) - a * a
            };
            gain.push(a);
            aux_gain.push(c2.max(0.0).sqrt());
        }
        ModeUpdate { decay, gain, aux_gain }
    }
}

/// Closed-form variance `rho_t(x)` of the (grid) stochastic convolution.
#[derive(Debug, Clone)]
pub struct ConvolutionLaw {
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    basis: SpectralBasis,
    update: Arc<ModeUpdate>,
    /// `rho[m][i] = Var(V_{t_m}(x_i))`.
    pub rho: Arc<Vec<Vec<f64>>>,
}

/// Variance of one mode at time `t`: `(1 - e^{-2 lambda t}) / (2 lambda)`, or `t` for `lambda = 0`.
pub fn mode_variance(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
    }
}

impl ConvolutionLaw {
    pub fn new(grid: &Grid1D, tgrid: &TimeGrid) -> Self {
        let basis = SpectralBasis::new(grid);
        let update = Arc::new(ModeUpdate::new(basis.eigenvalues(), tgrid.dt));
        let np = grid.n_points();
        let sq: Vec<Vec<f64>> = (0..basis.len())
            .map(|k| (0..np).map(|i| basis.basis_value(k, i).powi(2)).collect())
            .collect();
        let rho = (0..=tgrid.n_time)
            .map(|m| {
                let t = tgrid.time(m);
                let mut row = vec![0.0; np];
                for (k, lam) in basis.eigenvalues().iter().enumerate() {
                    let var = mode_variance(*lam, t);
                    for (r, s) in row.iter_mut().zip(&sq[k]) {
                        *r += var * s;
                    }
                }
                row
            })
            .collect();
        ConvolutionLaw { grid: *grid, tgrid: *tgrid, basis, update, rho: Arc::new(rho) }
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
}

#[derive(Debug, Clone)]
pub struct StochasticConvolution {
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    /// `values[m][i] = V_{t_m}(x_i)`; row 0 is zero.
    pub values: Vec<Vec<f64>>,
    pub rho: Arc<Vec<Vec<f64>>>,
}

/// Exact-in-law stochastic convolution driven by `noise`.
pub fn simulate_convolution(noise: &NoiseRealization) -> StochasticConvolution {
    let law = ConvolutionLaw::new(&noise.grid, &noise.tgrid);
    simulate_convolution_with(noise, &law)
}

/// Same as [`simulate_convolution`] with a precomputed law, for ensembles.
pub fn simulate_convolution_with(noise: &NoiseRealization, law: &ConvolutionLaw) -> StochasticConvolution {
    let mut stepper = ConvolutionStepper::new(law);
    let mut values = Vec::with_capacity(noise.tgrid.n_time + 1);
    values.push(vec![0.0; noise.grid.n_points()]);
    for m in 0..noise.tgrid.n_time {
        values.push(stepper.advance(noise, m).to_vec());
    }
    StochasticConvolution { grid: noise.grid, tgrid: noise.tgrid, values, rho: law.rho.clone() }
}

/// Advances `V` one slice at a time; used by the solvers so that `u` and `V`
/// are built from the same noise in a single pass.
pub struct ConvolutionStepper<'a> {
    law: &'a ConvolutionLaw,
    modes: Vec<f64>,
    field: Vec<f64>,
    dens: Vec<f64>,
    dw: Vec<f64>,
    daux: Vec<f64>,
    inv_w: Vec<f64>,
}

impl<'a> ConvolutionStepper<'a> {
    pub fn new(law: &'a ConvolutionLaw) -> Self {
        let n = law.basis.len();
        let np = law.grid.n_points();
        ConvolutionStepper {
            law,
            modes: vec![0.0; n],
            field: vec![0.0; np],
            dens: vec![0.0; np],
            dw: vec![0.0; n],
            daux: vec![0.0; n],
            inv_w: law.grid.weights().iter().map(|w| 1.0 / w).collect(),
        }
    }

    /// Consumes slice `m` of the noise and returns `V_{t_{m+1}}`.
    pub fn advance(&mut self, noise: &NoiseRealization, m: usize) -> &[f64] {
        let basis = &self.law.basis;
        let up = &self.law.update;
        if noise.is_zero() {
            for v in self.modes.iter_mut() {
                *v = 0.0;
            }
            self.field.iter_mut().for_each(|x| *x = 0.0);
            return &self.field;
        }
        for ((d, x), iw) in self.dens.iter_mut().zip(&noise.increments[m]).zip(&self.inv_w) {
            *d = x * iw;
        }
        basis.forward_into(&self.dens, &mut self.dw);
        for ((d, x), iw) in self.dens.iter_mut().zip(&noise.auxiliary[m]).zip(&self.inv_w) {
            *d = x * iw;
        }
        basis.forward_into(&self.dens, &mut self.daux);
        for k in 0..self.modes.len() {
            self.modes[k] = up.decay[k] * self.modes[k] + up.gain[k] * self.dw[k] + up.aux_gain[k] * self.daux[k];
        }
        basis.inverse_into(&self.modes, &mut self.field);
        &self.field
    }
}

/// Euler convolution `V_{m+1} = P_dt (V_m + noise density_m dt)` of the same
/// noise, the naive discretization the exact recursion is checked against.
pub fn euler_convolution(noise: &NoiseRealization) -> Vec<Vec<f64>> {
    let basis = SpectralBasis::new(&noise.grid);
    let mut values = vec![vec![0.0; noise.grid.n_points()]];
    for m in 0..noise.tgrid.n_time {
        let prev = values.last().unwrap();
        let dens = noise.density_row(m);
        let next: Vec<f64> = prev.iter().zip(&dens).map(|(v, d)| v + d).collect();
        values.push(basis.apply_heat(&next, noise.tgrid.dt));
    }
    values
}

impl StochasticConvolution {
    pub fn at(&self, m: usize) -> &[f64] {
        &self.values[m]
    }
}

/// `V_t - P_{t-s} V_s`: the part of `V_t` generated by the noise on `(s, t]`.
pub fn convolution_increment_residual(
    conv: &StochasticConvolution,
    basis: &SpectralBasis,
    s: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if s > t {
        return domain(format!("need s <= t, got s = {s}, t = {t}"));
    }
    let tg = &conv.tgrid;
    let (Some(ms), Some(mt)) = (tg.step_of(s), tg.step_of(t)) else {
        return domain(format!("({s}, {t}) not on the time grid"));
    };
    let moved = basis.apply_heat(&conv.values[ms], tg.time(mt) - tg.time(ms));
    Ok(conv.values[mt].iter().zip(&moved).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSetup;

    #[test]
    fn deterministic_in_seed_and_index() {
        let g = Grid1D::periodic(32).unwrap();
        let tg = TimeGrid::unit(16).unwrap();
        let a = sample_noise(&g, &tg, 42, 3);
        let b = sample_noise(&g, &tg, 42, 3);
        assert_eq!(a.increments, b.increments);
        assert_eq!(a.auxiliary, b.auxiliary);
        let c = sample_noise(&g, &tg, 42, 4);
        assert_ne!(a.increments, c.increments);
        assert_ne!(a.increments, a.auxiliary);
    }

    #[test]
    fn increment_variance_is_dt_dx() {
        let g = Grid1D::periodic(500).unwrap();
        let tg = TimeGrid::unit(200).unwrap();
        let n = sample_noise(&g, &tg, 9, 0);
        let count = (g.n_points() * tg.n_time) as f64;
        let mean_sq: f64 = n.increments.iter().flatten().map(|x| x * x).sum::<f64>() / count;
        let target = tg.dt * g.dx;
        let se = target * (2.0 / count).sqrt();
        assert!((mean_sq - target).abs() < 3.0 * se, "{mean_sq} vs {target}");
    }

    #[test]
    fn zero_time_row_and_zero_noise() {
        let g = Grid1D::neumann(16).unwrap();
        let tg = TimeGrid::unit(8).unwrap();
        let v = simulate_convolution(&sample_noise(&g, &tg, 1, 0));
        assert!(v.values[0].iter().all(|&x| x == 0.0));
        let z = simulate_convolution(&NoiseRealization::zeros(&g, &tg));
        assert!(z.values.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn pair_with_zero_function_and_snapping() {
        let g = Grid1D::periodic(16).unwrap();
        let tg = TimeGrid::unit(8).unwrap();
        let n = sample_noise(&g, &tg, 1, 0);
        assert_eq!(pair_with_test(&n, |_| 0.0, 1.0).unwrap(), (0.0, false));
        let (_, snapped) = pair_with_test(&n, |x| x, 0.3).unwrap();
        assert!(snapped);
        let (a, _) = pair_with_test(&n, |x| x.sin(), 0.25).unwrap();
        let (b, _) = pair_with_test(&n, |x| x.sin(), 0.3).unwrap();
        assert_eq!(a, b);
        assert!(pair_with_test(&n, |x| x, 1.5).is_err());
    }

    #[test]
    fn increment_residual_edge_cases() {
        let g = Grid1D::periodic(16).unwrap();
        let tg = TimeGrid::unit(8).unwrap();
        let v = simulate_convolution(&sample_noise(&g, &tg, 1, 0));
        let b = SpectralBasis::new(&g);
        let r = convolution_increment_residual(&v, &b, 0.5, 0.5).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-15));
        let r0 = convolution_increment_residual(&v, &b, 0.0, 0.75).unwrap();
        assert_eq!(r0, v.values[6]);
        assert!(convolution_increment_residual(&v, &b, 0.75, 0.5).is_err());
    }

    #[test]
    fn coarsened_noise_shapes() {
        for setup in [DomainSetup::periodic(), DomainSetup::neumann()] {
            let g = Grid1D::new(setup, 16).unwrap();
            let tg = TimeGrid::unit(8).unwrap();
            let n = sample_noise(&g, &tg, 5, 2);
            let c = n.coarsen(true, true).unwrap();
            assert_eq!(c.increments.len(), 4);
            assert_eq!(c.increments[0].len(), c.grid.n_points());
            // total mass is preserved by aggregation
            let fine: f64 = n.increments.iter().flatten().sum();
            let coarse: f64 = c.increments.iter().flatten().sum();
            assert!((fine - coarse).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_update_small_x_branch_is_continuous() {
        // just above the switch the direct formula must agree with the series
        let x: f64 = 1.01e-4;
        let b = ModeUpdate::new(&[x], 1.0);
        let series = (x * x / 12.0 - x * x * x / 12.0).sqrt();
        assert!((b.aux_gain[0] - series).abs() / series < 1e-3);
    }
}
