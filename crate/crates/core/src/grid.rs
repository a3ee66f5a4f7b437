//! Spatial domains, uniform space/time grids, the simplex of time pairs and
//! the left grid projection `kappa_n`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Which of the three settings the equation is posed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    PeriodicUnit,
    NeumannUnit,
    WholeLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSetup {
    pub kind: DomainKind,
    /// Circumference of the approximating torus. Always 1 for the unit domains.
    pub torus_width: f64,
}

impl DomainSetup {
    pub fn periodic() -> Self {
        DomainSetup { kind: DomainKind::PeriodicUnit, torus_width: 1.0 }
    }

    pub fn neumann() -> Self {
        DomainSetup { kind: DomainKind::NeumannUnit, torus_width: 1.0 }
    }

    /// The real line, realized as a torus of circumference `torus_width`.
    pub fn whole_line(torus_width: f64) -> Result<Self> {
        if !(torus_width.is_finite() && torus_width > 0.0) {
            return domain(format!("torus width must be positive, got {torus_width}"));
        }
        Ok(DomainSetup { kind: DomainKind::WholeLine, torus_width })
    }

    /// Length of the computational domain.
    pub fn extent(&self) -> f64 {
        match self.kind {
            DomainKind::WholeLine => self.torus_width,
            _ => 1.0,
        }
    }

    /// Minimal torus width for a given horizon: `8 * sqrt(horizon)`.
    pub fn min_torus_width(horizon: f64) -> f64 {
        8.0 * horizon.sqrt()
    }

    /// Checks the torus-width rule for the whole-line setup.
    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        if self.kind == DomainKind::WholeLine {
            let need = Self::min_torus_width(horizon);
            if self.torus_width < need {
                return domain(format!(
                    "whole-line torus width {} is below 8*sqrt(horizon) = {}",
                    self.torus_width, need
                ));
            }
        }
        Ok(())
    }

    pub fn is_periodic(&self) -> bool {
        self.kind != DomainKind::NeumannUnit
    }
}

/// Uniform spatial grid.
///
/// Periodic and whole-line grids use the `n_space` cell centers; the Neumann
/// grid uses the `n_space + 1` cell nodes `i * dx` so that the reflection
/// symmetry of the Neumann kernel is exact on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub setup: DomainSetup,
    pub n_space: usize,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(setup: DomainSetup, n_space: usize) -> Result<Self> {
        if n_space < 2 {
            return domain(format!("n_space must be at least 2, got {n_space}"));
        }
        if setup.kind == DomainKind::NeumannUnit && n_space < 2 {
            return domain("Neumann grid needs at least two cells");
        }
        let dx = setup.extent() / n_space as f64;
        Ok(Grid1D { setup, n_space, dx })
    }

    pub fn periodic(n_space: usize) -> Result<Self> {
        Self::new(DomainSetup::periodic(), n_space)
    }

    pub fn neumann(n_space: usize) -> Result<Self> {
        Self::new(DomainSetup::neumann(), n_space)
    }

    pub fn kind(&self) -> DomainKind {
        self.setup.kind
    }

    /// Number of field values stored on this grid.
    pub fn n_points(&self) -> usize {
        match self.setup.kind {
            DomainKind::NeumannUnit => self.n_space + 1,
            _ => self.n_space,
        }
    }

    /// Left end of the computational interval.
    pub fn origin(&self) -> f64 {
        match self.setup.kind {
            DomainKind::WholeLine => -0.5 * self.setup.torus_width,
            _ => 0.0,
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        match self.setup.kind {
            DomainKind::NeumannUnit => i as f64 * self.dx,
            _ => self.origin() + (i as f64 + 0.5) * self.dx,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points()).map(|i| self.node(i)).collect()
    }

    /// Quadrature weight of node `i` (length of the cell it represents).
    pub fn weight(&self, i: usize) -> f64 {
        match self.setup.kind {
            DomainKind::NeumannUnit if i == 0 || i == self.n_space => 0.5 * self.dx,
            _ => self.dx,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_points()).map(|i| self.weight(i)).collect()
    }

    /// Whether node `i` lies in the observation window. Only the whole-line
    /// setup restricts observables, to `[-L/4, L/4]`.
    pub fn in_window(&self, i: usize) -> bool {
        match self.setup.kind {
            DomainKind::WholeLine => self.node(i).abs() <= 0.25 * self.setup.torus_width,
            _ => true,
        }
    }

    /// Index of the grid node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let raw = match self.setup.kind {
            DomainKind::NeumannUnit => (x / self.dx).round(),
            _ => ((x - self.origin()) / self.dx - 0.5).round(),
        };
        (raw.max(0.0) as usize).min(self.n_points() - 1)
    }

    /// Grid with the same domain and half as many cells.
    pub fn coarsened(&self) -> Result<Self> {
        if self.n_space % 2 != 0 {
            return domain(format!("cannot halve a grid with {} cells", self.n_space));
        }
        Grid1D::new(self.setup, self.n_space / 2)
    }

    pub fn check_field(&self, f: &[f64]) -> Result<()> {
        crate::error::check_len(self.n_points(), f.len())
    }
}

/// Uniform time grid on `[0, horizon]`, `horizon <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_time: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_time: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon <= 1.0) {
            return domain(format!("horizon must lie in (0, 1], got {horizon}"));
        }
        if n_time == 0 {
            return domain("n_time must be positive");
        }
        Ok(TimeGrid { n_time, dt: horizon / n_time as f64, horizon })
    }

    pub fn unit(n_time: usize) -> Result<Self> {
        Self::new(1.0, n_time)
    }

    /// Time of step `m`, computed from the integer index.
    pub fn time(&self, m: usize) -> f64 {
        if m == self.n_time {
            self.horizon
        } else {
            m as f64 * self.dt
        }
    }

    /// Step index of `t` if `t` is a grid time (within `1e-9` steps).
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let r = t / self.dt;
        let m = r.round();
        if (r - m).abs() <= 1e-9 && m >= 0.0 && m as usize <= self.n_time {
            Some(m as usize)
        } else {
            None
        }
    }

    /// Largest grid index whose time does not exceed `t`.
    pub fn floor_step(&self, t: f64) -> usize {
        if let Some(m) = self.step_of(t) {
            return m;
        }
        ((t / self.dt).floor().max(0.0) as usize).min(self.n_time)
    }

    pub fn coarsened(&self) -> Result<Self> {
        if self.n_time % 2 != 0 {
            return domain(format!("cannot halve a time grid with {} steps", self.n_time));
        }
        TimeGrid::new(self.horizon, self.n_time / 2)
    }
}

/// A pair `0 <= s <= t <= horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexPair {
    pub s: f64,
    pub t: f64,
}

impl SimplexPair {
    pub fn new(s: f64, t: f64, horizon: f64) -> Result<Self> {
        if !(0.0 <= s && s <= t && t <= horizon) {
            return domain(format!("({s}, {t}) is not in the simplex over [0, {horizon}]"));
        }
        Ok(SimplexPair { s, t })
    }

    pub fn len(&self) -> f64 {
        self.t - self.s
    }

    pub fn is_empty(&self) -> bool {
        self.t == self.s
    }
}

/// Left projection onto the grid `{0, 1/n, ..., 1}`: `floor(n t) / n`.
pub fn kappa_n(t: f64, n: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return domain(format!("kappa_n needs t in [0, 1], got {t}"));
    }
    if n == 0 {
        return Err(Error::Domain("kappa_n needs n >= 1".into()));
    }
    let nf = n as f64;
    let mut k = (nf * t).floor();
    // floor(n t) can be off by one after rounding of n * t.
    if (k + 1.0) / nf <= t {
        k += 1.0;
    }
    if k / nf > t {
        k -= 1.0;
    }
    Ok(k / nf)
}

/// Dyadic partitions of `[s, t]` for levels `0..=max_level`; level `l` has
/// `2^l` equal subintervals.
pub fn dyadic_partitions(s: f64, t: f64, max_level: u32) -> Result<Vec<Vec<f64>>> {
    if !(s < t) {
        return domain(format!("dyadic partition needs s < t, got ({s}, {t})"));
    }
    if max_level > 16 {
        return domain(format!("max_level must be at most 16, got {max_level}"));
    }
    let len = t - s;
    Ok((0..=max_level)
        .map(|level| {
            let pieces = 1usize << level;
            (0..=pieces)
                .map(|i| if i == pieces { t } else { s + len * i as f64 / pieces as f64 })
                .collect()
        })
        .collect())
}

/// Largest subinterval length of a partition.
pub fn mesh(partition: &[f64]) -> f64 {
    partition.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}
