//! Quadrature helpers shared by the drift and weak-form modules.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::{GaussHermite, GaussLegendre};

fn hermite64() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| {
        let rule = GaussHermite::new(NonZeroUsize::new(64).unwrap());
        rule.as_node_weight_pairs().to_vec()
    })
}

fn legendre(n: usize) -> &'static [(f64, f64)] {
    static L10: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static L20: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    let cell = if n == 10 { &L10 } else { &L20 };
    cell.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(n).unwrap()).as_node_weight_pairs().to_vec()
    })
}

/// `E f(u + sqrt(eps) Z)` for standard normal `Z`, by 64-node Gauss-Hermite.
pub fn gaussian_smooth(f: impl Fn(f64) -> f64, eps: f64, u: f64) -> f64 {
    let s = (2.0 * eps).sqrt();
    let total: f64 = hermite64().iter().map(|&(x, w)| w * f(u + s * x)).sum();
    total / std::f64::consts::PI.sqrt()
}

fn gl_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    h * legendre(n).iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>()
}

/// Adaptive Gauss-Legendre: a panel is accepted once its 10- and 20-point
/// values agree within `tol` (absolute, scaled by the panel share) or to
/// within rounding of the panel value.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let coarse = gl_panel(f, a, b, 10);
        let fine = gl_panel(f, a, b, 20);
        let diff = (coarse - fine).abs();
        if diff <= tol || diff <= 1e-13 * fine.abs() || depth >= 40 {
            return fine;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    rec(&f, a, b, tol, 0)
}

/// Adaptive integration over consecutive breakpoints.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> f64 {
    let pieces = breaks.len().saturating_sub(1).max(1) as f64;
    breaks.windows(2).map(|w| integrate(&f, w[0], w[1], tol / pieces)).sum()
}
