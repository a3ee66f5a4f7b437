use proptest::prelude::*;
use shelab::grid::{DomainSetup, Grid1D};
use shelab::kernel::{
    apply_semigroup, domain_kernel, neumann_kernel, periodic_kernel, Representation, SemigroupOperator,
};

fn setups() -> Vec<DomainSetup> {
    vec![DomainSetup::periodic(), DomainSetup::neumann(), DomainSetup::whole_line(8.0).unwrap()]
}

fn inner(g: &Grid1D, f: &[f64], h: &[f64]) -> f64 {
    (0..g.n_points()).map(|i| g.weight(i) * f[i] * h[i]).sum()
}

fn field(g: &Grid1D, coeffs: &[f64]) -> Vec<f64> {
    // smooth-ish random field built from a few modes plus a bounded kink
    let ext = g.setup.extent();
    g.nodes()
        .iter()
        .map(|&x| {
            let y = (x - g.origin()) / ext;
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * (std::f64::consts::PI * (k + 1) as f64 * y).cos())
                .sum::<f64>()
                + if y < 0.3 { 0.5 } else { 0.0 }
        })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn periodic_kernel_integrates_to_one() {
    // midpoint rule is spectrally accurate for a smooth periodic integrand
    for &t in &[0.001, 0.01, 0.3, 2.0] {
        let n = 4096;
        let s: f64 = (0..n).map(|j| periodic_kernel(t, 0.37, (j as f64 + 0.5) / n as f64).unwrap()).sum::<f64>()
            / n as f64;
        assert!((s - 1.0).abs() < 1e-12, "t={t}: {s}");
    }
}

#[test]
fn neumann_kernel_integrates_to_one() {
    for &t in &[0.002, 0.05, 0.7] {
        let n = 4000;
        let h = 1.0 / n as f64;
        // Simpson on [0, 1]
        let mut s = 0.0;
        for j in 0..=n {
            let w = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            s += w * neumann_kernel(t, 0.8, j as f64 * h).unwrap();
        }
        s *= h / 3.0;
        assert!((s - 1.0).abs() < 1e-9, "t={t}: {s}");
    }
}

#[test]
fn spectral_and_image_representations_agree() {
    for setup in setups() {
        let g = Grid1D::new(setup, 64).unwrap();
        let f = field(&g, &[0.3, -0.2, 0.1, 0.05]);
        for &t in &[0.01, 0.1, 0.6] {
            let spec = apply_semigroup(&SemigroupOperator::new(&g, t, Representation::Spectral).unwrap(), &f).unwrap();
            let img = apply_semigroup(&SemigroupOperator::new(&g, t, Representation::KernelMatrix).unwrap(), &f).unwrap();
            assert!(max_diff(&spec, &img) < 1e-10, "{:?} t={t}: {}", setup.kind, max_diff(&spec, &img));
        }
    }
}

#[test]
fn grid_mass_is_conserved() {
    for setup in [DomainSetup::periodic(), DomainSetup::neumann()] {
        let g = Grid1D::new(setup, 48).unwrap();
        let f = field(&g, &[1.0, 0.4, -0.7]);
        let one = vec![1.0; g.n_points()];
        for rep in [Representation::Spectral, Representation::KernelMatrix] {
            for &t in &[1e-5, 0.02, 0.5] {
                let pf = apply_semigroup(&SemigroupOperator::new(&g, t, rep).unwrap(), &f).unwrap();
                assert!((inner(&g, &pf, &one) - inner(&g, &f, &one)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn small_time_matrix_has_unit_row_mass() {
    // the cell-integrated path below dx^2 is a stochastic matrix
    for setup in setups() {
        let g = Grid1D::new(setup, 32).unwrap();
        let op = SemigroupOperator::new(&g, 0.1 * g.dx * g.dx, Representation::KernelMatrix).unwrap();
        assert!(op.small_time());
        for row in op.kernel_matrix().unwrap() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "{s}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chapman_kolmogorov(s in 0.001f64..0.4, t in 0.001f64..0.4, which in 0usize..3,
                          coeffs in proptest::collection::vec(-1.0f64..1.0, 4)) {
        let g = Grid1D::new(setups()[which], 64).unwrap();
        // below dx^2 the cell-integrated matrix is used, which is not a semigroup
        let (s, t) = (s.max(g.dx * g.dx), t.max(g.dx * g.dx));
        let f = field(&g, &coeffs);
        let op = |t| SemigroupOperator::new(&g, t, Representation::Spectral).unwrap();
        let two = apply_semigroup(&op(t), &apply_semigroup(&op(s), &f).unwrap()).unwrap();
        let one = apply_semigroup(&op(s + t), &f).unwrap();
        prop_assert!(max_diff(&two, &one) < 1e-9);
    }

    #[test]
    fn self_adjoint(t in 0.0005f64..1.0, which in 0usize..3,
                    a in proptest::collection::vec(-1.0f64..1.0, 4),
                    b in proptest::collection::vec(-1.0f64..1.0, 4)) {
        let g = Grid1D::new(setups()[which], 48).unwrap();
        let f = field(&g, &a);
        let h: Vec<f64> = field(&g, &b).iter().rev().copied().collect();
        for rep in [Representation::Spectral, Representation::KernelMatrix] {
            let op = SemigroupOperator::new(&g, t, rep).unwrap();
            let l = inner(&g, &apply_semigroup(&op, &f).unwrap(), &h);
            let r = inner(&g, &f, &apply_semigroup(&op, &h).unwrap());
            prop_assert!((l - r).abs() < 1e-10, "{l} vs {r}");
        }
    }

    #[test]
    fn kernel_is_symmetric_and_positive(t in 1e-4f64..2.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        for setup in setups() {
            let (x, y) = if setup.is_periodic() && setup.extent() > 1.0 { (8.0 * x - 4.0, 8.0 * y - 4.0) } else { (x, y) };
            let a = domain_kernel(&setup, t, x, y).unwrap();
            let b = domain_kernel(&setup, t, y, x).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn positivity_preserved(t in 1e-5f64..0.5, which in 0usize..3,
                            vals in proptest::collection::vec(0.0f64..1.0, 33)) {
        let g = Grid1D::new(setups()[which], 32).unwrap();
        let f: Vec<f64> = vals[..g.n_points()].to_vec();
        let op = SemigroupOperator::new(&g, t, Representation::KernelMatrix).unwrap();
        prop_assert!(apply_semigroup(&op, &f).unwrap().iter().all(|&v| v >= -1e-15));
    }
}
