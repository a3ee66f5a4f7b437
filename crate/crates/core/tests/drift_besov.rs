use proptest::prelude::*;
use shelab::besov::{estimate_besov_norm, estimate_spec_norm, DEFAULT_RADIUS, EMBEDDING_CONSTANT};
use shelab::drift::{mollify, DriftSpec, MollifiedDrift};
use shelab::quad::gaussian_smooth;

fn function_drifts() -> Vec<DriftSpec> {
    vec![
        DriftSpec::sine(1.0, 1.0),
        DriftSpec::sign(),
        DriftSpec::power(0.5, 1.0, 1.5).unwrap(),
        DriftSpec::power(0.3, 0.5, 2.5).unwrap(),
    ]
}

fn raw(spec: &DriftSpec) -> impl Fn(f64) -> f64 + Send + Sync + '_ {
    move |u| spec.eval(u).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mollifier_semigroup(eps in 0.01f64..0.2, share in 0.3f64..1.0, u in -2.0f64..2.0, which in 0usize..5) {
        let spec = if which == 4 { DriftSpec::dirac(1.0) } else { function_drifts()[which].clone() };
        let e2 = eps * share;
        let inner = MollifiedDrift::with_scale(&spec, eps).unwrap();
        let twice = gaussian_smooth(|v| inner.value(v), e2, u);
        let once = MollifiedDrift::with_scale(&spec, eps + e2).unwrap().value(u);
        prop_assert!((twice - once).abs() < 1e-8, "{twice} vs {once}");
    }

    #[test]
    fn estimator_monotone_in_beta(b1 in -1.5f64..0.0, gap in 0.0f64..1.0, which in 0usize..4) {
        let b2 = (b1 + gap).min(0.0);
        let spec = &function_drifts()[which];
        let f = raw(spec);
        let e1 = estimate_besov_norm(&f, b1, f64::INFINITY, DEFAULT_RADIUS).unwrap();
        let e2 = estimate_besov_norm(&f, b2, f64::INFINITY, DEFAULT_RADIUS).unwrap();
        prop_assert!(e1.value <= e2.value * (1.0 + 1e-12));
        prop_assert!((e1.at_beta(b2) - e2.value).abs() <= 1e-12 * e2.value.max(1.0));
    }
}

#[test]
fn mollification_does_not_raise_the_estimate() {
    for spec in function_drifts() {
        for beta in [-1.0, -0.5, 0.0] {
            let base = estimate_spec_norm(&spec, beta, f64::INFINITY, DEFAULT_RADIUS).unwrap().value;
            for n in [4u64, 16, 64, 256] {
                let m = mollify(&spec, n).unwrap();
                let v = estimate_besov_norm(&m, beta, f64::INFINITY, DEFAULT_RADIUS).unwrap().value;
                assert!(v <= 1.05 * base, "{:?} n={n} beta={beta}: {v} > {base}", spec.form);
            }
        }
    }
}

#[test]
fn lp_embedding_surrogate() {
    let cases: Vec<(DriftSpec, f64)> = vec![
        (DriftSpec::power(0.5, 1.0, 1.5).unwrap(), 1.5),
        (DriftSpec::power(0.5, 1.0, 1.9).unwrap(), 1.9),
        (DriftSpec::power(0.3, 0.5, 3.0).unwrap(), 3.0),
        (DriftSpec::power(0.7, 2.0, 1.2).unwrap(), 1.2),
    ];
    for (spec, p) in cases {
        let lp = spec.lp_norm(p).unwrap();
        let e = estimate_spec_norm(&spec, -1.0 / p, f64::INFINITY, DEFAULT_RADIUS).unwrap();
        assert!(e.value <= EMBEDDING_CONSTANT * lp, "p={p}: {} vs {lp}", e.value);
    }
    // bounded drifts at p = inf
    for (spec, sup) in [(DriftSpec::sign(), 1.0), (DriftSpec::sine(1.0, 1.0), 1.0), (DriftSpec::constant(2.0), 2.0)] {
        let e = estimate_spec_norm(&spec, 0.0, f64::INFINITY, DEFAULT_RADIUS).unwrap();
        assert!(e.value <= EMBEDDING_CONSTANT * sup, "{:?}: {} vs {sup}", spec.form, e.value);
    }
}

#[test]
fn dirac_mollification_is_a_gaussian_density() {
    // G_eps delta_0 is the N(0, eps) density
    for n in [8u64, 64, 500] {
        let m = mollify(&DriftSpec::dirac(1.0), n).unwrap();
        let eps = 1.0 / n as f64;
        for u in [-0.3, 0.0, 0.05, 0.2] {
            let want = (-u * u / (2.0 * eps)).exp() / (2.0 * std::f64::consts::PI * eps).sqrt();
            assert!((m.value(u) - want).abs() < 1e-12 * want.max(1.0));
        }
    }
}
