use parament_core::{
    eval_boundary, fit_boundary, BoundaryConstants, BoundarySample, FitStatus, Weighting,
};
use proptest::prelude::*;

const DS: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-9, 1e-8];

fn synthetic(k: &BoundaryConstants, qs: &[f64], epss: &[f64]) -> Vec<BoundarySample> {
    let mut out = Vec::new();
    for &quality in qs {
        for &epsilon in epss {
            for &d in &DS {
                out.push(BoundarySample {
                    d,
                    epsilon,
                    quality,
                    n_t0: eval_boundary(d, epsilon, quality, k).unwrap(),
                });
            }
        }
    }
    out
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-6 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_data_is_recovered(
        a1 in 1.0f64..3.0,
        b1 in -5e-2f64..5e-2,
        a2 in -3e3f64..0.0,
        b2 in -10.0f64..10.0,
        inverse_square in any::<bool>(),
    ) {
        let k = BoundaryConstants { a1, b1, a2, b2 };
        let s = synthetic(&k, &[2000.0, 5000.0, 10000.0], &[1e-2, 1.6e-2, 2.4e-2]);
        let w = if inverse_square { Weighting::InverseSquare } else { Weighting::Uniform };
        let r = fit_boundary(&s, w).unwrap();
        prop_assert_eq!(r.status, FitStatus::Full);
        let got = r.constants.unwrap();
        prop_assert!(close(got.a1, a1, 1.0), "{got:?} vs {k:?}");
        prop_assert!(close(got.b1, b1, 1.0), "{got:?} vs {k:?}");
        prop_assert!(close(got.a2, a2, 3e3), "{got:?} vs {k:?}");
        prop_assert!(close(got.b2, b2, 10.0), "{got:?} vs {k:?}");
        prop_assert!(r.max_relative < 1e-9);
    }

    #[test]
    fn prediction_is_monotone_in_noise_width(
        eps in 5e-3f64..5e-2,
        q in 1e3f64..2e4,
        d1 in 0.0f64..1e-8,
        d2 in 0.0f64..1e-8,
    ) {
        let k = BoundaryConstants::PUBLISHED;
        if let (Ok(x), Ok(y)) = (eval_boundary(d1, eps, q, &k), eval_boundary(d2, eps, q, &k)) {
            if k.slope(eps, q) > 0.0 {
                prop_assert_eq!(d1 <= d2, x >= y);
            }
        }
    }
}

#[test]
fn single_quality_factor_is_underdetermined() {
    let s = synthetic(
        &BoundaryConstants::PUBLISHED,
        &[5000.0],
        &[1e-2, 1.6e-2, 2.4e-2],
    );
    let r = fit_boundary(&s, Weighting::Uniform).unwrap();
    assert_eq!(r.status, FitStatus::Underdetermined);
    assert!(r.constants.is_none());
    assert_eq!(r.slopes.len(), 3);
    assert!(r.max_relative < 1e-9);
}

#[test]
fn coherent_only_data_is_rejected() {
    let s: Vec<_> = synthetic(&BoundaryConstants::PUBLISHED, &[5000.0], &[1.6e-2])
        .into_iter()
        .filter(|s| s.d == 0.0)
        .collect();
    assert!(fit_boundary(&s, Weighting::Uniform).is_err());
}
