use proptest::prelude::*;
use rdu_equilibrium::hkernel::HKernel;
use rdu_equilibrium::preferences::UtilityModel;
use rdu_equilibrium::verifier::TransformMaps;
use rdu_equilibrium::weighting::{tk_weight, WeightingFamily};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tk_weight_is_monotone_on_unit_interval(d in 0.28f64..1.0, p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        let (a, b) = (tk_weight(lo, d).unwrap(), tk_weight(hi, d).unwrap());
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(a <= b + 1e-15);
    }

    #[test]
    fn kernel_is_normalized(d in 0.3f64..1.0, t in 0.0f64..1.0) {
        let k = HKernel::with_defaults(WeightingFamily::tk_constant(d).unwrap());
        prop_assert!((k.h(t, 0.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_is_log_convex(d in 0.3f64..1.0, x in 0.0f64..3.0) {
        let k = HKernel::with_defaults(WeightingFamily::tk_constant(d).unwrap());
        let m = k.moments(0.0, x).unwrap();
        prop_assert!(m[2] * m[0] - m[1] * m[1] >= -1e-9 * m[0] * m[0]);
    }

    #[test]
    fn transform_maps_invert(kappa in 0.1f64..5.0, big in 0.0f64..0.5, x in -5.0f64..5.0) {
        let maps = TransformMaps::new(UtilityModel::exponential(1.3).unwrap(), kappa, big).unwrap();
        let y = maps.g(x);
        prop_assert!((maps.f(y).unwrap() - x).abs() < 1e-10 * (1.0 + x.abs()));
        let want = maps.kappa_tilde() * (-y).exp();
        prop_assert!((maps.marginal_at_f(y) - want).abs() < 1e-10 * want);
    }

    #[test]
    fn single_precision_kernel_tracks_double(d in 0.4f64..1.0, x in 0.0f64..2.0) {
        let k64 = HKernel::with_defaults(WeightingFamily::tk_constant(d).unwrap());
        let k32 = HKernel::<f32>::with_defaults(WeightingFamily::tk_constant(d as f32).unwrap());
        let a = k64.h(0.5, x).unwrap();
        let b = k32.h(0.5, x as f32).unwrap() as f64;
        prop_assert!((a - b).abs() < 1e-4 * a, "{} vs {}", a, b);
    }
}
