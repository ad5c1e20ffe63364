use latent_depth::losses::{huber, huber_derivative};
use proptest::prelude::*;

proptest! {
    #[test]
    fn huber_is_symmetric(e in -10.0f64..10.0, delta in 0.01f64..5.0) {
        prop_assert_eq!(huber(e, delta).unwrap(), huber(-e, delta).unwrap());
    }

    #[test]
    fn huber_is_monotone_in_magnitude(a in 0.0f64..10.0, b in 0.0f64..10.0, delta in 0.01f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(huber(lo, delta).unwrap() <= huber(hi, delta).unwrap());
    }

    #[test]
    fn huber_is_c1_at_both_knees(delta in 0.01f64..5.0) {
        let h = 1e-7 * delta;
        for knee in [delta, -delta] {
            let fd = (huber(knee + h, delta).unwrap() - huber(knee - h, delta).unwrap()) / (2.0 * h);
            prop_assert!((fd - huber_derivative(knee, delta)).abs() <= 1e-6);
            let left = huber_derivative(knee - h, delta);
            let right = huber_derivative(knee + h, delta);
            prop_assert!((left - right).abs() <= 1e-6);
        }
    }

    #[test]
    fn huber_derivative_matches_finite_differences(e in -3.0f64..3.0, delta in 0.05f64..2.0) {
        prop_assume!((e.abs() - delta).abs() > 1e-4);
        let h = 1e-6;
        let fd = (huber(e + h, delta).unwrap() - huber(e - h, delta).unwrap()) / (2.0 * h);
        prop_assert!((fd - huber_derivative(e, delta)).abs() <= 1e-6);
    }
}
