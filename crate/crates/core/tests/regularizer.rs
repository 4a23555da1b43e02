use ard_lora::regularizer::{alpha_gradient, penalty_gradient, regularizer_value, AlphaTrace, RegConfig};
use proptest::prelude::*;

fn trace(v: &[f64]) -> AlphaTrace {
    AlphaTrace::from_values(v.to_vec()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn first_step_has_no_temporal_gradient() {
    assert_eq!(AlphaTrace::new().temporal_gradient(0).unwrap(), 0.0);
    assert_eq!(trace(&[1.7, 0.2]).temporal_gradient(0).unwrap(), 0.0);
    assert_eq!(AlphaTrace::new().values(), &[1.0]);
}

#[test]
fn value_examples() {
    let cfg = RegConfig::new(0.01, 0.1).unwrap();
    let v = regularizer_value(&[trace(&[1.0, 1.5])], 1, &cfg).unwrap();
    assert!(close(v.l1, 1.5) && close(v.tv, 0.25) && close(v.total, 1.525));

    let zeros = vec![trace(&[0.0, 0.0]); 3];
    assert_eq!(regularizer_value(&zeros, 1, &cfg).unwrap().total, 0.0);

    let ones = vec![trace(&[1.0, 1.0, 1.0]); 4];
    assert!(close(regularizer_value(&ones, 2, &cfg).unwrap().total, 4.0));
}

#[test]
fn gradient_examples() {
    let cfg = RegConfig::new(0.01, 0.1).unwrap();
    let g = alpha_gradient(0.2, &trace(&[1.0, 1.5]), 1, &cfg).unwrap();
    assert!(close(g, 0.211));
    let off = RegConfig::new(0.0, 0.1).unwrap();
    assert_eq!(alpha_gradient(0.37, &trace(&[1.0, 1.5]), 1, &off).unwrap(), 0.37);
    let g = alpha_gradient(0.0, &trace(&[1.0, 1.0]), 1, &cfg).unwrap();
    assert!(close(g, 0.01));
}

#[test]
fn zero_scale_has_no_l1_pull() {
    let cfg = RegConfig::new(0.5, 0.0).unwrap();
    assert_eq!(penalty_gradient(&trace(&[0.0]), 0, &cfg).unwrap(), 0.0);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(RegConfig::new(-1.0, 0.1).is_err());
    assert!(RegConfig::new(0.1, f64::NAN).is_err());
    assert!(AlphaTrace::from_values(vec![]).is_err());
    let cfg = RegConfig::default();
    assert!(regularizer_value(&[trace(&[1.0]), trace(&[1.0, 2.0])], 0, &cfg).is_err());
    assert!(regularizer_value(&[trace(&[1.0])], 3, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn value_ignores_head_order(
        values in prop::collection::vec(prop::collection::vec(0.0f64..4.0, 3), 1..8),
        rot in 0usize..8,
    ) {
        let cfg = RegConfig::new(0.01, 0.1).unwrap();
        let traces: Vec<AlphaTrace> = values.iter().map(|v| trace(v)).collect();
        let mut shuffled = traces.clone();
        shuffled.reverse();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        let a = regularizer_value(&traces, 2, &cfg).unwrap();
        let b = regularizer_value(&shuffled, 2, &cfg).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-12);
        prop_assert!(a.l1 >= 0.0 && a.tv >= 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference(prev in 0.1f64..3.0, now in 0.1f64..3.0, lambda in 0.0f64..1.0, beta in 0.0f64..10.0) {
        // d/d alpha(t) of lambda * (|alpha(t)| + beta (alpha(t) - alpha(t-1))^2)
        let cfg = RegConfig::new(lambda, beta).unwrap();
        let h = 1e-6;
        let f = |a: f64| {
            let v = regularizer_value(&[trace(&[prev, a])], 1, &cfg).unwrap();
            lambda * v.total
        };
        let numeric = (f(now + h) - f(now - h)) / (2.0 * h);
        let analytic = penalty_gradient(&trace(&[prev, now]), 1, &cfg).unwrap();
        prop_assert!((numeric - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()));
    }
}
