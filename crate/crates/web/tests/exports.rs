use condwalk_web::{conditioned_path, density_curve, survival, MAX_STEPS};

#[test]
fn density_curve_integrates_to_one_at_time_one() {
    // x e^{-x^2/2} on (0, 8]; right-endpoint Riemann sum
    let points = 4000;
    let v = density_curve(1.0, 8.0, points).unwrap();
    let mass: f64 = v.iter().sum::<f64>() * 8.0 / points as f64;
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    assert!(v.iter().all(|&p| p >= 0.0));
}

#[test]
fn density_curve_rejects_bad_input() {
    assert!(density_curve(0.5, 0.0, 10).is_err());
    assert!(density_curve(0.5, 1.0, 0).is_err());
    assert!(density_curve(1.5, 1.0, 10).is_err());
}

#[test]
fn conditioned_path_stays_positive_and_is_reproducible() {
    let p = conditioned_path(60, 0.5, true, 3, 9).unwrap();
    assert_eq!(p.len(), 2 * 61);
    assert_eq!(&p[..2], &[0, 0]);
    assert!(p.chunks(2).skip(1).all(|c| c[0] > 0));
    for w in p.chunks(2).collect::<Vec<_>>().windows(2) {
        assert_eq!((w[1][0] - w[0][0]).abs() + (w[1][1] - w[0][1]).abs(), 1);
    }
    assert_eq!(p, conditioned_path(60, 0.5, true, 3, 9).unwrap());
    assert_ne!(p, conditioned_path(60, 0.5, true, 3, 10).unwrap());
}

#[test]
fn survival_matches_simple_walk_values() {
    let s = survival(4, 0.5, false, 0).unwrap();
    // simple random walk on Z^2: P[Lambda_1] = 1/4, P[Lambda_2] = 1/4 * 3/4
    assert!((s[0] - 0.25).abs() < 1e-12);
    assert!((s[1] - 0.1875).abs() < 1e-12);
    assert!(s.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn step_limits_are_enforced() {
    assert!(survival(0, 0.5, false, 0).is_err());
    assert!(survival(MAX_STEPS + 1, 0.5, false, 0).is_err());
    assert!(conditioned_path(MAX_STEPS + 1, 0.5, false, 0, 0).is_err());
    assert!(conditioned_path(10, 1.5, true, 0, 0).is_err());
}
