use condwalk::conditioning::{exact_survival, exact_survival_curve, rejection_sample};
use condwalk::kernel::KernelOptions;
use condwalk::Environment;

#[test]
fn acceptance_rate_agrees_with_exact_survival() {
    for (env, seed) in [
        (Environment::constant(2).unwrap(), 1),
        (Environment::iid_uniform(2, 0.5, 7).unwrap(), 2),
        (Environment::iid_uniform(3, 0.4, 8).unwrap(), 3),
    ] {
        let n = 40;
        let set = rejection_sample(&env, n, 4000, None, seed).unwrap();
        let p = exact_survival(&env, n).unwrap();
        let acc = set.acceptance();
        let se = (p * (1.0 - p) / acc.trials as f64).sqrt();
        assert!((set.acceptance_rate - p).abs() < 4.0 * se, "{} vs {p}", set.acceptance_rate);
        for path in &set.paths {
            assert!((1..=n).all(|k| path.coord(k, 0) > 0));
            assert_eq!(path.steps(), n);
        }
    }
}

#[test]
fn survival_slope_in_range_for_iid_environment() {
    let env = Environment::iid_uniform(2, 0.5, 7).unwrap();
    let curve = exact_survival_curve(&env, 128, &KernelOptions::default()).unwrap();
    let slope = curve.log_log_slope(&[16, 32, 64, 128]).unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "{slope}");
    assert!(curve.points.windows(2).all(|w| w[1].probability <= w[0].probability));
}

#[test]
fn samples_do_not_depend_on_batching() {
    let env = Environment::iid_uniform(2, 0.5, 3).unwrap();
    let a = rejection_sample(&env, 30, 50, None, 9).unwrap();
    let b = rejection_sample(&env, 30, 80, None, 9).unwrap();
    assert_eq!(a.paths[..], b.paths[..50]);
}
