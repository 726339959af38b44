use proptest::prelude::*;

use condwalk::rng::{Domain, StreamId};
use condwalk::{EdgeId, Environment, EnvironmentManifest, Generator, Point};
use rand::Rng;

fn generators() -> Vec<(f64, Generator)> {
    vec![
        (0.5, Generator::Constant { value: 1.0 }),
        (0.3, Generator::IidUniform {}),
        (0.25, Generator::IidTwoPoint { p: 0.3, lo: 0.5, hi: 3.0 }),
        (0.4, Generator::Periodic { pattern: vec![0.5, 1.0, 2.0] }),
    ]
}

fn random_edge<R: Rng>(rng: &mut R, d: usize, span: i64) -> EdgeId {
    let coords: Vec<i64> = (0..d).map(|_| rng.random_range(-span..=span)).collect();
    EdgeId::positive(Point::new(&coords).unwrap(), rng.random_range(0..d))
}

#[test]
fn conductances_are_strictly_elliptic() {
    let mut rng = StreamId::new(1, Domain::Misc, 0).rng();
    for (kappa, g) in generators() {
        for d in [2, 3] {
            let env = Environment::new(d, kappa, g.clone(), 17).unwrap();
            for _ in 0..100_000 {
                let w = env.conductance(&random_edge(&mut rng, d, 1 << 40));
                assert!(w > kappa && w < 1.0 / kappa, "{g:?}: {w}");
            }
        }
    }
}

#[test]
fn manifest_reconstructs_identical_fields() {
    let mut rng = StreamId::new(2, Domain::Misc, 0).rng();
    for (kappa, g) in generators() {
        let env = Environment::new(3, kappa, g, 99).unwrap();
        // a second construction from text only, as another process would
        let text = env.manifest().to_toml();
        let other = Environment::from_manifest(&EnvironmentManifest::from_toml_str(&text).unwrap()).unwrap();
        for _ in 0..10_000 {
            let e = random_edge(&mut rng, 3, 1 << 30);
            assert_eq!(env.conductance(&e).to_bits(), other.conductance(&e).to_bits());
        }
    }
}

#[test]
fn iid_moments_match_the_generator() {
    let mut rng = StreamId::new(3, Domain::Misc, 0).rng();
    for (kappa, g) in generators().into_iter().filter(|(k, g)| g.iid_moments(*k).is_some()) {
        let env = Environment::new(2, kappa, g.clone(), 5).unwrap();
        let (mean, var) = g.iid_moments(kappa).unwrap();
        // distinct edges: a row of the positive-x1 edges along the x2 axis
        let n = 100_000;
        let start: i64 = rng.random_range(-1_000_000..1_000_000);
        let ws: Vec<f64> = (0..n)
            .map(|k| env.conductance(&EdgeId::positive(Point::new(&[start, k]).unwrap(), 0)))
            .collect();
        let m = ws.iter().sum::<f64>() / n as f64;
        let v = ws.iter().map(|w| (w - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let fourth = ws.iter().map(|w| (w - mean).powi(4)).sum::<f64>() / n as f64;
        let se_mean = (var / n as f64).sqrt();
        let se_var = ((fourth - var * var) / n as f64).sqrt();
        assert!((m - mean).abs() < 3.0 * se_mean, "{g:?}: mean {m} vs {mean}");
        assert!((v - var).abs() < 3.0 * se_var, "{g:?}: variance {v} vs {var}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shift_is_translation(
        seed in any::<u64>(),
        x in prop::array::uniform3(-1_000_000i64..1_000_000),
        a in prop::array::uniform3(-1_000_000i64..1_000_000),
        axis in 0usize..3,
    ) {
        let env = Environment::iid_uniform(3, 0.4, seed).unwrap();
        let by = Point::new(&x).unwrap();
        let e = EdgeId::positive(Point::new(&a).unwrap(), axis);
        let shifted = env.shift(by);
        prop_assert_eq!(shifted.conductance(&e).to_bits(), env.conductance(&e.translated(by)).to_bits());
    }

    #[test]
    fn edge_conductance_is_symmetric(seed in any::<u64>(), a in prop::array::uniform2(-1000i64..1000), axis in 0usize..2) {
        let env = Environment::iid_uniform(2, 0.5, seed).unwrap();
        let x = Point::new(&a).unwrap();
        let y = x.step(axis, 1);
        prop_assert_eq!(env.conductance_between(x, y).unwrap(), env.conductance_between(y, x).unwrap());
        prop_assert_eq!(env.omega(x, axis, 1), env.omega(y, axis, -1));
    }
}
