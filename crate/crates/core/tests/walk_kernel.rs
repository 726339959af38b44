use std::collections::HashMap;

use proptest::prelude::*;

use condwalk::kernel::exact_kernel;
use condwalk::rng::{Domain, StreamId};
use condwalk::walk::{simulate_stream, step_distribution};
use condwalk::{Environment, Point, TargetSet};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn reversibility_is_exact(seed in any::<u64>(), a in prop::array::uniform2(-10_000i64..10_000), k in 0usize..4) {
        let env = Environment::iid_uniform(2, 0.3, seed).unwrap();
        let x = Point::new(&a).unwrap();
        let (y, pxy) = step_distribution(&env, x)[k];
        let pyx = step_distribution(&env, y).into_iter().find(|(z, _)| *z == x).unwrap().1;
        let w = env.conductance_between(x, y).unwrap();
        let (lx, ly) = (env.pi(x) * pxy, env.pi(y) * pyx);
        prop_assert!((lx - w).abs() <= 4.0 * f64::EPSILON * w, "{lx} vs {w}");
        prop_assert!((ly - w).abs() <= 4.0 * f64::EPSILON * w, "{ly} vs {w}");
    }

    #[test]
    fn kernel_parity_and_conservation(seed in any::<u64>(), n in 1usize..14, s in prop::array::uniform2(-3i64..3)) {
        let env = Environment::iid_uniform(2, 0.5, seed).unwrap();
        let start = Point::new(&s).unwrap();
        let k = exact_kernel(&env, start, n, None).unwrap();
        prop_assert!((k.total_mass() - 1.0).abs() < 1e-10);
        for (y, p) in k.entries() {
            if (y.l1_distance(&start) as usize) % 2 != n % 2 {
                prop_assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn absorbed_mass_is_non_increasing(seed in any::<u64>(), n in 1usize..12) {
        let env = Environment::iid_uniform(2, 0.5, seed).unwrap();
        let half = TargetSet::HalfSpaceAtMost { axis: 0, level: 0 };
        let start = Point::new(&[1, 0]).unwrap();
        let a = exact_kernel(&env, start, n, Some(&half)).unwrap().total_mass();
        let b = exact_kernel(&env, start, n + 1, Some(&half)).unwrap().total_mass();
        prop_assert!(b <= a + 1e-15);
    }
}

#[test]
fn simulated_law_matches_the_exact_kernel() {
    let env = Environment::iid_uniform(2, 0.5, 21).unwrap();
    let n = 12;
    let origin = Point::origin(2);
    let exact = exact_kernel(&env, origin, n, None).unwrap();
    let reps = 1_000_000u64;
    let base = StreamId::new(4, Domain::Walk, 0);
    let mut counts: HashMap<Point, u64> = HashMap::new();
    for i in 0..reps {
        *counts.entry(simulate_stream(&env, origin, n, base.with_index(i)).last()).or_default() += 1;
    }
    let mut tv = 0.0;
    for (y, p) in exact.entries() {
        tv += (counts.remove(y).unwrap_or(0) as f64 / reps as f64 - p).abs();
    }
    assert!(counts.is_empty(), "simulated endpoints outside the exact support");
    tv *= 0.5;
    assert!(tv < 0.01, "TV {tv}");
}
