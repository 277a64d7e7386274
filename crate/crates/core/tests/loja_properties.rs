use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrinkflow_core::loja::{check_decay, decay_bound, geometric_series_bound, Direction};

fn admissible() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.05..0.95f64, 0.02..0.98f64, (0.01f64).ln()..(100.0f64).ln()).prop_map(|(beta, frac, log_c1)| {
        let p = 1.0 / (1.0 - beta);
        (beta, 1.0 + frac * (p - 1.0), log_c1.exp())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn geometric_series_stays_below_the_integral_bound((beta, gamma, c1) in admissible()) {
        let g = geometric_series_bound(beta, gamma, c1, 400).unwrap();
        prop_assert!(g.holds);
        prop_assert!(g.partial + g.tail <= g.rhs);
    }
}

/// Exact solution of `G' = -c G^{2-beta}` over each step, with `c` drawn
/// from `[1, 1.5]` per step.
fn jittered_series(rng: &mut ChaCha8Rng, beta: f64, g0: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = vec![0.0];
    let mut g = vec![g0];
    for _ in 0..steps {
        let dt = rng.gen_range(0.01..0.1);
        let c = 1.0 + rng.gen_range(0.0..0.5);
        let next = decay_bound(*g.last().unwrap(), beta, c * dt);
        t.push(t.last().unwrap() + dt);
        g.push(next);
    }
    (t, g)
}

#[test]
fn decay_conclusion_holds_on_jittered_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let beta = rng.gen_range(0.1..0.9);
        let g0 = rng.gen_range(0.1..2.0);
        let (t, g) = jittered_series(&mut rng, beta, g0, 150);
        let r = check_decay(&t, &g, beta, Direction::Decreasing, 1e-9).unwrap();
        assert!(r.holds, "beta {beta}: excess {}", r.worst_excess);
        // mirrored in time the series grows and the increasing form applies
        let tm: Vec<f64> = t.iter().rev().map(|s| t.last().unwrap() - s).collect();
        let gm: Vec<f64> = g.iter().rev().cloned().collect();
        let r = check_decay(&tm, &gm, beta, Direction::Increasing, 1e-9).unwrap();
        assert!(r.holds, "beta {beta}: excess {}", r.worst_excess);
    }
}

#[test]
fn decay_bound_is_a_solution() {
    // d/dt decay_bound = -G^{2-beta}
    for beta in [0.2, 0.5, 0.8] {
        for t in [0.0, 0.5, 3.0] {
            let h = 1e-6;
            let d = (decay_bound(1.3, beta, t + h) - decay_bound(1.3, beta, t - h)) / (2.0 * h);
            let g = decay_bound(1.3, beta, t);
            assert!((d + g.powf(2.0 - beta)).abs() < 1e-7 * (1.0 + g));
        }
    }
}
