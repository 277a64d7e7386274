use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrinkflow_core::flow::{
    reparametrize_equal_arclength, run_graph_flow, stable_manifold_offset, FlowOptions, SnapshotState,
};
use shrinkflow_core::geometry::{build_circle, build_ellipse};
use shrinkflow_core::loja::drift_sample;
use shrinkflow_core::shrinker::{closure_defect_table, group_fields, newton_find_shrinker, spectrum, NewtonOptions, ShootOptions};

fn random_field(n: usize, rng: &mut ChaCha8Rng, amp: f64) -> Vec<f64> {
    let coef: Vec<(f64, f64)> = (0..5)
        .map(|k| (rng.gen_range(-1.0..1.0) / (1.0 + (k * k) as f64), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let u: Vec<f64> = (0..n)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            coef.iter().enumerate().map(|(k, (c, p))| c * (k as f64 * t + p).cos()).sum()
        })
        .collect();
    let s = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    u.iter().map(|v| amp * v / s).collect()
}

fn graph(state: &SnapshotState) -> &[f64] {
    match state {
        SnapshotState::Graph(u) => u,
        SnapshotState::Points { .. } => panic!("graph run stored points"),
    }
}

#[test]
fn gaussian_area_never_increases() {
    let base = build_circle(SQRT_2, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..3 {
        let u0 = random_field(64, &mut rng, 0.1);
        let tr = run_graph_flow(&base, &u0, 2.0, &FlowOptions::default(), None).unwrap();
        for w in tr.records.windows(2) {
            assert!(w[1].f <= w[0].f + 1e-10 * (1.0 + w[0].f.abs()), "{} -> {}", w[0].f, w[1].f);
        }
    }
}

#[test]
fn flow_commutes_with_grid_rotations() {
    let n = 64;
    let base = build_circle(SQRT_2, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let u0 = random_field(n, &mut rng, 0.1);
    let opts = FlowOptions {
        snapshot_stride: 50,
        ..FlowOptions::default()
    };
    let a = run_graph_flow(&base, &u0, 0.5, &opts, None).unwrap();
    for shift in [1usize, 5, 17] {
        let rotated: Vec<f64> = (0..n).map(|j| u0[(j + shift) % n]).collect();
        let b = run_graph_flow(&base, &rotated, 0.5, &opts, None).unwrap();
        assert_eq!(a.snapshots.len(), b.snapshots.len());
        for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
            let (ua, ub) = (graph(&sa.state), graph(&sb.state));
            for j in 0..n {
                assert!((ub[j] - ua[(j + shift) % n]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn tangential_resampling_keeps_the_area() {
    let e = build_ellipse(1.8, 0.9, 256).unwrap();
    let r = reparametrize_equal_arclength(&e).unwrap();
    assert!((e.gaussian_area() - r.gaussian_area()).abs() < 1e-10);
}

#[test]
fn circle_eigenvalues_are_converged() {
    let coarse = spectrum(&build_circle(SQRT_2, 128).unwrap(), 17).unwrap();
    let fine = spectrum(&build_circle(SQRT_2, 256).unwrap(), 17).unwrap();
    for (a, b) in coarse.eigenvalues.iter().zip(&fine.eigenvalues) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn newton_converges_quadratically() {
    let base = build_circle(SQRT_2, 128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..4 {
        let u0 = random_field(128, &mut rng, 0.1);
        let r = newton_find_shrinker(&base, &u0, &NewtonOptions::default()).unwrap();
        let e = &r.residuals;
        assert!(*e.last().unwrap() < 1e-10);
        // final three steps above round-off
        let ratios: Vec<f64> = e
            .windows(2)
            .filter(|w| w[1] > 1e-13)
            .map(|w| w[1] / (w[0] * w[0]))
            .collect();
        for q in ratios.iter().rev().take(3) {
            assert!(*q < 10.0, "{e:?}");
        }
    }
}

#[test]
fn closure_defect_is_monotone_across_the_bracket() {
    let table = closure_defect_table(0.4, 0.5, 11, &ShootOptions::default());
    assert!(table.iter().all(|(_, d)| d.is_finite()));
    let increasing = table.windows(2).all(|w| w[1].1 > w[0].1);
    let decreasing = table.windows(2).all(|w| w[1].1 < w[0].1);
    assert!(increasing || decreasing, "{table:?}");
    assert!(table[0].1 * table[10].1 < 0.0);
}

#[test]
fn drift_shrinks_towards_the_limit() {
    let base = build_circle(SQRT_2, 64).unwrap();
    let shape: Vec<f64> = base.grid.params().iter().map(|t| 0.05 * (2.0 * t).cos()).collect();
    let (h, _) = group_fields(&base);
    let opts = FlowOptions {
        converge_tol: 1e-7,
        snapshot_stride: 10,
        ..FlowOptions::default()
    };
    let off = stable_manifold_offset(&base, &shape, &h, &[4.0, 8.0, 12.0], &opts).unwrap();
    let u0: Vec<f64> = shape.iter().zip(&h).map(|(s, d)| s + off * d).collect();
    let tr = run_graph_flow(&base, &u0, 30.0, &opts, None).unwrap();
    let t_end = tr.last().t;
    let drifts: Vec<f64> = (0..10)
        .map(|k| drift_sample(&tr, 1.0 + k as f64, t_end).unwrap().drift)
        .collect();
    assert!(drifts.windows(2).all(|w| w[1] < w[0]), "{drifts:?}");
    assert!(*drifts.last().unwrap() < 1e-3 * drifts[0]);
}
