use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrinkflow_core::geometry::{build_circle, build_sphere};
use shrinkflow_core::graph::{graph_diagnostics, graph_quantities, gradient_operator, q2_norm, q_inner, q_norm, SecondVariation};
use shrinkflow_core::reduction::{build_reduction, KernelChoice};
use shrinkflow_core::Surface;

/// Smooth random field: a few Fourier modes with decaying coefficients,
/// scaled to sup norm `amp`.
fn random_field(base: &Surface, rng: &mut ChaCha8Rng, amp: f64) -> Vec<f64> {
    let th = base.grid.params();
    let coef: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let d = 1.0 / (1.0 + (k * k) as f64);
            (rng.gen_range(-1.0..1.0) * d, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let u: Vec<f64> = th
        .iter()
        .map(|t| coef.iter().enumerate().map(|(k, (c, p))| c * (k as f64 * t + p).cos()).sum())
        .collect();
    let s = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    u.iter().map(|v| amp * v / s).collect()
}

fn axial_field(base: &Surface, rng: &mut ChaCha8Rng, amp: f64) -> Vec<f64> {
    let th = base.grid.params();
    let coef: Vec<f64> = (0..5).map(|k| rng.gen_range(-1.0..1.0) / (1.0 + (k * k) as f64)).collect();
    let u: Vec<f64> = th
        .iter()
        .map(|t| coef.iter().enumerate().map(|(k, c)| c * (k as f64 * t).cos()).sum())
        .collect();
    let s = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    u.iter().map(|v| amp * v / s).collect()
}

fn modified_bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..200 {
        term *= (x / 2.0) * (x / 2.0) / (m * m) as f64;
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

#[test]
fn translated_circle_area_converges_with_refinement() {
    // F(circle r + x0) = 2 pi r exp(-(r^2 + |x0|^2)/4) I0(r |x0| / 2)
    let (r, shift) = (SQRT_2, 6.0);
    let want = 2.0 * PI * r * (-(r * r + shift * shift) / 4.0).exp() * modified_bessel_i0(r * shift / 2.0);
    let errs: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| {
            let c = build_circle(r, n).unwrap();
            (c.gaussian_area_transformed(1.0, [shift, 0.0]) - want).abs()
        })
        .collect();
    assert!(errs[1] < errs[0] * 1e-3, "{errs:?}");
    assert!(errs[0] > 1e-12 * want && errs[2] < 1e-13 * want, "{errs:?}");
}

#[test]
fn dilated_unit_circle_area() {
    let c = build_circle(1.0, 64).unwrap();
    for i in 1..40 {
        let t0 = 0.1 * i as f64;
        let want = 2.0 * PI * t0 * (-t0 * t0 / 4.0).exp();
        assert!((c.gaussian_area_transformed(t0, [0.0, 0.0]) - want).abs() < 1e-13);
    }
}

#[test]
fn shrinker_residuals_vanish_at_every_resolution() {
    for n in [16usize, 32, 64, 128] {
        let c = build_circle(SQRT_2, n).unwrap();
        assert!(c.shrinker_residual().iter().all(|r| r.abs() < 1e-12));
    }
    for n in [32usize, 64, 128] {
        let s = build_sphere(2.0, n).unwrap();
        assert!(s.shrinker_residual().iter().all(|r| r.abs() < 1e-12));
    }
}

#[test]
fn area_factor_is_one_at_the_base() {
    for base in [build_circle(SQRT_2, 64).unwrap(), build_sphere(2.0, 48).unwrap()] {
        let q = graph_quantities(&base, &vec![0.0; base.len()]).unwrap();
        assert!(q.zeta.iter().all(|z| (z - 1.0).abs() < 1e-14));
    }
}

#[test]
fn gradient_matches_area_derivative() {
    let base = build_circle(SQRT_2, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let area = |u: &[f64]| graph_diagnostics(&base, u).unwrap().0.f_rel;
    for _ in 0..20 {
        let u = random_field(&base, &mut rng, 0.1);
        let phi = random_field(&base, &mut rng, 1.0);
        let h = 1e-5;
        let plus: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a - h * b).collect();
        let d = (area(&plus) - area(&minus)) / (2.0 * h);
        let g = gradient_operator(&base, &u).unwrap();
        let lhs = q_inner(&base, &g, &phi).unwrap() + d;
        assert!(lhs.abs() <= 1e-6 * (1.0 + q_norm(&base, &phi).unwrap()), "{lhs}");
    }
}

#[test]
fn linearization_error_is_linear_in_step() {
    let base = build_circle(SQRT_2, 128).unwrap();
    let l0 = SecondVariation::new(&base);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let v = random_field(&base, &mut rng, 1.0);
        let lv = l0.apply(&v);
        let err = |eps: f64| {
            let u: Vec<f64> = v.iter().map(|x| eps * x).collect();
            let n = gradient_operator(&base, &u).unwrap();
            let d: Vec<f64> = n.iter().zip(&lv).map(|(a, b)| a / eps - b).collect();
            q_norm(&base, &d).unwrap()
        };
        let e: Vec<f64> = [0.04, 0.02, 0.01, 0.005].iter().map(|&s| err(s)).collect();
        for w in e.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..2.3).contains(&r), "{e:?}");
        }
    }
}

/// Largest ratio over the second half of a sample relative to the first.
fn constant_drift(ratios: &[f64]) -> f64 {
    let (a, b) = ratios.split_at(ratios.len() / 2);
    let fa = a.iter().cloned().fold(0.0, f64::max);
    let fb = b.iter().cloned().fold(0.0, f64::max);
    fb / fa
}

#[test]
fn gradient_is_lipschitz_in_the_strong_norm() {
    let base = build_circle(SQRT_2, 128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ratios = Vec::new();
    for _ in 0..100 {
        let u = random_field(&base, &mut rng, 0.05);
        let v = random_field(&base, &mut rng, 0.05);
        let nu = gradient_operator(&base, &u).unwrap();
        let nv = gradient_operator(&base, &v).unwrap();
        let dn: Vec<f64> = nu.iter().zip(&nv).map(|(a, b)| a - b).collect();
        let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        ratios.push(q_norm(&base, &dn).unwrap() / q2_norm(&base, &du).unwrap());
    }
    assert!(constant_drift(&ratios) <= 2.0, "{ratios:?}");
}

#[test]
fn strong_norm_is_controlled_by_the_gradient() {
    let base = build_sphere(2.0, 48).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut ratios = Vec::new();
    for _ in 0..100 {
        let u = axial_field(&base, &mut rng, 0.05);
        let n = gradient_operator(&base, &u).unwrap();
        let rhs = q_norm(&base, &u).unwrap() + q_norm(&base, &n).unwrap();
        ratios.push(q2_norm(&base, &u).unwrap() / rhs);
    }
    assert!(constant_drift(&ratios) <= 2.0, "{ratios:?}");
}

#[test]
fn kernel_projection_is_self_adjoint_and_idempotent() {
    let base = build_circle(SQRT_2, 64).unwrap();
    let red = build_reduction(&base, KernelChoice::Synthetic(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let u = random_field(&base, &mut rng, 1.0);
        let v = random_field(&base, &mut rng, 1.0);
        let pu = red.project(&u);
        let pv = red.project(&v);
        let a = q_inner(&base, &pu, &v).unwrap();
        let b = q_inner(&base, &u, &pv).unwrap();
        assert!((a - b).abs() <= 1e-12);
        let ppu = red.project(&pu);
        assert!(ppu.iter().zip(&pu).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}

#[test]
fn psi_inverts_the_extended_operator_both_ways() {
    let base = build_circle(SQRT_2, 64).unwrap();
    let mut red = build_reduction(&base, KernelChoice::Synthetic(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let u = random_field(&base, &mut rng, 0.02);
        let back = red.psi(&red.extended_operator(&u).unwrap()).unwrap();
        assert!(back.iter().zip(&u).all(|(a, b)| (a - b).abs() <= 1e-8));
        let v = random_field(&base, &mut rng, 0.02);
        let w = red.psi(&v).unwrap();
        let again = red.extended_operator(&w).unwrap();
        assert!(again.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-8));
    }
}

#[test]
fn lojasiewicz_holds_near_a_shrinker_with_trivial_kernel() {
    // |N(s phi)|_Q >= c |F(s phi) - F(0)|^{1/2}, with c not degenerating as s -> 0
    let base = build_circle(SQRT_2, 128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let phi = random_field(&base, &mut rng, 1.0);
        let ratios: Vec<f64> = [0.08, 0.04, 0.02, 0.01]
            .iter()
            .map(|&s| {
                let u: Vec<f64> = phi.iter().map(|p| s * p).collect();
                let gap = graph_diagnostics(&base, &u).unwrap().0.f_rel.abs();
                q_norm(&base, &gradient_operator(&base, &u).unwrap()).unwrap() / gap.sqrt()
            })
            .collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(lo > 0.0 && hi / lo < 1.5, "{ratios:?}");
    }
}
