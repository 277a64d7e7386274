use std::f64::consts::{PI, SQRT_2};

use proptest::prelude::*;
use shrinkflow_core::geometry::{build_circle, build_ellipse, build_sphere, entropy, EntropySearchConfig};
use shrinkflow_core::group::{apply_group, comeback_schedule, orbit_distance, GroupElement, OrbitOptions};

fn element() -> impl Strategy<Value = GroupElement> {
    (-PI..PI, any::<bool>(), -0.5..0.5f64, -0.5..0.5f64, 0.5..2.0f64).prop_map(|(angle, flip, tx, ty, scale)| {
        GroupElement {
            angle,
            flip,
            translation: [tx, ty],
            scale,
        }
    })
}

fn max_point_gap(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (p, q)| m.max((p[0] - q[0]).hypot(p[1] - q[1])))
}

proptest! {
    #[test]
    fn composition_acts_as_successive_application(g in element(), h in element()) {
        let m = build_ellipse(1.5, 1.1, 64).unwrap();
        let once = apply_group(&g.compose(&h), &m).unwrap();
        let twice = apply_group(&g, &apply_group(&h, &m).unwrap()).unwrap();
        prop_assert!(max_point_gap(&once.points(), &twice.points()) < 1e-12);
    }

    #[test]
    fn inverse_undoes_the_element(g in element()) {
        let m = build_ellipse(1.5, 1.1, 64).unwrap();
        let back = apply_group(&g.inverse(), &apply_group(&g, &m).unwrap()).unwrap();
        prop_assert!(max_point_gap(&back.points(), &m.points()) < 1e-12);
    }

    #[test]
    fn composition_is_associative(f in element(), g in element(), h in element()) {
        let p = [0.3, -1.2];
        let a = f.compose(&g).compose(&h).apply_point(p);
        let b = f.compose(&g.compose(&h)).apply_point(p);
        prop_assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-12);
    }

    #[test]
    fn dilated_circle_area_matches_closed_form(r in 0.5..3.0f64, a in 0.3..3.0f64) {
        let c = build_circle(r, 128).unwrap();
        let scaled = apply_group(&GroupElement::dilation(a), &c).unwrap();
        let ra = r * a;
        let want = 2.0 * PI * ra * (-ra * ra / 4.0).exp();
        prop_assert!((scaled.gaussian_area() - want).abs() < 1e-12 * want.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn schedule_identities(t1 in 0.0..10.0f64, gap in 0.01..5.0f64, b in 0.01..2.0f64) {
        let t2 = t1 + gap;
        let s = comeback_schedule(t1, t2, b, [0.0, 0.0], GroupElement::identity()).unwrap();
        prop_assert!((s.t0 - (1.0 - b * b * (-t2).exp())).abs() <= 1e-12);
        prop_assert!((s.correspondence(0.0) + (-t2).exp()).abs() <= 1e-12);
        prop_assert!((s.correspondence(s.t_bar) + (-t1).exp()).abs() <= 1e-12);
        prop_assert!(s.t_bar < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn orbit_distance_recovers_random_elements(
        angle in -PI..PI,
        tx in -0.3..0.3f64,
        ty in -0.3..0.3f64,
        scale in 0.8..1.25f64,
    ) {
        let base = build_ellipse(1.6, 1.1, 64).unwrap();
        let g = GroupElement { angle, flip: false, translation: [tx, ty], scale };
        let moved = apply_group(&g, &base).unwrap();
        let fit = orbit_distance(&moved, &base, &OrbitOptions::default()).unwrap();
        prop_assert!(fit.distance < 1e-6, "distance {}", fit.distance);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn entropy_is_invariant(g in element()) {
        let cfg = EntropySearchConfig::default();
        let m = build_ellipse(1.5, 1.2, 128).unwrap();
        let e0 = entropy(&m, &cfg).unwrap().lambda;
        let e1 = entropy(&apply_group(&g, &m).unwrap(), &cfg).unwrap().lambda;
        prop_assert!((e0 - e1).abs() <= 10.0 * cfg.x_tol, "{e0} vs {e1}");
    }
}

#[test]
fn sphere_entropy_is_its_area() {
    let s = build_sphere(2.0, 64).unwrap();
    let e = entropy(&s, &EntropySearchConfig::default()).unwrap();
    assert!((e.lambda - 16.0 * PI / 1f64.exp()).abs() < 1e-8);
    let c = build_circle(SQRT_2, 64).unwrap();
    let e = entropy(&c, &EntropySearchConfig::default()).unwrap();
    assert!((e.lambda - c.gaussian_area()).abs() < 1e-8);
}
