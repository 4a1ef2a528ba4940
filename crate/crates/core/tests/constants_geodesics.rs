use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use subriemann::cdconstants::{
    derive_constants, diameter_integral, entropy_diameter_quadrature, harnack_factor, integrate_half_line, Bound,
    CDParameters,
};
use subriemann::geodesics::{
    cc_distance, dtheta_duality_residual, heisenberg_distance, heisenberg_distance_from_origin, integrate_geodesic,
    DistanceStatus, GeodesicState, ShootingConfig,
};
use subriemann::models::{build, GroupLaw, ModelName};
use subriemann::structure::ChartPoint;

fn params() -> impl Strategy<Value = CDParameters> {
    (0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0, 2usize..6).prop_map(|(r1, r2, k, d)| CDParameters::new(r1, r2, k, d, 1))
}

#[test]
fn half_line_quadrature_reproduces_known_integrals() {
    assert_relative_eq!(integrate_half_line(|x| (-x).exp() / x.sqrt(), 1e-14), PI.sqrt(), max_relative = 1e-12);
    assert_relative_eq!(integrate_half_line(|x| 1.0 / (1.0 + x * x), 1e-14), PI / 2.0, max_relative = 1e-12);
    assert_relative_eq!(integrate_half_line(|x| x * (-x * x).exp(), 1e-14), 0.5, max_relative = 1e-12);
}

#[test]
fn riemannian_limit_recovers_classical_constants() {
    let dc = derive_constants(&CDParameters::riemannian(0.0, 3)).unwrap();
    assert_eq!(dc.dim, 3.0);
    assert_eq!(dc.liyau.a(0.7), 1.0);
    assert_relative_eq!(dc.liyau.c(0.5), 3.0, max_relative = 1e-15);
    assert_eq!(dc.alpha, Bound::NotApplicable);
    assert_eq!(dc.diameter_bound, Bound::Infinite);

    let dc = derive_constants(&CDParameters::riemannian(2.0, 4)).unwrap();
    assert_relative_eq!(dc.lambda1_bound.finite().unwrap(), 8.0 / 3.0, max_relative = 1e-15);
    assert_eq!(derive_constants(&CDParameters::riemannian(1.0, 1)).unwrap().lambda1_bound, Bound::Infinite);
}

#[test]
fn invalid_parameters_are_rejected() {
    for p in [
        CDParameters::new(1.0, 0.0, 1.0, 2, 1),
        CDParameters::new(1.0, -1.0, 1.0, 2, 1),
        CDParameters::new(1.0, 1.0, 0.0, 2, 1),
        CDParameters::new(f64::NAN, 1.0, 1.0, 2, 1),
        CDParameters::new(1.0, 1.0, 1.0, 0, 1),
        CDParameters::new(1.0, 1.0, -1.0, 2, 0),
    ] {
        assert!(derive_constants(&p).is_err(), "{p:?}");
    }
}

#[test]
fn harnack_factor_is_degenerate_for_reversed_times() {
    assert_eq!(harnack_factor(4.0, 2, 1.0, 1.0, 0.0), f64::INFINITY);
    assert_eq!(harnack_factor(4.0, 2, 2.0, 1.0, 0.0), f64::INFINITY);
    assert_relative_eq!(harnack_factor(4.0, 2, 0.5, 1.0, 0.0), 4.0, max_relative = 1e-15);
}

#[test]
fn heisenberg_closed_form_special_cases() {
    assert_eq!(heisenberg_distance_from_origin(&[0.0, 0.0, 0.0]), 0.0);
    assert_relative_eq!(heisenberg_distance_from_origin(&[0.3, -0.4, 0.0]), 0.5, max_relative = 1e-15);
    assert_relative_eq!(heisenberg_distance_from_origin(&[0.0, 0.0, 1.0 / (4.0 * PI)]), 1.0, max_relative = 1e-15);
    let near_axis = heisenberg_distance_from_origin(&[1e-9, 0.0, 1.0 / (4.0 * PI)]);
    assert!((near_axis - 1.0).abs() < 1e-6);
}

#[test]
fn shooting_matches_closed_form_on_heisenberg() {
    let (s, desc) = build(ModelName::Heisenberg { n: 1 });
    let group = desc.group.unwrap();
    let origin = ChartPoint::new(vec![0.0; 3]);
    for target in [[1.0, 0.0, 0.0], [0.5, 0.2, 0.3], [0.0, 0.0, 0.5], [-0.7, 0.4, -0.2]] {
        let y = ChartPoint::new(target.to_vec());
        let r = cc_distance(&s, &origin, &y, Some(&group), &ShootingConfig::default()).unwrap();
        assert_eq!(r.status, DistanceStatus::Converged);
        assert_relative_eq!(r.value, heisenberg_distance_from_origin(&target), max_relative = 1e-6);
        assert!(r.lower_bound.unwrap() <= r.value + 1e-12);
    }
    assert_eq!(cc_distance(&s, &origin, &origin, Some(&group), &ShootingConfig::default()).unwrap().value, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diameter_quadrature_matches_closed_form(p in params()) {
        let q = entropy_diameter_quadrature(&p).unwrap();
        prop_assert!(q.relative_error < 1e-9, "{q:?}");
        let dc = derive_constants(&p).unwrap();
        let alpha = dc.alpha.finite().unwrap();
        // ∫₀^∞ x^{-1/2}/(2x + c) dx = π/√(2c)
        let oracle = 2.0 * PI * (2.0 * dc.dim / alpha).sqrt();
        prop_assert!((diameter_integral(dc.dim, alpha) - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn derived_constants_are_consistent(p in params(), t in 0.05f64..10.0) {
        let dc = derive_constants(&p).unwrap();
        let d = p.d as f64;
        prop_assert!(dc.dim > d);
        prop_assert!((dc.dim - d * (1.0 + 1.5 * p.kappa / p.rho2)).abs() < 1e-12 * dc.dim);
        prop_assert_eq!(dc.harnack_exponent, dc.dim / 2.0);
        prop_assert!((dc.harnack_gauss * d - dc.dim).abs() < 1e-12 * dc.dim);
        prop_assert!(dc.liyau.b(t) > 0.0);
        let g1 = dc.kernel_global_bound(t).finite().unwrap();
        let g2 = dc.kernel_global_bound(2.0 * t).finite().unwrap();
        prop_assert!(g1 >= g2 && g2 >= 1.0);
        let l1 = dc.lambda1_bound.finite().unwrap();
        prop_assert!(l1 > 0.0 && l1 <= p.rho1 * d / (d - 1.0) + 1e-12);
    }

    #[test]
    fn harnack_factor_is_monotone(dim in 1.0f64..20.0, s in 0.05f64..1.0, gap in 0.01f64..2.0, r in 0.0f64..3.0) {
        let t = s + gap;
        let f = harnack_factor(dim, 2, s, t, r);
        prop_assert!(f >= 1.0);
        prop_assert!(harnack_factor(dim, 2, s, t, r + 0.1) > f);
        prop_assert!(harnack_factor(dim, 2, s, t + 0.1, r) >= 0.0);
    }

    #[test]
    fn gaussian_kernel_satisfies_the_euclidean_harnack_bound(
        x in prop::array::uniform2(-3.0f64..3.0),
        y in prop::array::uniform2(-3.0f64..3.0),
        s in 0.05f64..2.0,
        gap in 0.01f64..3.0,
    ) {
        let t = s + gap;
        let p = |v: &[f64; 2], t: f64| (-(v[0] * v[0] + v[1] * v[1]) / (4.0 * t)).exp() / (4.0 * PI * t);
        let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let dc = derive_constants(&CDParameters::riemannian(0.0, 2)).unwrap();
        prop_assert!(p(&x, s) <= p(&y, t) * dc.harnack_factor(s, t, r) * (1.0 + 1e-12));
    }

    #[test]
    fn geodesic_speed_is_conserved(name in prop::sample::select(ModelName::ALL.to_vec()), seed in 0u64..10_000) {
        let (s, desc) = build(name);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = desc.sample_point(&mut rng);
        let u: Vec<f64> = (0..s.d()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let a: Vec<f64> = (0..s.v()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let state = GeodesicState { position: x, u, a };
        let horizon = if name == ModelName::Su2 { 0.5 } else { 2.0 };
        let tr = integrate_geodesic(&s, &state, horizon, 2000).unwrap();
        prop_assert!(tr.speed_drift() < 1e-10, "{name}: drift {}", tr.speed_drift());
    }

    #[test]
    fn short_heisenberg_geodesics_minimise(theta in 0.0f64..(2.0 * PI), len in 0.1f64..1.5, a in -1.4f64..1.4) {
        let (s, _) = build(ModelName::Heisenberg { n: 1 });
        let u = vec![len * theta.cos(), len * theta.sin()];
        let state = GeodesicState { position: ChartPoint::new(vec![0.0; 3]), u, a: vec![a] };
        let end = integrate_geodesic(&s, &state, 1.0, 2000).unwrap().last().position.clone();
        let d = heisenberg_distance_from_origin(&end.0);
        prop_assert!((d - len).abs() < 1e-8 * len, "closed form {d} vs length {len}");
    }

    #[test]
    fn heisenberg_distance_is_a_homogeneous_metric(
        p in prop::array::uniform3(-2.0f64..2.0),
        q in prop::array::uniform3(-2.0f64..2.0),
        r in prop::array::uniform3(-2.0f64..2.0),
        delta in 0.1f64..5.0,
    ) {
        let dpq = heisenberg_distance(&p, &q);
        prop_assert!((dpq - heisenberg_distance(&q, &p)).abs() < 1e-9 * (1.0 + dpq));
        prop_assert!(dpq <= heisenberg_distance(&p, &r) + heisenberg_distance(&r, &q) + 1e-9);
        let g = GroupLaw::Heisenberg { n: 1 };
        let shifted = heisenberg_distance(&g.mul(&r, &p), &g.mul(&r, &q));
        prop_assert!((dpq - shifted).abs() < 1e-9 * (1.0 + dpq));
        let dil = |v: &[f64; 3]| [delta * v[0], delta * v[1], delta * delta * v[2]];
        let scaled = heisenberg_distance(&dil(&p), &dil(&q));
        prop_assert!((scaled - delta * dpq).abs() < 1e-9 * (1.0 + scaled));
        let horizontal = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        prop_assert!(dpq >= horizontal - 1e-12);
    }

    #[test]
    fn vertical_forms_are_dual_to_the_complex_structures(
        name in prop::sample::select(vec![ModelName::Heisenberg { n: 1 }, ModelName::FreeStep2D3, ModelName::Su2]),
        seed in 0u64..10_000,
        c1 in prop::array::uniform3(-1.0f64..1.0),
        c2 in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let (s, desc) = build(name);
        let x = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let d = s.d();
        let res = dtheta_duality_residual(&s, &x, &c1[..d], &c2[..d]).unwrap();
        prop_assert!(res.iter().all(|r| r.abs() < 1e-10), "{name}: {res:?}");
    }
}
