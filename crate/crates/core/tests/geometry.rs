use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subriemann::bochner::{bochner_residuals, cd_slack, random_field};
use subriemann::calculus::{commutator_lz_residual, forms, sublaplacian, Backend, ScalarField};
use subriemann::connection::{christoffel, koszul_residual, metric_compatibility_residual, torsion_verticality_residual};
use subriemann::curvature::{curvature_report, PointGeometry, RicciRoute};
use subriemann::expr::{c, var, Expr};
use subriemann::models::{build, ModelName};
use subriemann::structure::{
    validate_structure, vertical_count, vertical_flatten, vertical_unflatten, ChartPoint, StructureFunctions,
    SubRiemannianStructure, VectorField,
};

/// `φ = a x + b y + p x² + q xy + r y²`.
#[derive(Clone, Copy, Debug)]
struct Quadratic([f64; 5]);

impl Quadratic {
    fn expr(&self) -> Expr {
        let [a, b, p, q, r] = self.0;
        c(a) * var(0) + c(b) * var(1) + c(p) * var(0) * var(0) + c(q) * var(0) * var(1) + c(r) * var(1) * var(1)
    }
    fn value(&self, x: f64, y: f64) -> f64 {
        let [a, b, p, q, r] = self.0;
        a * x + b * y + p * x * x + q * x * y + r * y * y
    }
    fn laplacian(&self) -> f64 {
        2.0 * (self.0[2] + self.0[4])
    }
}

/// Orthonormal frame `e^{−φ}∂_x, e^{−φ}∂_y` of the metric `e^{2φ}|dx|²`.
fn conformal(phi: &Quadratic) -> SubRiemannianStructure {
    let e = phi.expr();
    let w = (c(0.0) - e.clone()).exp();
    let phi_x = e.diff(0);
    let phi_y = e.diff(1);
    let mut sf = StructureFunctions::zero(2, 0);
    sf.set_omega_antisym(0, 1, 0, w.clone() * phi_y);
    sf.set_omega_antisym(0, 1, 1, c(0.0) - w.clone() * phi_x);
    let x1 = VectorField::new(vec![w.clone(), c(0.0)]);
    let x2 = VectorField::new(vec![c(0.0), w]);
    SubRiemannianStructure::new("conformal", 2, 0, vec![x1, x2], vec![], sf, (c(2.0) * e).exp()).unwrap()
}

fn quadratic() -> impl Strategy<Value = Quadratic> {
    prop::array::uniform5(-0.5f64..0.5).prop_map(Quadratic)
}

fn planar_point() -> impl Strategy<Value = ChartPoint> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y)| ChartPoint::new(vec![x, y]))
}

fn model() -> impl Strategy<Value = ModelName> {
    prop::sample::select(ModelName::ALL.to_vec())
}

fn sample(name: ModelName, seed: u64) -> (SubRiemannianStructure, ChartPoint) {
    let (s, desc) = build(name);
    let x = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
    (s, x)
}

#[test]
fn vertical_index_round_trips() {
    for h in 0..5 {
        for p in 0..vertical_count(h) {
            let ix = vertical_unflatten(h, p).unwrap();
            assert_eq!(vertical_flatten(h, ix.m, ix.n).unwrap(), (p, 1.0));
            assert_eq!(vertical_flatten(h, ix.n, ix.m).unwrap(), (p, -1.0));
        }
        assert!(vertical_unflatten(h, vertical_count(h)).is_err());
    }
}

#[test]
fn every_model_validates_on_random_points() {
    for name in ModelName::ALL {
        let (s, desc) = build(name);
        let pts = desc.sample_points(&mut ChaCha8Rng::seed_from_u64(7), 40);
        let rep = validate_structure(&s, &pts, 1e-9).unwrap();
        assert!(rep.pass, "{name}: max residual {}", rep.max_residual);
        assert!(rep.points.iter().all(|p| p.hormander_rank == s.chart_dim()), "{name}");
    }
}

#[test]
fn sphere_has_unit_gauss_curvature() {
    let (s, desc) = build(ModelName::Sphere2);
    for x in desc.sample_points(&mut ChaCha8Rng::seed_from_u64(3), 10) {
        let ric = PointGeometry::new(&s, &x).unwrap().ricci(RicciRoute::Definition);
        assert!((ric - nalgebra::DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conformal_metric_ricci_is_gauss_curvature(phi in quadratic(), x in planar_point()) {
        let s = conformal(&phi);
        let rep = validate_structure(&s, std::slice::from_ref(&x), 1e-9).unwrap();
        prop_assert!(rep.pass, "validation residual {}", rep.max_residual);
        let k = -(-2.0 * phi.value(x.0[0], x.0[1])).exp() * phi.laplacian();
        let pg = PointGeometry::new(&s, &x).unwrap();
        for route in [RicciRoute::Definition, RicciRoute::Formula] {
            let ric = pg.ricci(route);
            prop_assert!((ric[(0, 0)] - k).abs() < 1e-10 * (1.0 + k.abs()), "{route:?}: {} vs {k}", ric[(0, 0)]);
            prop_assert!((ric[(1, 1)] - k).abs() < 1e-10 * (1.0 + k.abs()));
            prop_assert!(ric[(0, 1)].abs() < 1e-10 && ric[(1, 0)].abs() < 1e-10);
        }
        prop_assert!(curvature_report(&s, &x).unwrap().tensoriality_gap() < 1e-10);
    }

    #[test]
    fn conformal_sublaplacian_is_weighted_laplacian(phi in quadratic(), x in planar_point(), k in prop::array::uniform3(-1.0f64..1.0)) {
        let s = conformal(&phi);
        let f = c(k[0]) * var(0) * var(0) * var(1) + c(k[1]) * var(1).sin() + c(k[2]) * var(0) * var(1);
        let (px, py) = (x.0[0], x.0[1]);
        let lap = 2.0 * k[0] * py - k[1] * py.sin();
        let expected = (-2.0 * phi.value(px, py)).exp() * lap;
        let got = sublaplacian(&s, &ScalarField::exact("f", f), &x).unwrap();
        prop_assert!((got - expected).abs() < 1e-10 * (1.0 + expected.abs()), "{got} vs {expected}");
    }

    #[test]
    fn conformal_bochner_identity_holds(phi in quadratic(), x in planar_point(), seed in 0u64..1000) {
        let s = conformal(&phi);
        let (_, desc) = build(ModelName::Euclidean { d: 2 });
        let f = random_field(&desc, seed, 0, 4, Backend::PolynomialExact);
        let r = bochner_residuals(&s, &f, &x).unwrap();
        prop_assert!(r.horizontal.abs() < 1e-9, "horizontal residual {}", r.horizontal);
    }

    #[test]
    fn carre_du_champ_matches_product_rule(name in model(), seed in 0u64..10_000) {
        let (s, desc) = build(name);
        let x = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = random_field(&desc, seed, 1, 3, Backend::PolynomialExact);
        let e = f.expr().unwrap().clone();
        let sq = ScalarField::exact("f2", e.clone() * e);
        let fv = forms(&s, &f, &x).unwrap();
        let l_sq = sublaplacian(&s, &sq, &x).unwrap();
        let fx = f.value(&x.0);
        let expected = 0.5 * (l_sq - 2.0 * fx * fv.lf);
        prop_assert!((fv.gamma - expected).abs() < 1e-9 * (1.0 + fv.gamma.abs()), "{name}: {} vs {expected}", fv.gamma);
        prop_assert!(fv.gamma >= 0.0 && fv.gamma_z >= 0.0);
    }

    #[test]
    fn connection_residuals_vanish(name in model(), seed in 0u64..10_000) {
        let (s, x) = sample(name, seed);
        prop_assert!(koszul_residual(&s, &x).unwrap() < 1e-10);
        prop_assert!(metric_compatibility_residual(&christoffel(&s, &x).unwrap()) < 1e-10);
        prop_assert!(torsion_verticality_residual(&s, &x).unwrap() < 1e-10);
    }

    #[test]
    fn curvature_routes_agree(name in model(), seed in 0u64..10_000) {
        let (s, x) = sample(name, seed);
        let pg = PointGeometry::new(&s, &x).unwrap();
        let gap = (pg.ricci(RicciRoute::Definition) - pg.ricci(RicciRoute::Formula)).amax();
        prop_assert!(gap < 1e-10, "{name}: ricci routes differ by {gap}");
        prop_assert!(curvature_report(&s, &x).unwrap().tensoriality_gap() < 1e-10);
    }

    #[test]
    fn bochner_identities_and_vertical_commutation(name in model(), seed in 0u64..10_000) {
        let (s, desc) = build(name);
        let x = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = random_field(&desc, seed, 2, 4, Backend::PolynomialExact);
        let r = bochner_residuals(&s, &f, &x).unwrap();
        prop_assert!(r.horizontal.abs() < 1e-9 && r.vertical.abs() < 1e-9, "{name}: {r:?}");
        let lz = commutator_lz_residual(&s, &f, &x).unwrap();
        prop_assert!(lz.iter().all(|v| v.abs() < 1e-9), "{name}: {lz:?}");
    }

    #[test]
    fn exact_and_difference_backends_agree(name in model(), seed in 0u64..10_000) {
        let (s, desc) = build(name);
        let x = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let fe = random_field(&desc, seed, 3, 3, Backend::PolynomialExact);
        let ff = fe.with_backend(Backend::NestedFiniteDifference).unwrap();
        let a = forms(&s, &fe, &x).unwrap();
        let b = forms(&s, &ff, &x).unwrap();
        for (u, v) in [(a.gamma, b.gamma), (a.gamma_z, b.gamma_z), (a.gamma2, b.gamma2), (a.gamma2_z, b.gamma2_z), (a.lf, b.lf)] {
            prop_assert!((u - v).abs() < 1e-5 * (1.0 + u.abs()), "{name}: {u} vs {v}");
        }
    }

    #[test]
    fn certified_parameters_have_nonnegative_slack(name in model(), seed in 0u64..10_000, nu in 0.05f64..20.0) {
        let (s, desc) = build(name);
        let p = desc.certified.unwrap();
        let x = desc.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = random_field(&desc, seed, 4, 4, Backend::PolynomialExact);
        let slack = cd_slack(&s, &f, &x, nu, p.rho1, p.rho2, p.kappa).unwrap();
        let fv = forms(&s, &f, &x).unwrap();
        let scale = 1.0 + fv.gamma2.abs() + nu * fv.gamma2_z.abs();
        prop_assert!(slack >= -1e-9 * scale, "{name}: slack {slack} at ν = {nu}");
    }
}
