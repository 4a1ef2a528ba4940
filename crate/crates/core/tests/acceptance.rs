//! Acceptance run: each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::{Duration, Instant};
use subriemann::bochner::{bochner_suite, cd_slack, random_field, random_points};
use subriemann::calculus::Backend;
use subriemann::cdconstants::{
    certify_bounds, derive_constants, entropy_diameter_quadrature, CDParameters, LiYauCoefficients,
};
use subriemann::curvature::curvature_report;
use subriemann::geodesics::{cc_distance, heisenberg_distance, integrate_geodesic, GeodesicState, ShootingConfig};
use subriemann::heat::{
    ball_volume, harnack_check, lambda1_estimate, liyau_check, simulate_snapshots, volume_growth_fit, DiffusionConfig,
    DistanceBracket, Lambda1Config, LiYauOptions,
};
use subriemann::models::{build, ModelName};
use subriemann::structure::ChartPoint;
use subriemann::Result;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn tensoriality() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for m in ModelName::ALL {
        let (s, desc) = build(m);
        for x in random_points(&desc, SEED, 100) {
            worst = worst.max(curvature_report(&s, &x)?.tensoriality_gap());
        }
    }
    outcome(worst <= 1e-9, format!("max |r_structural − r_tensorial| = {worst:.2e} over 5 models × 100 points"))
}

fn bochner_grid(backend: Backend, tol: f64) -> Result<(f64, f64, f64)> {
    let (mut h, mut v, mut c) = (0.0f64, 0.0f64, 0.0f64);
    for m in ModelName::ALL {
        let (s, desc) = build(m);
        let rep = bochner_suite(&s, &desc, 50, 20, SEED, backend, tol)?;
        h = h.max(rep.max_horizontal);
        v = v.max(rep.max_vertical);
        c = c.max(rep.max_commutator);
    }
    Ok((h, v, c))
}

fn horizontal_bochner() -> Result<Outcome> {
    let (exact, _, _) = bochner_grid(Backend::PolynomialExact, 1e-9)?;
    let (fd, _, _) = bochner_grid(Backend::NestedFiniteDifference, 1e-5)?;
    outcome(exact <= 1e-9 && fd <= 1e-5, format!("max residual exact {exact:.2e}, finite-difference {fd:.2e}"))
}

fn vertical_bochner() -> Result<Outcome> {
    let (_, v, c) = bochner_grid(Backend::PolynomialExact, 1e-9)?;
    outcome(v <= 1e-9 && c <= 1e-9, format!("max vertical residual {v:.2e}, max |[L, Z]f| {c:.2e}"))
}

fn certified_constants() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (m, (r1, r2, k)) in [
        (ModelName::Heisenberg { n: 1 }, (0.0, 0.25, 0.5)),
        (ModelName::FreeStep2D3, (0.0, 0.25, 1.0)),
        (ModelName::Sphere2, (1.0, 1.0, 0.0)),
    ] {
        let (s, desc) = build(m);
        let pts = random_points(&desc, SEED, 50);
        let rep = certify_bounds(&s, &pts, r1, r2, k, 1e-9)?;
        // equality directions: the margins vanish rather than merely being nonnegative
        let sharp = rep.min_r_margin.abs() <= 1e-9 && rep.max_t_excess.abs() <= 1e-9;
        pass &= rep.pass && sharp;
        parts.push(format!("{m}: r margin {:.1e}, T excess {:.1e}", rep.min_r_margin, rep.max_t_excess));
    }
    // closed-form oracle: the unit sphere has Ricci = identity
    let (s, desc) = build(ModelName::Sphere2);
    let mut ric = 0.0f64;
    for x in random_points(&desc, SEED, 50) {
        let r = curvature_report(&s, &x)?.ricci;
        ric = ric.max((r - nalgebra::DMatrix::<f64>::identity(2, 2)).amax());
    }
    pass &= ric <= 1e-9;
    parts.push(format!("sphere2 |Ric − I| {ric:.1e}"));
    outcome(pass, parts.join("; "))
}

fn cd_sampling() -> Result<Outcome> {
    let mut worst = f64::INFINITY;
    for m in ModelName::ALL {
        let (s, desc) = build(m);
        let p = desc.certified.expect("built-in models are certified");
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let pts = random_points(&desc, SEED, 1000);
        for (i, x) in pts.iter().enumerate() {
            let f = random_field(&desc, SEED, i as u64, 4, Backend::PolynomialExact);
            let nu = 10f64.powf(rng.gen_range(-2.0..2.0));
            worst = worst.min(cd_slack(&s, &f, x, nu, p.rho1, p.rho2, p.kappa)?);
        }
    }
    outcome(worst >= -1e-9, format!("min slack {worst:.2e} over 5 models × 1000 (field, point, ν)"))
}

fn diameter_quadrature() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = CDParameters::new(
            rng.gen_range(0.1..5.0),
            rng.gen_range(0.1..5.0),
            rng.gen_range(0.05..5.0),
            rng.gen_range(2..7),
            1,
        );
        worst = worst.max(entropy_diameter_quadrature(&p)?.relative_error);
    }
    let su2 = entropy_diameter_quadrature(&build(ModelName::Su2).1.certified.expect("certified"))?;
    worst = worst.max(su2.relative_error);
    let pass = worst <= 1e-6 && (su2.numeric - 26.657).abs() < 1e-3;
    outcome(pass, format!("max relative error {worst:.2e}; su2 diameter {:.6}", su2.numeric))
}

fn lichnerowicz() -> Result<Outcome> {
    let (s, desc) = build(ModelName::Sphere2);
    let bound = derive_constants(&desc.certified.expect("certified"))?.lambda1_bound.finite().expect("finite");
    let r = lambda1_estimate(&s, &Lambda1Config { cells: vec![32, 64], tol: 1e-8, max_iter: 500 })?;
    let err = (r.fine - r.coarse).abs() / 3.0;
    let pass = (r.extrapolated - 2.0).abs() <= 0.04 && r.extrapolated + err >= bound;
    outcome(pass, format!("λ₁ ≈ {:.6} (± {err:.1e}), bound {bound}", r.extrapolated))
}

fn stochastic_completeness() -> Result<Outcome> {
    let (s, _) = build(ModelName::Heisenberg { n: 1 });
    let cfg = DiffusionConfig { n_paths: 100_000, dt: 1e-3, t_max: 1.0, seed: SEED, ..DiffusionConfig::default() };
    let ens = simulate_snapshots(&s, &ChartPoint(vec![0.0; 3]), &[1.0], &cfg)?.remove(0);
    let (mass, se) = ens.mean_of(|_| 1.0);
    outcome(
        ens.n_censored() == 0 && mass == 1.0 && se == 0.0,
        format!("{} censored of {}; P_t1 = {mass} (stderr {se})", ens.n_censored(), ens.n_paths()),
    )
}

fn liyau() -> Result<Outcome> {
    let (s, desc) = build(ModelName::Heisenberg { n: 1 });
    let dc = derive_constants(&desc.certified.expect("certified"))?;
    let coef = LiYauCoefficients { a0: 4.0, a1: 0.0, c_t: 0.0, c0: 0.0, c_inv_t: 16.0, ..dc.liyau };
    let pts: Vec<ChartPoint> = [[0.0, 0.0, 0.0], [0.25, 0.0, 0.0], [-0.25, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, -0.25, 0.0]]
        .iter()
        .map(|p| ChartPoint(p.to_vec()))
        .collect();
    let bump = |x: &[f64]| (-2.0 * x.iter().map(|v| v * v).sum::<f64>()).exp();
    let cfg = DiffusionConfig { n_paths: 1_000_000, dt: 5e-3, t_max: 1.0, seed: SEED, ..DiffusionConfig::default() };
    let rep = liyau_check(&s, desc.group.as_ref(), bump, 1.0, &pts, &coef, &cfg, &LiYauOptions::default())?;
    let worst = rep.points.iter().map(|p| p.slack + 3.0 * p.stderr + p.bias).fold(f64::INFINITY, f64::min);
    let min_slack = rep.points.iter().map(|p| p.slack).fold(f64::INFINITY, f64::min);
    outcome(rep.pass, format!("min slack {min_slack:.3} (min slack + allowance {worst:.3}) at 5 points, 10⁶ paths"))
}

fn harnack() -> Result<Outcome> {
    let (s, desc) = build(ModelName::Heisenberg { n: 1 });
    let o = ChartPoint(vec![0.0; 3]);
    let cfg = DiffusionConfig { n_paths: 400_000, dt: 2e-3, t_max: 1.0, seed: SEED, ..DiffusionConfig::default() };
    let cdp = desc.certified.expect("certified");
    let rep = harnack_check(&s, &o, &o, &o, 0.5, 1.0, &cdp, DistanceBracket::exact(0.0), &cfg)?;
    let (e, l) = (rep.earlier.as_ref().expect("finite factor"), rep.later.as_ref().expect("finite factor"));
    outcome(
        rep.pass && rep.factor == 16.0,
        format!("p(0,0,0.5) = {:.4} ≤ {} · p(0,0,1) = {:.4}; margin {:.3}", e.value, rep.factor, rep.factor * l.value, rep.margin),
    )
}

fn volume_growth() -> Result<Outcome> {
    let (s, desc) = build(ModelName::Heisenberg { n: 1 });
    let dim = derive_constants(&desc.certified.expect("certified"))?.dim;
    let radii = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];
    let o = [0.0; 3];
    let mut est = Vec::new();
    for r in radii {
        let w = 1.05 * r * r / (4.0 * PI);
        let bbox = [(-r, r), (-r, r), (-w, w)];
        est.push(ball_volume(&s, r, 40_000, SEED, &bbox, |y| DistanceBracket::exact(heisenberg_distance(&o, y)))?);
    }
    let exponent = volume_growth_fit(&est)?;
    // local slopes between consecutive radii stay below D
    let steepest = est
        .windows(2)
        .map(|w| (w[1].estimate.ln() - w[0].estimate.ln()) / (w[1].radius.ln() - w[0].radius.ln()))
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = est.windows(2).all(|w| w[1].estimate >= w[0].estimate);
    outcome(
        (exponent - 4.0).abs() <= 0.3 && steepest <= dim && monotone,
        format!("exponent {exponent:.3} over r ∈ [1, 8]; steepest local slope {steepest:.3} ≤ D = {dim}"),
    )
}

fn geodesic_invariants() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut drift = 0.0f64;
    for (m, x0) in [
        (ModelName::Heisenberg { n: 1 }, vec![0.0, 0.0, 0.0]),
        (ModelName::FreeStep2D3, vec![0.0; 6]),
        (ModelName::Sphere2, vec![PI / 2.0, 0.0]),
        (ModelName::Su2, vec![PI / 4.0, 0.0, 0.0]),
    ] {
        let (s, _) = build(m);
        let ang: f64 = rng.gen_range(-0.4..0.4);
        let u = (0..s.d()).map(|k| if k == 0 { ang.sin() } else if k == 1 { ang.cos() } else { 0.0 }).collect();
        let a = (0..s.v()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let t_end = if m == ModelName::Su2 { 1.0 } else { 10.0 };
        let traj = integrate_geodesic(&s, &GeodesicState { position: ChartPoint(x0), u, a }, t_end, 10_000)?;
        drift = drift.max(traj.speed_drift());
    }
    let (s, desc) = build(ModelName::Heisenberg { n: 1 });
    let g = desc.group;
    let cfg = ShootingConfig::default();
    let o = ChartPoint(vec![0.0; 3]);
    let unit = cc_distance(&s, &o, &ChartPoint(vec![1.0, 0.0, 0.0]), g.as_ref(), &cfg)?.value;
    let tol = 1e-6;
    let d = |x: &ChartPoint, y: &ChartPoint| cc_distance(&s, x, y, g.as_ref(), &cfg).map(|r| r.value);
    let (mut asym, mut tri) = (0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let p: Vec<ChartPoint> =
            (0..3).map(|_| ChartPoint((0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())).collect();
        let (dxy, dyx, dyz, dxz) = (d(&p[0], &p[1])?, d(&p[1], &p[0])?, d(&p[1], &p[2])?, d(&p[0], &p[2])?);
        asym = asym.max((dxy - dyx).abs());
        tri = tri.min(dxy + dyz - dxz);
    }
    let pass = drift <= 1e-10 && (unit - 1.0).abs() <= 1e-6 && asym <= 2.0 * tol && tri >= -2.0 * tol;
    outcome(
        pass,
        format!("speed drift {drift:.1e}; d(0,(1,0,0)) = {unit:.9}; max asymmetry {asym:.1e}; min triangle slack {tri:.3}"),
    )
}

fn main() {
    type Check = fn() -> Result<Outcome>;
    let criteria: [(&str, Check, u64); 12] = [
        ("tensoriality of the curvature form", tensoriality, 30),
        ("horizontal Bochner identity", horizontal_bochner, 120),
        ("vertical Bochner identity and [L, Z] = 0", vertical_bochner, 120),
        ("certified constants reproduced", certified_constants, 60),
        ("CD inequality sampling", cd_sampling, 120),
        ("diameter quadrature", diameter_quadrature, 30),
        ("Lichnerowicz sharpness on the sphere", lichnerowicz, 120),
        ("stochastic completeness proxy", stochastic_completeness, 60),
        ("Li-Yau statistical check", liyau, 300),
        ("Harnack kernel check", harnack, 300),
        ("volume growth", volume_growth, 300),
        ("geodesic invariants", geodesic_invariants, 300),
    ];
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = check();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= Duration::from_secs(*budget);
        let (pass, detail) = match res {
            Ok(o) => (o.pass && in_budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {:>2}: {name}: {detail} [{:.1} s, budget {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
