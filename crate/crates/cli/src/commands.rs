use crate::report::{num, Outcome, Table, Verdict};
use crate::{BackendArg, CliError, Command, Global, ParamArgs};
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use subriemann::bochner::{bochner_residuals, bochner_suite, random_points};
use subriemann::calculus::{commutator_lz_residual, Backend};
use subriemann::cdconstants::{
    certify_bounds, derive_constants, entropy_diameter_quadrature, pareto_scan, Bound, CDParameters, DerivedConstants,
    LiYauCoefficients,
};
use subriemann::geodesics::{
    cc_distance, heisenberg_distance, integrate_geodesic, DistanceStatus, GeodesicState, ShootingConfig,
};
use subriemann::heat::{
    ball_volume, harnack_check, lambda1_estimate, liyau_check, simulate_paths, volume_growth_fit, DistanceBracket,
    DiffusionConfig, Lambda1Config, LiYauOptions,
};
use subriemann::io::{load_structure, load_test_functions};
use subriemann::models::{build, GroupLaw, ModelDescriptor, ModelName};
use subriemann::structure::{validate_structure, ChartPoint, SubRiemannianStructure};

type Model = (SubRiemannianStructure, ModelDescriptor);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_model(g: &Global) -> Result<Model, CliError> {
    match (&g.model, &g.structure) {
        (Some(_), Some(_)) => Err(usage("pass either --model or --structure, not both")),
        (Some(name), None) => Ok(build(name.parse::<ModelName>()?)),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Ok(load_structure(&text)?)
        }
        (None, None) => Err(usage("one of --model or --structure is required")),
    }
}

fn point(m: &Model, coords: &Option<Vec<f64>>, what: &str) -> Result<ChartPoint, CliError> {
    let p = match coords {
        Some(c) => ChartPoint(c.clone()),
        None => m.1.base_point(),
    };
    if p.dim() != m.0.chart_dim() {
        return Err(usage(format!("{what} needs {} coordinates, got {}", m.0.chart_dim(), p.dim())));
    }
    if !p.is_finite() {
        return Err(usage(format!("{what} has non-finite coordinates")));
    }
    Ok(p)
}

fn positive(v: f64, what: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("{what} must be positive and finite, got {v}")))
    }
}

fn count(v: usize, what: &str) -> Result<usize, CliError> {
    if v == 0 {
        Err(usage(format!("{what} must be at least 1")))
    } else {
        Ok(v)
    }
}

/// Certified parameters, with any of ρ₁, ρ₂, κ overridden from flags.
fn params(m: &Model, p: &ParamArgs) -> Result<CDParameters, CliError> {
    let s = &m.0;
    let base = match (m.1.certified, p.rho1) {
        (Some(c), _) => c,
        (None, Some(r1)) => CDParameters::new(r1, p.rho2.unwrap_or(1.0), p.kappa.unwrap_or(0.0), s.d(), s.v()),
        (None, None) => return Err(usage("no certified constants for this structure; pass --rho1/--rho2/--kappa")),
    };
    let out = CDParameters {
        rho1: p.rho1.unwrap_or(base.rho1),
        rho2: p.rho2.unwrap_or(base.rho2),
        kappa: p.kappa.unwrap_or(base.kappa),
        ..base
    };
    out.validate()?;
    Ok(out)
}

fn verdict(pass: bool) -> Verdict {
    if pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn fmt_point(p: &ChartPoint) -> String {
    p.0.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialise")
}

pub fn dispatch(g: &Global, cmd: &Command) -> Result<Outcome, CliError> {
    if let Some(t) = g.tol {
        positive(t, "--tol")?;
    }
    if let Some(dt) = g.dt {
        positive(dt, "--dt")?;
    }
    if let Command::ReportAll { lambda1 } = cmd {
        return report_all(g, *lambda1);
    }
    let m = load_model(g)?;
    match cmd {
        Command::Validate => validate(g, &m),
        Command::VerifyBochner { backend, functions } => verify_bochner(g, &m, *backend, functions.as_deref()),
        Command::Certify { params: p, pareto } => certify(g, &m, p, pareto.as_deref()),
        Command::Constants { params: p } => constants(&m, p),
        Command::Geodesic { from, velocity, a, time, steps, trajectory } => {
            geodesic(&m, from, velocity, a, *time, *steps, trajectory.as_deref())
        }
        Command::Distance { from, to, starts } => distance(&m, from, to, *starts),
        Command::Simulate { from, time, ensemble, stride, kernel_at, bandwidth } => {
            simulate(g, &m, from, *time, ensemble.as_deref(), *stride, kernel_at, *bandwidth)
        }
        Command::CheckLiyau { params: p, time, coefficients, stencil, width } => {
            check_liyau(g, &m, p, *time, coefficients.as_deref(), *stencil, *width)
        }
        Command::CheckHarnack { from, to, via, s_time, t_time, bandwidth } => {
            check_harnack(g, &m, from, to, via, *s_time, *t_time, *bandwidth)
        }
        Command::Volume { radii } => volume(g, &m, radii),
        Command::Lambda1 { cells } => lambda1(g, &m, cells.as_deref()),
        Command::ReportAll { .. } => unreachable!("handled above"),
    }
}

fn validate(g: &Global, m: &Model) -> Result<Outcome, CliError> {
    let n = count(g.points.unwrap_or(100), "--points")?;
    let pts = random_points(&m.1, g.seed, n);
    let rep = validate_structure(&m.0, &pts, g.tol.unwrap_or(1e-9))?;
    let mut table = Table::new(["point", "bracket_xx", "bracket_xz", "delta_skew", "antisymmetry", "hormander_rank"]);
    for p in &rep.points {
        table.push([
            fmt_point(&p.point),
            num(p.bracket_xx),
            num(p.bracket_xz),
            num(p.delta_skew),
            num(p.antisymmetry),
            p.hormander_rank.to_string(),
        ]);
    }
    Ok(Outcome { verdict: verdict(rep.pass), result: to_value(&rep), table })
}

fn verify_bochner(
    g: &Global,
    m: &Model,
    backend: BackendArg,
    functions: Option<&std::path::Path>,
) -> Result<Outcome, CliError> {
    let backend = match backend {
        BackendArg::Exact => Backend::PolynomialExact,
        BackendArg::Fd => Backend::NestedFiniteDifference,
    };
    let tol = g.tol.unwrap_or(if backend == Backend::PolynomialExact { 1e-9 } else { 1e-5 });
    let n_points = count(g.points.unwrap_or(20), "--points")?;
    let mut table = Table::new(["field", "max_horizontal", "max_vertical", "max_commutator"]);
    let Some(path) = functions else {
        let n_fields = count(g.fields.unwrap_or(50), "--fields")?;
        let rep = bochner_suite(&m.0, &m.1, n_fields, n_points, g.seed, backend, tol)?;
        table.push(["all".to_string(), num(rep.max_horizontal), num(rep.max_vertical), num(rep.max_commutator)]);
        return Ok(Outcome { verdict: verdict(rep.pass), result: to_value(&rep), table });
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let fields = load_test_functions(&text)?;
    let declared = serde_json::from_str::<Value>(&text).ok().and_then(|v| v["chart_dim"].as_u64());
    if declared != Some(m.0.chart_dim() as u64) {
        return Err(usage(format!("test functions must be declared on a chart of dimension {}", m.0.chart_dim())));
    }
    let pts = random_points(&m.1, g.seed, n_points);
    let mut rows = Vec::new();
    let mut pass = true;
    for f in &fields {
        let f = f.with_backend(backend)?;
        let (mut h, mut v, mut c) = (0.0f64, 0.0f64, 0.0f64);
        for x in &pts {
            let r = bochner_residuals(&m.0, &f, x)?;
            h = h.max(r.horizontal.abs());
            v = v.max(r.vertical.abs());
            c = commutator_lz_residual(&m.0, &f, x)?.iter().fold(c, |a, b| a.max(b.abs()));
        }
        pass &= h <= tol && v <= tol && c <= tol;
        table.push([f.id.clone(), num(h), num(v), num(c)]);
        rows.push(json!({"field": f.id, "max_horizontal": h, "max_vertical": v, "max_commutator": c}));
    }
    let result = json!({"structure": m.0.name, "tol": tol, "points": n_points, "fields": rows, "pass": pass});
    Ok(Outcome { verdict: verdict(pass), result, table })
}

fn certify(g: &Global, m: &Model, p: &ParamArgs, pareto: Option<&[f64]>) -> Result<Outcome, CliError> {
    let cdp = params(m, p)?;
    let n = count(g.points.unwrap_or(100), "--points")?;
    let pts = random_points(&m.1, g.seed, n);
    let rep = certify_bounds(&m.0, &pts, cdp.rho1, cdp.rho2, cdp.kappa, g.tol.unwrap_or(1e-9))?;
    let mut table = Table::new(["point", "r_margin", "t_excess"]);
    for pm in &rep.points {
        table.push([fmt_point(&pm.point), num(pm.r_margin), num(pm.t_excess)]);
    }
    let mut result = to_value(&rep);
    if let Some(grid) = pareto {
        result["pareto"] = to_value(&pareto_scan(&m.0, &pts, grid)?);
    }
    Ok(Outcome { verdict: verdict(rep.pass), result, table })
}

fn bound_text(b: &Bound) -> String {
    match b {
        Bound::Finite(v) => num(*v),
        Bound::Infinite => "inf".into(),
        Bound::NotApplicable => "n/a".into(),
    }
}

fn constants_table(dc: &DerivedConstants) -> Table {
    let mut t = Table::new(["constant", "value"]);
    t.push(["D".to_string(), num(dc.dim)]);
    t.push(["alpha".to_string(), bound_text(&dc.alpha)]);
    t.push(["diameter_bound".to_string(), bound_text(&dc.diameter_bound)]);
    t.push(["lambda1_bound".to_string(), bound_text(&dc.lambda1_bound)]);
    t.push(["harnack_exponent".to_string(), num(dc.harnack_exponent)]);
    t.push(["harnack_gauss".to_string(), num(dc.harnack_gauss)]);
    t.push(["isoperimetric_const".to_string(), bound_text(&dc.isoperimetric_const)]);
    t.push(["poincare_const".to_string(), bound_text(&dc.poincare_const)]);
    t
}

fn constants(m: &Model, p: &ParamArgs) -> Result<Outcome, CliError> {
    let cdp = params(m, p)?;
    let dc = derive_constants(&cdp)?;
    let mut result = to_value(&dc);
    if cdp.rho1 > 0.0 {
        result["diameter_quadrature"] = to_value(&entropy_diameter_quadrature(&cdp)?);
    }
    Ok(Outcome { verdict: Verdict::Info, result, table: constants_table(&dc) })
}

#[allow(clippy::too_many_arguments)]
fn geodesic(
    m: &Model,
    from: &Option<Vec<f64>>,
    velocity: &Option<Vec<f64>>,
    a: &Option<Vec<f64>>,
    time: f64,
    steps: usize,
    trajectory: Option<&std::path::Path>,
) -> Result<Outcome, CliError> {
    let (d, v) = (m.0.d(), m.0.v());
    let x = point(m, from, "--from")?;
    let u = velocity.clone().unwrap_or_else(|| (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect());
    let a = a.clone().unwrap_or_else(|| vec![0.0; v]);
    if u.len() != d || a.len() != v {
        return Err(usage(format!("--velocity needs {d} values and --a needs {v}")));
    }
    positive(time, "--time")?;
    count(steps, "--steps")?;
    let traj = integrate_geodesic(&m.0, &GeodesicState { position: x, u, a }, time, steps)?;
    if let Some(path) = trajectory {
        let f = File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        traj.write_csv(BufWriter::new(f))?;
    }
    let last = traj.last();
    let speed = last.u.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut table = Table::new(["t", "position", "u"]);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        table.push([num(*t), fmt_point(&s.position), fmt_point(&ChartPoint(s.u.clone()))]);
    }
    let result = json!({
        "structure": m.0.name,
        "time": time,
        "steps": steps,
        "final": last,
        "length": speed * time,
        "speed_drift": traj.speed_drift(),
    });
    Ok(Outcome { verdict: Verdict::Info, result, table })
}

fn distance(m: &Model, from: &Option<Vec<f64>>, to: &[f64], starts: usize) -> Result<Outcome, CliError> {
    let x = point(m, from, "--from")?;
    let y = point(m, &Some(to.to_vec()), "--to")?;
    let cfg = ShootingConfig { starts: count(starts, "--starts")?, ..ShootingConfig::default() };
    let r = cc_distance(&m.0, &x, &y, m.1.group.as_ref(), &cfg)?;
    let mut result = to_value(&r);
    let closed = (m.1.group == Some(GroupLaw::Heisenberg { n: 1 })).then(|| heisenberg_distance(&x.0, &y.0));
    if let Some(c) = closed {
        result["closed_form"] = json!(c);
    }
    let mut table = Table::new(["from", "to", "distance", "lower_bound", "status"]);
    table.push([
        fmt_point(&x),
        fmt_point(&y),
        num(r.value),
        r.lower_bound.map_or("-".into(), num),
        to_value(&r.status).as_str().unwrap_or("").to_string(),
    ]);
    Ok(Outcome { verdict: verdict(r.status == DistanceStatus::Converged), result, table })
}

fn diffusion_config(g: &Global, default_paths: usize, default_dt: f64, t_max: f64) -> Result<DiffusionConfig, CliError> {
    let cfg = DiffusionConfig {
        n_paths: count(g.paths.unwrap_or(default_paths), "--paths")?,
        dt: g.dt.unwrap_or(default_dt),
        t_max,
        seed: g.seed,
        ..DiffusionConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    g: &Global,
    m: &Model,
    from: &Option<Vec<f64>>,
    time: f64,
    ensemble: Option<&std::path::Path>,
    stride: Option<usize>,
    kernel_at: &Option<Vec<f64>>,
    bandwidth: f64,
) -> Result<Outcome, CliError> {
    let x = point(m, from, "--from")?;
    let mut cfg = diffusion_config(g, 10_000, 1e-3, positive(time, "--time")?)?;
    cfg.record_stride = stride.map(|k| count(k, "--stride")).transpose()?;
    cfg.bandwidth = positive(bandwidth, "--bandwidth")?;
    let ens = simulate_paths(&m.0, &x, &cfg)?;
    if let Some(path) = ensemble {
        let f = File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        ens.write_srhe(BufWriter::new(f))?;
    }
    let (mass, mass_err) = ens.mean_of(|_| 1.0);
    let mut table = Table::new(["coordinate", "mean", "stderr"]);
    let mut means = Vec::new();
    for k in 0..ens.dim {
        let (mu, se) = ens.mean_of(|y| y[k]);
        table.push([format!("x{k}"), num(mu), num(se)]);
        means.push(json!({"mean": mu, "stderr": se}));
    }
    let mut result = json!({
        "structure": m.0.name,
        "start": x,
        "t": time,
        "n_paths": ens.n_paths(),
        "n_censored": ens.n_censored(),
        "censored_fraction": ens.censored_fraction(),
        "ptf_one": {"mean": mass, "stderr": mass_err},
        "coordinate_means": means,
    });
    if let Some(y) = kernel_at {
        let y = point(m, &Some(y.clone()), "--kernel-at")?;
        let k = ens.kernel_at(&m.0, &y.0, cfg.bandwidth)?;
        table.push(["kernel".to_string(), num(k.value), num(k.stderr)]);
        result["kernel"] = json!({"at": y, "estimate": k});
    }
    Ok(Outcome { verdict: verdict(ens.censored_fraction() < 0.01), result, table })
}

/// Points for the pointwise heat checks: the base point and its neighbours
/// along the first two chart axes.
fn stencil_points(m: &Model) -> Vec<ChartPoint> {
    let base = m.1.base_point();
    let mut out = vec![base.clone()];
    for k in 0..base.dim().min(2) {
        for sgn in [-1.0, 1.0] {
            let mut p = base.clone();
            p.0[k] += 0.25 * sgn;
            out.push(p);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn check_liyau(
    g: &Global,
    m: &Model,
    p: &ParamArgs,
    time: f64,
    coefficients: Option<&[f64]>,
    stencil: f64,
    width: f64,
) -> Result<Outcome, CliError> {
    let w2 = positive(width, "--width")?.powi(2);
    let cdp = params(m, p)?;
    let dc = derive_constants(&cdp)?;
    let coef = match coefficients {
        None => dc.liyau,
        Some([a, c]) => LiYauCoefficients { a0: *a, a1: 0.0, c_t: 0.0, c0: 0.0, c_inv_t: *c, ..dc.liyau },
        Some(_) => return Err(usage("--coefficients takes two values a,c")),
    };
    let cfg = diffusion_config(g, 100_000, 5e-3, positive(time, "--time")?)?;
    let opts = LiYauOptions { stencil: positive(stencil, "--stencil")?, ..LiYauOptions::default() };
    let base = m.1.base_point();
    let s = &m.0;
    let bump = |y: &[f64]| (-0.5 / w2 * s.chart_difference(&base.0, y).iter().map(|v| v * v).sum::<f64>()).exp();
    let rep = liyau_check(s, m.1.group.as_ref(), bump, time, &stencil_points(m), &coef, &cfg, &opts)?;
    let mut table = Table::new(["point", "u", "gamma_log", "gamma_z_log", "lu_over_u", "slack", "stderr", "holds"]);
    for q in &rep.points {
        table.push([
            fmt_point(&q.point),
            num(q.u),
            num(q.gamma_log),
            num(q.gamma_z_log),
            num(q.lu_over_u),
            num(q.slack),
            num(q.stderr),
            q.holds.to_string(),
        ]);
    }
    Ok(Outcome { verdict: verdict(rep.pass), result: to_value(&rep), table })
}

/// Distance bracket between two points: closed forms where known, shooting otherwise.
fn distance_bracket(m: &Model, x: &ChartPoint, y: &ChartPoint) -> Result<DistanceBracket, CliError> {
    if x == y {
        return Ok(DistanceBracket::exact(0.0));
    }
    match (m.1.model, m.1.group) {
        (Some(ModelName::Euclidean { .. }), _) => {
            Ok(DistanceBracket::exact(x.0.iter().zip(&y.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
        }
        (_, Some(GroupLaw::Heisenberg { n: 1 })) => Ok(DistanceBracket::exact(heisenberg_distance(&x.0, &y.0))),
        _ => {
            let r = cc_distance(&m.0, x, y, m.1.group.as_ref(), &ShootingConfig::default())?;
            Ok(DistanceBracket { lower: r.lower_bound.unwrap_or(0.0), upper: r.value })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_harnack(
    g: &Global,
    m: &Model,
    from: &Option<Vec<f64>>,
    to: &Option<Vec<f64>>,
    via: &Option<Vec<f64>>,
    s_time: f64,
    t_time: f64,
    bandwidth: f64,
) -> Result<Outcome, CliError> {
    let cdp = params(m, &ParamArgs::default())?;
    let x = point(m, from, "--from")?;
    let y = match to {
        Some(_) => point(m, to, "--to")?,
        None => x.clone(),
    };
    let z = match via {
        Some(_) => point(m, via, "--via")?,
        None => y.clone(),
    };
    positive(s_time, "--s-time")?;
    if !(t_time >= s_time) {
        return Err(usage("--t-time must not be smaller than --s-time"));
    }
    let mut cfg = diffusion_config(g, 200_000, 2e-3, t_time)?;
    cfg.bandwidth = positive(bandwidth, "--bandwidth")?;
    let bracket = distance_bracket(m, &y, &z)?;
    let rep = harnack_check(&m.0, &x, &y, &z, s_time, t_time, &cdp, bracket, &cfg)?;
    let mut table = Table::new(["s", "t", "distance", "factor", "p_earlier", "p_later", "margin"]);
    table.push([
        num(rep.s_time),
        num(rep.t_time),
        num(rep.distance.upper),
        num(rep.factor),
        rep.earlier.as_ref().map_or("-".into(), |k| num(k.value)),
        rep.later.as_ref().map_or("-".into(), |k| num(k.value)),
        num(rep.margin),
    ]);
    Ok(Outcome { verdict: verdict(rep.pass), result: to_value(&rep), table })
}

/// Sampling box containing the ball of radius `r` about `x`.
fn ball_box(m: &Model, x: &ChartPoint, r: f64) -> Result<Vec<(f64, f64)>, CliError> {
    let s = &m.0;
    if let Some(group) = m.1.group {
        // vertical coordinates of a group model are enclosed areas, at most r²/(4π)
        let k = group.horizontal_dim(s.chart_dim());
        let w = 1.05 * r * r / (4.0 * PI);
        return Ok(x.0.iter().enumerate().map(|(i, c)| if i < k { (c - r, c + r) } else { (c - w, c + w) }).collect());
    }
    (0..s.chart_dim())
        .map(|k| match (s.periods()[k], s.chart_domain()[k]) {
            (Some(p), _) => Ok((-0.5 * p, 0.5 * p)),
            (None, (a, b)) if a.is_finite() && b.is_finite() => Ok((a, b)),
            _ => Err(usage("volume needs a group model or a bounded chart")),
        })
        .collect()
}

fn volume(g: &Global, m: &Model, radii: &[f64]) -> Result<Outcome, CliError> {
    let x = m.1.base_point();
    let n = count(g.points.unwrap_or(20_000), "--points")?;
    if n < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let mut estimates = Vec::new();
    let mut table = Table::new(["radius", "volume", "stderr", "lower", "upper", "indeterminate"]);
    for &r in radii {
        positive(r, "radius")?;
        let bbox = ball_box(m, &x, r)?;
        let oracle = |y: &[f64]| {
            distance_bracket(m, &x, &ChartPoint(y.to_vec())).unwrap_or(DistanceBracket { lower: 0.0, upper: f64::INFINITY })
        };
        let e = ball_volume(&m.0, r, n, g.seed, &bbox, oracle)?;
        table.push([num(e.radius), num(e.estimate), num(e.stderr), num(e.lower), num(e.upper), e.indeterminate.to_string()]);
        estimates.push(e);
    }
    let monotone = estimates.windows(2).all(|w| w[1].upper + 3.0 * w[1].stderr >= w[0].lower - 3.0 * w[0].stderr);
    let exponent = if estimates.len() >= 2 { Some(volume_growth_fit(&estimates)?) } else { None };
    let dim = m.1.certified.map(|c| derive_constants(&c)).transpose()?.map(|dc| dc.dim);
    let within = match (exponent, dim) {
        (Some(e), Some(d)) => e <= d + 0.3,
        _ => true,
    };
    let result = json!({
        "structure": m.0.name,
        "center": x,
        "samples": n,
        "estimates": estimates,
        "exponent": exponent,
        "dimension_bound": dim,
        "monotone": monotone,
    });
    Ok(Outcome { verdict: verdict(monotone && within), result, table })
}

fn default_cells(m: &Model) -> Vec<usize> {
    match m.1.model {
        Some(ModelName::Sphere2) => vec![32, 64],
        _ => vec![8; m.0.chart_dim()],
    }
}

fn lambda1(g: &Global, m: &Model, cells: Option<&[usize]>) -> Result<Outcome, CliError> {
    let cells = cells.map_or_else(|| default_cells(m), <[usize]>::to_vec);
    let cfg = Lambda1Config { cells, tol: g.tol.unwrap_or(1e-8), max_iter: 500 };
    let r = lambda1_estimate(&m.0, &cfg)?;
    let bound = m.1.certified.map(|c| derive_constants(&c)).transpose()?.and_then(|dc| dc.lambda1_bound.finite());
    // the discretisation error estimate of the extrapolation is |fine − coarse|/3
    let upper = r.extrapolated + (r.fine - r.coarse).abs() / 3.0;
    let mut table = Table::new(["coarse", "fine", "extrapolated", "bound"]);
    table.push([num(r.coarse), num(r.fine), num(r.extrapolated), bound.map_or("-".into(), num)]);
    let mut result = to_value(&r);
    result["cells"] = json!(cfg.cells);
    result["bound"] = json!(bound);
    let v = match bound {
        Some(b) => verdict(upper >= b),
        None => Verdict::Info,
    };
    Ok(Outcome { verdict: v, result, table })
}

fn report_all(g: &Global, with_lambda1: bool) -> Result<Outcome, CliError> {
    let mut sections = Vec::new();
    let mut table = Table::new(["model", "check", "verdict"]);
    let mut pass = true;
    let sub = Global {
        model: None,
        structure: None,
        seed: g.seed,
        tol: g.tol,
        points: Some(g.points.unwrap_or(20)),
        fields: Some(g.fields.unwrap_or(10)),
        paths: g.paths,
        dt: g.dt,
        out: None,
        format: g.format,
        threads: None,
    };
    for name in ModelName::ALL {
        let m = build(name);
        let mut checks = vec![
            ("validate", validate(&sub, &m)?),
            ("verify-bochner", verify_bochner(&sub, &m, BackendArg::Exact, None)?),
            ("certify", certify(&sub, &m, &ParamArgs::default(), None)?),
            ("constants", constants(&m, &ParamArgs::default())?),
        ];
        if with_lambda1 && m.1.compact {
            checks.push(("lambda1", lambda1(&sub, &m, None)?));
        }
        let mut doc = serde_json::Map::new();
        for (check, o) in checks {
            pass &= o.verdict != Verdict::Fail;
            table.push([name.to_string(), check.to_string(), to_value(&o.verdict).as_str().unwrap_or("").to_string()]);
            doc.insert(check.to_string(), json!({"verdict": o.verdict, "result": o.result}));
        }
        sections.push(json!({"model": name.to_string(), "checks": doc}));
    }
    Ok(Outcome { verdict: verdict(pass), result: json!({"models": sections}), table })
}
