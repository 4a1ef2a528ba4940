//! Horizontal and vertical Bochner identities and the curvature-dimension slack.

use crate::calculus::{forms_from_jet, random_polynomial, sym_hessian_from_jet, Backend, FormValue, LocalCalculus, ScalarField};
use crate::curvature::{r_value, PointGeometry, RRoute};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::models::ModelDescriptor;
use crate::structure::{ChartPoint, SubRiemannianStructure};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BochnerResidual {
    pub horizontal: f64,
    pub vertical: f64,
    pub point: ChartPoint,
    pub field: String,
}

/// Everything the identities need from one field at one point.
struct Evaluated {
    forms: FormValue,
    g: Vec<f64>,
    z: Vec<f64>,
    hess: Vec<Vec<f64>>,
    // X_k Z_p f, indexed [p][k]
    xz: Vec<Vec<f64>>,
}

fn evaluate(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<Evaluated> {
    let lc = LocalCalculus::new(s, x, 3)?;
    Ok(evaluated_from(&lc, &f.jet(&x.0, 3)))
}

/// Right-hand side of the horizontal Bochner identity.
fn horizontal_rhs(pg: &PointGeometry, e: &Evaluated) -> f64 {
    let loc = &pg.loc;
    let (d, v) = (loc.d, loc.v);
    let g = &e.g;
    let mut rhs = 0.0;
    for l in 0..d {
        let t = e.hess[l][l] - (0..d).map(|i| loc.om(i, l, l) * g[i]).sum::<f64>();
        rhs += t * t;
        for j in l + 1..d {
            let t = e.hess[l][j] - (0..d).map(|i| 0.5 * (loc.om(i, l, j) + loc.om(i, j, l)) * g[i]).sum::<f64>();
            rhs += 2.0 * t * t;
        }
    }
    for i in 0..d {
        for j in 0..d {
            for p in 0..v {
                rhs -= 4.0 * loc.g(i, j, p) * e.xz[p][j] * g[i];
            }
        }
    }
    rhs + r_value(&pg.r_form(RRoute::Structural), g, &e.z)
}

pub fn horizontal_bochner_residual(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<f64> {
    let e = evaluate(s, f, x)?;
    let pg = PointGeometry::new(s, x)?;
    Ok(e.forms.gamma2 - horizontal_rhs(&pg, &e))
}

pub fn vertical_bochner_residual(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<f64> {
    let e = evaluate(s, f, x)?;
    Ok(e.forms.gamma2_z - vertical_rhs(&e))
}

fn vertical_rhs(e: &Evaluated) -> f64 {
    2.0 * e.xz.iter().flatten().map(|v| v * v).sum::<f64>()
}

pub fn bochner_residuals(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<BochnerResidual> {
    let e = evaluate(s, f, x)?;
    let pg = PointGeometry::new(s, x)?;
    Ok(BochnerResidual {
        horizontal: e.forms.gamma2 - horizontal_rhs(&pg, &e),
        vertical: e.forms.gamma2_z - vertical_rhs(&e),
        point: x.clone(),
        field: f.id.clone(),
    })
}

/// `Γ₂ + νΓ₂^Z − (1/d)(Lf)² − (ρ₁ − κ/ν)Γ − ρ₂Γ^Z`.
pub fn cd_slack(
    s: &SubRiemannianStructure,
    f: &ScalarField,
    x: &ChartPoint,
    nu: f64,
    rho1: f64,
    rho2: f64,
    kappa: f64,
) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("ν must be positive, got {nu}")));
    }
    let fv = crate::calculus::forms(s, f, x)?;
    Ok(slack_from_forms(&fv, s.d(), nu, rho1, rho2, kappa))
}

pub fn slack_from_forms(fv: &FormValue, d: usize, nu: f64, rho1: f64, rho2: f64, kappa: f64) -> f64 {
    fv.gamma2 + nu * fv.gamma2_z - fv.lf * fv.lf / d as f64 - (rho1 - kappa / nu) * fv.gamma - rho2 * fv.gamma_z
}

/// Deterministic random polynomial field number `index` for a model.
pub fn random_field(desc: &ModelDescriptor, seed: u64, index: u64, degree: u32, backend: Backend) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let p = random_polynomial(&mut rng, &desc.reference_box, degree);
    let id = format!("poly{degree}#{index}");
    match backend {
        Backend::PolynomialExact => ScalarField::exact(id, Expr::Poly(p)),
        Backend::NestedFiniteDifference => ScalarField::finite_difference(id, Expr::Poly(p)),
    }
}

/// Deterministic sample points for a model (stream separate from the fields).
pub fn random_points(desc: &ModelDescriptor, seed: u64, n: usize) -> Vec<ChartPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    desc.sample_points(&mut rng, n)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BochnerSuiteReport {
    pub structure: String,
    pub backend: Backend,
    pub fields: usize,
    pub points: usize,
    pub max_horizontal: f64,
    pub max_vertical: f64,
    pub max_commutator: f64,
    pub tol: f64,
    pub pass: bool,
    pub worst: Option<BochnerResidual>,
}

/// Both identities and `[L, Z] = 0` over a grid of random fields and points.
pub fn bochner_suite(
    s: &SubRiemannianStructure,
    desc: &ModelDescriptor,
    n_fields: usize,
    n_points: usize,
    seed: u64,
    backend: Backend,
    tol: f64,
) -> Result<BochnerSuiteReport> {
    let pts = random_points(desc, seed, n_points);
    let geoms: Vec<PointGeometry> = pts.iter().map(|x| PointGeometry::new(s, x)).collect::<Result<_>>()?;
    let calcs: Vec<LocalCalculus<'_>> = pts.iter().map(|x| LocalCalculus::new(s, x, 3)).collect::<Result<_>>()?;
    let per_field: Vec<(f64, f64, f64, Option<BochnerResidual>)> = (0..n_fields)
        .into_par_iter()
        .map(|fi| {
            let f = random_field(desc, seed, fi as u64, 4, backend);
            let mut worst = (0.0f64, 0.0f64, 0.0f64, None);
            let mut worst_total = -1.0;
            for ((x, pg), lc) in pts.iter().zip(&geoms).zip(&calcs) {
                let fj = f.jet(&x.0, 3);
                let e = evaluated_from(lc, &fj);
                let h = e.forms.gamma2 - horizontal_rhs(pg, &e);
                let v = e.forms.gamma2_z - vertical_rhs(&e);
                let lf = lc.l(&fj);
                let comm = (0..s.v())
                    .map(|p| (lc.l(&lc.zf(p, &fj)).value() - lc.zf(p, &lf).value()).abs())
                    .fold(0.0, f64::max);
                worst.0 = worst.0.max(h.abs());
                worst.1 = worst.1.max(v.abs());
                worst.2 = worst.2.max(comm);
                if h.abs().max(v.abs()) > worst_total {
                    worst_total = h.abs().max(v.abs());
                    worst.3 = Some(BochnerResidual { horizontal: h, vertical: v, point: x.clone(), field: f.id.clone() });
                }
            }
            worst
        })
        .collect();
    let mut report = BochnerSuiteReport {
        structure: s.name.clone(),
        backend,
        fields: n_fields,
        points: n_points,
        max_horizontal: 0.0,
        max_vertical: 0.0,
        max_commutator: 0.0,
        tol,
        pass: true,
        worst: None,
    };
    let mut worst_total = -1.0;
    for (h, v, c, w) in per_field {
        report.max_horizontal = report.max_horizontal.max(h);
        report.max_vertical = report.max_vertical.max(v);
        report.max_commutator = report.max_commutator.max(c);
        if h.max(v) > worst_total {
            worst_total = h.max(v);
            report.worst = w;
        }
    }
    report.pass = report.max_horizontal <= tol && report.max_vertical <= tol && report.max_commutator <= tol;
    Ok(report)
}

fn evaluated_from(lc: &LocalCalculus<'_>, fj: &crate::jet::Jet) -> Evaluated {
    let s = lc.s;
    let forms = forms_from_jet(lc, fj);
    let g = (0..s.d()).map(|i| lc.xf(i, fj).value()).collect();
    let zj: Vec<_> = (0..s.v()).map(|p| lc.zf(p, fj)).collect();
    let z = zj.iter().map(|j| j.value()).collect();
    let xz = zj.iter().map(|zp| (0..s.d()).map(|k| lc.xf(k, zp).value()).collect()).collect();
    let hess = sym_hessian_from_jet(lc, &fj.truncate(2));
    Evaluated { forms, g, z, hess, xz }
}
