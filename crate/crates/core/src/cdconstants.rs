//! Curvature-dimension constants and everything derived from them.
//!
//! With the quadratic-form representation of ℛ (see [`crate::curvature`]),
//! `ℛ ≥ ρ₁Γ + ρ₂Γ^Z` is the matrix inequality `Q ⪰ ρ₁ P_H + ρ₂ P_V` where
//! `P_H = I_d ⊕ 0` and `P_V = 0 ⊕ 2 I_v`, and `𝒯 ≤ κΓ` is `T ⪯ κ I_d`.

use crate::curvature::{PointGeometry, RRoute};
use crate::error::{Error, Result};
use crate::structure::{ChartPoint, SubRiemannianStructure};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `(ρ₁, ρ₂, κ)` with the horizontal dimension and the vertical rank.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CDParameters {
    pub rho1: f64,
    pub rho2: f64,
    pub kappa: f64,
    pub d: usize,
    pub vertical_rank: usize,
}

impl CDParameters {
    pub fn new(rho1: f64, rho2: f64, kappa: f64, d: usize, vertical_rank: usize) -> CDParameters {
        CDParameters { rho1, rho2, kappa, d, vertical_rank }
    }

    /// No vertical directions: `κ = 0`, and `ρ₂` is a placeholder that never enters.
    pub fn riemannian(rho1: f64, d: usize) -> CDParameters {
        CDParameters { rho1, rho2: 1.0, kappa: 0.0, d, vertical_rank: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.rho1.is_finite() && self.rho2.is_finite() && self.kappa.is_finite();
        if !finite || self.d == 0 {
            return Err(Error::Domain(format!("invalid parameters {self:?}")));
        }
        if !(self.rho2 > 0.0) {
            return Err(Error::Domain(format!("ρ₂ must be positive, got {}", self.rho2)));
        }
        if self.vertical_rank > 0 && !(self.kappa > 0.0) {
            return Err(Error::Domain(format!("κ must be positive with vertical directions, got {}", self.kappa)));
        }
        if self.kappa < 0.0 {
            return Err(Error::Domain(format!("κ must be nonnegative, got {}", self.kappa)));
        }
        Ok(())
    }

    /// `1 + 3κ/(2ρ₂)`.
    pub fn dimension_factor(&self) -> f64 {
        1.0 + 3.0 * self.kappa / (2.0 * self.rho2)
    }
}

/// A constant that exists only under extra hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Bound {
    Finite(f64),
    Infinite,
    /// The formula requires `ρ₁ > 0`.
    NotApplicable,
}

impl Bound {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

/// Coefficients of the gradient estimate
/// `Γ(ln u) + b(t) Γ^Z(ln u) ≤ a(t) Lu/u + c(t)` for `u = P_t f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiYauCoefficients {
    /// `b(t) = z_per_t · t`.
    pub z_per_t: f64,
    /// `a(t) = a0 + a1 t`.
    pub a0: f64,
    pub a1: f64,
    /// `c(t) = c_t t + c0 + c_inv_t / t`.
    pub c_t: f64,
    pub c0: f64,
    pub c_inv_t: f64,
}

impl LiYauCoefficients {
    pub fn b(&self, t: f64) -> f64 {
        self.z_per_t * t
    }

    pub fn a(&self, t: f64) -> f64 {
        self.a0 + self.a1 * t
    }

    pub fn c(&self, t: f64) -> f64 {
        self.c_t * t + self.c0 + self.c_inv_t / t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub params: CDParameters,
    #[serde(rename = "D")]
    pub dim: f64,
    pub alpha: Bound,
    pub liyau: LiYauCoefficients,
    pub harnack_exponent: f64,
    pub harnack_gauss: f64,
    pub diameter_bound: Bound,
    pub hausdorff_bound: f64,
    pub lambda1_bound: Bound,
    pub isoperimetric_const: Bound,
    pub poincare_const: Bound,
}

impl DerivedConstants {
    /// `(1 − e^{−αt})^{−D/2}` for a probability measure.
    pub fn kernel_global_bound(&self, t: f64) -> Bound {
        match self.alpha {
            Bound::Finite(a) if t > 0.0 => Bound::Finite((1.0 - (-a * t).exp()).powf(-self.dim / 2.0)),
            Bound::Finite(_) => Bound::Infinite,
            _ => Bound::NotApplicable,
        }
    }

    /// Harnack factor `(t/s)^{D/2} exp((D/d) r² / (4(t − s)))` for `s < t`.
    pub fn harnack_factor(&self, s: f64, t: f64, r: f64) -> f64 {
        harnack_factor(self.dim, self.params.d, s, t, r)
    }
}

/// Single definition of the Harnack factor shared with the heat checks.
pub fn harnack_factor(dim: f64, d: usize, s: f64, t: f64, r: f64) -> f64 {
    if !(t > s) {
        return f64::INFINITY;
    }
    (t / s).powf(dim / 2.0) * ((dim / d as f64) * r * r / (4.0 * (t - s))).exp()
}

pub fn derive_constants(p: &CDParameters) -> Result<DerivedConstants> {
    p.validate()?;
    let d = p.d as f64;
    let fac = p.dimension_factor();
    let dim = d * fac;
    let positive = p.rho1 > 0.0;
    let alpha = if positive { Bound::Finite(2.0 * p.rho1 * p.rho2 / (3.0 * (p.rho2 + p.kappa))) } else { Bound::NotApplicable };
    let liyau = LiYauCoefficients {
        z_per_t: 2.0 * p.rho2 / 3.0,
        a0: fac,
        a1: -2.0 * p.rho1 / 3.0,
        c_t: d * p.rho1 * p.rho1 / 6.0,
        c0: -(p.rho1 * d / 2.0) * fac,
        c_inv_t: d * fac * fac / 2.0,
    };
    let shape = ((p.kappa + p.rho2) / (p.rho1 * p.rho2)).sqrt();
    let diameter_bound = if positive { Bound::Finite(2.0 * 3f64.sqrt() * PI * (shape * shape * fac * d).sqrt()) } else { Bound::Infinite };
    let lambda1_bound = match (positive, p.vertical_rank) {
        (false, _) => Bound::NotApplicable,
        (true, 0) if p.d > 1 => Bound::Finite(p.rho1 * d / (d - 1.0)),
        (true, 0) => Bound::Infinite,
        (true, _) => Bound::Finite(p.rho1 * p.rho2 / ((d - 1.0) / d * p.rho2 + p.kappa)),
    };
    let iso = if positive { Bound::Finite(1.5 * dim * shape / d.sqrt()) } else { Bound::NotApplicable };
    let poincare = if positive { Bound::Finite(6.0 * dim * shape / d.sqrt()) } else { Bound::NotApplicable };
    Ok(DerivedConstants {
        params: *p,
        dim,
        alpha,
        liyau,
        harnack_exponent: dim / 2.0,
        harnack_gauss: dim / d,
        diameter_bound,
        hausdorff_bound: dim,
        lambda1_bound,
        isoperimetric_const: iso,
        poincare_const: poincare,
    })
}

/// `∫₀^∞ f(x) dx` for integrands analytic on `(0, ∞)` that decay
/// exponentially in `ln x` at both ends: trapezoid rule in `s = ln x`, step
/// halved until successive estimates agree to `rel_tol`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, rel_tol: f64) -> f64 {
    let g = |s: f64| {
        let x = s.exp();
        f(x) * x
    };
    let g0 = g(0.0).abs();
    // Σ_k g(dir·(start + k h)) until five consecutive negligible terms
    let ray = |start: f64, h: f64, dir: f64| -> f64 {
        let (mut acc, mut quiet, mut k) = (0.0, 0, 0.0);
        while quiet < 5 && k < 1e6 {
            let v = g(dir * (start + k * h));
            acc += v;
            quiet = if v.abs() <= 1e-18 * (acc.abs() + g0) { quiet + 1 } else { 0 };
            k += 1.0;
        }
        acc
    };
    let mut h = 1.0;
    let mut sum = g(0.0) + ray(h, h, 1.0) + ray(h, h, -1.0);
    let mut estimate = sum * h;
    for _ in 0..24 {
        sum += ray(0.5 * h, h, 1.0) + ray(0.5 * h, h, -1.0);
        h *= 0.5;
        let next = sum * h;
        let done = (next - estimate).abs() <= rel_tol * next.abs();
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiameterQuadrature {
    pub numeric: f64,
    pub closed_form: f64,
    pub relative_error: f64,
}

/// `−2∫₀^∞ √x Φ''(x) dx` with `Φ''(x) = −2D/(x(2x + αD))`, against the closed form.
pub fn entropy_diameter_quadrature(p: &CDParameters) -> Result<DiameterQuadrature> {
    let dc = derive_constants(p)?;
    let (Bound::Finite(alpha), Bound::Finite(closed_form)) = (dc.alpha, dc.diameter_bound) else {
        return Err(Error::Domain("the diameter bound requires ρ₁ > 0".into()));
    };
    let numeric = diameter_integral(dc.dim, alpha);
    Ok(DiameterQuadrature { numeric, closed_form, relative_error: (numeric - closed_form).abs() / closed_form })
}

/// The quadrature alone, in terms of `(D, α)`.
pub fn diameter_integral(dim: f64, alpha: f64) -> f64 {
    let phi2 = |x: f64| -2.0 * dim / (x * (2.0 * x + alpha * dim));
    integrate_half_line(|x| -2.0 * x.sqrt() * phi2(x), 1e-14)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointMargin {
    pub point: ChartPoint,
    /// Smallest eigenvalue of `Q − ρ₁P_H − ρ₂P_V`.
    pub r_margin: f64,
    /// Largest eigenvalue of `T − κI`.
    pub t_excess: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub structure: String,
    pub params: CDParameters,
    pub tol: f64,
    pub points: Vec<PointMargin>,
    pub min_r_margin: f64,
    pub max_t_excess: f64,
    pub pass: bool,
}

fn min_eig(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m).eigenvalues.min()
}

fn shifted_r(q: &DMatrix<f64>, d: usize, rho1: f64, rho2: f64) -> DMatrix<f64> {
    let mut m = q.clone();
    for k in 0..d {
        m[(k, k)] -= rho1;
    }
    for p in d..m.nrows() {
        m[(p, p)] -= 2.0 * rho2;
    }
    m
}

pub fn certify_bounds(
    s: &SubRiemannianStructure,
    pts: &[ChartPoint],
    rho1: f64,
    rho2: f64,
    kappa: f64,
    tol: f64,
) -> Result<CertificateReport> {
    if pts.is_empty() {
        return Err(Error::Domain("no certification points".into()));
    }
    let d = s.d();
    let margins: Vec<PointMargin> = pts
        .par_iter()
        .map(|x| {
            let pg = PointGeometry::new(s, x)?;
            let q = pg.r_form(RRoute::Structural);
            let r_margin = min_eig(shifted_r(&q, d, rho1, rho2));
            let t = pg.t_form() - DMatrix::identity(d, d) * kappa;
            let t_excess = -min_eig(-t);
            Ok(PointMargin { point: x.clone(), r_margin, t_excess })
        })
        .collect::<Result<_>>()?;
    let min_r_margin = margins.iter().map(|m| m.r_margin).fold(f64::INFINITY, f64::min);
    let max_t_excess = margins.iter().map(|m| m.t_excess).fold(f64::NEG_INFINITY, f64::max);
    Ok(CertificateReport {
        structure: s.name.clone(),
        params: CDParameters::new(rho1, rho2, kappa, d, s.v()),
        tol,
        pass: min_r_margin >= -tol && max_t_excess <= tol,
        points: margins,
        min_r_margin,
        max_t_excess,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub rho2: f64,
    /// Largest admissible `ρ₁`; `None` when no `ρ₁` works for this `ρ₂`.
    pub best_rho1: Option<f64>,
}

/// Largest `ρ₁` with `M − ρ₁P_H ⪰ 0`, where `M = Q − ρ₂P_V`, via the Schur
/// complement on the vertical block.
fn best_rho1_at(q: &DMatrix<f64>, d: usize, rho2: f64) -> Option<f64> {
    let n = q.nrows();
    let m = shifted_r(q, d, 0.0, rho2);
    let v = n - d;
    let mgg = m.view((0, 0), (d, d)).into_owned();
    if v == 0 {
        return Some(min_eig(mgg));
    }
    let mgz = m.view((0, d), (d, v)).into_owned();
    let mzz = m.view((d, d), (v, v)).into_owned();
    let eig = SymmetricEigen::new(mzz);
    let scale = 1.0 + q.amax();
    let eps = 1e-12 * scale;
    let mut pinv = DMatrix::zeros(v, v);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        if lam < -eps {
            return None;
        }
        if lam <= eps {
            if (&mgz * u).amax() > 1e-10 * scale {
                return None;
            }
            continue;
        }
        pinv += (u * u.transpose()) / lam;
    }
    Some(min_eig(mgg - &mgz * pinv * mgz.transpose()))
}

pub fn pareto_scan(s: &SubRiemannianStructure, pts: &[ChartPoint], rho2_grid: &[f64]) -> Result<Vec<ParetoPoint>> {
    if rho2_grid.is_empty() {
        return Err(Error::Domain("empty ρ₂ grid".into()));
    }
    if let Some(bad) = rho2_grid.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Domain(format!("ρ₂ grid values must be positive, got {bad}")));
    }
    if pts.is_empty() {
        return Err(Error::Domain("no scan points".into()));
    }
    let forms: Vec<DMatrix<f64>> =
        pts.iter().map(|x| Ok(PointGeometry::new(s, x)?.r_form(RRoute::Structural))).collect::<Result<_>>()?;
    Ok(rho2_grid
        .iter()
        .map(|&rho2| {
            let mut best = Some(f64::INFINITY);
            for q in &forms {
                best = match (best, best_rho1_at(q, s.d(), rho2)) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    _ => None,
                };
            }
            ParetoPoint { rho2, best_rho1: best }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bochner::random_points;
    use crate::models::{build, ModelName};
    use approx::assert_relative_eq;

    #[test]
    fn heisenberg_constants() {
        let dc = derive_constants(&CDParameters::new(0.0, 0.25, 0.5, 2, 1)).unwrap();
        assert_eq!(dc.dim, 8.0);
        assert_eq!(dc.liyau.a(1.0), 4.0);
        assert_eq!(dc.liyau.c(2.0), 8.0);
        assert_eq!(dc.diameter_bound, Bound::Infinite);
        assert_eq!(dc.lambda1_bound, Bound::NotApplicable);
        assert_eq!(dc.kernel_global_bound(1.0), Bound::NotApplicable);
        assert!(entropy_diameter_quadrature(&dc.params).is_err());
    }

    #[test]
    fn su2_constants() {
        let dc = derive_constants(&CDParameters::new(4.0, 1.0, 2.0, 2, 1)).unwrap();
        assert_eq!(dc.dim, 8.0);
        let diam = dc.diameter_bound.finite().unwrap();
        assert_relative_eq!(diam, 2.0 * 3f64.sqrt() * PI * 6f64.sqrt(), max_relative = 1e-15);
        assert!((diam - 26.657).abs() < 1e-3);
        assert_relative_eq!(dc.lambda1_bound.finite().unwrap(), 1.6, max_relative = 1e-15);
    }

    #[test]
    fn sphere_lichnerowicz_limit() {
        let dc = derive_constants(&CDParameters::riemannian(1.0, 2)).unwrap();
        assert_eq!(dc.lambda1_bound, Bound::Finite(2.0));
        assert_eq!(dc.dim, 2.0);
    }

    #[test]
    fn quadrature_closed_forms() {
        assert_relative_eq!(diameter_integral(1.0, 1.0), 2.0 * 2f64.sqrt() * PI, max_relative = 1e-10);
        let q = entropy_diameter_quadrature(&CDParameters::new(4.0, 1.0, 2.0, 2, 1)).unwrap();
        assert!(q.relative_error < 1e-10, "{q:?}");
    }

    #[test]
    fn certification_and_scan() {
        let (s, desc) = build(ModelName::Heisenberg { n: 1 });
        let pts = random_points(&desc, 3, 10);
        let ok = certify_bounds(&s, &pts, 0.0, 0.25, 0.5, 1e-12).unwrap();
        assert!(ok.pass);
        assert!(ok.min_r_margin.abs() < 1e-14 && ok.max_t_excess.abs() < 1e-14);
        assert!(!certify_bounds(&s, &pts, 0.1, 0.25, 0.5, 1e-12).unwrap().pass);
        let scan = pareto_scan(&s, &pts, &[0.1, 0.25, 0.3]).unwrap();
        assert_eq!(scan[0].best_rho1, Some(0.0));
        assert_eq!(scan[1].best_rho1, Some(0.0));
        assert_eq!(scan[2].best_rho1, None);
        assert!(pareto_scan(&s, &pts, &[]).is_err());

        let (s, desc) = build(ModelName::Sphere2);
        let pts = random_points(&desc, 3, 10);
        for p in pareto_scan(&s, &pts, &[0.5, 2.0]).unwrap() {
            assert_relative_eq!(p.best_rho1.unwrap(), 1.0, max_relative = 1e-12);
        }
        let (s, desc) = build(ModelName::Su2);
        let pts = random_points(&desc, 3, 10);
        assert_relative_eq!(pareto_scan(&s, &pts, &[1.0]).unwrap()[0].best_rho1.unwrap(), 4.0, max_relative = 1e-12);
    }
}
