//! Frame derivatives of scalar fields and the Γ-calculus built on them.

use crate::error::{Error, Result};
use crate::expr::{Expr, Polynomial};
use crate::jet::{factorial, Jet, JetSpace};
use crate::structure::{apply_field, ChartPoint, FrameJets, SubRiemannianStructure};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub const MAX_WORD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    PolynomialExact,
    NestedFiniteDifference,
}

type BlackBox = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    Expr(Expr),
    Closure(BlackBox),
}

/// A scalar function on the chart with a derivative backend.
#[derive(Clone)]
pub struct ScalarField {
    pub id: String,
    source: Source,
    backend: Backend,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("id", &self.id).field("backend", &self.backend).finish()
    }
}

impl ScalarField {
    pub fn exact(id: impl Into<String>, expr: Expr) -> ScalarField {
        ScalarField { id: id.into(), source: Source::Expr(expr), backend: Backend::PolynomialExact }
    }

    pub fn finite_difference(id: impl Into<String>, expr: Expr) -> ScalarField {
        ScalarField { id: id.into(), source: Source::Expr(expr), backend: Backend::NestedFiniteDifference }
    }

    /// Black-box field; only the finite-difference backend applies.
    pub fn from_fn<F>(id: impl Into<String>, f: F) -> ScalarField
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField { id: id.into(), source: Source::Closure(Arc::new(f)), backend: Backend::NestedFiniteDifference }
    }

    pub fn with_backend(&self, backend: Backend) -> Result<ScalarField> {
        if backend == Backend::PolynomialExact && matches!(self.source, Source::Closure(_)) {
            return Err(Error::Domain(format!("field `{}` has no closed form for the exact backend", self.id)));
        }
        Ok(ScalarField { backend, ..self.clone() })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.source {
            Source::Expr(e) => Some(e),
            Source::Closure(_) => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.source {
            Source::Expr(e) => e.eval_f64(x),
            Source::Closure(f) => f(x),
        }
    }

    /// Taylor jet of the field at `x`.
    pub fn jet(&self, x: &[f64], order: usize) -> Jet {
        match (&self.source, self.backend) {
            (Source::Expr(e), Backend::PolynomialExact) => e.eval(&Jet::coordinates(x, order)),
            _ => fd_jet(|y| self.value(y), x, order),
        }
    }
}

/// Central-difference step for derivatives of total order `n`.
fn fd_step(n: usize) -> f64 {
    match n {
        0 | 1 => 1e-3,
        2 => 5e-3,
        3 => 1e-2,
        _ => 2e-2,
    }
}

/// Symmetric stencil for the `n`-th derivative: (offset in steps, weight).
fn stencil_1d(n: u8) -> &'static [(i32, f64)] {
    match n {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        _ => &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
    }
}

/// Jet built from tensor-product central differences with one Richardson
/// step; exact up to roundoff on polynomials of degree ≤ 4.
pub fn fd_jet<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], order: usize) -> Jet {
    assert!(order <= MAX_WORD, "finite-difference jets are limited to order {MAX_WORD}");
    let n = x.len();
    let space = JetSpace::get(n, order.max(1));
    let len = space.len(order);
    let mut coeffs = vec![0.0; len];
    // offsets in units of half the level step
    let mut caches: Vec<HashMap<Vec<i32>, f64>> = vec![HashMap::new(); order + 1];
    let mut y = x.to_vec();
    for (idx, slot) in coeffs.iter_mut().enumerate() {
        let alpha = space.exponents(idx).to_vec();
        let deg = space.degree(idx);
        let h = fd_step(deg);
        let cache = &mut caches[deg];
        let mut estimate = |half: bool| -> f64 {
            let step = if half { 0.5 * h } else { h };
            let unit = if half { 1 } else { 2 };
            let mut acc = 0.0;
            let mut idxs = vec![0usize; n];
            let stencils: Vec<&[(i32, f64)]> = alpha.iter().map(|&a| stencil_1d(a)).collect();
            loop {
                let mut w = 1.0;
                let mut off = vec![0i32; n];
                for k in 0..n {
                    let (o, wk) = stencils[k][idxs[k]];
                    w *= wk;
                    off[k] = o * unit;
                }
                let val = *cache.entry(off.clone()).or_insert_with(|| {
                    for k in 0..n {
                        y[k] = x[k] + off[k] as f64 * 0.5 * h;
                    }
                    f(&y)
                });
                acc += w * val;
                let mut k = 0;
                loop {
                    if k == n {
                        return acc / step.powi(deg as i32);
                    }
                    idxs[k] += 1;
                    if idxs[k] < stencils[k].len() {
                        break;
                    }
                    idxs[k] = 0;
                    k += 1;
                }
            }
        };
        let deriv = if deg == 0 {
            estimate(false)
        } else {
            let coarse = estimate(false);
            let fine = estimate(true);
            (4.0 * fine - coarse) / 3.0
        };
        let fact: f64 = alpha.iter().map(|&a| factorial(a as usize)).product();
        *slot = deriv / fact;
    }
    Jet::from_coeffs(space, order, coeffs)
}

/// Horizontal or vertical frame field (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameLabel {
    X(usize),
    Z(usize),
}

/// Frame data at a point with every operator needed by the forms.
pub struct LocalCalculus<'a> {
    pub s: &'a SubRiemannianStructure,
    pub x: Vec<f64>,
    pub order: usize,
    frame: FrameJets,
    drift: Vec<(usize, Jet)>,
}

impl<'a> LocalCalculus<'a> {
    pub fn new(s: &'a SubRiemannianStructure, x: &ChartPoint, order: usize) -> Result<LocalCalculus<'a>> {
        s.check_point(x)?;
        let frame = s.frame_jets(&x.0, order);
        let drift = drift_jets(s, &x.0, &frame, order);
        Ok(LocalCalculus { s, x: x.0.clone(), order, frame, drift })
    }

    pub fn xf(&self, i: usize, g: &Jet) -> Jet {
        apply_field(&self.frame.horizontal[i], g)
    }

    pub fn zf(&self, p: usize, g: &Jet) -> Jet {
        apply_field(&self.frame.vertical[p], g)
    }

    pub fn apply(&self, label: FrameLabel, g: &Jet) -> Jet {
        match label {
            FrameLabel::X(i) => self.xf(i, g),
            FrameLabel::Z(p) => self.zf(p, g),
        }
    }

    /// `X₀ g` with `X₀ = −Σ_i Σ_k ω^k_{ik} X_i`.
    pub fn x0(&self, g: &Jet) -> Jet {
        apply_field(&self.drift, g)
    }

    /// `L g = Σ X_i² g + X₀ g`.
    pub fn l(&self, g: &Jet) -> Jet {
        let mut out = self.x0(g).truncate(g.order() - 2);
        for i in 0..self.s.d() {
            out.axpy(1.0, &self.xf(i, &self.xf(i, g)));
        }
        out
    }

    /// `Γ(f, g) = Σ X_i f X_i g`.
    pub fn gamma(&self, f: &Jet, g: &Jet) -> Jet {
        let mut out = Jet::zero(f.space(), f.order().min(g.order()) - 1);
        for i in 0..self.s.d() {
            out.axpy(1.0, &self.xf(i, f).mul(&self.xf(i, g)));
        }
        out
    }

    /// `Γ^Z(f, g) = 2 Σ_p Z_p f Z_p g` (ordered pairs, doubled).
    pub fn gamma_z(&self, f: &Jet, g: &Jet) -> Jet {
        let mut out = Jet::zero(f.space(), f.order().min(g.order()) - 1);
        for p in 0..self.s.v() {
            out.axpy(2.0, &self.zf(p, f).mul(&self.zf(p, g)));
        }
        out
    }
}

fn drift_jets(s: &SubRiemannianStructure, x: &[f64], frame: &FrameJets, order: usize) -> Vec<(usize, Jet)> {
    let d = s.d();
    let coords = Jet::coordinates(x, order);
    let mut comps: Vec<Option<Jet>> = vec![None; s.chart_dim()];
    for i in 0..d {
        let mut trace = Expr::zero();
        for k in 0..d {
            trace = trace + s.sf.omega(i, k, k).clone();
        }
        if trace.is_zero() {
            continue;
        }
        let w = trace.eval(&coords).scale(-1.0);
        for (k, ck) in &frame.horizontal[i] {
            let term = w.mul(ck);
            match &mut comps[*k] {
                Some(acc) => acc.axpy(1.0, &term),
                slot => *slot = Some(term),
            }
        }
    }
    comps.into_iter().enumerate().filter_map(|(k, c)| c.map(|c| (k, c))).collect()
}

/// Chart components of `X₀ = −Σ_i Σ_k ω^k_{ik} X_i` as expressions.
pub fn drift_field(s: &SubRiemannianStructure) -> Vec<Expr> {
    let d = s.d();
    let mut comps = vec![Expr::zero(); s.chart_dim()];
    for i in 0..d {
        let mut trace = Expr::zero();
        for k in 0..d {
            trace = trace + s.sf.omega(i, k, k).clone();
        }
        if trace.is_zero() {
            continue;
        }
        for (k, ck) in s.horizontal()[i].components.iter().enumerate() {
            if !ck.is_zero() {
                comps[k] = comps[k].clone() - trace.clone() * ck.clone();
            }
        }
    }
    comps
}

/// `X_{w_0} X_{w_1} ⋯ X_{w_last} f (x)`, innermost (rightmost) first.
pub fn apply_frame_word(s: &SubRiemannianStructure, word: &[FrameLabel], f: &ScalarField, x: &ChartPoint) -> Result<f64> {
    if word.len() > MAX_WORD {
        return Err(Error::UnsupportedOrder { len: word.len(), max: MAX_WORD });
    }
    check_labels(s, word)?;
    let lc = LocalCalculus::new(s, x, word.len())?;
    let mut g = f.jet(&x.0, word.len());
    for &label in word.iter().rev() {
        g = lc.apply(label, &g);
    }
    Ok(g.value())
}

fn check_labels(s: &SubRiemannianStructure, word: &[FrameLabel]) -> Result<()> {
    for l in word {
        let ok = match *l {
            FrameLabel::X(i) => i < s.d(),
            FrameLabel::Z(p) => p < s.v(),
        };
        if !ok {
            return Err(Error::Domain(format!("frame label {l:?} out of range")));
        }
    }
    Ok(())
}

pub fn sublaplacian(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<f64> {
    let lc = LocalCalculus::new(s, x, 2)?;
    Ok(lc.l(&f.jet(&x.0, 2)).value())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormValue {
    pub gamma: f64,
    pub gamma_z: f64,
    pub gamma2: f64,
    pub gamma2_z: f64,
    pub lf: f64,
    pub point: ChartPoint,
}

/// Γ, Γ^Z, Γ₂, Γ₂^Z and Lf from their defining expressions.
pub fn forms(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<FormValue> {
    let lc = LocalCalculus::new(s, x, 3)?;
    let fj = f.jet(&x.0, 3);
    Ok(forms_from_jet(&lc, &fj))
}

pub fn forms_from_jet(lc: &LocalCalculus<'_>, fj: &Jet) -> FormValue {
    let lf = lc.l(fj);
    let gamma = lc.gamma(fj, fj);
    let gamma_z = lc.gamma_z(fj, fj);
    let gamma2 = 0.5 * lc.l(&gamma).value() - lc.gamma(fj, &lf).value();
    let gamma2_z = 0.5 * lc.l(&gamma_z).value() - lc.gamma_z(fj, &lf).value();
    FormValue {
        gamma: gamma.value(),
        gamma_z: gamma_z.value(),
        gamma2,
        gamma2_z,
        lf: lf.value(),
        point: ChartPoint(lc.x.clone()),
    }
}

/// `f_{,ij} = ½(X_i X_j f + X_j X_i f)`.
pub fn sym_hessian(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<Vec<Vec<f64>>> {
    let lc = LocalCalculus::new(s, x, 2)?;
    Ok(sym_hessian_from_jet(&lc, &f.jet(&x.0, 2)))
}

pub fn sym_hessian_from_jet(lc: &LocalCalculus<'_>, fj: &Jet) -> Vec<Vec<f64>> {
    let d = lc.s.d();
    let first: Vec<Jet> = (0..d).map(|j| lc.xf(j, fj)).collect();
    let mut h = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            h[i][j] = lc.xf(i, &first[j]).value();
        }
    }
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = m;
            h[j][i] = m;
        }
    }
    h
}

/// `L(Z_p f) − Z_p(L f)` for every ordered pair `p`.
pub fn commutator_lz_residual(s: &SubRiemannianStructure, f: &ScalarField, x: &ChartPoint) -> Result<Vec<f64>> {
    let lc = LocalCalculus::new(s, x, 3)?;
    let fj = f.jet(&x.0, 3);
    let lf = lc.l(&fj);
    Ok((0..s.v()).map(|p| lc.l(&lc.zf(p, &fj)).value() - lc.zf(p, &lf).value()).collect())
}

/// Random polynomial of degree ≤ `degree` in the box-normalised coordinates
/// `u_k = (x_k − c_k)/r_k`, coefficients uniform in `[−1, 1]`, expanded in `x`.
pub fn random_polynomial<R: Rng + ?Sized>(rng: &mut R, reference_box: &[(f64, f64)], degree: u32) -> Polynomial {
    let n = reference_box.len();
    let space = JetSpace::get(n, degree as usize);
    let u: Vec<Polynomial> = reference_box
        .iter()
        .enumerate()
        .map(|(k, &(lo, hi))| {
            let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let mut e = vec![0u32; n];
            e[k] = 1;
            Polynomial::new(n, vec![(e, 1.0 / r), (vec![0; n], -c / r)])
        })
        .collect();
    let mut out = Polynomial::zero(n);
    for idx in 0..space.len(degree as usize) {
        let coef: f64 = rng.gen_range(-1.0..1.0);
        let mut term = Polynomial::constant(n, coef);
        for (k, &a) in space.exponents(idx).iter().enumerate() {
            for _ in 0..a {
                term = term.mul(&u[k]);
            }
        }
        out = out.add(&term);
    }
    out
}
