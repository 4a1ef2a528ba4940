//! Closed-form scalar expressions in chart coordinates.
//!
//! Frame coefficients, structure functions, densities and test fields are all
//! [`Expr`] trees. They evaluate on plain `f64` (fast path for ODE and SDE
//! integration) and on [`Jet`]s (exact derivatives), and they can be
//! differentiated symbolically.

use crate::jet::{binomial, Jet};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Number type an [`Expr`] can be evaluated on.
pub trait Scalar: Clone {
    /// Constant shaped like `self` (same jet space and order).
    fn lift(&self, c: f64) -> Self;
    fn value(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tan(&self) -> Self {
        self.sin().div(&self.cos())
    }
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn poly(p: &Polynomial, vars: &[Self]) -> Self;
}

impl Scalar for f64 {
    fn lift(&self, c: f64) -> f64 {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn div(&self, o: &f64) -> f64 {
        self / o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn powi(&self, n: i32) -> f64 {
        f64::powi(*self, n)
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn tan(&self) -> f64 {
        f64::tan(*self)
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn ln(&self) -> f64 {
        f64::ln(*self)
    }
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    fn poly(p: &Polynomial, vars: &[f64]) -> f64 {
        p.eval_f64(vars)
    }
}

impl Scalar for Jet {
    fn lift(&self, c: f64) -> Jet {
        Jet::constant(self.space(), self.order(), c)
    }
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn add(&self, o: &Jet) -> Jet {
        Jet::add(self, o)
    }
    fn sub(&self, o: &Jet) -> Jet {
        Jet::sub(self, o)
    }
    fn mul(&self, o: &Jet) -> Jet {
        Jet::mul(self, o)
    }
    fn div(&self, o: &Jet) -> Jet {
        Jet::div(self, o)
    }
    fn neg(&self) -> Jet {
        self.scale(-1.0)
    }
    fn powi(&self, n: i32) -> Jet {
        Jet::powi(self, n)
    }
    fn sin(&self) -> Jet {
        Jet::sin(self)
    }
    fn cos(&self) -> Jet {
        Jet::cos(self)
    }
    fn exp(&self) -> Jet {
        Jet::exp(self)
    }
    fn ln(&self) -> Jet {
        Jet::ln(self)
    }
    fn sqrt(&self) -> Jet {
        Jet::sqrt(self)
    }
    fn poly(p: &Polynomial, vars: &[Jet]) -> Jet {
        p.eval_jet(vars)
    }
}

/// Sparse polynomial: a list of (exponent tuple, coefficient).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Polynomial {
    pub nvars: usize,
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl Polynomial {
    pub fn new(nvars: usize, terms: Vec<(Vec<u32>, f64)>) -> Polynomial {
        let mut p = Polynomial { nvars, terms };
        p.normalize();
        p
    }

    pub fn zero(nvars: usize) -> Polynomial {
        Polynomial { nvars, terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Polynomial {
        Polynomial::new(nvars, vec![(vec![0; nvars], c)])
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(e, _)| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Merge duplicate exponents and drop zero coefficients.
    pub fn normalize(&mut self) {
        self.terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Vec<u32>, f64)> = Vec::with_capacity(self.terms.len());
        for (e, c) in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.0 == e => last.1 += c,
                _ => merged.push((e, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        self.terms = merged;
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Jet evaluation. When every argument is a coordinate identity jet the
    /// Taylor coefficients are obtained directly by a binomial shift.
    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        let template = &vars[0];
        let coordinate_args = vars.iter().enumerate().all(|(k, v)| v.coordinate_index() == Some(k));
        if coordinate_args && vars.iter().all(|v| v.order() == template.order()) {
            let space = template.space();
            let order = template.order();
            let x0: Vec<f64> = vars.iter().map(|v| v.value()).collect();
            let len = space.len(order);
            let mut coeffs = vec![0.0; len];
            for (idx, slot) in coeffs.iter_mut().enumerate() {
                let alpha = space.exponents(idx);
                let mut acc = 0.0;
                for (e, c) in &self.terms {
                    let mut prod = *c;
                    for k in 0..self.nvars {
                        let ek = e[k] as usize;
                        let ak = alpha[k] as usize;
                        if ak > ek {
                            prod = 0.0;
                            break;
                        }
                        prod *= binomial(ek, ak) * x0[k].powi((ek - ak) as i32);
                    }
                    acc += prod;
                }
                *slot = acc;
            }
            return Jet::from_coeffs(space, order, coeffs);
        }
        let mut out = template.lift(0.0);
        for (e, c) in &self.terms {
            let mut term = template.lift(*c);
            for (k, &ek) in e.iter().enumerate() {
                if ek > 0 {
                    term = term.mul(&vars[k].powi(ek as i32));
                }
            }
            out = out.add(&term);
        }
        out
    }

    pub fn diff(&self, var: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| e[var] > 0)
            .map(|(e, c)| {
                let mut e2 = e.clone();
                e2[var] -= 1;
                (e2, c * e[var] as f64)
            })
            .collect();
        Polynomial::new(self.nvars, terms)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::new(self.nvars, self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial::new(self.nvars.max(other.nvars), terms)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                terms.push((ea.iter().zip(eb).map(|(a, b)| a + b).collect(), ca * cb));
            }
        }
        Polynomial::new(self.nvars, terms)
    }
}

/// Expression tree over chart coordinates `x₀ … x_{n−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Powi(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tan(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
    Poly(Polynomial),
}

pub fn c(v: f64) -> Expr {
    Expr::Const(v)
}

pub fn var(k: usize) -> Expr {
    Expr::Var(k)
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Expr::Const(v) => *v == 0.0,
            Expr::Poly(p) => p.is_zero(),
            _ => false,
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            Expr::Poly(p) if p.is_zero() => Some(0.0),
            Expr::Poly(p) if p.degree() == 0 => Some(p.terms[0].1),
            _ => None,
        }
    }

    pub fn sin(self) -> Expr {
        match self.as_const() {
            Some(v) => c(v.sin()),
            None => Expr::Sin(Box::new(self)),
        }
    }

    pub fn cos(self) -> Expr {
        match self.as_const() {
            Some(v) => c(v.cos()),
            None => Expr::Cos(Box::new(self)),
        }
    }

    pub fn tan(self) -> Expr {
        match self.as_const() {
            Some(v) => c(v.tan()),
            None => Expr::Tan(Box::new(self)),
        }
    }

    pub fn exp(self) -> Expr {
        match self.as_const() {
            Some(v) => c(v.exp()),
            None => Expr::Exp(Box::new(self)),
        }
    }

    pub fn ln(self) -> Expr {
        match self.as_const() {
            Some(v) => c(v.ln()),
            None => Expr::Ln(Box::new(self)),
        }
    }

    pub fn sqrt(self) -> Expr {
        match self.as_const() {
            Some(v) => c(v.sqrt()),
            None => Expr::Sqrt(Box::new(self)),
        }
    }

    pub fn powi(self, n: i32) -> Expr {
        match (self.as_const(), n) {
            (Some(v), _) => c(v.powi(n)),
            (_, 0) => c(1.0),
            (_, 1) => self,
            _ => Expr::Powi(Box::new(self), n),
        }
    }

    pub fn recip(self) -> Expr {
        c(1.0) / self
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let t = &x[0];
        match self {
            Expr::Const(v) => t.lift(*v),
            Expr::Var(k) => x[*k].clone(),
            Expr::Add(a, b) => a.eval(x).add(&b.eval(x)),
            Expr::Sub(a, b) => a.eval(x).sub(&b.eval(x)),
            Expr::Mul(a, b) => a.eval(x).mul(&b.eval(x)),
            Expr::Div(a, b) => a.eval(x).div(&b.eval(x)),
            Expr::Neg(a) => a.eval(x).neg(),
            Expr::Powi(a, n) => a.eval(x).powi(*n),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Tan(a) => a.eval(x).tan(),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Ln(a) => a.eval(x).ln(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
            Expr::Poly(p) => S::poly(p, x),
        }
    }

    /// Fast `f64` evaluation without the generic dispatch.
    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var(k) => x[*k],
            Expr::Add(a, b) => a.eval_f64(x) + b.eval_f64(x),
            Expr::Sub(a, b) => a.eval_f64(x) - b.eval_f64(x),
            Expr::Mul(a, b) => a.eval_f64(x) * b.eval_f64(x),
            Expr::Div(a, b) => a.eval_f64(x) / b.eval_f64(x),
            Expr::Neg(a) => -a.eval_f64(x),
            Expr::Powi(a, n) => a.eval_f64(x).powi(*n),
            Expr::Sin(a) => a.eval_f64(x).sin(),
            Expr::Cos(a) => a.eval_f64(x).cos(),
            Expr::Tan(a) => a.eval_f64(x).tan(),
            Expr::Exp(a) => a.eval_f64(x).exp(),
            Expr::Ln(a) => a.eval_f64(x).ln(),
            Expr::Sqrt(a) => a.eval_f64(x).sqrt(),
            Expr::Poly(p) => p.eval_f64(x),
        }
    }

    /// Symbolic partial derivative with light simplification.
    pub fn diff(&self, k: usize) -> Expr {
        match self {
            Expr::Const(_) => c(0.0),
            Expr::Var(j) => c(if *j == k { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => a.diff(k) + b.diff(k),
            Expr::Sub(a, b) => a.diff(k) - b.diff(k),
            Expr::Mul(a, b) => a.diff(k) * (**b).clone() + (**a).clone() * b.diff(k),
            Expr::Div(a, b) => {
                (a.diff(k) * (**b).clone() - (**a).clone() * b.diff(k)) / (**b).clone().powi(2)
            }
            Expr::Neg(a) => -a.diff(k),
            Expr::Powi(a, n) => c(*n as f64) * (**a).clone().powi(n - 1) * a.diff(k),
            Expr::Sin(a) => (**a).clone().cos() * a.diff(k),
            Expr::Cos(a) => -((**a).clone().sin() * a.diff(k)),
            Expr::Tan(a) => (c(1.0) + (**a).clone().tan().powi(2)) * a.diff(k),
            Expr::Exp(a) => (**a).clone().exp() * a.diff(k),
            Expr::Ln(a) => a.diff(k) / (**a).clone(),
            Expr::Sqrt(a) => a.diff(k) / (c(2.0) * (**a).clone().sqrt()),
            Expr::Poly(p) => Expr::Poly(p.diff(k)),
        }
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::Const(v)
    }
}

impl From<Polynomial> for Expr {
    fn from(p: Polynomial) -> Expr {
        Expr::Poly(p)
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => c(a + b),
            (Some(0.0), _) => o,
            (_, Some(0.0)) => self,
            _ => Expr::Add(Box::new(self), Box::new(o)),
        }
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => c(a - b),
            (Some(0.0), _) => -o,
            (_, Some(0.0)) => self,
            _ => Expr::Sub(Box::new(self), Box::new(o)),
        }
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => c(a * b),
            (Some(0.0), _) => c(0.0),
            (_, Some(0.0)) => c(0.0),
            (Some(1.0), _) => o,
            (_, Some(1.0)) => self,
            _ => Expr::Mul(Box::new(self), Box::new(o)),
        }
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => c(a / b),
            (Some(0.0), _) => c(0.0),
            (_, Some(1.0)) => self,
            _ => Expr::Div(Box::new(self), Box::new(o)),
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self {
            Expr::Const(v) => c(-v),
            Expr::Neg(a) => *a,
            other => Expr::Neg(Box::new(other)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(k) => write!(f, "x{k}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "{a}/{b}"),
            Expr::Neg(a) => write!(f, "-{a}"),
            Expr::Powi(a, n) => write!(f, "{a}^{n}"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Tan(a) => write!(f, "tan({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Ln(a) => write!(f, "ln({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Poly(p) => write!(f, "poly[{} terms]", p.terms.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jet_and_f64_agree_on_values() {
        let e = (var(0).sin() * var(1)) / (c(2.0) + var(0).cos()) + var(1).powi(3).exp().ln();
        let x = [0.4, -0.3];
        let jets = Jet::coordinates(&x, 3);
        assert_relative_eq!(e.eval(&jets).value(), e.eval_f64(&x), epsilon = 1e-14);
    }

    #[test]
    fn symbolic_and_jet_derivatives_agree() {
        let e = var(0).tan() * var(1).sqrt() - var(0) * var(1) * var(1);
        let x = [0.5, 1.7];
        let jets = Jet::coordinates(&x, 2);
        let j = e.eval(&jets);
        assert_relative_eq!(e.diff(0).eval_f64(&x), j.partial(&[1, 0]), epsilon = 1e-12);
        assert_relative_eq!(e.diff(1).eval_f64(&x), j.partial(&[0, 1]), epsilon = 1e-12);
        assert_relative_eq!(e.diff(0).diff(1).eval_f64(&x), j.partial(&[1, 1]), epsilon = 1e-12);
    }

    #[test]
    fn polynomial_shift_matches_generic_path() {
        let p = Polynomial::new(
            3,
            vec![(vec![2, 1, 0], 1.5), (vec![0, 0, 3], -0.7), (vec![1, 1, 1], 2.0), (vec![0, 0, 0], 0.3)],
        );
        let x = [0.2, -1.3, 0.8];
        let fast = p.eval_jet(&Jet::coordinates(&x, 4));
        // force the generic path by perturbing the coordinate marker
        let generic: Vec<Jet> = Jet::coordinates(&x, 4).iter().map(|j| j.add_const(0.0)).collect();
        let slow = p.eval_jet(&generic);
        for (a, b) in fast.coeffs().iter().zip(slow.coeffs()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn constant_folding() {
        assert_eq!(c(0.0) * var(1), c(0.0));
        assert_eq!(c(1.0) * var(1), var(1));
        assert_eq!(var(2) + c(0.0), var(2));
        assert!(var(0).diff(1).is_zero());
    }
}
