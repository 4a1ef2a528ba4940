//! Truncated multivariate Taylor series ("jets").
//!
//! A [`Jet`] stores the Taylor coefficients `c_α = ∂^α g(x₀) / α!` of a
//! function `g` around a base point, for every multi-index with `|α| ≤ order`.
//! Arithmetic on jets is exact up to truncation, so evaluating a closed-form
//! expression on the identity jets of the chart coordinates yields exact
//! partial derivatives up to the jet order. Applying a vector field lowers the
//! valid order by one, which is how iterated frame derivatives are obtained
//! without any finite differencing.

use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::Mutex;

/// Monomial bookkeeping for jets in `nvars` variables up to `max_order`.
#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    max_order: usize,
    exps: Vec<Vec<u8>>,
    degree: Vec<usize>,
    len_upto: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    // (a, b, c) with exps[a] + exps[b] = exps[c], sorted by deg(c)
    mul: Vec<(u32, u32, u32)>,
    mul_upto: Vec<usize>,
    // per variable: (src, dst, factor) for ∂_k
    deriv: Vec<Vec<(u32, u32, f64)>>,
}

static SPACES: Lazy<Mutex<HashMap<(usize, usize), &'static JetSpace>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

impl JetSpace {
    /// Shared space for `(nvars, max_order)`; spaces are built once and leaked.
    pub fn get(nvars: usize, max_order: usize) -> &'static JetSpace {
        let mut map = SPACES.lock().expect("jet space cache poisoned");
        map.entry((nvars, max_order))
            .or_insert_with(|| Box::leak(Box::new(JetSpace::build(nvars, max_order))))
    }

    fn build(nvars: usize, max_order: usize) -> JetSpace {
        let mut exps: Vec<Vec<u8>> = Vec::new();
        let mut len_upto = Vec::with_capacity(max_order + 1);
        for deg in 0..=max_order {
            let mut cur = vec![0u8; nvars];
            enumerate_degree(nvars, deg, 0, &mut cur, &mut exps);
            len_upto.push(exps.len());
        }
        let degree: Vec<usize> = exps.iter().map(|e| e.iter().map(|&v| v as usize).sum()).collect();
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();

        let mut mul = Vec::new();
        let mut mul_upto = Vec::with_capacity(max_order + 1);
        for deg_c in 0..=max_order {
            for a in 0..exps.len() {
                if degree[a] > deg_c {
                    continue;
                }
                for b in 0..exps.len() {
                    if degree[a] + degree[b] != deg_c {
                        continue;
                    }
                    let sum: Vec<u8> = exps[a].iter().zip(&exps[b]).map(|(x, y)| x + y).collect();
                    let c = index[&sum];
                    mul.push((a as u32, b as u32, c as u32));
                }
            }
            mul_upto.push(mul.len());
        }

        let mut deriv = vec![Vec::new(); nvars];
        for (k, dk) in deriv.iter_mut().enumerate() {
            for (src, e) in exps.iter().enumerate() {
                if e[k] == 0 {
                    continue;
                }
                let mut lowered = e.clone();
                lowered[k] -= 1;
                dk.push((src as u32, index[&lowered] as u32, e[k] as f64));
            }
        }

        JetSpace { nvars, max_order, exps, degree, len_upto, index, mul, mul_upto, deriv }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of monomials of total degree `≤ order`.
    pub fn len(&self, order: usize) -> usize {
        self.len_upto[order]
    }

    pub fn exponents(&self, idx: usize) -> &[u8] {
        &self.exps[idx]
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.degree[idx]
    }

    pub fn index_of(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }
}

fn enumerate_degree(nvars: usize, remaining: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos + 1 == nvars {
        cur[pos] = remaining as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if nvars == 0 {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v as u8;
        enumerate_degree(nvars, remaining - v, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Truncated Taylor expansion valid up to `order`.
#[derive(Clone, Debug)]
pub struct Jet {
    space: &'static JetSpace,
    order: usize,
    coeffs: Vec<f64>,
    // set when this jet is exactly `x₀[k] + t_k`; enables the polynomial fast path
    coordinate: Option<usize>,
}

impl Jet {
    pub fn constant(space: &'static JetSpace, order: usize, value: f64) -> Jet {
        let mut coeffs = vec![0.0; space.len(order)];
        coeffs[0] = value;
        Jet { space, order, coeffs, coordinate: None }
    }

    pub fn zero(space: &'static JetSpace, order: usize) -> Jet {
        Jet::constant(space, order, 0.0)
    }

    /// Identity jet of coordinate `k` at base value `x0`.
    pub fn variable(space: &'static JetSpace, order: usize, k: usize, x0: f64) -> Jet {
        let mut jet = Jet::constant(space, order, x0);
        if order >= 1 {
            let mut e = vec![0u8; space.nvars];
            e[k] = 1;
            jet.coeffs[space.index[&e]] = 1.0;
        }
        jet.coordinate = Some(k);
        jet
    }

    /// Identity jets for every chart coordinate at `x0`.
    pub fn coordinates(x0: &[f64], order: usize) -> Vec<Jet> {
        let space = JetSpace::get(x0.len(), order);
        x0.iter().enumerate().map(|(k, &v)| Jet::variable(space, order, k, v)).collect()
    }

    pub fn from_coeffs(space: &'static JetSpace, order: usize, coeffs: Vec<f64>) -> Jet {
        assert_eq!(coeffs.len(), space.len(order), "coefficient count does not match jet order");
        Jet { space, order, coeffs, coordinate: None }
    }

    pub fn space(&self) -> &'static JetSpace {
        self.space
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coordinate_index(&self) -> Option<usize> {
        self.coordinate
    }

    /// Exact partial derivative `∂^α g(x₀)`.
    pub fn partial(&self, alpha: &[u8]) -> f64 {
        let deg: usize = alpha.iter().map(|&a| a as usize).sum();
        assert!(deg <= self.order, "partial of degree {deg} exceeds jet order {}", self.order);
        let idx = self.space.index[alpha];
        let fact: f64 = alpha.iter().map(|&a| factorial(a as usize)).product();
        self.coeffs[idx] * fact
    }

    /// Drop coefficients above `order`.
    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet {
            space: self.space,
            order,
            coeffs: self.coeffs[..self.space.len(order)].to_vec(),
            coordinate: if order >= 1 { self.coordinate } else { None },
        }
    }

    /// `∂_k` of the jet; the result is valid to one order less.
    pub fn derivative(&self, k: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let order = self.order - 1;
        let len = self.space.len(order);
        let mut coeffs = vec![0.0; len];
        for &(src, dst, fac) in &self.space.deriv[k] {
            let dst = dst as usize;
            if dst < len {
                coeffs[dst] += fac * self.coeffs[src as usize];
            }
        }
        Jet { space: self.space, order, coeffs, coordinate: None }
    }

    pub fn add(&self, other: &Jet) -> Jet {
        let order = self.order.min(other.order);
        let len = self.space.len(order);
        let coeffs = (0..len).map(|i| self.coeffs[i] + other.coeffs[i]).collect();
        Jet { space: self.space, order, coeffs, coordinate: None }
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        let order = self.order.min(other.order);
        let len = self.space.len(order);
        let coeffs = (0..len).map(|i| self.coeffs[i] - other.coeffs[i]).collect();
        Jet { space: self.space, order, coeffs, coordinate: None }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            space: self.space,
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            coordinate: None,
        }
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out.coordinate = None;
        out
    }

    /// `self += s * other`, truncating to the lower order.
    pub fn axpy(&mut self, s: f64, other: &Jet) {
        if other.order < self.order {
            self.order = other.order;
            self.coeffs.truncate(self.space.len(self.order));
        }
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += s * o;
        }
        self.coordinate = None;
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let order = self.order.min(other.order);
        let len = self.space.len(order);
        let mut coeffs = vec![0.0; len];
        let a = &self.coeffs;
        let b = &other.coeffs;
        for &(ia, ib, ic) in &self.space.mul[..self.space.mul_upto[order]] {
            coeffs[ic as usize] += a[ia as usize] * b[ib as usize];
        }
        Jet { space: self.space, order, coeffs, coordinate: None }
    }

    /// `g(self)` for a univariate `g` given its derivatives `g^{(m)}(self(x₀))`, `m = 0..=order`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let order = self.order;
        assert!(derivs.len() > order);
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        h.coordinate = None;
        let mut out = Jet::constant(self.space, order, derivs[order] / factorial(order));
        for m in (0..order).rev() {
            out = out.mul(&h);
            out.coeffs[0] += derivs[m] / factorial(m);
        }
        out
    }

    pub fn recip(&self) -> Jet {
        let u0 = self.value();
        let derivs: Vec<f64> = (0..=self.order)
            .map(|m| sign(m) * factorial(m) / u0.powi(m as i32 + 1))
            .collect();
        self.compose(&derivs)
    }

    pub fn div(&self, other: &Jet) -> Jet {
        self.mul(&other.recip())
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let derivs: Vec<f64> = (0..=self.order).map(|m| cycle[m % 4]).collect();
        self.compose(&derivs)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let derivs: Vec<f64> = (0..=self.order).map(|m| cycle[m % 4]).collect();
        self.compose(&derivs)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&vec![e; self.order + 1])
    }

    pub fn ln(&self) -> Jet {
        let u0 = self.value();
        let mut derivs = vec![u0.ln()];
        for m in 1..=self.order {
            derivs.push(sign(m - 1) * factorial(m - 1) / u0.powi(m as i32));
        }
        self.compose(&derivs)
    }

    /// `self^a` for real `a` (base value must be positive unless `a` is a small integer).
    pub fn powf(&self, a: f64) -> Jet {
        let u0 = self.value();
        let mut derivs = Vec::with_capacity(self.order + 1);
        let mut falling = 1.0;
        for m in 0..=self.order {
            derivs.push(falling * u0.powf(a - m as f64));
            falling *= a - m as f64;
        }
        self.compose(&derivs)
    }

    pub fn powi(&self, n: i32) -> Jet {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut out = Jet::constant(self.space, self.order, 1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }
}

fn sign(m: usize) -> f64 {
    if m.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}
