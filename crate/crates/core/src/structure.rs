//! Rank-two sub-Riemannian structures on a single chart.
//!
//! Vertical fields are stored once per ordered pair `m < n` under the flat
//! index `p` (lexicographic). Throughout the crate `G[i][j][p]` denotes the
//! stored coefficient `γ^{m_p n_p}_{ij}`, so the bracket relation reads
//! `[X_i, X_j] = Σ_ℓ ω^ℓ_{ij} X_ℓ + 2 Σ_p G[i][j][p] Z_p`.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::Jet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A point of the chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChartPoint(pub Vec<f64>);

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> ChartPoint {
        ChartPoint(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(v: Vec<f64>) -> ChartPoint {
        ChartPoint(v)
    }
}

impl From<&[f64]> for ChartPoint {
    fn from(v: &[f64]) -> ChartPoint {
        ChartPoint(v.to_vec())
    }
}

/// Number of ordered vertical pairs for `h` labels.
pub fn vertical_count(h: usize) -> usize {
    h * h.saturating_sub(1) / 2
}

/// Ordered pair `(m, n)` with `1 ≤ m < n ≤ h` and its flat index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalIndex {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

/// Flat index and orientation sign of `Z_{mn}` (labels are 1-based).
pub fn vertical_flatten(h: usize, m: usize, n: usize) -> Result<(usize, f64)> {
    if m == n || m == 0 || n == 0 || m > h || n > h {
        return Err(Error::InvalidIndex { m, n, h });
    }
    let (lo, hi, sign) = if m < n { (m, n, 1.0) } else { (n, m, -1.0) };
    let before: usize = (1..lo).map(|a| h - a).sum();
    Ok((before + (hi - lo - 1), sign))
}

/// Inverse of [`vertical_flatten`] on ordered pairs.
pub fn vertical_unflatten(h: usize, p: usize) -> Result<VerticalIndex> {
    let mut q = p;
    for m in 1..h {
        let row = h - m;
        if q < row {
            return Ok(VerticalIndex { m, n: m + 1 + q, p });
        }
        q -= row;
    }
    Err(Error::InvalidIndex { m: p, n: p, h })
}

/// Vector field given by its chart components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub components: Vec<Expr>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> VectorField {
        VectorField { components }
    }

    pub fn coordinate(n: usize, k: usize) -> VectorField {
        let mut components = vec![Expr::zero(); n];
        components[k] = Expr::Const(1.0);
        VectorField { components }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|e| e.eval_f64(x)).collect()
    }

    /// Components as jets of the given order, skipping identically zero ones.
    pub fn jets(&self, coords: &[Jet]) -> Vec<(usize, Jet)> {
        self.components
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_zero())
            .map(|(k, e)| (k, e.eval(coords)))
            .collect()
    }
}

/// Apply a vector field, given as component jets, to a jet: `Σ_k c_k ∂_k g`.
pub fn apply_field(components: &[(usize, Jet)], g: &Jet) -> Jet {
    let order = g.order() - 1;
    let mut out = Jet::zero(g.space(), order);
    for (k, ck) in components {
        let term = ck.truncate(order).mul(&g.derivative(*k));
        out.axpy(1.0, &term);
    }
    out
}

/// Coefficient functions `ω^ℓ_{ij}`, `γ^{mn}_{ij}` (stored per ordered pair) and `δ^ℓ_{imn}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureFunctions {
    pub d: usize,
    pub v: usize,
    omega: Vec<Expr>,
    gamma: Vec<Expr>,
    delta: Vec<Expr>,
}

impl StructureFunctions {
    pub fn zero(d: usize, v: usize) -> StructureFunctions {
        StructureFunctions {
            d,
            v,
            omega: vec![Expr::zero(); d * d * d],
            gamma: vec![Expr::zero(); d * d * v],
            delta: vec![Expr::zero(); d * v * d],
        }
    }

    fn oi(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.d + j) * self.d + l
    }

    fn gi(&self, i: usize, j: usize, p: usize) -> usize {
        (i * self.d + j) * self.v + p
    }

    fn di(&self, i: usize, p: usize, l: usize) -> usize {
        (i * self.v + p) * self.d + l
    }

    /// `ω^l_{ij}` (0-based horizontal indices).
    pub fn omega(&self, i: usize, j: usize, l: usize) -> &Expr {
        &self.omega[self.oi(i, j, l)]
    }

    /// `γ^{m_p n_p}_{ij}`.
    pub fn gamma(&self, i: usize, j: usize, p: usize) -> &Expr {
        &self.gamma[self.gi(i, j, p)]
    }

    /// `δ^l_{i m_p n_p}`.
    pub fn delta(&self, i: usize, p: usize, l: usize) -> &Expr {
        &self.delta[self.di(i, p, l)]
    }

    pub fn set_omega(&mut self, i: usize, j: usize, l: usize, e: Expr) {
        let k = self.oi(i, j, l);
        self.omega[k] = e;
    }

    pub fn set_gamma(&mut self, i: usize, j: usize, p: usize, e: Expr) {
        let k = self.gi(i, j, p);
        self.gamma[k] = e;
    }

    pub fn set_delta(&mut self, i: usize, p: usize, l: usize, e: Expr) {
        let k = self.di(i, p, l);
        self.delta[k] = e;
    }

    /// Sets `ω^l_{ij} = e` and `ω^l_{ji} = −e`.
    pub fn set_omega_antisym(&mut self, i: usize, j: usize, l: usize, e: Expr) {
        self.set_omega(j, i, l, -e.clone());
        self.set_omega(i, j, l, e);
    }

    /// Sets `γ_{ij} = e` and `γ_{ji} = −e` on pair `p`.
    pub fn set_gamma_antisym(&mut self, i: usize, j: usize, p: usize, e: Expr) {
        self.set_gamma(j, i, p, -e.clone());
        self.set_gamma(i, j, p, e);
    }

    /// Sets `δ^l_{ip} = e` and `δ^i_{lp} = −e`.
    pub fn set_delta_skew(&mut self, i: usize, p: usize, l: usize, e: Expr) {
        self.set_delta(l, p, i, -e.clone());
        self.set_delta(i, p, l, e);
    }

    pub fn is_constant(&self) -> bool {
        self.omega.iter().chain(&self.gamma).chain(&self.delta).all(|e| e.as_const().is_some())
    }

    fn eval_all(exprs: &[Expr], x: &[f64]) -> Vec<f64> {
        exprs.iter().map(|e| e.eval_f64(x)).collect()
    }
}

/// Chart, frame, structure functions and measure density.
#[derive(Clone, Debug, PartialEq)]
pub struct SubRiemannianStructure {
    pub name: String,
    d: usize,
    h: usize,
    chart_dim: usize,
    horizontal: Vec<VectorField>,
    vertical: Vec<VectorField>,
    pub sf: StructureFunctions,
    pub measure_density: Expr,
    /// Open interval of validity per coordinate.
    chart_domain: Vec<(f64, f64)>,
    /// Period of each coordinate, if it is an angle.
    periods: Vec<Option<f64>>,
    folds: Vec<ChartFold>,
}

/// Reflection of a polar coordinate through an endpoint of its interval,
/// with the shifts of the angular coordinates that name the same point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartFold {
    pub coord: usize,
    pub lower_shift: Vec<(usize, f64)>,
    pub upper_shift: Vec<(usize, f64)>,
}

impl SubRiemannianStructure {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        h: usize,
        horizontal: Vec<VectorField>,
        vertical: Vec<VectorField>,
        sf: StructureFunctions,
        measure_density: Expr,
    ) -> Result<SubRiemannianStructure> {
        let v = vertical_count(h);
        let chart_dim = d + v;
        if d == 0 {
            return Err(Error::Dimension("horizontal rank must be positive".into()));
        }
        if horizontal.len() != d {
            return Err(Error::Dimension(format!("{} horizontal fields for d = {d}", horizontal.len())));
        }
        if vertical.len() != v {
            return Err(Error::Dimension(format!("{} vertical fields for h = {h} (expected {v})", vertical.len())));
        }
        if let Some(bad) = horizontal.iter().chain(&vertical).find(|f| f.components.len() != chart_dim) {
            return Err(Error::Dimension(format!(
                "field with {} components on a chart of dimension {chart_dim}",
                bad.components.len()
            )));
        }
        if sf.d != d || sf.v != v {
            return Err(Error::Dimension(format!(
                "structure functions sized ({}, {}) for (d, v) = ({d}, {v})",
                sf.d, sf.v
            )));
        }
        Ok(SubRiemannianStructure {
            name: name.into(),
            d,
            h,
            chart_dim,
            horizontal,
            vertical,
            sf,
            measure_density,
            chart_domain: vec![(f64::NEG_INFINITY, f64::INFINITY); chart_dim],
            periods: vec![None; chart_dim],
            folds: Vec::new(),
        })
    }

    /// Restrict the chart and declare periodic coordinates.
    pub fn with_chart(mut self, domain: Vec<(f64, f64)>, periods: Vec<Option<f64>>) -> Result<SubRiemannianStructure> {
        if domain.len() != self.chart_dim || periods.len() != self.chart_dim {
            return Err(Error::Dimension("chart description does not match the chart dimension".into()));
        }
        self.chart_domain = domain;
        self.periods = periods;
        Ok(self)
    }

    pub fn with_folds(mut self, folds: Vec<ChartFold>) -> Result<SubRiemannianStructure> {
        for f in &folds {
            let (lo, hi) = *self.chart_domain.get(f.coord).ok_or_else(|| Error::Dimension(format!("fold on coordinate {}", f.coord)))?;
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Domain(format!("fold on unbounded coordinate {}", f.coord)));
            }
        }
        self.folds = folds;
        Ok(self)
    }

    pub fn folds(&self) -> &[ChartFold] {
        &self.folds
    }

    /// Map a point that crossed a folded boundary back into the chart and
    /// wrap periodic coordinates into `[−P/2, P/2)`. Unfolded coordinates are
    /// left unchanged.
    pub fn canonicalize(&self, x: &mut [f64]) {
        for f in &self.folds {
            let (lo, hi) = self.chart_domain[f.coord];
            for _ in 0..4 {
                let v = x[f.coord];
                let shifts = if v < lo {
                    x[f.coord] = 2.0 * lo - v;
                    &f.lower_shift
                } else if v > hi {
                    x[f.coord] = 2.0 * hi - v;
                    &f.upper_shift
                } else {
                    break;
                };
                for &(k, sh) in shifts {
                    x[k] += sh;
                }
            }
        }
        for (v, per) in x.iter_mut().zip(&self.periods) {
            if let Some(p) = per {
                *v -= p * (*v / p + 0.5).floor();
            }
        }
    }

    pub fn chart_domain(&self) -> &[(f64, f64)] {
        &self.chart_domain
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.chart_domain).all(|(v, (lo, hi))| v.is_finite() && *v > *lo && *v < *hi)
    }

    /// `y − x` with periodic coordinates wrapped into `[−P/2, P/2)`.
    pub fn chart_difference(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(y)
            .zip(&self.periods)
            .map(|((a, b), per)| {
                let d = b - a;
                match per {
                    Some(p) => d - p * (d / p + 0.5).floor(),
                    None => d,
                }
            })
            .collect()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Number of stored vertical fields.
    pub fn v(&self) -> usize {
        vertical_count(self.h)
    }

    pub fn chart_dim(&self) -> usize {
        self.chart_dim
    }

    pub fn horizontal(&self) -> &[VectorField] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[VectorField] {
        &self.vertical
    }

    pub fn sf_mut(&mut self) -> &mut StructureFunctions {
        &mut self.sf
    }

    pub fn check_point(&self, x: &ChartPoint) -> Result<()> {
        if x.dim() != self.chart_dim {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, chart dimension is {}",
                x.dim(),
                self.chart_dim
            )));
        }
        if !x.is_finite() || !self.in_domain(&x.0) {
            return Err(Error::Domain(format!("point {:?} is outside the chart", x.0)));
        }
        Ok(())
    }

    /// Component jets of every horizontal then vertical field at `x`.
    pub fn frame_jets(&self, x: &[f64], order: usize) -> FrameJets {
        let coords = Jet::coordinates(x, order);
        FrameJets {
            horizontal: self.horizontal.iter().map(|f| f.jets(&coords)).collect(),
            vertical: self.vertical.iter().map(|f| f.jets(&coords)).collect(),
        }
    }

    /// Columns `X_1..X_d, Z_1..Z_v` at `x`.
    pub fn frame_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.chart_dim;
        let mut m = DMatrix::zeros(n, n);
        for (c, f) in self.horizontal.iter().chain(&self.vertical).enumerate() {
            for (r, val) in f.eval(x).into_iter().enumerate() {
                m[(r, c)] = val;
            }
        }
        m
    }

    /// Structure-function values only; derivative accessors must not be used.
    pub fn local_values(&self, x: &[f64]) -> LocalData {
        LocalData {
            d: self.d,
            v: self.v(),
            omega: StructureFunctions::eval_all(&self.sf.omega, x),
            gamma: StructureFunctions::eval_all(&self.sf.gamma, x),
            delta: StructureFunctions::eval_all(&self.sf.delta, x),
            x_omega: Vec::new(),
            x_gamma: Vec::new(),
        }
    }

    /// Structure-function values and their first horizontal frame derivatives.
    pub fn local(&self, x: &[f64]) -> LocalData {
        let (d, v) = (self.d, self.v());
        let xh: Vec<Vec<f64>> = self.horizontal.iter().map(|f| f.eval(x)).collect();
        let coords = Jet::coordinates(x, 1);
        let frame_derivs = |exprs: &[Expr]| -> Vec<f64> {
            let mut out = vec![0.0; d * exprs.len()];
            for (idx, e) in exprs.iter().enumerate() {
                if e.as_const().is_some() {
                    continue;
                }
                let j = e.eval(&coords);
                let grad: Vec<f64> = (0..x.len()).map(|k| j.derivative(k).value()).collect();
                for (l, xl) in xh.iter().enumerate() {
                    out[l * exprs.len() + idx] = xl.iter().zip(&grad).map(|(a, b)| a * b).sum();
                }
            }
            out
        };
        LocalData {
            d,
            v,
            omega: StructureFunctions::eval_all(&self.sf.omega, x),
            gamma: StructureFunctions::eval_all(&self.sf.gamma, x),
            delta: StructureFunctions::eval_all(&self.sf.delta, x),
            x_omega: frame_derivs(&self.sf.omega),
            x_gamma: frame_derivs(&self.sf.gamma),
        }
    }
}

/// Frame component jets at a point.
#[derive(Clone, Debug)]
pub struct FrameJets {
    pub horizontal: Vec<Vec<(usize, Jet)>>,
    pub vertical: Vec<Vec<(usize, Jet)>>,
}

/// Pointwise structure data: values and `X_ℓ`-derivatives.
#[derive(Clone, Debug)]
pub struct LocalData {
    pub d: usize,
    pub v: usize,
    omega: Vec<f64>,
    gamma: Vec<f64>,
    delta: Vec<f64>,
    x_omega: Vec<f64>,
    x_gamma: Vec<f64>,
}

impl LocalData {
    #[inline]
    pub fn om(&self, i: usize, j: usize, l: usize) -> f64 {
        self.omega[(i * self.d + j) * self.d + l]
    }

    #[inline]
    pub fn g(&self, i: usize, j: usize, p: usize) -> f64 {
        self.gamma[(i * self.d + j) * self.v + p]
    }

    #[inline]
    pub fn de(&self, i: usize, p: usize, l: usize) -> f64 {
        self.delta[(i * self.v + p) * self.d + l]
    }

    /// `X_a ω^l_{ij}`.
    #[inline]
    pub fn x_om(&self, a: usize, i: usize, j: usize, l: usize) -> f64 {
        let n = self.d * self.d * self.d;
        self.x_omega[a * n + (i * self.d + j) * self.d + l]
    }

    /// `X_a γ^{p}_{ij}`.
    #[inline]
    pub fn x_g(&self, a: usize, i: usize, j: usize, p: usize) -> f64 {
        let n = self.d * self.d * self.v;
        self.x_gamma[a * n + (i * self.d + j) * self.v + p]
    }
}

/// Per-point validation residuals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointValidation {
    pub point: ChartPoint,
    pub bracket_xx: f64,
    pub bracket_xz: f64,
    pub delta_skew: f64,
    pub antisymmetry: f64,
    pub frame_rank: usize,
    pub hormander_rank: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub structure: String,
    pub tol: f64,
    pub points: Vec<PointValidation>,
    pub max_residual: f64,
    pub pass: bool,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-9 * top.max(1.0)).count()
}

/// Chart components of `[V, W]` from component jets of order ≥ 1.
fn bracket(v: &[(usize, Jet)], w: &[(usize, Jet)], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, wk) in w {
        for (j, vj) in v {
            out[*k] += vj.value() * wk.derivative(*j).value();
        }
    }
    for (k, vk) in v {
        for (j, wj) in w {
            out[*k] -= wj.value() * vk.derivative(*j).value();
        }
    }
    out
}

fn values(f: &[(usize, Jet)], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, c) in f {
        out[*k] = c.value();
    }
    out
}

/// Check the bracket relations, δ-skewness, antisymmetry and the rank-two
/// Hörmander condition at each point.
pub fn validate_structure(s: &SubRiemannianStructure, pts: &[ChartPoint], tol: f64) -> Result<ValidationReport> {
    if pts.is_empty() {
        return Err(Error::Domain("no validation points".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (d, v, n) = (s.d(), s.v(), s.chart_dim());
    let mut out = Vec::with_capacity(pts.len());
    for x in pts {
        s.check_point(x)?;
        let fj = s.frame_jets(&x.0, 1);
        let loc = s.local(&x.0);
        let xs: Vec<Vec<f64>> = fj.horizontal.iter().map(|f| values(f, n)).collect();
        let zs: Vec<Vec<f64>> = fj.vertical.iter().map(|f| values(f, n)).collect();

        let mut bracket_xx = 0.0f64;
        let mut span = xs.clone();
        for i in 0..d {
            for j in 0..d {
                let b = bracket(&fj.horizontal[i], &fj.horizontal[j], n);
                if i < j {
                    span.push(b.clone());
                }
                for k in 0..n {
                    let mut model = 0.0;
                    for l in 0..d {
                        model += loc.om(i, j, l) * xs[l][k];
                    }
                    for p in 0..v {
                        model += 2.0 * loc.g(i, j, p) * zs[p][k];
                    }
                    bracket_xx = bracket_xx.max((b[k] - model).abs());
                }
            }
        }
        let mut bracket_xz = 0.0f64;
        for i in 0..d {
            for p in 0..v {
                let b = bracket(&fj.horizontal[i], &fj.vertical[p], n);
                for k in 0..n {
                    let model: f64 = (0..d).map(|l| loc.de(i, p, l) * xs[l][k]).sum();
                    bracket_xz = bracket_xz.max((b[k] - model).abs());
                }
            }
        }
        let mut delta_skew = 0.0f64;
        let mut antisymmetry = 0.0f64;
        for i in 0..d {
            for l in 0..d {
                for p in 0..v {
                    delta_skew = delta_skew.max((loc.de(i, p, l) + loc.de(l, p, i)).abs());
                    antisymmetry = antisymmetry.max((loc.g(i, l, p) + loc.g(l, i, p)).abs());
                }
                for k in 0..d {
                    antisymmetry = antisymmetry.max((loc.om(i, l, k) + loc.om(l, i, k)).abs());
                }
            }
        }

        let frame_rank = numerical_rank(&s.frame_matrix(&x.0));
        if frame_rank < n {
            return Err(Error::Dimension(format!(
                "frame has rank {frame_rank} < {n} at {:?}",
                x.0
            )));
        }
        let span_m = DMatrix::from_fn(n, span.len(), |r, c| span[c][r]);
        let hormander_rank = numerical_rank(&span_m);
        if hormander_rank < n {
            return Err(Error::Hormander { point: x.0.clone(), rank: hormander_rank, dim: n });
        }
        out.push(PointValidation {
            point: x.clone(),
            bracket_xx,
            bracket_xz,
            delta_skew,
            antisymmetry,
            frame_rank,
            hormander_rank,
        });
    }
    let max_residual = out
        .iter()
        .map(|p| p.bracket_xx.max(p.bracket_xz).max(p.delta_skew).max(p.antisymmetry))
        .fold(0.0, f64::max);
    Ok(ValidationReport {
        structure: s.name.clone(),
        tol,
        points: out,
        max_residual,
        pass: max_residual <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_examples() {
        assert_eq!(vertical_flatten(2, 1, 2).unwrap(), (0, 1.0));
        assert_eq!(vertical_flatten(2, 2, 1).unwrap(), (0, -1.0));
        assert_eq!(vertical_flatten(3, 2, 3).unwrap(), (2, 1.0));
        assert_eq!(vertical_flatten(3, 1, 3).unwrap(), (1, 1.0));
        assert!(matches!(vertical_flatten(3, 2, 2), Err(Error::InvalidIndex { .. })));
    }

    #[test]
    fn unflatten_inverts_flatten() {
        for h in 2..7 {
            for p in 0..vertical_count(h) {
                let vi = vertical_unflatten(h, p).unwrap();
                assert!(vi.m < vi.n);
                assert_eq!(vertical_flatten(h, vi.m, vi.n).unwrap(), (p, 1.0));
            }
            assert!(vertical_unflatten(h, vertical_count(h)).is_err());
        }
    }
}
