//! Normal geodesics, shooting for the Carnot-Carathéodory distance, and the
//! `dθ`/`J` duality check.
//!
//! The geodesic equations in frame components are
//! `x' = Σ u_i X_i(x)`, `u_k' = −Σ Γ^k_{ij} u_i u_j + Σ_p a_p (J_p u)_k`
//! with constant `a ∈ ℝ^v` (one parameter per ordered vertical pair).

use crate::connection::ChristoffelData;
use crate::error::{Error, Result};
use crate::models::GroupLaw;
use crate::structure::{ChartPoint, SubRiemannianStructure};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub position: ChartPoint,
    pub u: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GeodesicState>,
}

impl Trajectory {
    pub fn last(&self) -> &GeodesicState {
        self.states.last().expect("trajectories are never empty")
    }

    /// Largest deviation of `|u|²` from its initial value.
    pub fn speed_drift(&self) -> f64 {
        let sq = |s: &GeodesicState| s.u.iter().map(|v| v * v).sum::<f64>();
        let s0 = sq(&self.states[0]);
        self.states.iter().map(|s| (sq(s) - s0).abs()).fold(0.0, f64::max)
    }

    /// CSV with columns `t, x_0.., u_0.., a_0..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let s0 = &self.states[0];
        let mut header = vec!["t".to_string()];
        header.extend((0..s0.position.dim()).map(|k| format!("x{k}")));
        header.extend((0..s0.u.len()).map(|k| format!("u{k}")));
        header.extend((0..s0.a.len()).map(|k| format!("a{k}")));
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(*t)
                .chain(s.position.0.iter().cloned())
                .chain(s.u.iter().cloned())
                .chain(s.a.iter().cloned())
                .map(|v| format!("{v:.17e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Right-hand side of the geodesic system on the packed state `(x, u)`.
struct GeodesicField<'a> {
    s: &'a SubRiemannianStructure,
    a: &'a [f64],
}

impl GeodesicField<'_> {
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let (n, d, v) = (self.s.chart_dim(), self.s.d(), self.s.v());
        let (x, u) = y.split_at(n);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, f) in self.s.horizontal().iter().enumerate() {
            if u[i] == 0.0 {
                continue;
            }
            for (k, c) in f.components.iter().enumerate() {
                if !c.is_zero() {
                    out[k] += u[i] * c.eval_f64(x);
                }
            }
        }
        let loc = self.s.local_values(x);
        let ch = ChristoffelData::from_values(&loc);
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc -= ch.gamma(i, j, k) * u[i] * u[j];
                }
                for p in 0..v {
                    acc += self.a[p] * loc.g(k, i, p) * u[i];
                }
            }
            out[n + k] = acc;
        }
    }
}

fn rk4_step(f: &GeodesicField<'_>, y: &mut [f64], h: f64, k: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = k;
    f.eval(y, k1);
    tmp.iter_mut().zip(y.iter()).zip(k1.iter()).for_each(|((t, y), k)| *t = y + 0.5 * h * k);
    f.eval(tmp, k2);
    tmp.iter_mut().zip(y.iter()).zip(k2.iter()).for_each(|((t, y), k)| *t = y + 0.5 * h * k);
    f.eval(tmp, k3);
    tmp.iter_mut().zip(y.iter()).zip(k3.iter()).for_each(|((t, y), k)| *t = y + h * k);
    f.eval(tmp, k4);
    for i in 0..y.len() {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Classic fourth-order Runge-Kutta over `[0, t_end]` with `steps` equal steps.
pub fn integrate_geodesic(s: &SubRiemannianStructure, state0: &GeodesicState, t_end: f64, steps: usize) -> Result<Trajectory> {
    integrate(s, state0, t_end, steps, true)
}

fn integrate(s: &SubRiemannianStructure, state0: &GeodesicState, t_end: f64, steps: usize, record: bool) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Domain("at least one integration step is required".into()));
    }
    let (n, d, v) = (s.chart_dim(), s.d(), s.v());
    if state0.u.len() != d || state0.a.len() != v {
        return Err(Error::Dimension(format!("state has |u| = {}, |a| = {}; expected {d}, {v}", state0.u.len(), state0.a.len())));
    }
    s.check_point(&state0.position)?;
    let field = GeodesicField { s, a: &state0.a };
    let mut y: Vec<f64> = state0.position.0.iter().chain(&state0.u).cloned().collect();
    let mut k: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n + d]);
    let h = t_end / steps as f64;
    let unpack = |y: &[f64]| GeodesicState { position: ChartPoint(y[..n].to_vec()), u: y[n..].to_vec(), a: state0.a.clone() };
    let mut times = vec![0.0];
    let mut states = vec![state0.clone()];
    for step in 1..=steps {
        let prev = y.clone();
        rk4_step(&field, &mut y, h, &mut k);
        if !s.in_domain(&y[..n]) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Boundary { t: (step - 1) as f64 * h, state: prev });
        }
        if record || step == steps {
            times.push(step as f64 * h);
            states.push(unpack(&y));
        }
    }
    Ok(Trajectory { times, states })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceStatus {
    Converged,
    MaxIter,
    LowerBoundOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceResult {
    pub value: f64,
    pub lower_bound: Option<f64>,
    pub path: Vec<ChartPoint>,
    pub status: DistanceStatus,
    pub endpoint_error: f64,
    /// Initial velocity and vertical parameters of the minimising shot.
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShootingConfig {
    pub starts: usize,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    pub max_iter: usize,
    /// Endpoint tolerance for a converged shot.
    pub tol: f64,
    /// Number of coarse candidates that get polished.
    pub polish: usize,
}

impl Default for ShootingConfig {
    fn default() -> ShootingConfig {
        ShootingConfig { starts: 32, coarse_steps: 40, fine_steps: 400, max_iter: 40, tol: 1e-10, polish: 4 }
    }
}

/// Radical-inverse Halton point `index` in `[0, 1)^dim`.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    (0..dim)
        .map(|k| {
            let b = PRIMES[k % PRIMES.len()];
            let (mut i, mut f, mut r) = (index + 1, 1.0, 0.0);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

struct Shooter<'a> {
    s: &'a SubRiemannianStructure,
    x: &'a ChartPoint,
    y: &'a ChartPoint,
}

impl Shooter<'_> {
    fn residual(&self, theta: &[f64], steps: usize) -> Option<Vec<f64>> {
        let d = self.s.d();
        let st = GeodesicState { position: self.x.clone(), u: theta[..d].to_vec(), a: theta[d..].to_vec() };
        let tr = integrate(self.s, &st, 1.0, steps, false).ok()?;
        Some(self.s.chart_difference(&self.y.0, &tr.last().position.0))
    }

    /// Levenberg-Marquardt on the endpoint map with a forward-difference Jacobian.
    fn solve(&self, mut theta: Vec<f64>, steps: usize, cfg: &ShootingConfig) -> (Vec<f64>, f64) {
        let m = theta.len();
        let Some(mut r) = self.residual(&theta, steps) else {
            return (theta, f64::INFINITY);
        };
        let mut norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut lambda = 1e-3;
        for _ in 0..cfg.max_iter {
            if norm < cfg.tol {
                break;
            }
            let n = r.len();
            let mut jac = DMatrix::zeros(n, m);
            let mut ok = true;
            for c in 0..m {
                let h = 1e-7 * theta[c].abs().max(1.0);
                let mut tp = theta.clone();
                tp[c] += h;
                match self.residual(&tp, steps) {
                    Some(rp) => {
                        for row in 0..n {
                            jac[(row, c)] = (rp[row] - r[row]) / h;
                        }
                    }
                    None => ok = false,
                }
            }
            if !ok {
                break;
            }
            let rv = DVector::from_vec(r.clone());
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * rv;
            let mut improved = false;
            for _ in 0..12 {
                let mut a = jtj.clone();
                for c in 0..m {
                    a[(c, c)] += lambda * (1.0 + jtj[(c, c)]);
                }
                let Some(delta) = a.lu().solve(&(-&jtr)) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
                if let Some(rc) = self.residual(&cand, steps) {
                    let nc = rc.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nc < norm {
                        theta = cand;
                        r = rc;
                        norm = nc;
                        lambda = (lambda * 0.3).max(1e-12);
                        improved = true;
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (theta, norm)
    }
}

/// Euclidean norm of the horizontal displacement, a lower bound on group models.
pub fn horizontal_projection_bound(group: &GroupLaw, s: &SubRiemannianStructure, x: &ChartPoint, y: &ChartPoint) -> f64 {
    let k = group.horizontal_dim(s.chart_dim());
    x.0[..k].iter().zip(&y.0[..k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Multi-start shooting for `d(x, y)`; the result is the length of the best
/// converged normal geodesic, an upper bound for the distance.
pub fn cc_distance(
    s: &SubRiemannianStructure,
    x: &ChartPoint,
    y: &ChartPoint,
    group: Option<&GroupLaw>,
    cfg: &ShootingConfig,
) -> Result<DistanceResult> {
    s.check_point(x)?;
    s.check_point(y)?;
    let (d, v) = (s.d(), s.v());
    let lower_bound = group.map(|g| horizontal_projection_bound(g, s, x, y));
    let diff = s.chart_difference(&x.0, &y.0);
    let gap = diff.iter().map(|t| t * t).sum::<f64>().sqrt();
    if gap == 0.0 {
        return Ok(DistanceResult {
            value: 0.0,
            lower_bound,
            path: vec![x.clone()],
            status: DistanceStatus::Converged,
            endpoint_error: 0.0,
            w: vec![0.0; d],
            a: vec![0.0; v],
        });
    }
    // initial velocity scale: horizontal gap plus the square root of the vertical one
    let fm = s.frame_matrix(&x.0);
    let coeffs = fm.lu().solve(&DVector::from_vec(diff.clone())).unwrap_or_else(|| DVector::from_vec(diff.clone()));
    let hgap = coeffs.rows(0, d).norm();
    let vgap = coeffs.rows(d, v).norm();
    let scale = hgap + (4.0 * PI * vgap).sqrt();
    let shooter = Shooter { s, x, y };
    let guided = {
        let mut t = coeffs.rows(0, d).iter().cloned().collect::<Vec<f64>>();
        t.extend(std::iter::repeat_n(0.0, v));
        t
    };
    let candidates: Vec<(usize, Vec<f64>, f64)> = (0..cfg.starts)
        .into_par_iter()
        .map(|k| {
            let theta0 = if k == 0 {
                guided.clone()
            } else {
                let h = halton(k, d + v);
                let mut t: Vec<f64> = h[..d].iter().map(|q| scale * (2.0 * q - 1.0)).collect();
                t.extend(h[d..].iter().map(|q| 6.0 * PI * (2.0 * q - 1.0)));
                t
            };
            let (theta, res) = shooter.solve(theta0, cfg.coarse_steps, cfg);
            (k, theta, res)
        })
        .collect();
    let mut ranked: Vec<&(usize, Vec<f64>, f64)> = candidates.iter().filter(|c| c.2 < 1e-2 * (1.0 + gap)).collect();
    let len = |t: &[f64]| t[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    ranked.sort_by(|a, b| len(&a.1).total_cmp(&len(&b.1)).then(a.0.cmp(&b.0)));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for c in ranked.iter().take(cfg.polish) {
        let (theta, res) = shooter.solve(c.1.clone(), cfg.fine_steps, cfg);
        if res < cfg.tol.max(1e-9) {
            let better = match &best {
                None => true,
                Some((bt, _)) => len(&theta) < len(bt),
            };
            if better {
                best = Some((theta, res));
            }
        }
    }
    let (status, theta, err) = match best {
        Some((t, e)) => (DistanceStatus::Converged, t, e),
        None => {
            let fallback = candidates.iter().min_by(|a, b| a.2.total_cmp(&b.2)).expect("at least one start");
            let status = if lower_bound.is_some() { DistanceStatus::LowerBoundOnly } else { DistanceStatus::MaxIter };
            (status, fallback.1.clone(), fallback.2)
        }
    };
    let st = GeodesicState { position: x.clone(), u: theta[..d].to_vec(), a: theta[d..].to_vec() };
    let path = integrate(s, &st, 1.0, cfg.fine_steps, true).map(|t| t.states.into_iter().map(|s| s.position).collect()).unwrap_or_default();
    Ok(DistanceResult {
        value: len(&theta),
        lower_bound,
        path,
        status,
        endpoint_error: err,
        w: theta[..d].to_vec(),
        a: theta[d..].to_vec(),
    })
}

/// Closed-form Heisenberg distance from the origin to `(x, y, z)`.
pub fn heisenberg_distance_from_origin(p: &[f64]) -> f64 {
    let c = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let z = p[2].abs();
    if z == 0.0 {
        return c;
    }
    if c == 0.0 {
        return (4.0 * PI * z).sqrt();
    }
    // μ(φ) = (φ − sin φ) / (8 sin²(φ/2)) increases from 0 to ∞ on (0, 2π)
    let target = z / (c * c);
    let mu = |phi: f64| (phi - phi.sin()) / (8.0 * (0.5 * phi).sin().powi(2));
    let (mut lo, mut hi) = (0.0f64, 2.0 * PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mu(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    c * (0.5 * phi) / (0.5 * phi).sin()
}

/// `d(p, q)` on the first Heisenberg group via left translation.
pub fn heisenberg_distance(p: &[f64], q: &[f64]) -> f64 {
    let g = GroupLaw::Heisenberg { n: 1 };
    heisenberg_distance_from_origin(&g.mul(&g.inverse(p), q))
}

/// `dθ_p(V₁, V₂) + g(V₁, J_p V₂)` for constant-coefficient horizontal fields
/// `V = Σ c_i X_i`, with `θ_p` half the covector dual to `Z_p` and the bracket
/// taken from raw frame coefficients.
pub fn dtheta_duality_residual(s: &SubRiemannianStructure, x: &ChartPoint, c1: &[f64], c2: &[f64]) -> Result<Vec<f64>> {
    s.check_point(x)?;
    let (d, v, n) = (s.d(), s.v(), s.chart_dim());
    if c1.len() != d || c2.len() != d {
        return Err(Error::Dimension("horizontal coefficient vectors must have length d".into()));
    }
    let fj = s.frame_jets(&x.0, 1);
    let mut b = DVector::zeros(n);
    for i in 0..d {
        for j in 0..d {
            let w = c1[i] * c2[j];
            if w == 0.0 {
                continue;
            }
            for (k, ck) in &fj.horizontal[j] {
                for (a, va) in &fj.horizontal[i] {
                    b[*k] += w * va.value() * ck.derivative(*a).value();
                }
            }
            for (k, ck) in &fj.horizontal[i] {
                for (a, va) in &fj.horizontal[j] {
                    b[*k] -= w * va.value() * ck.derivative(*a).value();
                }
            }
        }
    }
    let frame_coeffs = s
        .frame_matrix(&x.0)
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Dimension(format!("degenerate frame at {:?}", x.0)))?;
    let loc = s.local_values(&x.0);
    Ok((0..v)
        .map(|p| {
            let dtheta = -0.5 * frame_coeffs[d + p];
            let mut gj = 0.0;
            for k in 0..d {
                for i in 0..d {
                    gj += c1[k] * loc.g(k, i, p) * c2[i];
                }
            }
            dtheta + gj
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, ModelName};
    use approx::assert_abs_diff_eq;

    fn state(x: &[f64], u: &[f64], a: &[f64]) -> GeodesicState {
        GeodesicState { position: ChartPoint(x.to_vec()), u: u.to_vec(), a: a.to_vec() }
    }

    #[test]
    fn heisenberg_straight_line_and_circle() {
        let s = build(ModelName::Heisenberg { n: 1 }).0;
        let tr = integrate_geodesic(&s, &state(&[0.0; 3], &[1.0, 0.0], &[0.0]), 2.0, 20).unwrap();
        let end = &tr.last().position.0;
        assert_abs_diff_eq!(end[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(end[1], 0.0);
        assert_abs_diff_eq!(end[2], 0.0);
        // u rotates at rate a/2: after t = 4π/a it has turned once
        let a = 2.0;
        let t_end = 4.0 * PI / a;
        let tr = integrate_geodesic(&s, &state(&[0.0; 3], &[1.0, 0.0], &[a]), t_end, 2000).unwrap();
        assert!(tr.speed_drift() < 1e-12);
        let last = tr.last();
        assert_abs_diff_eq!(last.u[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(last.position.0[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(last.position.0[1], 0.0, epsilon = 1e-10);
        // closed loop of radius 2/a encloses area π(2/a)²
        assert_abs_diff_eq!(last.position.0[2].abs(), PI * (2.0 / a).powi(2), epsilon = 1e-9);
    }

    #[test]
    fn sphere_great_circle_period() {
        let s = build(ModelName::Sphere2).0;
        let start = state(&[1.0, 0.3], &[0.0, 1.0], &[]);
        let tr = integrate_geodesic(&s, &start, 2.0 * PI, 4000).unwrap();
        let end = &tr.last().position.0;
        assert_abs_diff_eq!(end[0], 1.0, epsilon = 1e-6);
        let dphi = s.chart_difference(&[0.0, 0.3], &[0.0, end[1]])[1];
        assert_abs_diff_eq!(dphi, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn chart_exit_is_reported() {
        let s = build(ModelName::Sphere2).0;
        let r = integrate_geodesic(&s, &state(&[0.2, 0.0], &[-1.0, 0.0], &[]), 1.0, 100);
        assert!(matches!(r, Err(Error::Boundary { .. })));
    }

    #[test]
    fn heisenberg_distances() {
        let (s, desc) = build(ModelName::Heisenberg { n: 1 });
        let g = desc.group.unwrap();
        let o = ChartPoint(vec![0.0; 3]);
        let r = cc_distance(&s, &o, &ChartPoint(vec![1.0, 0.0, 0.0]), Some(&g), &ShootingConfig::default()).unwrap();
        assert_eq!(r.status, DistanceStatus::Converged);
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-6);
        assert_eq!(r.lower_bound, Some(1.0));
        let target = ChartPoint(vec![0.3, -0.4, 0.5]);
        let r = cc_distance(&s, &o, &target, Some(&g), &ShootingConfig::default()).unwrap();
        assert_eq!(r.status, DistanceStatus::Converged);
        assert_abs_diff_eq!(r.value, heisenberg_distance_from_origin(&target.0), epsilon = 1e-6);
        let z = cc_distance(&s, &o, &o, Some(&g), &ShootingConfig::default()).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn duality_examples() {
        let s = build(ModelName::Heisenberg { n: 1 }).0;
        let x = ChartPoint(vec![0.2, 0.7, -0.1]);
        let r = dtheta_duality_residual(&s, &x, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);
        let same = dtheta_duality_residual(&s, &x, &[0.3, 0.4], &[0.3, 0.4]).unwrap();
        assert_abs_diff_eq!(same[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn halton_is_in_unit_cube() {
        for k in 0..50 {
            assert!(halton(k, 4).iter().all(|v| (0.0..1.0).contains(v)));
        }
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
    }
}
