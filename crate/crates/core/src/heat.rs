//! Monte Carlo simulation of the hypoelliptic diffusion generated by `L`,
//! heat-kernel and semigroup estimators, and statistical checks of the
//! Li-Yau, Harnack, Gaussian-decay and volume-growth consequences of the
//! curvature-dimension inequality. The first eigenvalue of `−L` on compact
//! charts is computed by a grid energy discretisation.

use crate::calculus::drift_field;
use crate::cdconstants::{derive_constants, harnack_factor, CDParameters, DerivedConstants, LiYauCoefficients};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::models::GroupLaw;
use crate::structure::{ChartPoint, SubRiemannianStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ItoCorrectedEuler,
    HeunStratonovich,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    /// Multiplier on the per-coordinate Scott bandwidth.
    pub bandwidth: f64,
    pub scheme: Scheme,
    /// Paths further than this from the start in a non-periodic coordinate are censored.
    pub censor_half_width: f64,
    /// Keep every `k`-th state of every path for export.
    pub record_stride: Option<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> DiffusionConfig {
        DiffusionConfig {
            n_paths: 10_000,
            dt: 1e-3,
            t_max: 1.0,
            seed: 0,
            bandwidth: 1.0,
            scheme: Scheme::ItoCorrectedEuler,
            censor_half_width: 50.0,
            record_stride: None,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Domain("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !(self.t_max > 0.0) || self.dt > self.t_max {
            return Err(Error::Domain(format!("need 0 < dt ≤ t_max, got dt = {}, t_max = {}", self.dt, self.t_max)));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if !(self.censor_half_width > 0.0) {
            return Err(Error::Domain("censor half-width must be positive".into()));
        }
        if self.record_stride == Some(0) {
            return Err(Error::Domain("record stride must be positive".into()));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > 0.0) || t > self.t_max * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("time {t} outside (0, t_max = {}]", self.t_max)));
        }
        Ok(())
    }
}

/// Chart components of a vector field, constants split out.
#[derive(Clone, Debug)]
struct CompiledField {
    consts: Vec<(usize, f64)>,
    exprs: Vec<(usize, Expr)>,
}

impl CompiledField {
    fn new(components: &[Expr]) -> CompiledField {
        let mut consts = Vec::new();
        let mut exprs = Vec::new();
        for (k, e) in components.iter().enumerate() {
            match e.as_const() {
                Some(0.0) => {}
                Some(v) => consts.push((k, v)),
                None => exprs.push((k, e.clone())),
            }
        }
        CompiledField { consts, exprs }
    }

    #[inline]
    fn add_scaled(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for &(k, v) in &self.consts {
            out[k] += scale * v;
        }
        for (k, e) in &self.exprs {
            out[*k] += scale * e.eval_f64(x);
        }
    }
}

/// Stratonovich-to-Itô correction `Σ_i (D X_i) X_i`, symbolically.
pub fn ito_correction(s: &SubRiemannianStructure) -> Vec<Expr> {
    let n = s.chart_dim();
    let mut out = vec![Expr::zero(); n];
    for f in s.horizontal() {
        for (k, out_k) in out.iter_mut().enumerate() {
            for j in 0..n {
                let fj = &f.components[j];
                if fj.is_zero() {
                    continue;
                }
                let dk = f.components[k].diff(j);
                if !dk.is_zero() {
                    *out_k = out_k.clone() + fj.clone() * dk;
                }
            }
        }
    }
    out
}

struct Simulator<'a> {
    s: &'a SubRiemannianStructure,
    drift: CompiledField,
    fields: Vec<CompiledField>,
    scheme: Scheme,
    seed: u64,
    half_width: f64,
    /// Coordinates subject to the censoring box.
    boxed: Vec<bool>,
}

/// Outcome of one path.
struct PathOutcome {
    snapshots: Vec<f64>,
    censored: bool,
    records: Vec<f64>,
}

impl<'a> Simulator<'a> {
    fn new(s: &'a SubRiemannianStructure, cfg: &DiffusionConfig) -> Simulator<'a> {
        let mut drift = drift_field(s);
        if cfg.scheme == Scheme::ItoCorrectedEuler {
            for (dk, ck) in drift.iter_mut().zip(ito_correction(s)) {
                *dk = dk.clone() + ck;
            }
        }
        Simulator {
            s,
            drift: CompiledField::new(&drift),
            fields: s.horizontal().iter().map(|f| CompiledField::new(&f.components)).collect(),
            scheme: cfg.scheme,
            seed: cfg.seed,
            half_width: cfg.censor_half_width,
            boxed: (0..s.chart_dim())
                .map(|k| s.periods()[k].is_none() && !s.folds().iter().any(|f| f.coord == k))
                .collect(),
        }
    }

    fn escaped(&self, x0: &[f64], x: &[f64]) -> bool {
        !self.s.in_domain(x)
            || x.iter().zip(x0).zip(&self.boxed).any(|((a, b), boxed)| *boxed && (a - b).abs() > self.half_width)
    }

    /// One path through increasing `times`; the state at each time is stored.
    fn run(&self, x0: &[f64], times: &[f64], dt: f64, path: u64, stride: Option<usize>) -> PathOutcome {
        let n = x0.len();
        let d = self.fields.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        let mut x = x0.to_vec();
        let mut snapshots = Vec::with_capacity(n * times.len());
        let mut records = Vec::new();
        let mut t = 0.0;
        let mut dw = vec![0.0; d];
        let mut inc = vec![0.0; n];
        let mut pred = vec![0.0; n];
        let mut step_index = 0usize;
        let record = |t: f64, x: &[f64], records: &mut Vec<f64>| {
            records.push(path as f64);
            records.push(t);
            records.extend_from_slice(x);
        };
        if stride.is_some() {
            record(0.0, &x, &mut records);
        }
        for &target in times {
            let steps = ((target - t) / dt - 1e-9).ceil().max(0.0) as usize;
            let h = if steps > 0 { (target - t) / steps as f64 } else { 0.0 };
            let sq = (2.0 * h).sqrt();
            for j in 0..steps {
                for w in dw.iter_mut() {
                    *w = sq * rng.sample::<f64, _>(StandardNormal);
                }
                inc.iter_mut().for_each(|v| *v = 0.0);
                self.drift.add_scaled(&x, h, &mut inc);
                for (f, w) in self.fields.iter().zip(&dw) {
                    f.add_scaled(&x, *w, &mut inc);
                }
                if self.scheme == Scheme::HeunStratonovich {
                    for k in 0..n {
                        pred[k] = x[k] + inc[k];
                    }
                    inc.iter_mut().for_each(|v| *v *= 0.5);
                    self.drift.add_scaled(&pred, 0.5 * h, &mut inc);
                    for (f, w) in self.fields.iter().zip(&dw) {
                        f.add_scaled(&pred, 0.5 * w, &mut inc);
                    }
                }
                for k in 0..n {
                    x[k] += inc[k];
                }
                self.s.canonicalize(&mut x);
                step_index += 1;
                if self.escaped(x0, &x) || x.iter().any(|v| !v.is_finite()) {
                    return PathOutcome { snapshots, censored: true, records };
                }
                if let Some(k) = stride {
                    if step_index.is_multiple_of(k) {
                        record(t + h * (j + 1) as f64, &x, &mut records);
                    }
                }
            }
            t = target;
            snapshots.extend_from_slice(&x);
        }
        PathOutcome { snapshots, censored: false, records }
    }
}

/// Endpoints of an ensemble at one time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionEnsemble {
    pub dim: usize,
    pub t: f64,
    pub start: ChartPoint,
    /// Row-major `n_paths × dim`; rows of censored paths are unspecified.
    pub points: Vec<f64>,
    pub censored: Vec<bool>,
    /// Rows `(path, t, coords…)` at the recording stride.
    pub records: Vec<f64>,
}

impl DiffusionEnsemble {
    pub fn n_paths(&self) -> usize {
        self.censored.len()
    }

    pub fn n_censored(&self) -> usize {
        self.censored.iter().filter(|c| **c).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.n_censored() as f64 / self.n_paths() as f64
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean and standard error of `f(Y_t)`; censored paths contribute zero.
    pub fn mean_of<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> (f64, f64) {
        let vals: Vec<f64> =
            (0..self.n_paths()).into_par_iter().map(|i| if self.censored[i] { 0.0 } else { f(self.point(i)) }).collect();
        mean_stderr(&vals)
    }

    /// Product-Gaussian kernel density of the law at `y`, relative to `μ`.
    pub fn kernel_at(&self, s: &SubRiemannianStructure, y: &[f64], bandwidth: f64) -> Result<KernelEstimate> {
        if !(bandwidth > 0.0) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let rho = s.measure_density.eval_f64(y);
        if !(rho > 0.0) {
            return Err(Error::Domain(format!("measure density vanishes at {y:?}")));
        }
        let h = self.scott_bandwidth(s, bandwidth)?;
        let b = KDE_BATCHES.min(self.n_paths());
        let n = self.n_paths();
        let per_path: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if self.censored[i] {
                    return (0.0, 0.0);
                }
                let diff = s.chart_difference(y, self.point(i));
                (gauss_product(&diff, &h, 1.0), gauss_product(&diff, &h, 2.0))
            })
            .collect();
        let norm = |v: f64| v / (n as f64 * rho);
        let total: f64 = per_path.iter().map(|p| p.0).sum();
        let total2: f64 = per_path.iter().map(|p| p.1).sum();
        let sumsq: f64 = per_path.iter().map(|p| p.0 * p.0).sum();
        let batch = n / b;
        let batch_means: Vec<f64> = (0..b)
            .map(|k| {
                let end = if k + 1 == b { n } else { (k + 1) * batch };
                let len = end - k * batch;
                per_path[k * batch..end].iter().map(|p| (4.0 * p.0 - p.1) / 3.0).sum::<f64>() / (len as f64 * rho)
            })
            .collect();
        let (_, stderr) = mean_stderr(&batch_means);
        let narrow = norm(total);
        let wide = norm(total2);
        // second-order smoothing bias cancels in (4 p_h − p_2h) / 3
        let value = ((4.0 * narrow - wide) / 3.0).max(0.0);
        Ok(KernelEstimate {
            value,
            stderr,
            n_eff: if sumsq > 0.0 { total * total / sumsq } else { 0.0 },
            bias: (narrow - wide).abs() / 3.0,
            bandwidth: h,
        })
    }

    fn scott_bandwidth(&self, s: &SubRiemannianStructure, factor: f64) -> Result<Vec<f64>> {
        let live: Vec<usize> = (0..self.n_paths()).filter(|&i| !self.censored[i]).collect();
        if live.len() < 2 {
            return Err(Error::InsufficientSampling("fewer than two uncensored paths".into()));
        }
        let scale = (live.len() as f64).powf(-1.0 / (self.dim as f64 + 4.0));
        (0..self.dim)
            .map(|k| {
                let var = live
                    .iter()
                    .map(|&i| {
                        let dlt = s.chart_difference(&self.start.0, self.point(i))[k];
                        dlt * dlt
                    })
                    .sum::<f64>()
                    / live.len() as f64;
                let mean = live.iter().map(|&i| s.chart_difference(&self.start.0, self.point(i))[k]).sum::<f64>()
                    / live.len() as f64;
                let sd = (var - mean * mean).max(0.0).sqrt();
                if sd > 0.0 {
                    Ok(factor * sd * scale)
                } else {
                    Err(Error::InsufficientSampling(format!("coordinate {k} has zero spread")))
                }
            })
            .collect()
    }

    /// Columnar binary export: magic `SRHE`, `u16` version, `u16` column count,
    /// `u64` row count, then each column as little-endian `f64`.
    pub fn write_srhe<W: Write>(&self, mut w: W) -> Result<()> {
        let ncols = self.dim + 2;
        let rows: Vec<f64> = if self.records.is_empty() {
            (0..self.n_paths())
                .filter(|&i| !self.censored[i])
                .flat_map(|i| [i as f64, self.t].into_iter().chain(self.point(i).iter().cloned()).collect::<Vec<_>>())
                .collect()
        } else {
            self.records.clone()
        };
        let nrows = rows.len() / ncols;
        w.write_all(SRHE_MAGIC)?;
        w.write_all(&SRHE_VERSION.to_le_bytes())?;
        w.write_all(&(ncols as u16).to_le_bytes())?;
        w.write_all(&(nrows as u64).to_le_bytes())?;
        for c in 0..ncols {
            for r in 0..nrows {
                w.write_all(&rows[r * ncols + c].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

pub const SRHE_MAGIC: &[u8; 4] = b"SRHE";
pub const SRHE_VERSION: u16 = 1;

/// Columns of an `SRHE` file.
pub fn read_srhe<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != SRHE_MAGIC {
        return Err(Error::Format("missing SRHE magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != SRHE_VERSION {
        return Err(Error::Format(format!("unsupported SRHE version {version}")));
    }
    let ncols = u16::from_le_bytes([head[6], head[7]]) as usize;
    let nrows = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let mut cols = vec![Vec::with_capacity(nrows); ncols];
    let mut buf = [0u8; 8];
    for col in cols.iter_mut() {
        for _ in 0..nrows {
            r.read_exact(&mut buf)?;
            col.push(f64::from_le_bytes(buf));
        }
    }
    Ok(cols)
}

const KDE_BATCHES: usize = 32;

#[inline]
fn gauss_product(diff: &[f64], h: &[f64], widen: f64) -> f64 {
    let mut q = 0.0;
    let mut norm = 1.0;
    for (dv, hv) in diff.iter().zip(h) {
        let hh = hv * widen;
        let u = dv / hh;
        q += u * u;
        if q > 80.0 {
            return 0.0;
        }
        norm *= hh;
    }
    (-0.5 * q).exp() / (norm * (2.0 * std::f64::consts::PI).powf(0.5 * diff.len() as f64))
}

fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    /// Estimated `p(x, y, t)` with respect to `μ`.
    pub value: f64,
    pub stderr: f64,
    pub n_eff: f64,
    /// Size of the bandwidth-doubling correction already applied to `value`.
    pub bias: f64,
    pub bandwidth: Vec<f64>,
}

impl KernelEstimate {
    /// Statistical allowance plus a quarter of the applied correction as the
    /// residual smoothing-bias budget.
    pub fn tolerance(&self) -> f64 {
        3.0 * self.stderr + 0.25 * self.bias
    }
}

/// States at each of the increasing `times`, one ensemble per time.
pub fn simulate_snapshots(
    s: &SubRiemannianStructure,
    x0: &ChartPoint,
    times: &[f64],
    cfg: &DiffusionConfig,
) -> Result<Vec<DiffusionEnsemble>> {
    cfg.validate()?;
    s.check_point(x0)?;
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("snapshot times must be non-empty and increasing".into()));
    }
    for &t in times {
        cfg.check_time(t)?;
    }
    let sim = Simulator::new(s, cfg);
    let outcomes: Vec<PathOutcome> =
        (0..cfg.n_paths).into_par_iter().map(|p| sim.run(&x0.0, times, cfg.dt, p as u64, cfg.record_stride)).collect();
    let n = s.chart_dim();
    let mut out: Vec<DiffusionEnsemble> = times
        .iter()
        .map(|&t| DiffusionEnsemble {
            dim: n,
            t,
            start: x0.clone(),
            points: vec![f64::NAN; cfg.n_paths * n],
            censored: vec![false; cfg.n_paths],
            records: Vec::new(),
        })
        .collect();
    for (p, o) in outcomes.iter().enumerate() {
        for (k, e) in out.iter_mut().enumerate() {
            if !o.censored || (k + 1) * n <= o.snapshots.len() {
                e.points[p * n..(p + 1) * n].copy_from_slice(&o.snapshots[k * n..(k + 1) * n]);
            } else {
                e.censored[p] = true;
            }
        }
    }
    if cfg.record_stride.is_some() {
        let last = out.len() - 1;
        for o in &outcomes {
            out[last].records.extend_from_slice(&o.records);
        }
    }
    Ok(out)
}

/// Ensemble at `cfg.t_max`.
pub fn simulate_paths(s: &SubRiemannianStructure, x0: &ChartPoint, cfg: &DiffusionConfig) -> Result<DiffusionEnsemble> {
    Ok(simulate_snapshots(s, x0, &[cfg.t_max], cfg)?.pop().expect("one snapshot"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtfEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub censored_fraction: f64,
}

/// Monte Carlo `P_t f(x)`.
pub fn estimate_ptf<F: Fn(&[f64]) -> f64 + Sync>(
    s: &SubRiemannianStructure,
    x: &ChartPoint,
    f: F,
    t: f64,
    cfg: &DiffusionConfig,
) -> Result<PtfEstimate> {
    let ens = simulate_snapshots(s, x, &[t], cfg)?.pop().expect("one snapshot");
    let (mean, stderr) = ens.mean_of(f);
    Ok(PtfEstimate { mean, stderr, censored_fraction: ens.censored_fraction() })
}

/// Kernel-density estimate of `p(x, y, t)`.
pub fn estimate_kernel(
    s: &SubRiemannianStructure,
    x: &ChartPoint,
    y: &ChartPoint,
    t: f64,
    cfg: &DiffusionConfig,
) -> Result<KernelEstimate> {
    s.check_point(y)?;
    let ens = simulate_snapshots(s, x, &[t], cfg)?.pop().expect("one snapshot");
    ens.kernel_at(s, &y.0, cfg.bandwidth)
}

/// Flow of a vector field for time `tau` (RK4).
fn flow(s: &SubRiemannianStructure, field: &CompiledField, x: &[f64], tau: f64) -> Vec<f64> {
    const SUB: usize = 16;
    let h = tau / SUB as f64;
    let n = x.len();
    let mut y = x.to_vec();
    let eval = |p: &[f64]| {
        let mut out = vec![0.0; n];
        field.add_scaled(p, 1.0, &mut out);
        out
    };
    for _ in 0..SUB {
        let k1 = eval(&y);
        let p2: Vec<f64> = (0..n).map(|k| y[k] + 0.5 * h * k1[k]).collect();
        let k2 = eval(&p2);
        let p3: Vec<f64> = (0..n).map(|k| y[k] + 0.5 * h * k2[k]).collect();
        let k3 = eval(&p3);
        let p4: Vec<f64> = (0..n).map(|k| y[k] + h * k3[k]).collect();
        let k4 = eval(&p4);
        for k in 0..n {
            y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
    }
    s.canonicalize(&mut y);
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiYauOptions {
    /// Flow-time step of the difference stencil.
    pub stencil: f64,
    /// Batches for the jackknife error of the slack.
    pub batches: usize,
}

impl Default for LiYauOptions {
    fn default() -> LiYauOptions {
        LiYauOptions { stencil: 0.05, batches: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiYauPoint {
    pub point: ChartPoint,
    pub u: f64,
    pub gamma_log: f64,
    pub gamma_z_log: f64,
    pub lu_over_u: f64,
    /// `a(t) Lu/u + c(t) − Γ(ln u) − b(t) Γ^Z(ln u)`.
    pub slack: f64,
    pub stderr: f64,
    pub bias: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiYauReport {
    pub structure: String,
    pub t: f64,
    pub coefficients: LiYauCoefficients,
    pub n_paths: usize,
    pub points: Vec<LiYauPoint>,
    pub pass: bool,
}

/// Stencil nodes around `x`: the base point, then for every frame field the
/// flow images at `−2h, −h, h, 2h`.
fn stencil_nodes(s: &SubRiemannianStructure, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut nodes = vec![x.to_vec()];
    for f in s.horizontal().iter().chain(s.vertical()) {
        let cf = CompiledField::new(&f.components);
        for m in [-2.0, -1.0, 1.0, 2.0] {
            nodes.push(flow(s, &cf, x, m * h));
        }
    }
    nodes
}

struct StencilTerms {
    u: f64,
    gamma_log: f64,
    gamma_z_log: f64,
    lu_over_u: f64,
}

/// Differences along the frame flows with step `m·h`, `m ∈ {1, 2}`.
fn stencil_terms(means: &[f64], drift_coef: &[f64], d: usize, v: usize, h: f64, m: usize) -> StencilTerms {
    let u = means[0];
    let at = |field: usize, off: i32| -> f64 {
        let slot = match off {
            -2 => 0,
            -1 => 1,
            1 => 2,
            _ => 3,
        };
        means[1 + 4 * field + slot]
    };
    let (lo, hi) = if m == 1 { (-1, 1) } else { (-2, 2) };
    let step = h * m as f64;
    let mut gamma = 0.0;
    let mut lu = 0.0;
    for i in 0..d {
        let first = (at(i, hi) - at(i, lo)) / (2.0 * step);
        let second = (at(i, hi) - 2.0 * u + at(i, lo)) / (step * step);
        gamma += first * first;
        lu += second + drift_coef[i] * first;
    }
    let mut gz = 0.0;
    for p in 0..v {
        let first = (at(d + p, hi) - at(d + p, lo)) / (2.0 * step);
        gz += 2.0 * first * first;
    }
    StencilTerms { u, gamma_log: gamma / (u * u), gamma_z_log: gz / (u * u), lu_over_u: lu / u }
}

fn liyau_slack(t: &StencilTerms, c: &LiYauCoefficients, time: f64) -> f64 {
    c.a(time) * t.lu_over_u + c.c(time) - t.gamma_log - c.b(time) * t.gamma_z_log
}

/// Li-Yau gradient estimate for `u = P_t f` at each point, with frame
/// derivatives from common-random-number differences of `P_t f`. On group
/// models the stencil reuses a single ensemble from the identity by left
/// translation.
#[allow(clippy::too_many_arguments)]
pub fn liyau_check<F: Fn(&[f64]) -> f64 + Sync>(
    s: &SubRiemannianStructure,
    group: Option<&GroupLaw>,
    f: F,
    t: f64,
    pts: &[ChartPoint],
    coefficients: &LiYauCoefficients,
    cfg: &DiffusionConfig,
    opts: &LiYauOptions,
) -> Result<LiYauReport> {
    cfg.validate()?;
    cfg.check_time(t)?;
    if opts.batches < 2 || cfg.n_paths < opts.batches {
        return Err(Error::Domain("need at least two batches and one path per batch".into()));
    }
    let (d, v) = (s.d(), s.v());
    let identity_ensemble = match group {
        Some(_) => Some(simulate_snapshots(s, &ChartPoint(vec![0.0; s.chart_dim()]), &[t], cfg)?.pop().expect("one")),
        None => None,
    };
    let mut points = Vec::with_capacity(pts.len());
    for x in pts {
        s.check_point(x)?;
        let nodes = stencil_nodes(s, &x.0, opts.stencil);
        let k = nodes.len();
        // per-path values at every node
        let values: Vec<Vec<f64>> = match (group, &identity_ensemble) {
            (Some(g), Some(ens)) => (0..cfg.n_paths)
                .into_par_iter()
                .map(|i| {
                    if ens.censored[i] {
                        return vec![0.0; k];
                    }
                    nodes.iter().map(|nd| f(&g.mul(nd, ens.point(i)))).collect()
                })
                .collect(),
            _ => {
                let per_node: Vec<DiffusionEnsemble> = nodes
                    .iter()
                    .map(|nd| simulate_snapshots(s, &ChartPoint(nd.clone()), &[t], cfg).map(|mut e| e.pop().expect("one")))
                    .collect::<Result<_>>()?;
                (0..cfg.n_paths)
                    .map(|i| per_node.iter().map(|e| if e.censored[i] { 0.0 } else { f(e.point(i)) }).collect())
                    .collect()
            }
        };
        let b = opts.batches;
        let mut batch_sums = vec![vec![0.0; k]; b];
        let mut batch_counts = vec![0usize; b];
        for (i, row) in values.iter().enumerate() {
            let bi = i * b / cfg.n_paths;
            batch_counts[bi] += 1;
            for (acc, v) in batch_sums[bi].iter_mut().zip(row) {
                *acc += v;
            }
        }
        let total: Vec<f64> =
            (0..k).map(|j| batch_sums.iter().map(|r| r[j]).sum::<f64>() / cfg.n_paths as f64).collect();
        if let Some(j) = total.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::InsufficientSampling(format!("P_t f estimate {} ≤ 0 at stencil node {j}", total[j])));
        }
        let loc = s.local_values(&x.0);
        let drift_coef: Vec<f64> = (0..d).map(|i| -(0..d).map(|kk| loc.om(i, kk, kk)).sum::<f64>()).collect();
        let fine = stencil_terms(&total, &drift_coef, d, v, opts.stencil, 1);
        let coarse = stencil_terms(&total, &drift_coef, d, v, opts.stencil, 2);
        let slack = liyau_slack(&fine, coefficients, t);
        let slack_coarse = liyau_slack(&coarse, coefficients, t);
        // jackknife over batches
        let jack: Vec<f64> = (0..b)
            .map(|drop| {
                let n_keep = (cfg.n_paths - batch_counts[drop]) as f64;
                let m: Vec<f64> = (0..k)
                    .map(|j| (total[j] * cfg.n_paths as f64 - batch_sums[drop][j]) / n_keep)
                    .collect();
                liyau_slack(&stencil_terms(&m, &drift_coef, d, v, opts.stencil, 1), coefficients, t)
            })
            .collect();
        let jm = jack.iter().sum::<f64>() / b as f64;
        let stderr = ((b as f64 - 1.0) / b as f64 * jack.iter().map(|j| (j - jm) * (j - jm)).sum::<f64>()).sqrt();
        let bias = (slack - slack_coarse).abs() / 3.0;
        let holds = slack >= -(3.0 * stderr + bias);
        points.push(LiYauPoint {
            point: x.clone(),
            u: fine.u,
            gamma_log: fine.gamma_log,
            gamma_z_log: fine.gamma_z_log,
            lu_over_u: fine.lu_over_u,
            slack,
            stderr,
            bias,
            holds,
        });
    }
    let pass = points.iter().all(|p| p.holds);
    Ok(LiYauReport { structure: s.name.clone(), t, coefficients: *coefficients, n_paths: cfg.n_paths, points, pass })
}

/// Li-Yau check with the coefficients derived from certified constants.
#[allow(clippy::too_many_arguments)]
pub fn liyau_check_certified<F: Fn(&[f64]) -> f64 + Sync>(
    s: &SubRiemannianStructure,
    group: Option<&GroupLaw>,
    f: F,
    t: f64,
    pts: &[ChartPoint],
    cdp: &CDParameters,
    cfg: &DiffusionConfig,
    opts: &LiYauOptions,
) -> Result<LiYauReport> {
    let dc = derive_constants(cdp)?;
    liyau_check(s, group, f, t, pts, &dc.liyau, cfg, opts)
}

/// Lower and upper bound on a distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBracket {
    pub lower: f64,
    pub upper: f64,
}

impl DistanceBracket {
    pub fn exact(d: f64) -> DistanceBracket {
        DistanceBracket { lower: d, upper: d }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub s_time: f64,
    pub t_time: f64,
    pub distance: DistanceBracket,
    pub factor: f64,
    /// `p(x, y, s)`.
    pub earlier: Option<KernelEstimate>,
    /// `p(x, z, t)`.
    pub later: Option<KernelEstimate>,
    /// `factor · (later + tol) − (earlier − tol)`.
    pub margin: f64,
    pub pass: bool,
}

/// `p(x, y, s) ≤ p(x, z, t) · (t/s)^{D/2} exp((D/d) d(y, z)² / (4(t − s)))`,
/// with the distance taken at the upper end of its bracket.
#[allow(clippy::too_many_arguments)]
pub fn harnack_check(
    s: &SubRiemannianStructure,
    x: &ChartPoint,
    y: &ChartPoint,
    z: &ChartPoint,
    s_time: f64,
    t_time: f64,
    cdp: &CDParameters,
    distance: DistanceBracket,
    cfg: &DiffusionConfig,
) -> Result<HarnackReport> {
    if !(s_time > 0.0) {
        return Err(Error::Domain(format!("s must be positive, got {s_time}")));
    }
    let dc = derive_constants(cdp)?;
    let factor = harnack_factor(dc.dim, cdp.d, s_time, t_time, distance.upper);
    if !factor.is_finite() {
        return Ok(HarnackReport {
            s_time,
            t_time,
            distance,
            factor,
            earlier: None,
            later: None,
            margin: f64::INFINITY,
            pass: true,
        });
    }
    let snaps = simulate_snapshots(s, x, &[s_time, t_time], cfg)?;
    let earlier = snaps[0].kernel_at(s, &y.0, cfg.bandwidth)?;
    let later = snaps[1].kernel_at(s, &z.0, cfg.bandwidth)?;
    let margin = factor * (later.value + later.tolerance()) - (earlier.value - earlier.tolerance());
    Ok(HarnackReport { s_time, t_time, distance, factor, earlier: Some(earlier), later: Some(later), margin, pass: margin >= 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDecayReport {
    pub t: f64,
    pub epsilon: f64,
    /// `(d², ln p)` pairs used in the fit.
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Log-linear fit of `ln p(x, y, t)` against `d(x, y)²`; the decay rate must
/// be at least `(1 − 0.15)/(4 + ε)`.
pub fn gaussian_decay_check(
    s: &SubRiemannianStructure,
    x: &ChartPoint,
    targets: &[(ChartPoint, f64)],
    t: f64,
    epsilon: f64,
    cfg: &DiffusionConfig,
) -> Result<GaussianDecayReport> {
    let ens = simulate_snapshots(s, x, &[t], cfg)?.pop().expect("one snapshot");
    let mut samples = Vec::new();
    for (y, dist) in targets {
        let k = ens.kernel_at(s, &y.0, cfg.bandwidth)?;
        if k.value > 0.0 {
            samples.push((dist * dist, k.value.ln()));
        }
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientSampling("fewer than two positive kernel estimates".into()));
    }
    let (slope, _) = least_squares(&samples);
    let threshold = -(1.0 - 0.15) / (4.0 + epsilon);
    Ok(GaussianDecayReport { t, epsilon, samples, slope, threshold, pass: slope <= threshold })
}

/// Slope and intercept of the least-squares line through `(x, y)` pairs.
pub fn least_squares(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub radius: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Volume counting indeterminate samples as outside / inside.
    pub lower: f64,
    pub upper: f64,
    pub indeterminate: usize,
    pub samples: usize,
}

/// Monte Carlo `μ(B(x, r))` over a bounding box that contains the ball.
/// Samples whose distance bracket straddles `r` are counted half and bound
/// the estimate both ways.
pub fn ball_volume<D>(
    s: &SubRiemannianStructure,
    r: f64,
    n_samples: usize,
    seed: u64,
    bbox: &[(f64, f64)],
    oracle: D,
) -> Result<VolumeEstimate>
where
    D: Fn(&[f64]) -> DistanceBracket + Sync,
{
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    if bbox.len() != s.chart_dim() || n_samples < 2 {
        return Err(Error::Dimension("bounding box must match the chart and n_samples ≥ 2".into()));
    }
    let box_vol: f64 = bbox.iter().map(|(lo, hi)| hi - lo).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r.to_bits());
    let pts: Vec<Vec<f64>> =
        (0..n_samples).map(|_| bbox.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()).collect();
    // (inside weight, indeterminate weight)
    let vals: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|y| {
            let rho = s.measure_density.eval_f64(y) * box_vol;
            let b = oracle(y);
            if b.upper <= r {
                (rho, 0.0)
            } else if b.lower > r {
                (0.0, 0.0)
            } else {
                (0.5 * rho, 0.5 * rho)
            }
        })
        .collect();
    let inside: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let (estimate, stderr) = mean_stderr(&inside);
    let slack = vals.iter().map(|v| v.1).sum::<f64>() / n_samples as f64;
    Ok(VolumeEstimate {
        radius: r,
        estimate,
        stderr,
        lower: estimate - slack,
        upper: estimate + slack,
        indeterminate: vals.iter().filter(|v| v.1 > 0.0).count(),
        samples: n_samples,
    })
}

/// Log-log least-squares exponent of `μ(B(r))` against `r`.
pub fn volume_growth_fit(estimates: &[VolumeEstimate]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> =
        estimates.iter().filter(|e| e.estimate > 0.0).map(|e| (e.radius.ln(), e.estimate.ln())).collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientSampling("need two radii with positive volume".into()));
    }
    Ok(least_squares(&pairs).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub t: f64,
    pub s: f64,
    pub direct: KernelEstimate,
    pub convolution: f64,
    pub convolution_stderr: f64,
    pub pass: bool,
}

/// `p(0, 0, t + s)` against `∫ p(0, z, t) p(z, 0, s) dμ(z)` on a group model,
/// where `p(z, 0, s) = p(0, z⁻¹, s)`.
pub fn semigroup_check(
    s: &SubRiemannianStructure,
    group: &GroupLaw,
    t: f64,
    s_time: f64,
    queries: usize,
    cfg: &DiffusionConfig,
) -> Result<SemigroupReport> {
    let o = ChartPoint(vec![0.0; s.chart_dim()]);
    let mut long = cfg.clone();
    long.t_max = cfg.t_max.max(t + s_time);
    let direct = simulate_snapshots(s, &o, &[t + s_time], &long)?.pop().expect("one").kernel_at(s, &o.0, cfg.bandwidth)?;
    let first = simulate_snapshots(s, &o, &[t], &long)?.pop().expect("one");
    let mut second_cfg = long.clone();
    second_cfg.seed = cfg.seed.wrapping_add(1);
    let second = simulate_snapshots(s, &o, &[s_time], &second_cfg)?.pop().expect("one");
    let live: Vec<usize> = (0..first.n_paths()).filter(|&i| !first.censored[i]).take(queries).collect();
    if live.len() < 2 {
        return Err(Error::InsufficientSampling("too few uncensored query paths".into()));
    }
    let mut vals = Vec::with_capacity(live.len());
    let mut kde_var = 0.0;
    for &i in &live {
        let k = second.kernel_at(s, &group.inverse(first.point(i)), cfg.bandwidth)?;
        kde_var += k.stderr * k.stderr;
        vals.push(k.value);
    }
    let (convolution, sampling) = mean_stderr(&vals);
    let convolution_stderr = (sampling * sampling + kde_var / (live.len() as f64).powi(2) * live.len() as f64).sqrt();
    let tol = 3.0 * (direct.stderr.powi(2) + convolution_stderr.powi(2)).sqrt() + direct.bias + 0.05 * direct.value;
    let pass = (direct.value - convolution).abs() <= tol;
    Ok(SemigroupReport { t, s: s_time, direct, convolution, convolution_stderr, pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalBoundPoint {
    pub x: ChartPoint,
    pub y: ChartPoint,
    pub t: f64,
    pub estimate: KernelEstimate,
    pub bound: f64,
    pub holds: bool,
}

/// `p(x, y, t) ≤ (1 − e^{−αt})^{−D/2}` for a probability measure, checked as
/// `p̂ ≤ bound · (1 + 3 stderr / p̂)`.
pub fn global_bound_check(
    s: &SubRiemannianStructure,
    pairs: &[(ChartPoint, ChartPoint)],
    times: &[f64],
    dc: &DerivedConstants,
    cfg: &DiffusionConfig,
) -> Result<Vec<GlobalBoundPoint>> {
    let mut out = Vec::new();
    for (x, y) in pairs {
        let snaps = simulate_snapshots(s, x, times, cfg)?;
        for (ens, &t) in snaps.iter().zip(times) {
            let bound = dc
                .kernel_global_bound(t)
                .finite()
                .ok_or_else(|| Error::Domain("global kernel bound needs ρ₁ > 0".into()))?;
            let estimate = ens.kernel_at(s, &y.0, cfg.bandwidth)?;
            let rel = if estimate.value > 0.0 { 3.0 * estimate.stderr / estimate.value } else { 0.0 };
            let holds = estimate.value <= bound * (1.0 + rel);
            out.push(GlobalBoundPoint { x: x.clone(), y: y.clone(), t, estimate, bound, holds });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambda1Config {
    /// Cells per chart coordinate on the coarse grid; the fine grid doubles them.
    pub cells: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambda1Result {
    pub coarse: f64,
    pub fine: f64,
    /// Richardson extrapolation assuming second-order convergence.
    pub extrapolated: f64,
    pub residual: f64,
}

/// Symmetric CSR matrix.
struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { n, row_ptr, cols, vals }
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).find(|&k| self.cols[k] == r).map_or(0.0, |k| self.vals[k]))
            .collect()
    }
}

struct Grid {
    cells: Vec<usize>,
    lo: Vec<f64>,
    h: Vec<f64>,
    periodic: Vec<bool>,
}

impl Grid {
    fn len(&self) -> usize {
        self.cells.iter().product()
    }

    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cells).fold(0, |acc, (i, n)| acc * n + i)
    }

    fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.cells.len()];
        for k in (0..self.cells.len()).rev() {
            out[k] = flat % self.cells[k];
            flat /= self.cells[k];
        }
        out
    }

    fn centre(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().enumerate().map(|(k, &i)| self.lo[k] + (i as f64 + 0.5) * self.h[k]).collect()
    }

    /// Neighbour one cell up along `k`, wrapping periodic coordinates.
    fn up(&self, idx: &[usize], k: usize) -> Option<Vec<usize>> {
        let mut j = idx.to_vec();
        if j[k] + 1 < self.cells[k] {
            j[k] += 1;
            Some(j)
        } else if self.periodic[k] {
            j[k] = 0;
            Some(j)
        } else {
            None
        }
    }
}

/// Energy `∫ Σ (X_i f)² dμ` and mass `∫ f² dμ` on a cell-centred grid:
/// face differences for the diagonal of the coefficient matrix, corner
/// differences for its off-diagonal part.
fn assemble(s: &SubRiemannianStructure, grid: &Grid) -> (Csr, Vec<f64>) {
    let n = s.chart_dim();
    let vol: f64 = grid.h.iter().product();
    let coef = |x: &[f64]| -> Vec<Vec<f64>> {
        let rho = s.measure_density.eval_f64(x);
        let a: Vec<Vec<f64>> = s.horizontal().iter().map(|f| f.eval(x)).collect();
        (0..n).map(|k| (0..n).map(|l| rho * a.iter().map(|ai| ai[k] * ai[l]).sum::<f64>()).collect()).collect()
    };
    let mut trip = Vec::new();
    let mut mass = vec![0.0; grid.len()];
    for c in 0..grid.len() {
        let idx = grid.multi(c);
        let xc = grid.centre(&idx);
        mass[c] = s.measure_density.eval_f64(&xc) * vol;
        for k in 0..n {
            if let Some(up) = grid.up(&idx, k) {
                let mut xf = xc.clone();
                xf[k] += 0.5 * grid.h[k];
                let w = coef(&xf)[k][k] * vol / (grid.h[k] * grid.h[k]);
                let nb = grid.index(&up);
                trip.extend([(c, c, w), (nb, nb, w), (c, nb, -w), (nb, c, -w)]);
            }
            for l in k + 1..n {
                let (Some(ck), Some(cl)) = (grid.up(&idx, k), grid.up(&idx, l)) else { continue };
                let Some(ckl) = grid.up(&ck, l) else { continue };
                let mut xq = xc.clone();
                xq[k] += 0.5 * grid.h[k];
                xq[l] += 0.5 * grid.h[l];
                let m = coef(&xq)[k][l];
                if m == 0.0 {
                    continue;
                }
                let ids = [c, grid.index(&ck), grid.index(&cl), grid.index(&ckl)];
                // D_k and D_l at the corner as weights on the four cells
                let gk = [-0.5 / grid.h[k], 0.5 / grid.h[k], -0.5 / grid.h[k], 0.5 / grid.h[k]];
                let gl = [-0.5 / grid.h[l], -0.5 / grid.h[l], 0.5 / grid.h[l], 0.5 / grid.h[l]];
                for a in 0..4 {
                    for b in 0..4 {
                        trip.push((ids[a], ids[b], m * vol * (gk[a] * gl[b] + gl[a] * gk[b])));
                    }
                }
            }
        }
    }
    (Csr::from_triplets(grid.len(), trip), mass)
}

/// Smallest nonzero generalised eigenvalue of `A f = λ B f` by inverse
/// iteration, with Jacobi-preconditioned CG on the complement of constants.
fn smallest_nonzero(a: &Csr, mass: &[f64], tol: f64, max_iter: usize) -> Result<(f64, f64)> {
    let n = a.n;
    let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let total: f64 = mass.iter().sum();
    let null: Vec<f64> = sqrt_m.iter().map(|v| v / total.sqrt()).collect();
    let project = |x: &mut [f64]| {
        let c: f64 = x.iter().zip(&null).map(|(a, b)| a * b).sum();
        x.iter_mut().zip(&null).for_each(|(a, b)| *a -= c * b);
    };
    // operator B^{-1/2} A B^{-1/2}
    let apply = |x: &[f64], y: &mut [f64], tmp: &mut [f64]| {
        for i in 0..n {
            tmp[i] = x[i] / sqrt_m[i];
        }
        a.matvec(tmp, y);
        for i in 0..n {
            y[i] /= sqrt_m[i];
        }
    };
    let diag: Vec<f64> = a.diagonal().iter().zip(mass).map(|(d, m)| d / m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let k = SUBSPACE.min(n - 1);
    let mut block: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut tmp = vec![0.0; n];
    let mut lambda = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        for v in block.iter_mut() {
            project(v);
        }
        orthonormalise(&mut block);
        let solved: Vec<Vec<f64>> = block
            .iter()
            .map(|g| cg_solve(&apply, &diag, &project, g, 1e-10, 10 * n.max(100)))
            .collect::<Result<_>>()?;
        block = solved;
        for v in block.iter_mut() {
            project(v);
        }
        orthonormalise(&mut block);
        // Rayleigh-Ritz on the block
        let images: Vec<Vec<f64>> = block
            .iter()
            .map(|v| {
                let mut av = vec![0.0; n];
                apply(v, &mut av, &mut tmp);
                av
            })
            .collect();
        let h = nalgebra::DMatrix::from_fn(k, k, |i, j| {
            0.5 * (dot(&block[i], &images[j]) + dot(&block[j], &images[i]))
        });
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let rotate = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            order
                .iter()
                .map(|&c| {
                    let mut out = vec![0.0; n];
                    for (r, v) in vs.iter().enumerate() {
                        let w = eig.eigenvectors[(r, c)];
                        out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
                    }
                    out
                })
                .collect()
        };
        let new_block = rotate(&block);
        let new_images = rotate(&images);
        let new = eig.eigenvalues[order[0]];
        residual = new_images[0].iter().zip(&new_block[0]).map(|(a, b)| (a - new * b).powi(2)).sum::<f64>().sqrt();
        block = new_block;
        let done = (new - lambda).abs() <= tol * new.abs();
        lambda = new;
        if done {
            return Ok((lambda, residual));
        }
    }
    Err(Error::IterationLimit { residual })
}

/// Block size of the subspace iteration; covers the multiplicity of the
/// lowest nonzero level on the built-in compact models.
const SUBSPACE: usize = 8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt, applied twice.
fn orthonormalise(vs: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let c = dot(u, v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
            normalise(v);
        }
    }
}

fn normalise(x: &mut [f64]) {
    let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= nrm);
}

fn cg_solve<A, P>(apply: &A, diag: &[f64], project: &P, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    A: Fn(&[f64], &mut [f64], &mut [f64]),
    P: Fn(&mut [f64]),
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut ap = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut ap, &mut tmp);
        project(&mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= tol * bnorm {
            return Ok(x);
        }
        z = r.iter().zip(diag).map(|(a, d)| a / d).collect();
        project(&mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    Err(Error::IterationLimit { residual })
}

fn grid_for(s: &SubRiemannianStructure, cells: &[usize]) -> Result<Grid> {
    let n = s.chart_dim();
    if cells.len() != n || cells.iter().any(|&c| c < 2) {
        return Err(Error::Dimension(format!("need {n} cell counts ≥ 2")));
    }
    let mut lo = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut periodic = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = match (s.periods()[k], s.chart_domain()[k]) {
            (Some(p), _) => (-0.5 * p, 0.5 * p),
            (None, (a, b)) if a.is_finite() && b.is_finite() => (a, b),
            _ => return Err(Error::NotCompact(s.name.clone())),
        };
        lo.push(a);
        h.push((b - a) / cells[k] as f64);
        periodic.push(s.periods()[k].is_some());
    }
    Ok(Grid { cells: cells.to_vec(), lo, h, periodic })
}

/// First nonzero eigenvalue of `−L` on a compact chart.
pub fn lambda1_estimate(s: &SubRiemannianStructure, cfg: &Lambda1Config) -> Result<Lambda1Result> {
    let coarse_grid = grid_for(s, &cfg.cells)?;
    let fine_cells: Vec<usize> = cfg.cells.iter().map(|c| 2 * c).collect();
    let fine_grid = grid_for(s, &fine_cells)?;
    let (a, m) = assemble(s, &coarse_grid);
    let (coarse, _) = smallest_nonzero(&a, &m, cfg.tol, cfg.max_iter)?;
    let (a, m) = assemble(s, &fine_grid);
    let (fine, residual) = smallest_nonzero(&a, &m, cfg.tol, cfg.max_iter)?;
    Ok(Lambda1Result { coarse, fine, extrapolated: (4.0 * fine - coarse) / 3.0, residual })
}
