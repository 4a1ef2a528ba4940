//! The canonical connection: Christoffel symbols, `∇_Z`, torsion and `∇T`.

use crate::error::Result;
use crate::structure::{ChartPoint, LocalData, SubRiemannianStructure};
use nalgebra::{DMatrix, DVector};

/// `Γ^k_{ij}` (coefficient of `X_k` in `∇_{X_i} X_j`) and `X_ℓ Γ^k_{ij}`.
#[derive(Clone, Debug)]
pub struct ChristoffelData {
    pub d: usize,
    gamma_h: Vec<f64>,
    dgamma_h: Vec<f64>,
    pub point: ChartPoint,
}

impl ChristoffelData {
    #[inline]
    pub fn gamma(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma_h[(i * self.d + j) * self.d + k]
    }

    /// `X_l Γ^k_{ij}`.
    #[inline]
    pub fn dgamma(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        self.dgamma_h[((l * self.d + i) * self.d + j) * self.d + k]
    }

    /// Symbols only, without derivatives; `dgamma` must not be used.
    pub fn from_values(loc: &LocalData) -> ChristoffelData {
        let d = loc.d;
        let mut gamma_h = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    gamma_h[(i * d + j) * d + k] = 0.5 * (loc.om(i, j, k) + loc.om(k, i, j) - loc.om(j, k, i));
                }
            }
        }
        ChristoffelData { d, gamma_h, dgamma_h: Vec::new(), point: ChartPoint(Vec::new()) }
    }

    pub fn from_local(loc: &LocalData, point: ChartPoint) -> ChristoffelData {
        let d = loc.d;
        let mut gamma_h = vec![0.0; d * d * d];
        let mut dgamma_h = vec![0.0; d * d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    gamma_h[(i * d + j) * d + k] = 0.5 * (loc.om(i, j, k) + loc.om(k, i, j) - loc.om(j, k, i));
                    for l in 0..d {
                        dgamma_h[((l * d + i) * d + j) * d + k] =
                            0.5 * (loc.x_om(l, i, j, k) + loc.x_om(l, k, i, j) - loc.x_om(l, j, k, i));
                    }
                }
            }
        }
        ChristoffelData { d, gamma_h, dgamma_h, point }
    }
}

pub fn christoffel(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<ChristoffelData> {
    s.check_point(x)?;
    Ok(ChristoffelData::from_local(&s.local(&x.0), x.clone()))
}

/// Coefficients of `∇_{Z_p} X_i = Σ_ℓ c[p][i][ℓ] X_ℓ`, i.e. `c = −δ^ℓ_{ip}`.
pub fn nabla_vertical_on_horizontal(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<Vec<Vec<Vec<f64>>>> {
    s.check_point(x)?;
    let loc = s.local(&x.0);
    let (d, v) = (s.d(), s.v());
    Ok((0..v)
        .map(|p| (0..d).map(|i| (0..d).map(|l| -loc.de(i, p, l)).collect()).collect())
        .collect())
}

/// Torsion `T(X_ℓ, X_k)` and `(∇_{X_ℓ} T)(X_i, X_j)` on the flat vertical basis.
#[derive(Clone, Debug)]
pub struct TorsionValue {
    pub d: usize,
    pub v: usize,
    t: Vec<f64>,
    nabla_t: Vec<f64>,
}

impl TorsionValue {
    /// Component on `Z_p` of `T(X_l, X_k)`.
    #[inline]
    pub fn t(&self, l: usize, k: usize, p: usize) -> f64 {
        self.t[(l * self.d + k) * self.v + p]
    }

    /// Component on `Z_p` of `(∇_{X_l} T)(X_i, X_j)`.
    #[inline]
    pub fn nabla_t(&self, l: usize, i: usize, j: usize, p: usize) -> f64 {
        self.nabla_t[((l * self.d + i) * self.d + j) * self.v + p]
    }

    pub fn from_local(loc: &LocalData, ch: &ChristoffelData) -> TorsionValue {
        let (d, v) = (loc.d, loc.v);
        let mut t = vec![0.0; d * d * v];
        for l in 0..d {
            for k in 0..d {
                for p in 0..v {
                    t[(l * d + k) * v + p] = -2.0 * loc.g(l, k, p);
                }
            }
        }
        let tv = |a: usize, b: usize, p: usize| t[(a * d + b) * v + p];
        let mut nabla_t = vec![0.0; d * d * d * v];
        for l in 0..d {
            for i in 0..d {
                for j in 0..d {
                    for p in 0..v {
                        let mut acc = -2.0 * loc.x_g(l, i, j, p);
                        for s in 0..d {
                            acc -= ch.gamma(l, i, s) * tv(s, j, p);
                            acc -= ch.gamma(l, j, s) * tv(i, s, p);
                        }
                        nabla_t[((l * d + i) * d + j) * v + p] = acc;
                    }
                }
            }
        }
        TorsionValue { d, v, t, nabla_t }
    }
}

pub fn torsion(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<TorsionValue> {
    s.check_point(x)?;
    let loc = s.local(&x.0);
    let ch = ChristoffelData::from_local(&loc, x.clone());
    Ok(TorsionValue::from_local(&loc, &ch))
}

/// `max |2Γ^k_{ij} − (ω^k_{ij} − ω^i_{jk} + ω^j_{ki})|`.
pub fn koszul_residual(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<f64> {
    s.check_point(x)?;
    let loc = s.local(&x.0);
    let ch = ChristoffelData::from_local(&loc, x.clone());
    let d = s.d();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let r = 2.0 * ch.gamma(i, j, k) - (loc.om(i, j, k) - loc.om(j, k, i) + loc.om(k, i, j));
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// `max |Γ^k_{ij} + Γ^j_{ik}|`.
pub fn metric_compatibility_residual(ch: &ChristoffelData) -> f64 {
    let d = ch.d;
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                worst = worst.max((ch.gamma(i, j, k) + ch.gamma(i, k, j)).abs());
            }
        }
    }
    worst
}

/// Horizontal part of `∇_{X_i}X_j − ∇_{X_j}X_i − [X_i, X_j]`, with the bracket
/// taken from raw frame coefficients and decomposed in the frame.
pub fn torsion_verticality_residual(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<f64> {
    let ch = christoffel(s, x)?;
    let (d, n) = (s.d(), s.chart_dim());
    let fj = s.frame_jets(&x.0, 1);
    let frame = s.frame_matrix(&x.0);
    let lu = frame.lu();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let mut b = DVector::zeros(n);
            for (k, wk) in &fj.horizontal[j] {
                for (a, va) in &fj.horizontal[i] {
                    b[*k] += va.value() * wk.derivative(*a).value();
                }
            }
            for (k, vk) in &fj.horizontal[i] {
                for (a, wa) in &fj.horizontal[j] {
                    b[*k] -= wa.value() * vk.derivative(*a).value();
                }
            }
            let coeffs = lu.solve(&b).unwrap_or_else(|| DVector::from_element(n, f64::NAN));
            for k in 0..d {
                let r = ch.gamma(i, j, k) - ch.gamma(j, i, k) - coeffs[k];
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// Row-major copy of a matrix, for reports.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}
