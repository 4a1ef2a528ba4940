//! Ricci tensor, the ℛ quadratic form, the 𝒯 form and the `J_mn` operators.
//!
//! ℛ is stored as a symmetric matrix `Q` of size `d + v` acting on
//! `(g, z)` with `g_k = X_k f` and `z_p = Z_p f` on ordered pairs, so that
//! `ℛ(f, f) = (g, z)ᵀ Q (g, z)`. The double sums over unordered labels are
//! folded into `Q`; with this scaling `Γ^Z(f, f) = 2 |z|²`.

use crate::connection::{ChristoffelData, TorsionValue};
use crate::error::Result;
use crate::structure::{ChartPoint, LocalData, SubRiemannianStructure};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RicciRoute {
    Definition,
    Formula,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RRoute {
    Structural,
    Tensorial,
}

/// All pointwise curvature data of a structure at one point.
pub struct PointGeometry {
    pub loc: LocalData,
    pub ch: ChristoffelData,
    pub tor: TorsionValue,
}

impl PointGeometry {
    pub fn new(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<PointGeometry> {
        s.check_point(x)?;
        let loc = s.local(&x.0);
        let ch = ChristoffelData::from_local(&loc, x.clone());
        let tor = TorsionValue::from_local(&loc, &ch);
        Ok(PointGeometry { loc, ch, tor })
    }

    /// Horizontal coefficients of `R(X_a, X_b) X_c`.
    fn riemann_vector(&self, a: usize, b: usize, c: usize) -> Vec<f64> {
        let (d, v) = (self.loc.d, self.loc.v);
        let (ch, loc) = (&self.ch, &self.loc);
        let mut out = vec![0.0; d];
        // ∇_a ∇_b X_c − ∇_b ∇_a X_c
        for (u, w, sign) in [(a, b, 1.0), (b, a, -1.0)] {
            for s in 0..d {
                out[s] += sign * ch.dgamma(u, w, c, s);
                let coef = ch.gamma(w, c, s);
                for t in 0..d {
                    out[t] += sign * coef * ch.gamma(u, s, t);
                }
            }
        }
        // − ∇_{[X_a, X_b]} X_c
        for s in 0..d {
            let w = loc.om(a, b, s);
            for t in 0..d {
                out[t] -= w * ch.gamma(s, c, t);
            }
        }
        for p in 0..v {
            let w = 2.0 * loc.g(a, b, p);
            for t in 0..d {
                out[t] += w * loc.de(c, p, t);
            }
        }
        out
    }

    pub fn ricci(&self, route: RicciRoute) -> DMatrix<f64> {
        let d = self.loc.d;
        match route {
            RicciRoute::Definition => DMatrix::from_fn(d, d, |k, l| {
                (0..d).map(|i| self.riemann_vector(i, k, l)[i]).sum()
            }),
            RicciRoute::Formula => {
                let (ch, loc) = (&self.ch, &self.loc);
                DMatrix::from_fn(d, d, |k, l| {
                    let mut acc = 0.0;
                    for j in 0..d {
                        for p in 0..loc.v {
                            acc += 2.0 * loc.g(k, j, p) * loc.de(j, p, l);
                        }
                        acc += ch.dgamma(j, k, l, j) - ch.dgamma(k, j, l, j);
                        for i in 0..d {
                            acc += ch.gamma(k, l, j) * ch.gamma(i, j, i)
                                - ch.gamma(i, l, j) * ch.gamma(k, j, i)
                                - loc.om(i, k, j) * ch.gamma(j, l, i);
                        }
                    }
                    acc
                })
            }
        }
    }

    pub fn r_form(&self, route: RRoute) -> DMatrix<f64> {
        let (d, v) = (self.loc.d, self.loc.v);
        let loc = &self.loc;
        let mut q = DMatrix::zeros(d + v, d + v);
        match route {
            RRoute::Structural => {
                let om = |i, j, l| loc.om(i, j, l);
                let a = DMatrix::from_fn(d, d, |k, l| {
                    let mut acc = 0.0;
                    for j in 0..d {
                        for p in 0..v {
                            acc += 2.0 * loc.g(k, j, p) * loc.de(j, p, l);
                        }
                        acc += loc.x_om(l, k, j, j) - loc.x_om(j, l, j, k);
                        for i in 0..d {
                            acc += om(j, i, i) * om(k, j, l);
                        }
                    }
                    for i in 0..d {
                        acc -= om(k, i, i) * om(l, i, i);
                    }
                    for i in 0..d {
                        for j in i + 1..d {
                            acc += 0.5
                                * (om(i, j, l) * om(i, j, k)
                                    - (om(l, j, i) + om(l, i, j)) * (om(k, j, i) + om(k, i, j)));
                        }
                    }
                    acc
                });
                for k in 0..d {
                    for l in 0..d {
                        q[(k, l)] = 0.5 * (a[(k, l)] + a[(l, k)]);
                    }
                }
                for k in 0..d {
                    for p in 0..v {
                        let mut b = 0.0;
                        for l in 0..d {
                            for j in 0..d {
                                b += om(j, l, l) * loc.g(k, j, p);
                            }
                            for j in l + 1..d {
                                b += om(l, j, k) * loc.g(l, j, p);
                            }
                        }
                        for j in 0..d {
                            b -= loc.x_g(j, k, j, p);
                        }
                        q[(k, d + p)] = b;
                        q[(d + p, k)] = b;
                    }
                }
                for p in 0..v {
                    for r in 0..v {
                        let mut acc = 0.0;
                        for l in 0..d {
                            for j in l + 1..d {
                                acc += loc.g(l, j, p) * loc.g(l, j, r);
                            }
                        }
                        q[(d + p, d + r)] = 2.0 * acc;
                    }
                }
            }
            RRoute::Tensorial => {
                let ric = self.ricci(RicciRoute::Definition);
                let tor = &self.tor;
                for k in 0..d {
                    for l in 0..d {
                        q[(k, l)] = 0.5 * (ric[(k, l)] + ric[(l, k)]);
                    }
                    for p in 0..v {
                        let b = -0.5 * (0..d).map(|l| tor.nabla_t(l, l, k, p)).sum::<f64>();
                        q[(k, d + p)] = b;
                        q[(d + p, k)] = b;
                    }
                }
                for p in 0..v {
                    for r in 0..v {
                        let mut acc = 0.0;
                        for l in 0..d {
                            for k in 0..d {
                                acc += tor.t(l, k, p) * tor.t(l, k, r);
                            }
                        }
                        q[(d + p, d + r)] = 0.25 * acc;
                    }
                }
            }
        }
        q
    }

    /// `(J_p)_{ik} = γ^{m_p n_p}_{ik}`.
    pub fn j_ops(&self) -> Vec<DMatrix<f64>> {
        let d = self.loc.d;
        (0..self.loc.v).map(|p| DMatrix::from_fn(d, d, |i, k| self.loc.g(i, k, p))).collect()
    }

    /// `𝒯` as a form on the horizontal gradient: `2 Σ_j Σ_p G^p_{aj} G^p_{bj}`.
    pub fn t_form(&self) -> DMatrix<f64> {
        let (d, v) = (self.loc.d, self.loc.v);
        DMatrix::from_fn(d, d, |a, b| {
            let mut acc = 0.0;
            for j in 0..d {
                for p in 0..v {
                    acc += self.loc.g(a, j, p) * self.loc.g(b, j, p);
                }
            }
            2.0 * acc
        })
    }
}

/// Pointwise curvature summary.
#[derive(Clone, Debug)]
pub struct CurvatureReport {
    pub ricci: DMatrix<f64>,
    pub r_structural: DMatrix<f64>,
    pub r_tensorial: DMatrix<f64>,
    pub t_form: DMatrix<f64>,
    pub j_ops: Vec<DMatrix<f64>>,
    pub point: ChartPoint,
}

impl CurvatureReport {
    pub fn tensoriality_gap(&self) -> f64 {
        (&self.r_structural - &self.r_tensorial).amax()
    }
}

pub fn ricci(s: &SubRiemannianStructure, x: &ChartPoint, route: RicciRoute) -> Result<DMatrix<f64>> {
    Ok(PointGeometry::new(s, x)?.ricci(route))
}

pub fn r_form(s: &SubRiemannianStructure, x: &ChartPoint, route: RRoute) -> Result<DMatrix<f64>> {
    Ok(PointGeometry::new(s, x)?.r_form(route))
}

pub fn t_form(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<DMatrix<f64>> {
    Ok(PointGeometry::new(s, x)?.t_form())
}

pub fn j_ops(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<Vec<DMatrix<f64>>> {
    Ok(PointGeometry::new(s, x)?.j_ops())
}

pub fn curvature_report(s: &SubRiemannianStructure, x: &ChartPoint) -> Result<CurvatureReport> {
    let pg = PointGeometry::new(s, x)?;
    Ok(CurvatureReport {
        ricci: pg.ricci(RicciRoute::Definition),
        r_structural: pg.r_form(RRoute::Structural),
        r_tensorial: pg.r_form(RRoute::Tensorial),
        t_form: pg.t_form(),
        j_ops: pg.j_ops(),
        point: x.clone(),
    })
}

/// `ℛ(f, f)` from the quadratic form and the gradient data `(g, z)`.
pub fn r_value(q: &DMatrix<f64>, g: &[f64], z: &[f64]) -> f64 {
    let w: Vec<f64> = g.iter().chain(z).cloned().collect();
    let mut acc = 0.0;
    for a in 0..w.len() {
        for b in 0..w.len() {
            acc += w[a] * q[(a, b)] * w[b];
        }
    }
    acc
}
