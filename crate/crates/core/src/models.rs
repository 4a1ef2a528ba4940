//! Built-in model spaces.

use crate::cdconstants::CDParameters;
use crate::error::{Error, Result};
use crate::expr::{c, var};
use crate::structure::{vertical_count, vertical_flatten, ChartFold, ChartPoint, StructureFunctions, SubRiemannianStructure, VectorField};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ModelName {
    Euclidean { d: usize },
    Heisenberg { n: usize },
    FreeStep2D3,
    Sphere2,
    Su2,
}

impl ModelName {
    pub const ALL: [ModelName; 5] = [
        ModelName::Euclidean { d: 2 },
        ModelName::Heisenberg { n: 1 },
        ModelName::FreeStep2D3,
        ModelName::Sphere2,
        ModelName::Su2,
    ];
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelName::Euclidean { d } => write!(f, "euclidean({d})"),
            ModelName::Heisenberg { n } => write!(f, "heisenberg({n})"),
            ModelName::FreeStep2D3 => write!(f, "free_step2_d3"),
            ModelName::Sphere2 => write!(f, "sphere2"),
            ModelName::Su2 => write!(f, "su2"),
        }
    }
}

impl FromStr for ModelName {
    type Err = Error;

    /// Accepts `euclidean`, `euclidean(3)`, `heisenberg`, `heisenberg(2)`,
    /// `free_step2_d3`, `sphere2`, `su2`.
    fn from_str(s: &str) -> Result<ModelName> {
        let s = s.trim().to_ascii_lowercase();
        let (base, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(Error::UnknownModel(s.clone())),
            None => (s.as_str(), None),
        };
        let param = |default: usize| -> Result<usize> {
            match arg {
                None => Ok(default),
                Some(a) => match a.trim().parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v),
                    _ => Err(Error::UnknownModel(s.clone())),
                },
            }
        };
        match base {
            "euclidean" => Ok(ModelName::Euclidean { d: param(2)? }),
            "heisenberg" => Ok(ModelName::Heisenberg { n: param(1)? }),
            "free_step2_d3" if arg.is_none() => Ok(ModelName::FreeStep2D3),
            "sphere2" if arg.is_none() => Ok(ModelName::Sphere2),
            "su2" if arg.is_none() => Ok(ModelName::Su2),
            _ => Err(Error::UnknownModel(s.clone())),
        }
    }
}

/// Group multiplication in exponential coordinates, for the group models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLaw {
    Abelian,
    /// Coordinates `(x_1..x_d, z_12, z_13, …)` with `z_ij += ½(x_i x'_j − x_j x'_i)`.
    /// The Heisenberg group is the case with all pairs collapsed onto one centre.
    FreeStep2 { d: usize },
    Heisenberg { n: usize },
}

impl GroupLaw {
    /// `a · b`.
    pub fn mul(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + v).collect();
        match *self {
            GroupLaw::Abelian => {}
            GroupLaw::Heisenberg { n } => {
                let z = 2 * n;
                for i in 0..n {
                    out[z] += 0.5 * (a[i] * b[n + i] - a[n + i] * b[i]);
                }
            }
            GroupLaw::FreeStep2 { d } => {
                let mut p = d;
                for i in 0..d {
                    for j in i + 1..d {
                        out[p] += 0.5 * (a[i] * b[j] - a[j] * b[i]);
                        p += 1;
                    }
                }
            }
        }
        out
    }

    pub fn inverse(&self, a: &[f64]) -> Vec<f64> {
        a.iter().map(|v| -v).collect()
    }

    /// Number of leading (horizontal) coordinates.
    pub fn horizontal_dim(&self, chart_dim: usize) -> usize {
        match *self {
            GroupLaw::Abelian => chart_dim,
            GroupLaw::Heisenberg { n } => 2 * n,
            GroupLaw::FreeStep2 { d } => d,
        }
    }
}

/// Sampling and certification facts about a model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDescriptor {
    /// Built-in model, or `None` for a structure loaded from a file.
    pub model: Option<ModelName>,
    pub certified: Option<CDParameters>,
    /// Sampling box per chart coordinate.
    pub reference_box: Vec<(f64, f64)>,
    pub group: Option<GroupLaw>,
    pub compact: bool,
    pub notes: String,
}

impl ModelDescriptor {
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ChartPoint {
        ChartPoint(self.reference_box.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
    }

    pub fn sample_points<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<ChartPoint> {
        (0..n).map(|_| self.sample_point(rng)).collect()
    }

    /// Centre of the reference box.
    pub fn base_point(&self) -> ChartPoint {
        ChartPoint(self.reference_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect())
    }
}

pub fn build(name: ModelName) -> (SubRiemannianStructure, ModelDescriptor) {
    match name {
        ModelName::Euclidean { d } => euclidean(d),
        ModelName::Heisenberg { n } => heisenberg(n),
        ModelName::FreeStep2D3 => free_step2(3),
        ModelName::Sphere2 => sphere2(),
        ModelName::Su2 => su2(),
    }
}

pub fn build_named(name: &str) -> Result<(SubRiemannianStructure, ModelDescriptor)> {
    Ok(build(name.parse()?))
}

fn euclidean(d: usize) -> (SubRiemannianStructure, ModelDescriptor) {
    let frame = (0..d).map(|k| VectorField::coordinate(d, k)).collect();
    let s = SubRiemannianStructure::new(
        format!("euclidean({d})"),
        d,
        0,
        frame,
        vec![],
        StructureFunctions::zero(d, 0),
        c(1.0),
    )
    .expect("euclidean frame is well formed");
    let desc = ModelDescriptor {
        model: Some(ModelName::Euclidean { d }),
        certified: Some(CDParameters::riemannian(0.0, d)),
        reference_box: vec![(-2.0, 2.0); d],
        group: Some(GroupLaw::Abelian),
        compact: false,
        notes: "flat frame, all structure functions vanish".into(),
    };
    (s, desc)
}

fn heisenberg(n: usize) -> (SubRiemannianStructure, ModelDescriptor) {
    let dim = 2 * n + 1;
    let z = 2 * n;
    let mut frame = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut x = VectorField::coordinate(dim, i);
        x.components[z] = c(-0.5) * var(n + i);
        frame.push(x);
    }
    for i in 0..n {
        let mut y = VectorField::coordinate(dim, n + i);
        y.components[z] = c(0.5) * var(i);
        frame.push(y);
    }
    let mut sf = StructureFunctions::zero(2 * n, 1);
    for i in 0..n {
        sf.set_gamma_antisym(i, n + i, 0, c(0.5));
    }
    let s = SubRiemannianStructure::new(
        format!("heisenberg({n})"),
        2 * n,
        2,
        frame,
        vec![VectorField::coordinate(dim, z)],
        sf,
        c(1.0),
    )
    .expect("heisenberg frame is well formed");
    let desc = ModelDescriptor {
        model: Some(ModelName::Heisenberg { n }),
        certified: Some(CDParameters::new(0.0, 0.25 * n as f64, 0.5, 2 * n, 1)),
        reference_box: vec![(-1.5, 1.5); dim],
        group: Some(GroupLaw::Heisenberg { n }),
        compact: false,
        notes: "exponential coordinates (x, y, z); Z_12 = [X_1, X_{n+1}] = ∂z".into(),
    };
    (s, desc)
}

fn free_step2(d: usize) -> (SubRiemannianStructure, ModelDescriptor) {
    let v = vertical_count(d);
    let dim = d + v;
    let mut frame: Vec<VectorField> = (0..d).map(|k| VectorField::coordinate(dim, k)).collect();
    let mut sf = StructureFunctions::zero(d, v);
    for i in 0..d {
        for j in i + 1..d {
            let (p, _) = vertical_flatten(d, i + 1, j + 1).expect("valid pair");
            frame[i].components[d + p] = c(-0.5) * var(j);
            frame[j].components[d + p] = c(0.5) * var(i);
            sf.set_gamma_antisym(i, j, p, c(0.5));
        }
    }
    let vertical = (0..v).map(|p| VectorField::coordinate(dim, d + p)).collect();
    let s = SubRiemannianStructure::new(format!("free_step2_d{d}"), d, d, frame, vertical, sf, c(1.0))
        .expect("free step-two frame is well formed");
    let desc = ModelDescriptor {
        model: Some(ModelName::FreeStep2D3),
        certified: Some(CDParameters::new(0.0, 0.25, 0.5 * (d as f64 - 1.0), d, v)),
        reference_box: vec![(-1.5, 1.5); dim],
        group: Some(GroupLaw::FreeStep2 { d }),
        compact: false,
        notes: "exponential coordinates (x_i, z_ij); Z_ij = [X_i, X_j] = ∂z_ij".into(),
    };
    (s, desc)
}

fn sphere2() -> (SubRiemannianStructure, ModelDescriptor) {
    let theta = var(0);
    let x1 = VectorField::new(vec![c(1.0), c(0.0)]);
    let x2 = VectorField::new(vec![c(0.0), theta.clone().sin().recip()]);
    let mut sf = StructureFunctions::zero(2, 0);
    let cot = theta.clone().cos() / theta.clone().sin();
    sf.set_omega_antisym(0, 1, 1, -cot);
    let s = SubRiemannianStructure::new("sphere2", 2, 0, vec![x1, x2], vec![], sf, theta.sin())
        .and_then(|s| s.with_chart(vec![(0.0, PI), (f64::NEG_INFINITY, f64::INFINITY)], vec![None, Some(2.0 * PI)]))
        .and_then(|s| s.with_folds(vec![ChartFold { coord: 0, lower_shift: vec![(1, PI)], upper_shift: vec![(1, PI)] }]))
        .expect("sphere frame is well formed");
    let desc = ModelDescriptor {
        model: Some(ModelName::Sphere2),
        certified: Some(CDParameters::riemannian(1.0, 2)),
        reference_box: vec![(0.1, PI - 0.1), (-PI, PI)],
        group: None,
        compact: true,
        notes: "chart (θ, φ) on the unit sphere; θ restricted to [0.1, π − 0.1]".into(),
    };
    (s, desc)
}

fn su2() -> (SubRiemannianStructure, ModelDescriptor) {
    let eta = var(0);
    let a = var(1) - var(2);
    let (sa, ca) = (a.clone().sin(), a.cos());
    let tan = eta.clone().tan();
    let cot = eta.clone().cos() / eta.clone().sin();
    let x1 = VectorField::new(vec![ca.clone(), sa.clone() * tan.clone(), sa.clone() * cot.clone()]);
    let x2 = VectorField::new(vec![-sa, ca.clone() * tan, ca * cot]);
    let z = VectorField::new(vec![c(0.0), c(1.0), c(-1.0)]);
    let mut sf = StructureFunctions::zero(2, 1);
    sf.set_gamma_antisym(0, 1, 0, c(1.0));
    sf.set_delta_skew(0, 0, 1, c(-2.0));
    let density = eta.clone().sin() * eta.cos() / c(2.0 * PI * PI);
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let s = SubRiemannianStructure::new("su2", 2, 2, vec![x1, x2], vec![z], sf, density)
        .and_then(|s| s.with_chart(vec![(0.0, PI / 2.0), free, free], vec![None, Some(2.0 * PI), Some(2.0 * PI)]))
        .and_then(|s| s.with_folds(vec![ChartFold { coord: 0, lower_shift: vec![(2, PI)], upper_shift: vec![(1, PI)] }]))
        .expect("su2 frame is well formed");
    let desc = ModelDescriptor {
        model: Some(ModelName::Su2),
        certified: Some(CDParameters::new(4.0, 1.0, 2.0, 2, 1)),
        reference_box: vec![(0.1, PI / 2.0 - 0.1), (-PI, PI), (-PI, PI)],
        group: None,
        compact: true,
        notes: "Hopf chart (η, ξ1, ξ2), q = (cos η e^{iξ1}, sin η e^{iξ2}); Haar measure normalised to 1".into(),
    };
    (s, desc)
}
