//! JSON file formats: `srs-v1` structure definitions and `testfn-v1` test
//! functions. Every scalar function is either a polynomial term list
//! `[[exponents…], coefficient]` or an expression tree.

use crate::calculus::ScalarField;
use crate::cdconstants::CDParameters;
use crate::error::{Error, Result};
use crate::expr::{Expr, Polynomial};
use crate::models::{build_named, ModelDescriptor};
use crate::structure::{vertical_count, ChartFold, StructureFunctions, SubRiemannianStructure, VectorField};
use serde::{Deserialize, Serialize};

pub const STRUCTURE_FORMAT: &str = "srs-v1";
pub const TESTFN_FORMAT: &str = "testfn-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Poly(Vec<(Vec<u32>, f64)>),
    Expr(Expr),
}

impl FunctionSpec {
    fn to_expr(&self, nvars: usize) -> Result<Expr> {
        match self {
            FunctionSpec::Poly(terms) => {
                if let Some((e, _)) = terms.iter().find(|(e, _)| e.len() != nvars) {
                    return Err(Error::Format(format!("exponent tuple of length {} for {nvars} variables", e.len())));
                }
                let p = Polynomial::new(nvars, terms.clone());
                Ok(match p.terms.as_slice() {
                    [] => Expr::zero(),
                    [(e, c)] if e.iter().all(|k| *k == 0) => Expr::Const(*c),
                    _ => Expr::Poly(p),
                })
            }
            FunctionSpec::Expr(e) => {
                check_vars(e, nvars)?;
                Ok(e.clone())
            }
        }
    }

    fn from_expr(e: &Expr) -> FunctionSpec {
        match e {
            Expr::Poly(p) => FunctionSpec::Poly(p.terms.clone()),
            other => FunctionSpec::Expr(other.clone()),
        }
    }
}

fn check_vars(e: &Expr, nvars: usize) -> Result<()> {
    use Expr::*;
    match e {
        Const(v) if !v.is_finite() => Err(Error::Format("non-finite constant".into())),
        Const(_) => Ok(()),
        Var(k) if *k >= nvars => Err(Error::Format(format!("variable x{k} on a chart of dimension {nvars}"))),
        Var(_) => Ok(()),
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => check_vars(a, nvars).and_then(|_| check_vars(b, nvars)),
        Neg(a) | Powi(a, _) | Sin(a) | Cos(a) | Tan(a) | Exp(a) | Ln(a) | Sqrt(a) => check_vars(a, nvars),
        Poly(p) if p.nvars != nvars => Err(Error::Format("polynomial over the wrong number of variables".into())),
        Poly(_) => Ok(()),
    }
}

/// One nonzero entry of an `ω`, `γ` or `δ` table (0-based indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub index: [usize; 3],
    pub value: FunctionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    /// `[lo, hi]` per coordinate; `null` for an unbounded end.
    pub domain: Vec<(Option<f64>, Option<f64>)>,
    pub periods: Vec<Option<f64>>,
    #[serde(default)]
    pub folds: Vec<ChartFold>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSpec {
    pub rho1: f64,
    pub rho2: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomStructure {
    /// Horizontal frame, one component list per field.
    pub frame: Vec<Vec<FunctionSpec>>,
    pub vertical: Vec<Vec<FunctionSpec>>,
    #[serde(default)]
    pub omega: Vec<TableEntry>,
    #[serde(default)]
    pub gamma: Vec<TableEntry>,
    #[serde(default)]
    pub delta: Vec<TableEntry>,
    pub measure_density: FunctionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_box: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified: Option<CertifiedSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    pub format: String,
    pub name: String,
    pub d: usize,
    pub h: usize,
    pub chart_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomStructure>,
}

fn to_bound(b: Option<f64>, neg: bool) -> f64 {
    b.unwrap_or(if neg { f64::NEG_INFINITY } else { f64::INFINITY })
}

fn from_bound(b: f64) -> Option<f64> {
    b.is_finite().then_some(b)
}

impl StructureFile {
    /// Custom description of an existing structure.
    pub fn from_structure(s: &SubRiemannianStructure, desc: Option<&ModelDescriptor>) -> StructureFile {
        let (d, v) = (s.d(), s.v());
        let comps = |f: &VectorField| f.components.iter().map(FunctionSpec::from_expr).collect();
        let mut omega = Vec::new();
        let mut gamma = Vec::new();
        let mut delta = Vec::new();
        for i in 0..d {
            for j in 0..d {
                for l in 0..d {
                    let e = s.sf.omega(i, j, l);
                    if !e.is_zero() {
                        omega.push(TableEntry { index: [i, j, l], value: FunctionSpec::from_expr(e) });
                    }
                }
                for p in 0..v {
                    let e = s.sf.gamma(i, j, p);
                    if !e.is_zero() {
                        gamma.push(TableEntry { index: [i, j, p], value: FunctionSpec::from_expr(e) });
                    }
                }
            }
            for p in 0..v {
                for l in 0..d {
                    let e = s.sf.delta(i, p, l);
                    if !e.is_zero() {
                        delta.push(TableEntry { index: [i, p, l], value: FunctionSpec::from_expr(e) });
                    }
                }
            }
        }
        let chart = ChartSpec {
            domain: s.chart_domain().iter().map(|&(lo, hi)| (from_bound(lo), from_bound(hi))).collect(),
            periods: s.periods().to_vec(),
            folds: s.folds().to_vec(),
        };
        StructureFile {
            format: STRUCTURE_FORMAT.into(),
            name: s.name.clone(),
            d,
            h: s.h(),
            chart_dim: s.chart_dim(),
            model: None,
            custom: Some(CustomStructure {
                frame: s.horizontal().iter().map(comps).collect(),
                vertical: s.vertical().iter().map(comps).collect(),
                omega,
                gamma,
                delta,
                measure_density: FunctionSpec::from_expr(&s.measure_density),
                chart: Some(chart),
                reference_box: desc.map(|d| d.reference_box.clone()),
                certified: desc
                    .and_then(|d| d.certified)
                    .map(|c| CertifiedSpec { rho1: c.rho1, rho2: c.rho2, kappa: c.kappa }),
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<StructureFile> {
        let f: StructureFile = serde_json::from_str(text)?;
        if f.format != STRUCTURE_FORMAT {
            return Err(Error::Format(format!("expected format `{STRUCTURE_FORMAT}`, found `{}`", f.format)));
        }
        Ok(f)
    }

    /// Build the structure and a descriptor for sampling.
    pub fn build(&self) -> Result<(SubRiemannianStructure, ModelDescriptor)> {
        let (s, desc) = match (&self.model, &self.custom) {
            (Some(name), None) => build_named(name)?,
            (None, Some(c)) => self.build_custom(c)?,
            _ => return Err(Error::Format("exactly one of `model` and `custom` must be given".into())),
        };
        if s.d() != self.d || s.h() != self.h || s.chart_dim() != self.chart_dim {
            return Err(Error::Format(format!(
                "header (d, h, chart_dim) = ({}, {}, {}) disagrees with the structure ({}, {}, {})",
                self.d,
                self.h,
                self.chart_dim,
                s.d(),
                s.h(),
                s.chart_dim()
            )));
        }
        Ok((s, desc))
    }

    fn build_custom(&self, c: &CustomStructure) -> Result<(SubRiemannianStructure, ModelDescriptor)> {
        let n = self.chart_dim;
        let (d, v) = (self.d, vertical_count(self.h));
        if d + v != n {
            return Err(Error::Format(format!("chart_dim {n} ≠ d + h(h−1)/2 = {}", d + v)));
        }
        let field = |comps: &Vec<FunctionSpec>| -> Result<VectorField> {
            if comps.len() != n {
                return Err(Error::Format(format!("vector field with {} components, expected {n}", comps.len())));
            }
            Ok(VectorField::new(comps.iter().map(|f| f.to_expr(n)).collect::<Result<_>>()?))
        };
        let horizontal = c.frame.iter().map(field).collect::<Result<Vec<_>>>()?;
        let vertical = c.vertical.iter().map(field).collect::<Result<Vec<_>>>()?;
        let mut sf = StructureFunctions::zero(d, v);
        let bounds = |e: &TableEntry, a: usize, b: usize, cc: usize, what: &str| -> Result<()> {
            let [i, j, k] = e.index;
            if i >= a || j >= b || k >= cc {
                return Err(Error::Format(format!("{what} index {:?} out of range", e.index)));
            }
            Ok(())
        };
        for e in &c.omega {
            bounds(e, d, d, d, "omega")?;
            sf.set_omega(e.index[0], e.index[1], e.index[2], e.value.to_expr(n)?);
        }
        for e in &c.gamma {
            bounds(e, d, d, v, "gamma")?;
            sf.set_gamma(e.index[0], e.index[1], e.index[2], e.value.to_expr(n)?);
        }
        for e in &c.delta {
            bounds(e, d, v, d, "delta")?;
            sf.set_delta(e.index[0], e.index[1], e.index[2], e.value.to_expr(n)?);
        }
        let mut s = SubRiemannianStructure::new(
            self.name.clone(),
            d,
            self.h,
            horizontal,
            vertical,
            sf,
            c.measure_density.to_expr(n)?,
        )?;
        if let Some(ch) = &c.chart {
            let domain = ch.domain.iter().map(|&(lo, hi)| (to_bound(lo, true), to_bound(hi, false))).collect();
            s = s.with_chart(domain, ch.periods.clone())?.with_folds(ch.folds.clone())?;
        }
        let reference_box = c.reference_box.clone().unwrap_or_else(|| vec![(-1.0, 1.0); n]);
        if reference_box.len() != n || reference_box.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Format("reference box must give lo < hi for every coordinate".into()));
        }
        let certified = match c.certified {
            Some(cs) => {
                let p = CDParameters::new(cs.rho1, cs.rho2, cs.kappa, d, v);
                p.validate()?;
                Some(p)
            }
            None => None,
        };
        let compact = s
            .chart_domain()
            .iter()
            .zip(s.periods())
            .all(|((lo, hi), per)| per.is_some() || (lo.is_finite() && hi.is_finite()));
        let desc = ModelDescriptor {
            model: None,
            certified,
            reference_box,
            group: None,
            compact,
            notes: "loaded from an srs-v1 file".into(),
        };
        Ok((s, desc))
    }
}

pub fn load_structure(text: &str) -> Result<(SubRiemannianStructure, ModelDescriptor)> {
    StructureFile::from_json(text)?.build()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionFile {
    pub format: String,
    pub chart_dim: usize,
    pub functions: Vec<NamedFunction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFunction {
    pub id: String,
    pub value: FunctionSpec,
}

pub fn load_test_functions(text: &str) -> Result<Vec<ScalarField>> {
    let f: TestFunctionFile = serde_json::from_str(text)?;
    if f.format != TESTFN_FORMAT {
        return Err(Error::Format(format!("expected format `{TESTFN_FORMAT}`, found `{}`", f.format)));
    }
    f.functions.iter().map(|nf| Ok(ScalarField::exact(nf.id.clone(), nf.value.to_expr(f.chart_dim)?))).collect()
}
