//! Parametrized chains in (C*)^n and the `-eps log|.|` pullback of superforms:
//! epsilon-sweep integrals with extrapolation, logarithmic integrals, face maps
//! of product-type charts, and rationality checks.
//!
//! Chart maps are s-expressions evaluated in an extended-range complex type so
//! that points like |z| = e^{-1000} keep exact logarithms.

use crate::exact_linalg::{integer_kernel, q, rational_reconstruct, to_f64, zvec, RatMatrix, ZVec, Q};
use crate::polyfan::{solve, AmbientFan};
use crate::quad::{integrate_box, pairwise_sum, AdaptiveCfg};
use crate::superform::{Num, Superform};
use num::bigint::BigInt;
use num::complex::Complex64;
use num::{Integer, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("expression: {0}")]
    Parse(String),
    #[error("invalid chain: {0}")]
    Invalid(String),
    #[error("degree mismatch: {0}")]
    Degree(String),
    #[error("chart map vanishes or overflows at {0:?}")]
    Singular(Vec<f64>),
    #[error("integrand exceeds the magnitude budget near {0:?}; the chain looks non-admissible")]
    Budget(Vec<f64>),
    #[error("quadrature did not converge (error estimate {0:e})")]
    NoConvergence(f64),
    #[error("form does not vanish on the truncation face of chart {chart} (|coefficient| = {value:e})")]
    Truncation { chart: usize, value: f64 },
    #[error("EpsSchedule: {0}")]
    Schedule(String),
    #[error("no product structure declared near ray {0:?}")]
    NoProduct(Vec<i64>),
    #[error("winding number is not an integer ({0})")]
    Winding(f64),
    #[error("chain is not closed: {0}")]
    NotClosed(String),
}

// ---------- extended-range complex numbers with derivatives ----------

/// Largest number of chart parameters.
pub const MAX_PARAMS: usize = 8;

type Grad = [Complex64; MAX_PARAMS];

const ZG: Grad = [Complex64 { re: 0.0, im: 0.0 }; MAX_PARAMS];

/// value = c·e^s, derivatives = d·e^s (only the first k entries are live)
#[derive(Clone, Copy, Debug)]
struct Ext {
    c: Complex64,
    s: f64,
    k: usize,
    d: Grad,
}

fn zip_map(k: usize, a: &Grad, b: &Grad, f: impl Fn(Complex64, Complex64) -> Complex64) -> Grad {
    let mut out = ZG;
    for i in 0..k {
        out[i] = f(a[i], b[i]);
    }
    out
}

fn map_d(k: usize, a: &Grad, f: impl Fn(Complex64) -> Complex64) -> Grad {
    let mut out = ZG;
    for i in 0..k {
        out[i] = f(a[i]);
    }
    out
}

impl Ext {
    fn constant(z: Complex64, k: usize) -> Ext {
        Ext { c: z, s: 0.0, k, d: ZG }.norm()
    }

    fn var(x: f64, i: usize, k: usize) -> Ext {
        let mut d = ZG;
        if i < k {
            d[i] = Complex64::one();
        }
        Ext { c: Complex64::new(x, 0.0), s: 0.0, k, d }.norm()
    }

    fn norm(mut self) -> Ext {
        let a = self.c.norm();
        if a > 0.0 && a.is_finite() && !(0.5..2.0).contains(&a) {
            self.s += a.ln();
            self.c /= a;
            for x in &mut self.d[..self.k] {
                *x /= a;
            }
        }
        self
    }

    fn plain(&self) -> Complex64 {
        self.c * self.s.exp()
    }

    fn is_null(&self) -> bool {
        self.c == Complex64::zero() && self.d[..self.k].iter().all(|x| x.norm() == 0.0)
    }

    fn add(&self, o: &Ext) -> Ext {
        let s = if self.is_null() {
            o.s
        } else if o.is_null() {
            self.s
        } else {
            self.s.max(o.s)
        };
        let fa = (self.s - s).exp();
        let fb = (o.s - s).exp();
        Ext { c: self.c * fa + o.c * fb, s, k: self.k, d: zip_map(self.k, &self.d, &o.d, |a, b| a * fa + b * fb) }.norm()
    }

    fn neg(&self) -> Ext {
        Ext { c: -self.c, s: self.s, k: self.k, d: map_d(self.k, &self.d, |x| -x) }
    }

    fn mul(&self, o: &Ext) -> Ext {
        let (c0, c1) = (self.c, o.c);
        Ext { c: c0 * c1, s: self.s + o.s, k: self.k, d: zip_map(self.k, &self.d, &o.d, |a, b| a * c1 + c0 * b) }.norm()
    }

    fn div(&self, o: &Ext) -> Ext {
        let (c0, c1) = (self.c, o.c);
        let c2 = c1 * c1;
        Ext { c: c0 / c1, s: self.s - o.s, k: self.k, d: zip_map(self.k, &self.d, &o.d, |a, b| (a * c1 - c0 * b) / c2) }.norm()
    }

    fn exp(&self) -> Ext {
        let z = self.plain();
        let f = self.s.exp();
        let c = Complex64::new(0.0, z.im).exp();
        Ext { c, s: z.re, k: self.k, d: map_d(self.k, &self.d, |x| x * f * c) }.norm()
    }

    fn log(&self) -> Ext {
        let v = Complex64::new(self.s, 0.0) + self.c.ln();
        let c0 = self.c;
        Ext { c: v, s: 0.0, k: self.k, d: map_d(self.k, &self.d, |x| x / c0) }.norm()
    }

    fn powf(&self, p: f64) -> Ext {
        let (c, cm1) = if p.fract() == 0.0 && p.abs() < 1e9 {
            (self.c.powi(p as i32), self.c.powi(p as i32 - 1))
        } else {
            (self.c.powf(p), self.c.powf(p - 1.0))
        };
        Ext { c, s: self.s * p, k: self.k, d: map_d(self.k, &self.d, |x| x * cm1 * p) }.norm()
    }

    fn unit(&self) -> Ext {
        let u = self.c / self.c.norm();
        let c0 = self.c;
        Ext { c: u, s: 0.0, k: self.k, d: map_d(self.k, &self.d, |x| u * Complex64::new(0.0, (x / c0).im)) }
    }

    /// log|z|
    fn log_abs(&self) -> f64 {
        self.s + self.c.norm().ln()
    }

    /// ∂ log z / ∂ s_k
    fn dlog(&self) -> Vec<Complex64> {
        self.d[..self.k].iter().map(|x| x / self.c).collect()
    }
}

// ---------- expressions ----------

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    I,
    Param(usize),
    Op(Op, Vec<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Polar,
    Pow,
    Phase,
    /// z/|z|
    Unit,
}

fn tokenize(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl Expr {
    /// Parse prefix notation, e.g. "(polar (exp (neg rho)) theta)".
    pub fn parse(src: &str, params: &[String]) -> Result<Expr, AnalyticError> {
        let toks = tokenize(src);
        let mut pos = 0;
        let e = Self::parse_at(&toks, &mut pos, params)?;
        if pos != toks.len() {
            return Err(AnalyticError::Parse(format!("trailing input in {src:?}")));
        }
        Ok(e)
    }

    fn parse_at(t: &[String], pos: &mut usize, params: &[String]) -> Result<Expr, AnalyticError> {
        let tok = t.get(*pos).ok_or_else(|| AnalyticError::Parse("unexpected end".into()))?;
        *pos += 1;
        if tok == "(" {
            let head = t.get(*pos).ok_or_else(|| AnalyticError::Parse("empty list".into()))?.clone();
            *pos += 1;
            let op = match head.as_str() {
                "+" => Op::Add,
                "-" => Op::Sub,
                "*" => Op::Mul,
                "/" => Op::Div,
                "neg" => Op::Neg,
                "exp" => Op::Exp,
                "log" => Op::Log,
                "polar" => Op::Polar,
                "pow" => Op::Pow,
                "phase" => Op::Phase,
                "unit" => Op::Unit,
                h => return Err(AnalyticError::Parse(format!("unknown operator {h:?}"))),
            };
            let mut args = Vec::new();
            while t.get(*pos).map(|s| s.as_str()) != Some(")") {
                if *pos >= t.len() {
                    return Err(AnalyticError::Parse("missing )".into()));
                }
                args.push(Self::parse_at(t, pos, params)?);
            }
            *pos += 1;
            let arity_ok = match op {
                Op::Add | Op::Mul => !args.is_empty(),
                Op::Sub => args.len() == 1 || args.len() == 2,
                Op::Div | Op::Polar | Op::Pow => args.len() == 2,
                Op::Neg | Op::Exp | Op::Log | Op::Phase | Op::Unit => args.len() == 1,
            };
            if !arity_ok {
                return Err(AnalyticError::Parse(format!("wrong number of arguments to {head}")));
            }
            return Ok(Expr::Op(op, args));
        }
        if tok == ")" {
            return Err(AnalyticError::Parse("unexpected )".into()));
        }
        match tok.as_str() {
            "i" => Ok(Expr::I),
            "pi" => Ok(Expr::Num(PI)),
            _ => {
                if let Some(k) = params.iter().position(|p| p == tok) {
                    Ok(Expr::Param(k))
                } else {
                    tok.parse::<f64>()
                        .map(Expr::Num)
                        .map_err(|_| AnalyticError::Parse(format!("unknown symbol {tok:?}")))
                }
            }
        }
    }

    fn eval(&self, s: &[f64]) -> Ext {
        self.eval_k(s, s.len())
    }

    /// Evaluate with derivatives in the first k params (k = 0: value only).
    fn eval_k(&self, s: &[f64], k: usize) -> Ext {
        match self {
            Expr::Num(x) => Ext::constant(Complex64::new(*x, 0.0), k),
            Expr::I => Ext::constant(Complex64::i(), k),
            Expr::Param(i) => Ext::var(s[*i], *i, k),
            Expr::Op(op, a) => {
                let x = a[0].eval_k(s, k);
                match op {
                    Op::Add => a[1..].iter().fold(x, |acc, e| acc.add(&e.eval_k(s, k))),
                    Op::Mul => a[1..].iter().fold(x, |acc, e| acc.mul(&e.eval_k(s, k))),
                    Op::Sub => match a.get(1) {
                        None => x.neg(),
                        Some(e) => x.add(&e.eval_k(s, k).neg()),
                    },
                    Op::Div => x.div(&a[1].eval_k(s, k)),
                    Op::Neg => x.neg(),
                    Op::Exp => x.exp(),
                    Op::Log => x.log(),
                    Op::Phase => x.mul(&Ext::constant(Complex64::i(), k)).exp(),
                    Op::Polar => x.mul(&a[1].eval_k(s, k).mul(&Ext::constant(Complex64::i(), k)).exp()),
                    Op::Pow => x.powf(a[1].eval_k(s, 0).plain().re),
                    Op::Unit => x.unit(),
                }
            }
        }
    }

    /// Plain value of a parameter-free expression.
    pub fn constant_value(&self) -> Complex64 {
        self.eval(&[]).plain()
    }
}

// ---------- chains ----------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Lo,
    Hi,
}

/// Near the divisor of `ray` the chart is (radial param) × (angle circle) ×
/// (boundary chart over the remaining params, in orbit coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct Product {
    pub ray: Vec<i64>,
    pub radial: usize,
    pub end: End,
    pub angle: usize,
    pub boundary: ParamChain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub params: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub map: Vec<Expr>,
    pub orientation: i32,
    pub multiplicity: Q,
    pub periodic: Vec<usize>,
    pub products: Vec<Product>,
}

impl Chart {
    fn eval(&self, s: &[f64]) -> Vec<Ext> {
        self.map.iter().map(|e| e.eval(s)).collect()
    }

    fn log_abs(&self, s: &[f64]) -> Vec<f64> {
        self.map.iter().map(|e| e.eval_k(s, 0).log_abs()).collect()
    }

    fn weight(&self) -> f64 {
        self.orientation as f64 * to_f64(&self.multiplicity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamChain {
    pub n: usize,
    pub dim: usize,
    pub charts: Vec<Chart>,
}

impl ParamChain {
    pub fn ambient_rank(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn empty(n: usize, dim: usize) -> Self {
        ParamChain { n, dim, charts: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    /// Points of a 0-chain with their signed multiplicities.
    pub fn points(&self) -> Vec<(Vec<Complex64>, f64)> {
        self.charts
            .iter()
            .filter(|c| c.params.is_empty())
            .map(|c| (c.eval(&[]).iter().map(|z| z.plain()).collect(), c.weight()))
            .collect()
    }

    pub fn from_doc(doc: &ChainDoc) -> Result<Self, AnalyticError> {
        let mut charts = Vec::new();
        for (ci, cd) in doc.charts.iter().enumerate() {
            if cd.params.len() > MAX_PARAMS {
                return Err(AnalyticError::Invalid(format!("chart {ci} has more than {MAX_PARAMS} params")));
            }
            if cd.params.len() != doc.dim {
                return Err(AnalyticError::Invalid(format!("chart {ci} has {} params, chain dimension is {}", cd.params.len(), doc.dim)));
            }
            if cd.map.len() != doc.ambient_rank {
                return Err(AnalyticError::Invalid(format!("chart {ci} maps into rank {}, expected {}", cd.map.len(), doc.ambient_rank)));
            }
            if cd.bounds.len() != cd.params.len() {
                return Err(AnalyticError::Invalid(format!("chart {ci} needs one box interval per param")));
            }
            let cst = |n: &Num| -> Result<f64, AnalyticError> {
                match n {
                    Num::Int(i) => Ok(*i as f64),
                    Num::Float(f) => Ok(*f),
                    Num::Text(s) => Ok(Expr::parse(s, &[])?.constant_value().re),
                }
            };
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            for (a, b) in &cd.bounds {
                let (a, b) = (cst(a)?, cst(b)?);
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(AnalyticError::Invalid(format!("chart {ci} has an empty or infinite interval")));
                }
                lo.push(a);
                hi.push(b);
            }
            let map = cd.map.iter().map(|s| Expr::parse(s, &cd.params)).collect::<Result<Vec<_>, _>>()?;
            let pidx = |name: &str| -> Result<usize, AnalyticError> {
                cd.params.iter().position(|p| p == name).ok_or_else(|| AnalyticError::Invalid(format!("unknown param {name:?}")))
            };
            let periodic = cd.periodic.iter().map(|p| pidx(p)).collect::<Result<Vec<_>, _>>()?;
            let mut products = Vec::new();
            for pd in &cd.product {
                if pd.ray.len() != doc.ambient_rank {
                    return Err(AnalyticError::Invalid("product ray has the wrong length".into()));
                }
                let boundary = ParamChain::from_doc(&pd.boundary)?;
                if boundary.n + 1 != doc.ambient_rank || boundary.dim + 2 != doc.dim {
                    return Err(AnalyticError::Invalid("boundary chart has the wrong dimensions".into()));
                }
                let radial = pidx(&pd.radial)?;
                let angle = pidx(&pd.angle)?;
                let rest: Vec<&String> = cd.params.iter().enumerate().filter(|(i, _)| *i != radial && *i != angle).map(|(_, p)| p).collect();
                for bc in &pd.boundary.charts {
                    if bc.params.iter().collect::<Vec<_>>() != rest {
                        return Err(AnalyticError::Invalid("boundary chart params must be the remaining params in order".into()));
                    }
                }
                products.push(Product { ray: pd.ray.clone(), radial, end: pd.end, angle, boundary });
            }
            let multiplicity = cd.multiplicity.as_ref().map_or(Ok(q(1)), |m| m.to_q()).map_err(|e| AnalyticError::Invalid(e.to_string()))?;
            if cd.orientation != 1 && cd.orientation != -1 {
                return Err(AnalyticError::Invalid("orientation must be 1 or -1".into()));
            }
            charts.push(Chart { params: cd.params.clone(), lo, hi, map, orientation: cd.orientation, multiplicity, periodic, products });
        }
        Ok(ParamChain { n: doc.ambient_rank, dim: doc.dim, charts })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProductDoc {
    pub ray: Vec<i64>,
    pub radial: String,
    pub end: End,
    pub angle: String,
    pub boundary: ChainDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChartDoc {
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default, rename = "box")]
    pub bounds: Vec<(Num, Num)>,
    pub map: Vec<String>,
    #[serde(default = "one")]
    pub orientation: i32,
    #[serde(default)]
    pub multiplicity: Option<Num>,
    #[serde(default)]
    pub periodic: Vec<String>,
    #[serde(default)]
    pub product: Vec<ProductDoc>,
}

fn one() -> i32 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChainDoc {
    pub ambient_rank: usize,
    pub dim: usize,
    pub charts: Vec<ChartDoc>,
}

// ---------- quadrature settings ----------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Rule {
    GaussLegendre { order: usize, panels: usize, max_depth: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureCfg {
    pub rule: Rule,
    pub tol: f64,
}

impl Default for QuadratureCfg {
    fn default() -> Self {
        QuadratureCfg { rule: Rule::GaussLegendre { order: 16, panels: 16, max_depth: 40 }, tol: 1e-10 }
    }
}

impl QuadratureCfg {
    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        QuadratureCfg { rule: Rule::MonteCarlo { samples, seed }, tol: 0.0 }
    }

    pub fn validate(&self) -> Result<(), AnalyticError> {
        match &self.rule {
            Rule::GaussLegendre { order, .. } if *order < 2 => Err(AnalyticError::Invalid("QuadratureCfg: order must be at least 2".into())),
            Rule::MonteCarlo { samples, .. } if *samples == 0 => Err(AnalyticError::Invalid("QuadratureCfg: no samples".into())),
            _ if !(self.tol >= 0.0) => Err(AnalyticError::Invalid("QuadratureCfg: tolerance must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: Complex64,
    pub error: f64,
}

fn mc_box<F: Fn(&[f64]) -> Complex64 + Sync>(f: &F, lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> Estimate {
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let parts: Vec<(Complex64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(c as u64));
            let mut s = Complex64::zero();
            let mut s2 = 0.0;
            let mut x = vec![0.0; lo.len()];
            for _ in 0..per {
                for k in 0..lo.len() {
                    x[k] = rng.gen_range(lo[k]..hi[k]);
                }
                let v = f(&x);
                s += v;
                s2 += v.norm_sqr();
            }
            (s, s2, per)
        })
        .collect();
    let n: usize = parts.iter().map(|p| p.2).sum();
    let mean = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>()) / n as f64;
    let m2: f64 = parts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let var = (m2 - mean.norm_sqr()).max(0.0);
    Estimate { value: mean * vol, error: vol * (var / n as f64).sqrt() }
}

fn integrate_chart<F: Fn(&[f64]) -> Complex64 + Sync>(f: &F, c: &Chart, cfg: &QuadratureCfg) -> Result<Estimate, AnalyticError> {
    if c.params.is_empty() {
        return Ok(Estimate { value: f(&[]), error: 0.0 });
    }
    match &cfg.rule {
        Rule::GaussLegendre { order, panels, max_depth } => {
            let ac = AdaptiveCfg { order: *order, panels: *panels, tol: cfg.tol, max_depth: *max_depth };
            let r = integrate_box(f, &c.lo, &c.hi, &ac);
            if !r.value.re.is_finite() || !r.value.im.is_finite() {
                return Err(AnalyticError::Singular(c.lo.clone()));
            }
            if !r.converged {
                return Err(AnalyticError::NoConvergence(r.error));
            }
            Ok(Estimate { value: r.value, error: r.error })
        }
        Rule::MonteCarlo { samples, seed } => Ok(mc_box(f, &c.lo, &c.hi, *samples, *seed)),
    }
}

fn det_c(mut m: Vec<Vec<Complex64>>) -> Complex64 {
    let n = m.len();
    let mut d = Complex64::one();
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].norm().total_cmp(&m[b][c].norm())).unwrap_or(c);
        if m[p][c].norm() == 0.0 {
            return Complex64::zero();
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for j in c..n {
                let t = m[c][j];
                m[i][j] -= f * t;
            }
        }
    }
    d
}

const BUDGET: f64 = 1e12;

// ---------- pullback ----------

/// Value of -eps log|.|^*(ω) at z on a real tangent frame (each frame vector
/// given by its components dz_c). Factor order: d''-factors, then d'-factors.
pub fn pullback_eval(w: &Superform, eps: f64, z: &[Complex64], frame: &[Vec<Complex64>]) -> Result<Complex64, AnalyticError> {
    if z.len() != w.n {
        return Err(AnalyticError::Degree(format!("point in rank {}, form in rank {}", z.len(), w.n)));
    }
    if frame.len() != w.p + w.q {
        return Err(AnalyticError::Degree(format!("{} frame vectors for a ({},{})-form", frame.len(), w.p, w.q)));
    }
    if z.iter().any(|c| c.norm() == 0.0 || !c.norm().is_finite()) {
        return Err(AnalyticError::Singular(z.iter().map(|c| c.norm()).collect()));
    }
    let x: Vec<f64> = z.iter().map(|c| -eps * c.norm().ln()).collect();
    let dlog: Vec<Vec<Complex64>> = (0..w.n).map(|c| frame.iter().map(|v| v[c] / z[c]).collect()).collect();
    Ok(pulled_integrand(w, eps, &x, &dlog))
}

/// Sum over components of f(x) · det(rows), with rows −(ε/2)·conj(dlog z_j) for
/// j ∈ J followed by −(1/2πi)·dlog z_i for i ∈ I.
fn pulled_integrand(w: &Superform, eps: f64, x: &[f64], dlog: &[Vec<Complex64>]) -> Complex64 {
    let hol = Complex64::new(0.0, 1.0 / (2.0 * PI)); // −1/(2πi) = i/(2π)
    let mut total = Complex64::zero();
    for ((i, j), f) in &w.main().comps {
        let v = f.eval(x);
        if v == 0.0 {
            continue;
        }
        let mut rows: Vec<Vec<Complex64>> = Vec::with_capacity(i.len() + j.len());
        for &jj in j {
            rows.push(dlog[jj].iter().map(|d| d.conj() * (-eps / 2.0)).collect());
        }
        for &ii in i {
            rows.push(dlog[ii].iter().map(|d| d * hol).collect());
        }
        total += det_c(rows) * v;
    }
    total
}

fn chart_point(c: &Chart, s: &[f64]) -> Option<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let zs = c.eval(s);
    let mut logs = Vec::with_capacity(zs.len());
    let mut dl = Vec::with_capacity(zs.len());
    for z in &zs {
        if z.c.norm() == 0.0 || !z.s.is_finite() || !z.c.norm().is_finite() {
            return None;
        }
        logs.push(z.log_abs());
        dl.push(z.dlog());
    }
    Some((logs, dl))
}

/// ∫_V −ε log|·|^*(ω) at one ε.
pub fn eps_integral(v: &ParamChain, w: &Superform, eps: f64, cfg: &QuadratureCfg) -> Result<Estimate, AnalyticError> {
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(AnalyticError::Schedule("epsilon must be positive".into()));
    }
    if w.n != v.n {
        return Err(AnalyticError::Degree(format!("form on rank {}, chain in rank {}", w.n, v.n)));
    }
    if w.p + w.q != v.dim {
        return Err(AnalyticError::Degree(format!("({},{})-form on a {}-chain", w.p, w.q, v.dim)));
    }
    check_truncation(v, w, eps)?;
    let mut parts = Vec::new();
    let mut err = 0.0;
    for c in &v.charts {
        let wt = c.weight();
        let f = |s: &[f64]| -> Complex64 {
            // cheap support test before any derivatives
            let x: Vec<f64> = c.log_abs(s).iter().map(|l| -eps * l).collect();
            if w.main().comps.values().all(|g| g.eval(&x) == 0.0) {
                return Complex64::zero();
            }
            match chart_point(c, s) {
                Some((logs, dl)) => {
                    let x: Vec<f64> = logs.iter().map(|l| -eps * l).collect();
                    pulled_integrand(w, eps, &x, &dl) * wt
                }
                None => Complex64::new(f64::NAN, 0.0),
            }
        };
        let e = integrate_chart(&f, c, cfg)?;
        parts.push(e.value);
        err += e.error;
    }
    Ok(Estimate { value: pairwise_sum(&parts), error: err })
}

/// The form must vanish where a chart is cut off before reaching a divisor.
fn check_truncation(v: &ParamChain, w: &Superform, eps: f64) -> Result<(), AnalyticError> {
    for (ci, c) in v.charts.iter().enumerate() {
        for p in &c.products {
            let fixed = match p.end {
                End::Lo => c.lo[p.radial],
                End::Hi => c.hi[p.radial],
            };
            let free: Vec<usize> = (0..c.params.len()).filter(|&k| k != p.radial).collect();
            let grid = 9usize;
            let total = grid.pow(free.len() as u32);
            for g in 0..total {
                let mut s = vec![fixed; c.params.len()];
                let mut rem = g;
                for &k in &free {
                    let t = (rem % grid) as f64 / (grid - 1) as f64;
                    rem /= grid;
                    s[k] = c.lo[k] + t * (c.hi[k] - c.lo[k]);
                }
                let Some((logs, _)) = chart_point(c, &s) else { continue };
                let x: Vec<f64> = logs.iter().map(|l| -eps * l).collect();
                let m = w.main().comps.values().map(|f| f.eval(&x).abs()).fold(0.0, f64::max);
                if m > 1e-12 {
                    return Err(AnalyticError::Truncation { chart: ci, value: m });
                }
            }
        }
    }
    Ok(())
}

// ---------- epsilon sweeps ----------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub eps0: f64,
    pub ratio: f64,
    pub levels: usize,
    /// Richardson order (1 or 2)
    pub order: usize,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule { eps0: 0.2, ratio: 0.5, levels: 7, order: 2 }
    }
}

impl EpsSchedule {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        if !(self.eps0 > 0.0) {
            return Err(AnalyticError::Schedule("eps0 must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(AnalyticError::Schedule("ratio must lie in (0,1)".into()));
        }
        if self.levels == 0 {
            return Err(AnalyticError::Schedule("at least one level is needed".into()));
        }
        if self.eps0 * self.ratio.powi(self.levels as i32) <= 1e-12 {
            return Err(AnalyticError::Schedule(format!(
                "eps0·ratio^levels = {:e} is below the precision floor 1e-12",
                self.eps0 * self.ratio.powi(self.levels as i32)
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.eps0 * self.ratio.powi(k as i32)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Level {
    pub eps: f64,
    pub value: Complex64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitResult {
    pub levels: Vec<Level>,
    pub limit: Complex64,
    pub error_estimate: f64,
    /// observed decay order of successive differences
    pub order_estimate: Option<f64>,
    pub diverging: bool,
}

/// Richardson extrapolation of values at ε_k = ε0·ratio^k, assuming
/// v(ε) = L + a ε + b ε² + ...
pub fn richardson(values: &[Complex64], ratio: f64, order: usize) -> (Complex64, f64) {
    let mut col: Vec<Complex64> = values.to_vec();
    let mut prev_last = *col.last().unwrap_or(&Complex64::zero());
    for k in 1..=order {
        if col.len() < 2 {
            break;
        }
        let r = ratio.powi(k as i32);
        prev_last = *col.last().expect("nonempty");
        col = col.windows(2).map(|w| (w[1] - w[0] * r) / (1.0 - r)).collect();
    }
    let last = *col.last().unwrap_or(&Complex64::zero());
    let err = if col.len() >= 2 { (col[col.len() - 1] - col[col.len() - 2]).norm() } else { (last - prev_last).norm() };
    (last, err)
}

pub fn limit_integral(v: &ParamChain, w: &Superform, s: &EpsSchedule, cfg: &QuadratureCfg) -> Result<LimitResult, AnalyticError> {
    s.validate()?;
    let mut levels = Vec::new();
    for eps in s.values() {
        let e = eps_integral(v, w, eps, cfg)?;
        levels.push(Level { eps, value: e.value, error: e.error });
    }
    let vals: Vec<Complex64> = levels.iter().map(|l| l.value).collect();
    let diffs: Vec<f64> = vals.windows(2).map(|p| (p[1] - p[0]).norm()).collect();
    let mut grow = 0;
    let mut diverging = false;
    for d in diffs.windows(2) {
        if d[1] > d[0] && d[1] > 1e-12 {
            grow += 1;
            if grow >= 3 {
                diverging = true;
            }
        } else {
            grow = 0;
        }
    }
    let order_estimate = match diffs.len() {
        n if n >= 2 && diffs[n - 1] > 1e-14 && diffs[n - 2] > 1e-14 => Some((diffs[n - 2] / diffs[n - 1]).ln() / (1.0 / s.ratio).ln()),
        _ => None,
    };
    let (limit, rerr) = richardson(&vals, s.ratio, s.order.min(vals.len().saturating_sub(1)));
    let qerr = levels.iter().map(|l| l.error).fold(0.0, f64::max);
    Ok(LimitResult { levels, limit, error_estimate: rerr + qerr, order_estimate, diverging })
}

// ---------- logarithmic integrals ----------

/// ∫_V ∧ −(1/2πi) d log f_i for monomials f_i (exponent vectors).
pub fn log_integral(v: &ParamChain, fs: &[Vec<i64>], cfg: &QuadratureCfg) -> Result<Estimate, AnalyticError> {
    cfg.validate()?;
    if fs.len() != v.dim {
        return Err(AnalyticError::Degree(format!("{} monomials on a {}-chain", fs.len(), v.dim)));
    }
    if fs.iter().any(|f| f.len() != v.n) {
        return Err(AnalyticError::Degree("monomial of the wrong length".into()));
    }
    let hol = Complex64::new(0.0, 1.0 / (2.0 * PI));
    let mut parts = Vec::new();
    let mut err = 0.0;
    for c in &v.charts {
        let wt = c.weight();
        let f = |s: &[f64]| -> Complex64 {
            let Some((_, dl)) = chart_point(c, s) else {
                return Complex64::new(f64::NAN, 0.0);
            };
            let rows: Vec<Vec<Complex64>> = fs
                .iter()
                .map(|m| {
                    (0..s.len())
                        .map(|k| m.iter().zip(&dl).map(|(&e, d)| d[k] * e as f64).sum::<Complex64>() * hol)
                        .collect()
                })
                .collect();
            let val = det_c(rows) * wt;
            if val.norm() > BUDGET {
                return Complex64::new(f64::INFINITY, 0.0);
            }
            val
        };
        let e = integrate_chart(&f, c, cfg).map_err(|e| match e {
            AnalyticError::Singular(p) => AnalyticError::Budget(p),
            o => o,
        })?;
        parts.push(e.value);
        err += e.error;
    }
    Ok(Estimate { value: pairwise_sum(&parts), error: err })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RationalityResult {
    pub value: Complex64,
    pub error: f64,
    pub rational: Option<String>,
}

/// A chain is closed here when every chart is a product of periodic params.
pub fn is_closed(v: &ParamChain) -> Result<(), AnalyticError> {
    for (ci, c) in v.charts.iter().enumerate() {
        for k in 0..c.params.len() {
            if !c.periodic.contains(&k) {
                return Err(AnalyticError::NotClosed(format!("param {:?} of chart {ci} is not periodic", c.params[k])));
            }
        }
        // spot check that the map closes up
        for &k in &c.periodic {
            for t in [0.17, 0.5, 0.83] {
                let mut a: Vec<f64> = c.lo.iter().zip(&c.hi).map(|(l, h)| l + t * (h - l)).collect();
                let mut b = a.clone();
                a[k] = c.lo[k];
                b[k] = c.hi[k];
                for (za, zb) in c.eval(&a).iter().zip(c.eval(&b)) {
                    let (pa, pb) = (za.plain(), zb.plain());
                    if (pa - pb).norm() > 1e-9 * (1.0 + pa.norm()) {
                        return Err(AnalyticError::NotClosed(format!("chart {ci} does not close up along {:?}", c.params[k])));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn rationality_check(v: &ParamChain, fs: &[Vec<i64>], cfg: &QuadratureCfg) -> Result<RationalityResult, AnalyticError> {
    is_closed(v)?;
    let e = log_integral(v, fs, cfg)?;
    // quadrature error estimates can undershoot roundoff
    let err = e.error.max(1e-13 * (1.0 + e.value.norm()));
    let tol = 10.0 * err;
    let rational = if e.value.im.abs() <= tol {
        rational_reconstruct(e.value.re, 100, tol).map(|r| r.to_string())
    } else {
        None
    };
    Ok(RationalityResult { value: e.value, error: e.error, rational })
}

// ---------- face maps ----------

/// Hermite basis of M ∩ span(rays)^⊥ (coordinates of the orbit of the cone).
pub fn orbit_monomial_basis(rays: &[Vec<i64>], n: usize) -> Vec<ZVec> {
    if rays.is_empty() {
        return (0..n).map(|i| zvec(&(0..n).map(|j| i64::from(i == j)).collect::<Vec<_>>())).collect();
    }
    let idx: Vec<usize> = (0..rays.len()).collect();
    match AmbientFan::new(n, rays, &[idx.clone()]) {
        Ok(a) => {
            let k = a.find_cone(&idx).expect("listed cone");
            a.orbit_basis(k).to_vec()
        }
        Err(_) => integer_kernel(&rays.iter().map(|r| zvec(r)).collect::<Vec<_>>(), n),
    }
}

fn unit_preimage(phi: &[BigInt]) -> Option<ZVec> {
    let mut x: ZVec = vec![BigInt::zero(); phi.len()];
    let mut g = BigInt::zero();
    for (i, a) in phi.iter().enumerate() {
        if a.is_zero() {
            continue;
        }
        if g.is_zero() {
            g = a.clone();
            x[i] = BigInt::one();
            continue;
        }
        let e = g.extended_gcd(a);
        for xi in x.iter_mut() {
            *xi *= &e.x;
        }
        x[i] = e.y.clone();
        g = e.gcd;
    }
    if g.is_negative() {
        x = x.into_iter().map(|v| -v).collect();
        g = -g;
    }
    g.is_one().then_some(x)
}

pub(crate) fn perm_sign(order: &[usize]) -> i32 {
    let mut s = 1;
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if order[i] > order[j] {
                s = -s;
            }
        }
    }
    s
}

/// Winding of the monomial χ^m (in the chart's coordinates) along the angle param.
fn winding(c: &Chart, p: &Product, m: &[BigInt]) -> Result<f64, AnalyticError> {
    let mut s: Vec<f64> = c.lo.iter().zip(&c.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    s[p.radial] = match p.end {
        End::Lo => c.lo[p.radial],
        End::Hi => c.hi[p.radial],
    };
    let arg = |t: f64, s: &mut Vec<f64>| -> f64 {
        s[p.angle] = t;
        let zs = c.eval(s);
        let mut a = Complex64::one();
        for (z, e) in zs.iter().zip(m) {
            let e = e.to_i32().unwrap_or(0);
            if e != 0 {
                a *= (z.c / z.c.norm()).powi(e);
            }
        }
        a.arg()
    };
    let (a0, a1) = (c.lo[p.angle], c.hi[p.angle]);
    let mut steps = 256usize;
    loop {
        let mut total = 0.0;
        let mut prev = arg(a0, &mut s);
        let mut ok = true;
        for k in 1..=steps {
            let t = a0 + (a1 - a0) * k as f64 / steps as f64;
            let cur = arg(t, &mut s);
            let mut d = cur - prev;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
            }
            if d.abs() >= PI / 2.0 {
                ok = false;
                break;
            }
            total += d;
            prev = cur;
        }
        if ok {
            let w = total / (2.0 * PI);
            if (w - w.round()).abs() > 1e-6 {
                return Err(AnalyticError::Winding(w));
            }
            return Ok(w.round());
        }
        steps *= 4;
        if steps > 1 << 20 {
            return Err(AnalyticError::Winding(f64::NAN));
        }
    }
}

/// ∂_{O(l)} V for a ray l of the ambient lattice, in orbit coordinates of
/// `basis_next` (rows, ambient coordinates); the chain V lives in coordinates
/// `basis_cur`.
fn face_map_in(v: &ParamChain, ray: &[i64], basis_cur: &[ZVec], basis_next: &[ZVec]) -> Result<ParamChain, AnalyticError> {
    let n = basis_cur.first().map_or(0, |b| b.len());
    // image of the ray in the current coordinates
    let lz = zvec(ray);
    let image: Vec<BigInt> = basis_cur.iter().map(|b| b.iter().zip(&lz).map(|(x, y)| x * y).sum()).collect();
    let m = unit_preimage(&image).ok_or_else(|| AnalyticError::Invalid(format!("ray {ray:?} is not primitive in the orbit lattice")))?;
    // express the next basis in the current one
    let cur_q: Vec<Vec<Q>> = basis_cur.iter().map(|b| b.iter().map(|x| Q::from_integer(x.clone())).collect()).collect();
    let bm = RatMatrix::from_cols(&cur_q, n);
    let coeffs: Vec<Vec<f64>> = basis_next
        .iter()
        .map(|b| {
            let t: Vec<Q> = b.iter().map(|x| Q::from_integer(x.clone())).collect();
            solve(&bm, &t).expect("sublattice").iter().map(to_f64).collect()
        })
        .collect();
    let mut out = ParamChain::empty(v.n.saturating_sub(1), v.dim.saturating_sub(2));
    for c in &v.charts {
        for p in c.products.iter().filter(|p| p.ray == ray) {
            let w = winding(c, p, &m)?;
            let disk = w * if p.end == End::Hi { -1.0 } else { 1.0 };
            let mut order = vec![p.radial, p.angle];
            order.extend((0..c.params.len()).filter(|&k| k != p.radial && k != p.angle));
            let sign = c.orientation as f64 * perm_sign(&order) as f64 * disk;
            if sign == 0.0 {
                continue;
            }
            spot_check(c, p, &coeffs)?;
            for bc in &p.boundary.charts {
                let mut b = bc.clone();
                let total = q(sign as i64) * &c.multiplicity;
                let s = if total.is_negative() { -1 } else { 1 };
                b.orientation *= s;
                b.multiplicity = &b.multiplicity * total.abs();
                out.charts.push(b);
            }
        }
    }
    Ok(out)
}

/// Orbit monomials of the chart near the divisor must match the boundary chart.
fn spot_check(c: &Chart, p: &Product, coeffs: &[Vec<f64>]) -> Result<(), AnalyticError> {
    let rest: Vec<usize> = (0..c.params.len()).filter(|&k| k != p.radial && k != p.angle).collect();
    for t in [0.25, 0.5, 0.75] {
        let mut s: Vec<f64> = c.lo.iter().zip(&c.hi).map(|(l, h)| l + t * (h - l)).collect();
        s[p.radial] = match p.end {
            End::Lo => c.lo[p.radial],
            End::Hi => c.hi[p.radial],
        };
        let zs = c.eval(&s);
        let rs: Vec<f64> = rest.iter().map(|&k| s[k]).collect();
        for bc in &p.boundary.charts {
            let inside = rs.iter().enumerate().all(|(i, x)| *x >= bc.lo[i] - 1e-12 && *x <= bc.hi[i] + 1e-12);
            if !inside {
                continue;
            }
            let bz = bc.eval(&rs);
            for (row, b) in coeffs.iter().zip(&bz) {
                // log of the orbit monomial on the chart
                let mut l = Complex64::zero();
                for (e, z) in row.iter().zip(&zs) {
                    if *e != 0.0 {
                        l += Complex64::new(z.log_abs(), z.c.arg()) * *e;
                    }
                }
                let lb = Complex64::new(b.log_abs(), b.c.arg());
                let mut d = l - lb;
                d.im = (d.im + PI).rem_euclid(2.0 * PI) - PI;
                if d.norm() > 1e-6 {
                    return Err(AnalyticError::Invalid(format!(
                        "boundary chart of ray {:?} does not match the chart near the divisor (log difference {:e})",
                        p.ray,
                        d.norm()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// ∂_{O(l)}(V) in the orbit coordinates of the ray.
pub fn face_map(v: &ParamChain, ray: &[i64]) -> Result<ParamChain, AnalyticError> {
    let n = v.n;
    let cur = orbit_monomial_basis(&[], n);
    let next = orbit_monomial_basis(&[ray.to_vec()], n);
    let out = face_map_in(v, ray, &cur, &next)?;
    Ok(out)
}

/// ∂_{O(l_q)}(... ∂_{O(l_1)}(V)) for the ordered rays of a cone; nested
/// product annotations give the later faces. An empty list returns V.
pub fn iterated_face_map(v: &ParamChain, rays: &[Vec<i64>], _cfg: &QuadratureCfg) -> Result<ParamChain, AnalyticError> {
    let n = v.n;
    let mut cur_chain = v.clone();
    let mut cur_basis = orbit_monomial_basis(&[], n);
    for k in 0..rays.len() {
        let next_basis = orbit_monomial_basis(&rays[..=k], n);
        cur_chain = face_map_in(&cur_chain, &rays[k], &cur_basis, &next_basis)?;
        cur_basis = next_basis;
        if cur_chain.is_empty() {
            break;
        }
    }
    Ok(cur_chain)
}

/// Does any chart declare a product structure near this ray?
pub fn has_product(v: &ParamChain, ray: &[i64]) -> bool {
    v.charts.iter().any(|c| c.products.iter().any(|p| p.ray == ray))
}
