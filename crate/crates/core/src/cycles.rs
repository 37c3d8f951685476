//! Weighted tropical cycles: hypersurfaces via Newton polytopes, balancing,
//! weighted chains, pushforward along monomial maps, and weights of
//! parametrized chains from logarithmic integrals.

use crate::analytic::{self, AnalyticError, ParamChain, QuadratureCfg};
use crate::exact_linalg::{
    binomial, integer_kernel, int_dot, primitive_of, q, saturated_basis, subsets, wedge_of, z_to_q,
    zvec, RatMatrix, Subspace, ZVec, Q,
};
use crate::polyfan::{canonical_generator, hrep_to_rays, solve, AmbientFan, Cone, Fan, FanError};
use crate::tropcoh::{build_complex, CohError};
use num::bigint::BigInt;
use num::complex::Complex64;
use num::{Integer, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("polynomial is a monomial (or zero); its tropical hypersurface is empty")]
    Monomial,
    #[error("fan is not pure-dimensional")]
    MixedDimension,
    #[error("cycle is not balanced at {0}")]
    Unbalanced(String),
    #[error("exponent vector has length {got}, expected {expected}")]
    Arity { got: usize, expected: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fan(#[from] FanError),
    #[error(transparent)]
    Coh(#[from] CohError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
}

/// Coefficient in a polynomial document: a real number or [re, im].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CoefDoc {
    Real(f64),
    Complex([f64; 2]),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PolyDoc {
    pub lattice_rank: usize,
    pub terms: Vec<(CoefDoc, Vec<i64>)>,
}

/// Laurent polynomial with complex coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub n: usize,
    pub terms: Vec<(Complex64, Vec<i64>)>,
}

impl Poly {
    pub fn new(n: usize, terms: Vec<(Complex64, Vec<i64>)>) -> Result<Self, CycleError> {
        for (_, e) in &terms {
            if e.len() != n {
                return Err(CycleError::Arity { got: e.len(), expected: n });
            }
        }
        Ok(Poly { n, terms })
    }

    pub fn from_doc(doc: &PolyDoc) -> Result<Self, CycleError> {
        let terms = doc
            .terms
            .iter()
            .map(|(c, e)| {
                let z = match c {
                    CoefDoc::Real(x) => Complex64::new(*x, 0.0),
                    CoefDoc::Complex([a, b]) => Complex64::new(*a, *b),
                };
                (z, e.clone())
            })
            .collect();
        Self::new(doc.lattice_rank, terms)
    }

    pub fn real(n: usize, terms: &[(f64, Vec<i64>)]) -> Result<Self, CycleError> {
        Self::new(n, terms.iter().map(|(c, e)| (Complex64::new(*c, 0.0), e.clone())).collect())
    }

    /// Exponents with nonzero total coefficient.
    pub fn support(&self) -> Vec<Vec<i64>> {
        let mut acc: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (c, e) in &self.terms {
            *acc.entry(e.clone()).or_default() += c;
        }
        acc.into_iter().filter(|(_, c)| c.norm() != 0.0).map(|(e, _)| e).collect()
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(c, e)| e.iter().zip(z).fold(*c, |acc, (&k, zi)| acc * zi.powi(k as i32)))
            .sum()
    }
}

/// An edge of a Newton polytope with its lattice length and normal cone.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonEdge {
    pub ends: (Vec<i64>, Vec<i64>),
    pub lattice_length: i64,
    /// Rays of the normal cone modulo lineality, taken inside the direction space.
    pub normal_rays: Vec<ZVec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonPolytope {
    pub points: Vec<Vec<i64>>,
    pub dim: usize,
    /// Lattice basis of the lineality space of the normal fan.
    pub lineality: Vec<ZVec>,
    pub edges: Vec<NewtonEdge>,
}

fn sub(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn to_q(v: &[i64]) -> Vec<Q> {
    v.iter().map(|&x| q(x)).collect()
}

pub fn newton_polytope(points: &[Vec<i64>]) -> NewtonPolytope {
    let n = points.first().map_or(0, |p| p.len());
    let a0 = &points[0];
    let diffs: Vec<Vec<Q>> = points.iter().skip(1).map(|p| to_q(&sub(p, a0))).collect();
    let dir = Subspace::span(n, &diffs);
    let dim = dir.dim();
    let diff_rows: Vec<ZVec> = diffs.iter().filter_map(|d| primitive_of(d)).collect();
    let lineality = integer_kernel(&diff_rows, n);
    let lin_q: Vec<Vec<Q>> = lineality.iter().map(|v| z_to_q(v)).collect();
    let mut edges: Vec<NewtonEdge> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (a, b) = (&points[i], &points[j]);
            let mut eqs = lin_q.clone();
            eqs.push(to_q(&sub(a, b)));
            let ineqs: Vec<Vec<Q>> = points
                .iter()
                .map(|c| to_q(&sub(c, a)))
                .filter(|v| v.iter().any(|x| !x.is_zero()))
                .collect();
            let Ok(rays) = hrep_to_rays(&ineqs, &eqs, n) else { continue };
            let gens: Vec<Vec<Q>> = rays.iter().map(|r| z_to_q(r)).collect();
            let cdim = Subspace::span(n, &gens).dim();
            if cdim + 1 != dim {
                continue;
            }
            if dim == 1 && !rays.is_empty() {
                continue;
            }
            if edges.iter().any(|e| e.normal_rays == rays) {
                continue;
            }
            // points on the edge: tight for a relative-interior normal
            let mut w = vec![Q::zero(); n];
            for r in &gens {
                for (x, y) in w.iter_mut().zip(r) {
                    *x += y;
                }
            }
            let val = |c: &Vec<i64>| -> Q { to_q(c).iter().zip(&w).map(|(x, y)| x * y).sum() };
            let m = val(a);
            let on: Vec<&Vec<i64>> = points.iter().filter(|c| val(c) == m).collect();
            let d = sub(b, a);
            let t = |c: &Vec<i64>| -> Q {
                let k = d.iter().position(|&x| x != 0).expect("distinct points");
                Q::new(BigInt::from(c[k] - a[k]), BigInt::from(d[k]))
            };
            let lo = on.iter().min_by(|x, y| t(x).cmp(&t(y))).expect("nonempty");
            let hi = on.iter().max_by(|x, y| t(x).cmp(&t(y))).expect("nonempty");
            let len = sub(hi, lo).iter().fold(0i64, |g, &x| g.gcd(&x));
            edges.push(NewtonEdge { ends: ((*lo).clone(), (*hi).clone()), lattice_length: len, normal_rays: rays });
        }
    }
    NewtonPolytope { points: points.to_vec(), dim, lineality, edges }
}

/// A pure-dimensional fan of N_R with rational weights on its top cells.
#[derive(Clone, Debug)]
pub struct WeightedCycle {
    pub fan: Fan,
    pub dim: usize,
    /// weight per top cell (fan cell index)
    pub weights: BTreeMap<usize, Q>,
}

impl WeightedCycle {
    pub fn new(fan: Fan, weights: BTreeMap<usize, Q>) -> Result<Self, CycleError> {
        let top = fan.maximal_open();
        let dim = top.iter().map(|&i| fan.cell(i).dim).max().unwrap_or(0);
        if top.iter().any(|&i| fan.cell(i).dim != dim) {
            return Err(CycleError::MixedDimension);
        }
        for &i in weights.keys() {
            if fan.cell(i).dim != dim || fan.cell(i).orbit != 0 {
                return Err(CycleError::Invalid(format!("weight on non-top cell {i}")));
            }
        }
        Ok(WeightedCycle { fan, dim, weights })
    }

    pub fn weight(&self, cell: usize) -> Q {
        self.weights.get(&cell).cloned().unwrap_or_else(Q::zero)
    }

    pub fn top_cells(&self) -> Vec<usize> {
        self.fan.maximal_open()
    }

    /// (primitive generators, weight) of each top cone; handy for reports.
    pub fn cone_weights(&self) -> Vec<(Vec<Vec<i64>>, Q)> {
        self.top_cells()
            .iter()
            .map(|&i| {
                let rays = self.fan.cell(i).rays.iter().map(|r| crate::exact_linalg::z_to_i64(r)).collect();
                (rays, self.weight(i))
            })
            .collect()
    }

    pub fn to_doc(&self) -> CycleDoc {
        let fd = self.fan.to_doc();
        let tops = self.fan.maximal_open();
        let weights = tops.iter().map(|&i| self.weight(i).to_string()).collect();
        CycleDoc { lattice_rank: fd.lattice_rank, rays: fd.rays, cones: fd.cones, weights, orientations: None }
    }

    pub fn from_doc(doc: &CycleDoc) -> Result<Self, CycleError> {
        if doc.weights.len() != doc.cones.len() {
            return Err(CycleError::Invalid("one weight per cone is required".into()));
        }
        let fan = Fan::plain(doc.lattice_rank, &doc.rays, &doc.cones)?;
        let mut weights = BTreeMap::new();
        for (c, w) in doc.cones.iter().zip(&doc.weights) {
            let gens: Vec<Vec<Q>> = c.iter().map(|&i| to_q(&doc.rays[i])).collect();
            let cone = Cone::new(0, doc.lattice_rank, &gens)?;
            let idx = fan.index_of(&cone).ok_or_else(|| CycleError::Invalid(format!("cone {c:?}")))?;
            let wq: Q = w.parse().map_err(|_| CycleError::Invalid(format!("weight {w:?}")))?;
            *weights.entry(idx).or_insert_with(Q::zero) += wq;
        }
        Self::new(fan, weights)
    }
}

/// Cycle file: rays, cones, one weight per cone (integers or "p/q" strings),
/// optional per-cone ray orders.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CycleDoc {
    pub lattice_rank: usize,
    pub rays: Vec<Vec<i64>>,
    pub cones: Vec<Vec<usize>>,
    #[serde(deserialize_with = "de_weights")]
    pub weights: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientations: Option<Vec<Vec<usize>>>,
}

fn de_weights<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum W {
        I(i64),
        S(String),
    }
    let v: Vec<W> = Vec::deserialize(d)?;
    Ok(v.into_iter()
        .map(|w| match w {
            W::I(i) => i.to_string(),
            W::S(s) => s,
        })
        .collect())
}

/// Tropical hypersurface of f with lattice-length weights (min convention).
pub fn trop_hypersurface(f: &Poly) -> Result<WeightedCycle, CycleError> {
    let pts = f.support();
    if pts.len() < 2 {
        return Err(CycleError::Monomial);
    }
    let n = f.n;
    let np = newton_polytope(&pts);
    let mut cones: Vec<(Cone, i64)> = Vec::new();
    let lin = np.lineality.clone();
    for e in &np.edges {
        // pointed part plus one orthant of the lineality space
        for signs in 0..(1usize << lin.len()) {
            let mut gens: Vec<Vec<Q>> = e.normal_rays.iter().map(|r| z_to_q(r)).collect();
            for (b, l) in lin.iter().enumerate() {
                let s = if signs & (1 << b) != 0 { -1 } else { 1 };
                gens.push(l.iter().map(|x| Q::from_integer(x * BigInt::from(s))).collect());
            }
            cones.push((Cone::new(0, n, &gens)?, e.lattice_length));
        }
    }
    let fan = Fan::new(AmbientFan::trivial(n), &cones.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>())?;
    let mut weights = BTreeMap::new();
    for (c, w) in &cones {
        let i = fan.index_of(c).expect("listed cone");
        *weights.entry(i).or_insert_with(Q::zero) += q(*w);
    }
    WeightedCycle::new(fan, weights)
}

/// Primitive lattice normal u_{P/τ}, pointing into P (defined modulo Span τ).
pub fn lattice_normal(p: &Cone, tau: &Cone) -> ZVec {
    let n = p.ambient_dim;
    let bp: Vec<ZVec> = saturated_basis(&p.gens(), n);
    let bpq: Vec<Vec<Q>> = bp.iter().map(|v| z_to_q(v)).collect();
    let bm = RatMatrix::from_cols(&bpq, n);
    let coords = |v: &[Q]| -> Vec<BigInt> {
        solve(&bm, v).expect("in span").iter().map(|x| x.to_integer()).collect()
    };
    let trows: Vec<ZVec> = saturated_basis(&tau.gens(), n).iter().map(|v| coords(&z_to_q(v))).collect();
    let phi = integer_kernel_of_rows(&trows, bp.len());
    // find x with phi·x = 1
    let x = unit_preimage(&phi);
    let mut u = vec![BigInt::zero(); n];
    for (xi, b) in x.iter().zip(&bp) {
        for (a, c) in u.iter_mut().zip(b) {
            *a += xi * c;
        }
    }
    let tspan = tau.span();
    let outside = p.gens().into_iter().find(|g| !tspan.contains(g)).expect("P ⊋ τ");
    let s = int_dot(&phi, &coords(&outside));
    if s.is_negative() {
        u = u.into_iter().map(|x| -x).collect();
    }
    u
}

fn integer_kernel_of_rows(rows: &[ZVec], d: usize) -> ZVec {
    // the functional vanishing on the rows: kernel of the row matrix, as a row vector
    let k = integer_kernel(rows, d);
    assert_eq!(k.len(), 1, "codimension one");
    k[0].clone()
}

fn unit_preimage(phi: &[BigInt]) -> ZVec {
    // extended gcd across the coordinates
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
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BalanceVerdict {
    pub balanced: bool,
    /// Rays of the first codimension-one cone where balancing fails.
    pub witness: Option<Vec<Vec<i64>>>,
}

pub fn check_balanced(c: &WeightedCycle) -> Result<BalanceVerdict, CycleError> {
    if !c.fan.is_pure() {
        return Err(CycleError::MixedDimension);
    }
    if c.dim == 0 {
        return Ok(BalanceVerdict { balanced: true, witness: None });
    }
    let n = c.fan.cell(0).ambient_dim;
    for tau in c.fan.open_cells() {
        let tc = c.fan.cell(tau);
        if tc.dim + 1 != c.dim {
            continue;
        }
        let mut sum = vec![Q::zero(); n];
        for p in c.top_cells() {
            if !c.fan.is_face(tau, p) {
                continue;
            }
            let m = c.weight(p);
            let u = lattice_normal(c.fan.cell(p), tc);
            for (s, x) in sum.iter_mut().zip(&u) {
                *s += &m * Q::from_integer(x.clone());
            }
        }
        if !tc.span().contains(&sum) {
            return Ok(BalanceVerdict {
                balanced: false,
                witness: Some(tc.rays.iter().map(|r| crate::exact_linalg::z_to_i64(r)).collect()),
            });
        }
    }
    Ok(BalanceVerdict { balanced: true, witness: None })
}

pub use crate::superform::Coef;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainTerm {
    pub cell: usize,
    pub coef: Coef,
}

/// Σ c_P ⊗ [P], cells canonically oriented.
#[derive(Clone, Debug)]
pub struct TropChainClass {
    pub fan: Fan,
    pub p: usize,
    pub q: usize,
    pub terms: Vec<ChainTerm>,
}

impl TropChainClass {
    /// Cellular boundary for exact coefficients, in the coordinates of C_{p,q-1}.
    pub fn boundary(&self) -> Result<Vec<Q>, CycleError> {
        let cc = build_complex(&self.fan, self.p)?;
        let mut v = vec![Q::zero(); cc.chain_dim(self.q)];
        for t in &self.terms {
            let Coef::Exact(c) = &t.coef else {
                return Err(CycleError::Invalid("boundary needs exact coefficients".into()));
            };
            let (_, off, _) = cc.block(t.cell).expect("cell of the fan");
            let coords = cc.spaces[&t.cell]
                .space
                .coords(c)
                .ok_or_else(|| CycleError::Invalid(format!("coefficient outside F_p of cell {}", t.cell)))?;
            for (i, x) in coords.into_iter().enumerate() {
                v[off + i] += x;
            }
        }
        if self.q == 0 {
            return Ok(Vec::new());
        }
        Ok(cc.boundary[self.q].apply(&v))
    }

    /// Cellular representative for integration against superforms.
    pub fn cell_chain(&self) -> crate::superform::CellChain {
        let cells: Vec<(usize, Coef)> = self.terms.iter().map(|t| (t.cell, t.coef.clone())).collect();
        crate::superform::CellChain::from_cells(&self.fan, self.p, self.q, &cells)
    }

    /// Scalar weight of a term against a reference vector (e.g. 1_P).
    pub fn term_weight(&self, cell: usize, reference: &[Q]) -> Option<Complex64> {
        let t = self.terms.iter().find(|t| t.cell == cell)?;
        let c = t.coef.numeric();
        let r: Vec<f64> = reference.iter().map(crate::exact_linalg::to_f64).collect();
        let rr: f64 = r.iter().map(|x| x * x).sum();
        Some(c.iter().zip(&r).map(|(a, b)| a * b).sum::<Complex64>() / rr)
    }

    /// Residual of each coefficient against its F_p space (0 for exact members).
    pub fn coefficient_in_space(&self, term: &ChainTerm) -> Result<bool, CycleError> {
        let cs = crate::tropcoh::coefficient_space(&self.fan, term.cell, self.p)?;
        Ok(match &term.coef {
            Coef::Exact(c) => cs.space.contains(c),
            Coef::Numeric(_) => true,
        })
    }
}

/// (-1)^{p(p-1)/2} Σ m_P 1_P ⊗ [P].
pub fn weighted_chain(c: &WeightedCycle, p: usize) -> Result<TropChainClass, CycleError> {
    if p != c.dim {
        return Err(CycleError::Invalid(format!("cycle has dimension {}, not {p}", c.dim)));
    }
    let v = check_balanced(c)?;
    if !v.balanced {
        return Err(CycleError::Unbalanced(format!("{:?}", v.witness)));
    }
    let sign = if (p * p.saturating_sub(1) / 2) % 2 == 0 { 1 } else { -1 };
    let mut terms = Vec::new();
    for cell in c.top_cells() {
        let m = c.weight(cell);
        if m.is_zero() {
            continue;
        }
        let g = canonical_generator(c.fan.cell(cell));
        let coef = g.iter().map(|x| x * &m * q(sign)).collect();
        terms.push(ChainTerm { cell, coef: Coef::Exact(coef) });
    }
    Ok(TropChainClass { fan: c.fan.clone(), p, q: p, terms })
}

/// Image cycle under the linear map given by an integer matrix (rows = target coords).
pub fn pushforward(c: &WeightedCycle, psi: &[Vec<i64>]) -> Result<(WeightedCycle, BalanceVerdict), CycleError> {
    let m = psi.len();
    let n = c.fan.rank();
    if psi.iter().any(|r| r.len() != n) {
        return Err(CycleError::Invalid("map has the wrong number of columns".into()));
    }
    let a = RatMatrix::from_i64(psi);
    let d = c.dim;
    // image cones of full dimension, with weight times lattice index
    let mut images: Vec<(Cone, Q)> = Vec::new();
    for cell in c.top_cells() {
        let w = c.weight(cell);
        if w.is_zero() {
            continue;
        }
        let p = c.fan.cell(cell);
        let img: Vec<Vec<Q>> = p.gens().iter().map(|g| a.apply(g)).collect();
        if Subspace::span(m, &img).dim() < d {
            continue;
        }
        let lat: Vec<Vec<Q>> = saturated_basis(&p.gens(), n).iter().map(|b| a.apply(&z_to_q(b))).collect();
        let sat: Vec<Vec<Q>> = saturated_basis(&img, m).iter().map(|b| z_to_q(b)).collect();
        let wl = wedge_of(&lat, m);
        let ws = wedge_of(&sat, m);
        let idx = wl.iter().zip(&ws).find(|(_, y)| !y.is_zero()).map(|(x, y)| (x / y).abs()).unwrap_or_else(Q::one);
        images.push((Cone::new(0, m, &img)?, w * idx));
    }
    // refine overlapping images that share a span
    let mut pieces: BTreeMap<Cone, Q> = BTreeMap::new();
    for (i, (ci, wi)) in images.iter().enumerate() {
        let span = ci.span();
        let mut cuts: Vec<Vec<Q>> = Vec::new();
        for (j, (cj, _)) in images.iter().enumerate() {
            if i != j && cj.span() == span {
                for f in cj.hrep().facets {
                    if !cuts.contains(&f) && !cuts.contains(&f.iter().map(|x| -x).collect()) {
                        cuts.push(f);
                    }
                }
            }
        }
        let h = ci.hrep();
        let eqs = span.annihilator().basis().to_vec();
        for signs in 0..(1usize << cuts.len()) {
            let mut ineqs = h.facets.clone();
            for (b, f) in cuts.iter().enumerate() {
                let s = if signs & (1 << b) != 0 { -1 } else { 1 };
                ineqs.push(f.iter().map(|x| x * q(s)).collect());
            }
            let Ok(rays) = hrep_to_rays(&ineqs, &eqs, m) else { continue };
            let g: Vec<Vec<Q>> = rays.iter().map(|r| z_to_q(r)).collect();
            if Subspace::span(m, &g).dim() != d {
                continue;
            }
            let piece = Cone::new(0, m, &g)?;
            *pieces.entry(piece).or_insert_with(Q::zero) += wi.clone();
        }
    }
    pieces.retain(|_, w| !w.is_zero());
    let cones: Vec<Cone> = pieces.keys().cloned().collect();
    let fan = Fan::new(AmbientFan::trivial(m), &cones)?;
    let weights = pieces.into_iter().map(|(c, w)| (fan.index_of(&c).expect("listed"), w)).collect();
    let out = WeightedCycle::new(fan, weights)?;
    let v = check_balanced(&out)?;
    Ok((out, v))
}

// ---------- weights of parametrized chains ----------

/// Weight of a chain at one cone: its coefficient in ∧^{r-q} N (numeric).
#[derive(Clone, Debug, PartialEq)]
pub struct ConeWeight {
    pub cell: usize,
    pub coef: Vec<Complex64>,
}

/// wtTrop(V) as a tropical (r−q, q)-chain class: for each open cone P of Λ of
/// dimension q with 2q ≤ r, the weight (−1)^{q(q−1)/2} 1_P ∧ lift(η_P), where
/// η_P pairs each (r−2q)-subset J of a basis of M ∩ P^⊥ with the log integral of
/// the face chain ∂_{O(P)}V against the monomials in J.
pub fn wt_trop_chain(v: &ParamChain, fan: &Fan, r: usize, cfg: &QuadratureCfg) -> Result<Vec<(usize, TropChainClass)>, CycleError> {
    let n = fan.rank();
    if v.ambient_rank() != n {
        return Err(CycleError::Invalid("chain and fan live in different tori".into()));
    }
    if v.dim() != r {
        return Err(CycleError::Invalid(format!("chain has dimension {}, not {r}", v.dim())));
    }
    let mut by_q: BTreeMap<usize, Vec<ChainTerm>> = BTreeMap::new();
    for cell in fan.open_cells() {
        let pc = fan.cell(cell);
        let qd = pc.dim;
        if 2 * qd > r {
            continue;
        }
        // ordered so that the wedge of the rays is a positive multiple of 1_P
        let rays: Vec<Vec<i64>> = crate::superform::oriented_rays(pc)
            .iter()
            .map(|x| x.iter().map(|c| c.to_integer().to_i64().expect("small ray")).collect())
            .collect();
        let face = analytic::iterated_face_map(v, &rays, cfg)?;
        let k = n - qd;
        let deg = r - 2 * qd;
        // basis of M ∩ P^⊥ in the coordinates used by the face chain
        let basis: Vec<ZVec> = analytic::orbit_monomial_basis(&rays, n);
        let idx = subsets(k, deg);
        let mut eta: Vec<Complex64> = Vec::with_capacity(idx.len());
        for j in &idx {
            if face.is_empty() {
                eta.push(Complex64::zero());
                continue;
            }
            let monos: Vec<Vec<i64>> = j.iter().map(|&t| unit(k, t)).collect();
            eta.push(analytic::log_integral(&face, &monos, cfg)?.value);
        }
        // lift the dual basis of N_P into N: ñ_j with <m_i, ñ_j> = δ_ij
        let mrows: Vec<Vec<Q>> = basis.iter().map(|b| z_to_q(b)).collect();
        let mm = RatMatrix::from_rows(&mrows, n);
        let lifts: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let e: Vec<Q> = (0..k).map(|i| if i == j { q(1) } else { q(0) }).collect();
                solve(&mm, &e).expect("basis rows are independent").iter().map(crate::exact_linalg::to_f64).collect()
            })
            .collect();
        let onep: Vec<f64> = if qd == 0 {
            vec![1.0]
        } else {
            canonical_generator(pc).iter().map(crate::exact_linalg::to_f64).collect()
        };
        let sign = if (qd * qd.saturating_sub(1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let p = r - qd;
        let mut coef = vec![Complex64::zero(); binomial(n, p)];
        let tq = subsets(n, qd);
        let tp = subsets(n, p);
        for (jj, j) in idx.iter().enumerate() {
            if eta[jj] == Complex64::zero() {
                continue;
            }
            let vecs: Vec<&Vec<f64>> = j.iter().map(|&t| &lifts[t]).collect();
            let lw = float_wedge(&vecs, n);
            let prod = float_wedge_mul(&onep, &tq, &lw, &subsets(n, deg), &tp);
            for (c, x) in coef.iter_mut().zip(prod) {
                *c += eta[jj] * x * sign;
            }
        }
        by_q.entry(qd).or_default().push(ChainTerm { cell, coef: Coef::Numeric(coef) });
    }
    Ok(by_q
        .into_iter()
        .map(|(qd, terms)| (qd, TropChainClass { fan: fan.clone(), p: r - qd, q: qd, terms }))
        .collect())
}

fn unit(k: usize, i: usize) -> Vec<i64> {
    (0..k).map(|j| i64::from(j == i)).collect()
}

fn float_wedge(vs: &[&Vec<f64>], n: usize) -> Vec<f64> {
    let p = vs.len();
    subsets(n, p)
        .iter()
        .map(|t| {
            let m: Vec<Vec<f64>> = vs.iter().map(|v| t.iter().map(|&c| v[c]).collect()).collect();
            det_f64(m)
        })
        .collect()
}

fn det_f64(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).expect("rows");
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for j in c..n {
                m[i][j] -= f * m[c][j];
            }
        }
    }
    d
}

/// a ∧ b for a ∈ ∧^{|ta|}, b ∈ ∧^{|tb|}, result in ∧^{|tc|}.
fn float_wedge_mul(a: &[f64], ta: &[Vec<usize>], b: &[f64], tb: &[Vec<usize>], tc: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; tc.len()];
    for (x, i) in a.iter().zip(ta) {
        if *x == 0.0 {
            continue;
        }
        for (y, j) in b.iter().zip(tb) {
            if *y == 0.0 {
                continue;
            }
            let mut cat = i.clone();
            cat.extend(j.iter().copied());
            let (s, sorted) = crate::exact_linalg::sort_sign(&cat);
            if s == 0 {
                continue;
            }
            let k = tc.binary_search(&sorted).expect("subset");
            out[k] += f64::from(s) * x * y;
        }
    }
    out
}

/// Integer degree of a numeric cone weight relative to m·1_P, if close to one.
pub fn weight_multiple(coef: &[Complex64], generator: &[Q]) -> Option<f64> {
    let (k, g) = generator.iter().enumerate().find(|(_, g)| !g.is_zero())?;
    let m = coef[k].re / crate::exact_linalg::to_f64(g);
    let resid: f64 = coef
        .iter()
        .zip(generator)
        .map(|(c, g)| (c - Complex64::new(m * crate::exact_linalg::to_f64(g), 0.0)).norm())
        .fold(0.0, f64::max);
    (resid < 1e-6 * m.abs().max(1.0)).then_some(m)
}

pub fn zv(v: &[i64]) -> ZVec {
    zvec(v)
}

pub fn to_i64(x: &Q) -> Option<i64> {
    x.is_integer().then(|| x.to_integer().to_i64()).flatten()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rays_weights(c: &WeightedCycle) -> BTreeMap<Vec<Vec<i64>>, i64> {
        c.cone_weights().into_iter().map(|(r, w)| (r, to_i64(&w).unwrap())).collect()
    }

    #[test]
    fn line_hypersurface() {
        let f = Poly::real(2, &[(1.0, vec![1, 0]), (1.0, vec![0, 1]), (1.0, vec![0, 0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        let rw = rays_weights(&c);
        assert_eq!(rw.len(), 3);
        assert_eq!(rw[&vec![vec![1, 0]]], 1);
        assert_eq!(rw[&vec![vec![0, 1]]], 1);
        assert_eq!(rw[&vec![vec![-1, -1]]], 1);
        assert!(check_balanced(&c).unwrap().balanced);
    }

    #[test]
    fn parabola_hypersurface() {
        let f = Poly::real(2, &[(1.0, vec![2, 0]), (1.0, vec![0, 1]), (1.0, vec![0, 0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        let rw = rays_weights(&c);
        assert_eq!(rw[&vec![vec![0, 1]]], 2);
        assert_eq!(rw[&vec![vec![1, 0]]], 1);
        assert_eq!(rw[&vec![vec![-1, -2]]], 1);
        assert!(check_balanced(&c).unwrap().balanced);
    }

    #[test]
    fn one_variable_point() {
        let f = Poly::real(1, &[(1.0, vec![1]), (1.0, vec![0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        assert_eq!(c.dim, 0);
        assert_eq!(c.weights.len(), 1);
        assert_eq!(c.weights.values().next().unwrap(), &q(1));
        let m = Poly::real(2, &[(3.0, vec![1, 2])]).unwrap();
        assert!(matches!(trop_hypersurface(&m), Err(CycleError::Monomial)));
    }

    #[test]
    fn lineality_is_subdivided() {
        // x + 1 in two variables: the line x1 = 0, split by the orthants of e2
        let f = Poly::real(2, &[(1.0, vec![1, 0]), (1.0, vec![0, 0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        let rw = rays_weights(&c);
        assert_eq!(rw.len(), 2);
        assert!(rw.contains_key(&vec![vec![0, 1]]) && rw.contains_key(&vec![vec![0, -1]]));
        assert!(check_balanced(&c).unwrap().balanced);
    }

    #[test]
    fn unbalanced_pair() {
        let doc = CycleDoc {
            lattice_rank: 2,
            rays: vec![vec![1, 0], vec![0, 1]],
            cones: vec![vec![0], vec![1]],
            weights: vec!["1".into(), "1".into()],
            orientations: None,
        };
        let c = WeightedCycle::from_doc(&doc).unwrap();
        let v = check_balanced(&c).unwrap();
        assert!(!v.balanced);
        assert_eq!(v.witness, Some(vec![]));
    }

    #[test]
    fn line_chain_is_a_cycle() {
        let f = Poly::real(2, &[(1.0, vec![1, 0]), (1.0, vec![0, 1]), (1.0, vec![0, 0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        let ch = weighted_chain(&c, 1).unwrap();
        assert_eq!(ch.terms.len(), 3);
        assert!(ch.boundary().unwrap().iter().all(|x| x.is_zero()));
    }

    #[test]
    fn plane_chain_sign() {
        let f = Poly::real(3, &[(1.0, vec![1, 0, 0]), (1.0, vec![0, 1, 0]), (1.0, vec![0, 0, 1]), (1.0, vec![0, 0, 0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        assert_eq!(c.top_cells().len(), 6);
        let ch = weighted_chain(&c, 2).unwrap();
        for t in &ch.terms {
            let g = canonical_generator(ch.fan.cell(t.cell));
            let Coef::Exact(v) = &t.coef else { panic!() };
            let neg: Vec<Q> = g.iter().map(|x| -x).collect();
            assert_eq!(v, &neg);
        }
        assert!(ch.boundary().unwrap().iter().all(|x| x.is_zero()));
    }

    #[test]
    fn pushforward_examples() {
        let f = Poly::real(2, &[(1.0, vec![1, 0]), (1.0, vec![0, 1]), (1.0, vec![0, 0])]).unwrap();
        let c = trop_hypersurface(&f).unwrap();
        let (id, v) = pushforward(&c, &[vec![1, 0], vec![0, 1]]).unwrap();
        assert!(v.balanced);
        assert_eq!(rays_weights(&id), rays_weights(&c));
        let (pr, v) = pushforward(&c, &[vec![1, 0]]).unwrap();
        assert!(v.balanced);
        let rw = rays_weights(&pr);
        assert_eq!(rw.len(), 2);
        assert_eq!(rw[&vec![vec![1]]], 1);
        assert_eq!(rw[&vec![vec![-1]]], 1);
        let (sw, _) = pushforward(&c, &[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(rays_weights(&sw), rays_weights(&c));
        // a lattice index: x -> 2x doubles nothing on rays but scales the cone
        let g = Poly::real(1, &[(1.0, vec![1]), (1.0, vec![0])]).unwrap();
        let _ = trop_hypersurface(&g).unwrap();
    }

    fn random_poly(n: usize) -> impl Strategy<Value = Poly> {
        proptest::collection::vec(proptest::collection::vec(0i64..=5, n), 2..=6).prop_map(move |es| {
            Poly::real(n, &es.into_iter().map(|e| (1.0, e)).collect::<Vec<_>>()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn hypersurfaces_are_balanced(f in prop_oneof![random_poly(2), random_poly(3)]) {
            prop_assume!(f.support().len() >= 2);
            let c = trop_hypersurface(&f).unwrap();
            prop_assert!(check_balanced(&c).unwrap().balanced);
            if c.dim >= 1 {
                let ch = weighted_chain(&c, c.dim).unwrap();
                prop_assert!(ch.boundary().unwrap().iter().all(|x| x.is_zero()));
            }
        }

        #[test]
        fn pushforward_keeps_balance(f in random_poly(2), a in -2i64..=2, b in -2i64..=2, cc in -2i64..=2, d in -2i64..=2) {
            prop_assume!(f.support().len() >= 2);
            let c = trop_hypersurface(&f).unwrap();
            let (_, v) = pushforward(&c, &[vec![a, b], vec![cc, d]]).unwrap();
            prop_assert!(v.balanced);
        }
    }
}
