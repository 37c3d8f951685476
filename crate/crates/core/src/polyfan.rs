//! Rational cones and fans in the partial compactification ⊔_σ N_σ of N_R.
//!
//! A cone is stored as the orbit σ it lives in plus its primitive extremal rays,
//! written in coordinates of N_σ = Hom(M ∩ σ^⊥, R) with respect to a fixed
//! (Hermite-reduced) basis of M ∩ σ^⊥.

use crate::exact_linalg::{
    integer_kernel, kernel_basis, primitive_of, q, saturated_basis, sign_of, subsets, wedge_of,
    z_to_q, zvec, LinalgError, RatMatrix, Subspace, ZVec, Q,
};
use num::bigint::BigInt;
use num::{Integer, One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FanError {
    #[error("zero vector has no primitive form")]
    ZeroVector,
    #[error("cone is not strongly convex: {0}")]
    NotPointed(String),
    #[error("rays are linearly dependent")]
    Degenerate,
    #[error("fans have different supports: {0}")]
    SupportMismatch(String),
    #[error("{tau} is not a face of {sigma}")]
    NotAFace { sigma: String, tau: String },
    #[error("cone intersection is not a common face: {0}")]
    BadIntersection(String),
    #[error("invalid fan description: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// v / gcd, sign preserved.
pub fn primitive(v: &[i64]) -> Result<Vec<i64>, FanError> {
    let g = v.iter().fold(0i64, |acc, &x| acc.gcd(&x));
    if g == 0 {
        return Err(FanError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / g).collect())
}

// ---------- polyhedral helpers in Q^k ----------

/// H-description of the cone generated by `gens`: its linear span and
/// inward facet normals (chosen inside the span, primitive).
#[derive(Clone, Debug)]
pub struct HRep {
    pub span: Subspace,
    pub facets: Vec<Vec<Q>>,
}

fn dot(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_z(a: &[Q], b: &[BigInt]) -> Q {
    a.iter().zip(b).filter(|(_, y)| !y.is_zero()).map(|(x, y)| x * Q::from_integer(y.clone())).sum()
}

pub fn hrep(gens: &[Vec<Q>], k: usize) -> HRep {
    let span = Subspace::span(k, gens);
    let d = span.dim();
    let mut facets: Vec<Vec<Q>> = Vec::new();
    if d == 0 {
        return HRep { span, facets };
    }
    let ann = span.annihilator();
    if d == 1 {
        // the single direction; normal is the basis vector oriented toward the gens
        let b = span.basis()[0].clone();
        let s = gens.iter().map(|g| sign_of(&dot(&b, g))).find(|&s| s != 0).unwrap_or(1);
        let nb: Vec<Q> = b.iter().map(|x| x * q(s as i64)).collect();
        // a ray has one facet (the origin) only if it is pointed
        if gens.iter().all(|g| dot(&nb, g) >= Q::zero()) {
            facets.push(normalize(&nb));
        }
        return HRep { span, facets };
    }
    let mut seen = BTreeSet::new();
    for sub in subsets(gens.len(), d - 1) {
        let vs: Vec<Vec<Q>> = sub.iter().map(|&i| gens[i].clone()).collect();
        if Subspace::span(k, &vs).dim() != d - 1 {
            continue;
        }
        let mut rows = vs.clone();
        rows.extend(ann.basis().iter().cloned());
        let ker = kernel_basis(&RatMatrix::from_rows(&rows, k));
        if ker.dim() != 1 {
            continue;
        }
        let a = ker.basis()[0].clone();
        let signs: Vec<i32> = gens.iter().map(|g| sign_of(&dot(&a, g))).collect();
        let pos = signs.iter().any(|&s| s > 0);
        let neg = signs.iter().any(|&s| s < 0);
        if pos && neg {
            continue;
        }
        let a = if neg { a.iter().map(|x| -x).collect() } else { a };
        let a = normalize(&a);
        if seen.insert(a.clone()) {
            facets.push(a);
        }
    }
    HRep { span, facets }
}

fn normalize(a: &[Q]) -> Vec<Q> {
    match primitive_of(a) {
        Some(p) => z_to_q(&p),
        None => a.to_vec(),
    }
}

/// Extremal rays of the pointed cone { x : eqs·x = 0, ineqs·x >= 0 }.
pub fn hrep_to_rays(ineqs: &[Vec<Q>], eqs: &[Vec<Q>], k: usize) -> Result<Vec<ZVec>, FanError> {
    let eq_space = Subspace::span(k, eqs);
    let lin = {
        let mut rows = eqs.to_vec();
        rows.extend(ineqs.iter().cloned());
        kernel_basis(&RatMatrix::from_rows(&rows, k))
    };
    if lin.dim() > 0 {
        return Err(FanError::NotPointed("intersection has a lineality space".into()));
    }
    let free = k - eq_space.dim();
    if free == 0 {
        return Ok(Vec::new());
    }
    let mut rays: BTreeSet<ZVec> = BTreeSet::new();
    for sub in subsets(ineqs.len(), free - 1) {
        let mut rows: Vec<Vec<Q>> = eq_space.basis().to_vec();
        rows.extend(sub.iter().map(|&i| ineqs[i].clone()));
        let ker = kernel_basis(&RatMatrix::from_rows(&rows, k));
        if ker.dim() != 1 {
            continue;
        }
        let v = ker.basis()[0].clone();
        for s in [1i64, -1] {
            let w: Vec<Q> = v.iter().map(|x| x * q(s)).collect();
            if ineqs.iter().all(|a| dot(a, &w) >= Q::zero()) {
                rays.insert(primitive_of(&w).expect("nonzero"));
            }
        }
    }
    Ok(rays.into_iter().collect())
}

/// Extremal rays of the cone generated by `gens` (primitive, sorted).
pub fn extremal_rays(gens: &[Vec<Q>], k: usize) -> Result<Vec<ZVec>, FanError> {
    let gens: Vec<Vec<Q>> = gens.iter().filter(|g| g.iter().any(|x| !x.is_zero())).cloned().collect();
    if gens.is_empty() {
        return Ok(Vec::new());
    }
    let h = hrep(&gens, k);
    let d = h.span.dim();
    // pointedness: no nonzero x in the cone with -x in the cone
    let eqs = h.span.annihilator().basis().to_vec();
    let rays = hrep_to_rays(&h.facets, &eqs, k)
        .map_err(|_| FanError::NotPointed(format!("{} generators", gens.len())))?;
    if rays.is_empty() || (d == 1 && h.facets.is_empty()) {
        return Err(FanError::NotPointed(format!("{} generators", gens.len())));
    }
    Ok(rays)
}

// ---------- ambient toric fan ----------

/// The fan Σ of the ambient toric variety, closed under faces.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientFan {
    n: usize,
    rays: Vec<ZVec>,
    cones: Vec<Vec<usize>>,
    orbit_basis: Vec<Vec<ZVec>>,
}

/// Row-style Hermite normal form of a lattice basis (rows), positive pivots.
fn hermite_rows(mut b: Vec<ZVec>, n: usize) -> Vec<ZVec> {
    let mut r = 0;
    for c in 0..n {
        if r == b.len() {
            break;
        }
        loop {
            let nz: Vec<usize> = (r..b.len()).filter(|&i| !b[i][c].is_zero()).collect();
            if nz.is_empty() {
                break;
            }
            let p = *nz.iter().min_by_key(|&&i| b[i][c].abs()).expect("nonempty");
            b.swap(r, p);
            let mut done = true;
            for i in r + 1..b.len() {
                if b[i][c].is_zero() {
                    continue;
                }
                let f = b[i][c].div_floor(&b[r][c]);
                let br = b[r].clone();
                for (x, y) in b[i].iter_mut().zip(&br) {
                    *x -= &f * y;
                }
                if !b[i][c].is_zero() {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if (r..b.len()).all(|i| b[i][c].is_zero()) {
            continue;
        }
        if b[r][c].is_negative() {
            for x in b[r].iter_mut() {
                *x = -x.clone();
            }
        }
        for i in 0..r {
            let f = b[i][c].div_floor(&b[r][c]);
            if !f.is_zero() {
                let br = b[r].clone();
                for (x, y) in b[i].iter_mut().zip(&br) {
                    *x -= &f * y;
                }
            }
        }
        r += 1;
    }
    b
}

impl AmbientFan {
    /// Σ = {0}: no compactification.
    pub fn trivial(n: usize) -> Self {
        let basis = hermite_rows(integer_kernel(&[], n), n);
        AmbientFan { n, rays: Vec::new(), cones: vec![Vec::new()], orbit_basis: vec![basis] }
    }

    pub fn new(n: usize, rays: &[Vec<i64>], cones: &[Vec<usize>]) -> Result<Self, FanError> {
        let rays: Vec<ZVec> = rays
            .iter()
            .map(|r| primitive(r).map(|p| zvec(&p)))
            .collect::<Result<_, _>>()?;
        for r in &rays {
            if r.len() != n {
                return Err(FanError::Invalid(format!("ray of length {} in rank {n}", r.len())));
            }
        }
        let mut all: BTreeSet<Vec<usize>> = BTreeSet::new();
        all.insert(Vec::new());
        for c in cones {
            if c.iter().any(|&i| i >= rays.len()) {
                return Err(FanError::Invalid(format!("cone {c:?} references a missing ray")));
            }
            let gens: Vec<Vec<Q>> = c.iter().map(|&i| z_to_q(&rays[i])).collect();
            let ext = extremal_rays(&gens, n)?;
            let h = hrep(&gens, n);
            let mut idx: Vec<usize> = c.clone();
            idx.sort();
            idx.dedup();
            if ext.len() != idx.len() {
                return Err(FanError::Invalid(format!("cone {c:?} has non-extremal generators")));
            }
            // faces as subsets of rays tight on facet subsets
            for fs in 0..(1usize << h.facets.len()) {
                let face: Vec<usize> = idx
                    .iter()
                    .copied()
                    .filter(|&i| {
                        (0..h.facets.len())
                            .filter(|b| fs & (1 << b) != 0)
                            .all(|b| dot_z(&h.facets[b], &rays[i]).is_zero())
                    })
                    .collect();
                all.insert(face);
            }
        }
        let mut cones: Vec<Vec<usize>> = all.into_iter().collect();
        cones.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
        let orbit_basis = cones
            .iter()
            .map(|c| {
                let rows: Vec<ZVec> = c.iter().map(|&i| rays[i].clone()).collect();
                hermite_rows(integer_kernel(&rows, n), n)
            })
            .collect();
        let amb = AmbientFan { n, rays, cones, orbit_basis };
        amb.validate()?;
        Ok(amb)
    }

    fn validate(&self) -> Result<(), FanError> {
        for i in 0..self.cones.len() {
            for j in i + 1..self.cones.len() {
                let a = self.cone_gens(i);
                let b = self.cone_gens(j);
                let inter = intersect(&a, &b, self.n)?;
                let common: Vec<usize> =
                    self.cones[i].iter().copied().filter(|r| self.cones[j].contains(r)).collect();
                let expect: BTreeSet<ZVec> = common.iter().map(|&r| self.rays[r].clone()).collect();
                let got: BTreeSet<ZVec> = inter.into_iter().collect();
                if got != expect {
                    return Err(FanError::BadIntersection(format!(
                        "ambient cones {:?} and {:?}",
                        self.cones[i], self.cones[j]
                    )));
                }
            }
        }
        Ok(())
    }

    fn cone_gens(&self, i: usize) -> Vec<Vec<Q>> {
        self.cones[i].iter().map(|&r| z_to_q(&self.rays[r])).collect()
    }

    pub fn rank(&self) -> usize {
        self.n
    }

    pub fn num_orbits(&self) -> usize {
        self.cones.len()
    }

    pub fn rays(&self) -> &[ZVec] {
        &self.rays
    }

    /// Ray indices of each cone of Σ; index 0 is the zero cone.
    pub fn cones(&self) -> &[Vec<usize>] {
        &self.cones
    }

    pub fn orbit_dim(&self, sigma: usize) -> usize {
        self.orbit_basis[sigma].len()
    }

    /// Basis of M ∩ σ^⊥ used for the coordinates of N_σ.
    pub fn orbit_basis(&self, sigma: usize) -> &[ZVec] {
        &self.orbit_basis[sigma]
    }

    pub fn find_cone(&self, rays: &[usize]) -> Option<usize> {
        let mut r = rays.to_vec();
        r.sort();
        self.cones.iter().position(|c| *c == r)
    }

    pub fn is_face(&self, tau: usize, sigma: usize) -> bool {
        self.cones[tau].iter().all(|r| self.cones[sigma].contains(r))
    }

    /// Matrix of π_{σ,τ}: N_τ → N_σ, for τ a face of σ.
    pub fn orbit_projection(&self, sigma: usize, tau: usize) -> Result<RatMatrix, FanError> {
        if !self.is_face(tau, sigma) {
            return Err(FanError::NotAFace {
                sigma: format!("{:?}", self.cones[sigma]),
                tau: format!("{:?}", self.cones[tau]),
            });
        }
        let bt: Vec<Vec<Q>> = self.orbit_basis[tau].iter().map(|v| z_to_q(v)).collect();
        let kt = bt.len();
        let span = Subspace::span(self.n, &bt);
        let mut m = RatMatrix::zeros(self.orbit_basis[sigma].len(), kt);
        // express each σ-basis vector in the τ-basis
        let bm = RatMatrix::from_rows(&bt, self.n).transpose();
        for (i, ms) in self.orbit_basis[sigma].iter().enumerate() {
            let target = z_to_q(ms);
            debug_assert!(span.contains(&target));
            let c = solve(&bm, &target).expect("σ^⊥ ⊂ τ^⊥");
            for (j, x) in c.into_iter().enumerate() {
                m.set(i, j, x);
            }
        }
        Ok(m)
    }

    /// Coordinates in N_σ of a vector of N.
    pub fn to_orbit(&self, sigma: usize, x: &[Q]) -> Vec<Q> {
        self.orbit_basis[sigma].iter().map(|m| dot_z(x, m)).collect()
    }

    /// The cone τ of Σ (containing σ) as a cone in N_σ coordinates.
    pub fn image_in(&self, sigma: usize, tau: usize) -> Vec<Vec<Q>> {
        self.cones[tau]
            .iter()
            .map(|&r| self.to_orbit(sigma, &z_to_q(&self.rays[r])))
            .filter(|v| v.iter().any(|x| !x.is_zero()))
            .collect()
    }

    pub fn is_smooth(&self) -> bool {
        self.cones.iter().all(|c| {
            let v: Vec<Vec<Q>> = c.iter().map(|&r| z_to_q(&self.rays[r])).collect();
            saturated_basis(&v, self.n).len() == c.len() && {
                if c.is_empty() {
                    return true;
                }
                let w = wedge_of(&v, self.n);
                let sat: Vec<Vec<Q>> = saturated_basis(&v, self.n).iter().map(|b| z_to_q(b)).collect();
                let ws = wedge_of(&sat, self.n);
                let ratio = w.iter().zip(&ws).find(|(_, b)| !b.is_zero()).map(|(a, b)| a / b);
                ratio.map_or(false, |r| r.abs().is_one())
            }
        })
    }
}

/// Solve A x = b for one solution (A need not be square).
pub fn solve(a: &RatMatrix, b: &[Q]) -> Option<Vec<Q>> {
    let n = a.cols();
    let mut rows = a.row_vecs();
    for (r, bi) in rows.iter_mut().zip(b) {
        r.push(bi.clone());
    }
    let (r, piv) = RatMatrix::from_rows(&rows, n + 1).rref();
    if piv.last() == Some(&n) {
        return None;
    }
    let mut x = vec![Q::zero(); n];
    for (i, &c) in piv.iter().enumerate() {
        x[c] = r.get(i, n).clone();
    }
    Some(x)
}

/// Rays of the intersection of two cones given by generators.
pub fn intersect(a: &[Vec<Q>], b: &[Vec<Q>], k: usize) -> Result<Vec<ZVec>, FanError> {
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let ha = hrep(a, k);
    let hb = hrep(b, k);
    let mut eqs = ha.span.annihilator().basis().to_vec();
    eqs.extend(hb.span.annihilator().basis().iter().cloned());
    let mut ineqs = ha.facets.clone();
    ineqs.extend(hb.facets.iter().cloned());
    hrep_to_rays(&ineqs, &eqs, k)
}

// ---------- cones ----------

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cone {
    /// Index of σ_P in the ambient fan.
    pub orbit: usize,
    /// Dimension of N_σ.
    pub ambient_dim: usize,
    /// Primitive extremal rays, sorted.
    pub rays: Vec<ZVec>,
    pub dim: usize,
}

impl Cone {
    pub fn new(orbit: usize, ambient_dim: usize, gens: &[Vec<Q>]) -> Result<Self, FanError> {
        for g in gens {
            if g.len() != ambient_dim {
                return Err(FanError::Invalid(format!(
                    "generator of length {} in dimension {ambient_dim}",
                    g.len()
                )));
            }
        }
        let rays = extremal_rays(gens, ambient_dim)?;
        let dim = Subspace::span(ambient_dim, gens).dim();
        Ok(Cone { orbit, ambient_dim, rays, dim })
    }

    pub fn from_i64(orbit: usize, ambient_dim: usize, gens: &[Vec<i64>]) -> Result<Self, FanError> {
        let g: Vec<Vec<Q>> = gens.iter().map(|v| v.iter().map(|&x| q(x)).collect()).collect();
        Self::new(orbit, ambient_dim, &g)
    }

    pub fn origin(orbit: usize, ambient_dim: usize) -> Self {
        Cone { orbit, ambient_dim, rays: Vec::new(), dim: 0 }
    }

    pub fn gens(&self) -> Vec<Vec<Q>> {
        self.rays.iter().map(|r| z_to_q(r)).collect()
    }

    pub fn span(&self) -> Subspace {
        Subspace::span(self.ambient_dim, &self.gens())
    }

    pub fn is_simplicial(&self) -> bool {
        self.rays.len() == self.dim
    }

    pub fn hrep(&self) -> HRep {
        hrep(&self.gens(), self.ambient_dim)
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        let h = self.hrep();
        h.span.contains(x) && h.facets.iter().all(|a| dot(a, x) >= Q::zero())
    }

    pub fn contains_in_relint(&self, x: &[Q]) -> bool {
        let h = self.hrep();
        h.span.contains(x) && h.facets.iter().all(|a| dot(a, x) > Q::zero())
    }

    /// A point of the relative interior (sum of rays).
    pub fn relint_point(&self) -> Vec<Q> {
        let mut s = vec![Q::zero(); self.ambient_dim];
        for r in &self.rays {
            for (a, b) in s.iter_mut().zip(r) {
                *a += Q::from_integer(b.clone());
            }
        }
        s
    }

    /// Same-orbit faces, including the cone and its minimal face.
    pub fn own_faces(&self) -> Vec<Cone> {
        let h = self.hrep();
        let mut out: BTreeSet<Vec<ZVec>> = BTreeSet::new();
        for fs in 0..(1usize << h.facets.len()) {
            let face: Vec<ZVec> = self
                .rays
                .iter()
                .filter(|r| {
                    (0..h.facets.len())
                        .filter(|b| fs & (1 << b) != 0)
                        .all(|b| dot_z(&h.facets[b], r).is_zero())
                })
                .cloned()
                .collect();
            out.insert(face);
        }
        out.into_iter()
            .map(|rays| {
                let g: Vec<Vec<Q>> = rays.iter().map(|r| z_to_q(r)).collect();
                let dim = Subspace::span(self.ambient_dim, &g).dim();
                Cone { orbit: self.orbit, ambient_dim: self.ambient_dim, rays, dim }
            })
            .collect()
    }

    fn image(&self, m: &RatMatrix, orbit: usize) -> Cone {
        let g: Vec<Vec<Q>> = self.gens().iter().map(|v| m.apply(v)).collect();
        Cone::new(orbit, m.rows(), &g).expect("image of a face meeting the orbit is pointed")
    }
}

/// All faces of a cone in the compactification: π_τ(F) for faces F of the cone
/// and orbits τ ⊇ σ_P with F ∩ relint(τ̄) ≠ ∅.
pub fn faces(c: &Cone, amb: &AmbientFan) -> Vec<Cone> {
    let sigma = c.orbit;
    let own = c.own_faces();
    let mut out: BTreeSet<Cone> = BTreeSet::new();
    for tau in 0..amb.num_orbits() {
        if !amb.is_face(sigma, tau) {
            continue;
        }
        let tbar_gens = amb.image_in(sigma, tau);
        let tbar = Cone::new(sigma, c.ambient_dim, &tbar_gens).expect("ambient cones are pointed");
        let proj = amb.orbit_projection(tau, sigma).expect("face");
        for f in &own {
            let meets = if tbar.rays.is_empty() {
                true
            } else {
                let inter = intersect(&f.gens(), &tbar.gens(), c.ambient_dim).unwrap_or_default();
                let mut p = vec![Q::zero(); c.ambient_dim];
                for r in &inter {
                    for (a, b) in p.iter_mut().zip(r) {
                        *a += Q::from_integer(b.clone());
                    }
                }
                !inter.is_empty() && tbar.contains_in_relint(&p)
            };
            if meets {
                out.insert(if tau == sigma { f.clone() } else { f.image(&proj, tau) });
            }
        }
    }
    out.into_iter().collect()
}

/// Oriented cone with its ℤ-generator of ∧^q Span_ℤ P.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedCone {
    pub cone: Cone,
    pub order: Vec<ZVec>,
    /// Coordinates in the basis e_I of ∧^q N_σ.
    pub generator: Vec<BigInt>,
}

pub fn orientation_generator(c: &Cone, order: &[ZVec]) -> Result<OrientedCone, FanError> {
    let k = c.ambient_dim;
    let ord: Vec<Vec<Q>> = order.iter().map(|v| z_to_q(v)).collect();
    if ord.len() != c.dim || Subspace::span(k, &ord).dim() != c.dim {
        return Err(FanError::Degenerate);
    }
    let sat: Vec<Vec<Q>> = saturated_basis(&ord, k).iter().map(|v| z_to_q(v)).collect();
    let ws = wedge_of(&sat, k);
    let wo = wedge_of(&ord, k);
    let (a, b) = wo.iter().zip(&ws).find(|(_, b)| !b.is_zero()).expect("nonzero wedge");
    let s = sign_of(&(a / b));
    let generator = ws.iter().map(|x| (x * q(s as i64)).to_integer()).collect();
    Ok(OrientedCone { cone: c.clone(), order: order.to_vec(), generator })
}

/// Orientation generator using the sorted ray order (cells of a simplicial fan).
pub fn canonical_generator(c: &Cone) -> Vec<Q> {
    if c.dim == 0 {
        return vec![Q::one()];
    }
    let order: Vec<ZVec> = if c.is_simplicial() {
        c.rays.clone()
    } else {
        // first independent rays in sorted order
        let mut picked: Vec<ZVec> = Vec::new();
        for r in &c.rays {
            let mut t: Vec<Vec<Q>> = picked.iter().map(|v| z_to_q(v)).collect();
            t.push(z_to_q(r));
            if Subspace::span(c.ambient_dim, &t).dim() == t.len() {
                picked.push(r.clone());
            }
        }
        picked
    };
    let oc = orientation_generator(c, &order).expect("independent rays");
    oc.generator.iter().map(|x| Q::from_integer(x.clone())).collect()
}

// ---------- fans ----------

/// Fan description document.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FanDoc {
    pub lattice_rank: usize,
    pub rays: Vec<Vec<i64>>,
    pub cones: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<Box<FanDoc>>,
}

/// A fan in the partial compactification: all cells (cones in every orbit),
/// closed under faces.
#[derive(Clone, Debug)]
pub struct Fan {
    amb: AmbientFan,
    cells: Vec<Cone>,
    index: BTreeMap<Cone, usize>,
    /// faces[i] = indices of all faces of cell i (including i).
    face_sets: Vec<BTreeSet<usize>>,
    /// cells listed as generators in N_R (orbit 0), maximal ones only
    maximal: Vec<usize>,
}

impl PartialEq for Fan {
    fn eq(&self, other: &Self) -> bool {
        self.amb == other.amb && self.cells == other.cells
    }
}

impl Fan {
    /// Closure of the given cones of N_R inside the compactification by `amb`.
    pub fn new(amb: AmbientFan, cones: &[Cone]) -> Result<Self, FanError> {
        let mut all: BTreeSet<Cone> = BTreeSet::new();
        for c in cones {
            if c.ambient_dim != amb.orbit_dim(c.orbit) {
                return Err(FanError::Invalid("cone dimension does not match its orbit".into()));
            }
            for f in faces(c, &amb) {
                all.insert(f);
            }
        }
        let mut cells: Vec<Cone> = all.into_iter().collect();
        cells.sort_by(|a, b| a.dim.cmp(&b.dim).then(a.orbit.cmp(&b.orbit)).then(a.rays.cmp(&b.rays)));
        let index: BTreeMap<Cone, usize> = cells.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        let face_sets = cells
            .iter()
            .map(|c| faces(c, &amb).iter().map(|f| index[f]).collect())
            .collect();
        let mut fan = Fan { amb, cells, index, face_sets, maximal: Vec::new() };
        fan.maximal = (0..fan.cells.len())
            .filter(|&i| (0..fan.cells.len()).all(|j| j == i || !fan.face_sets[j].contains(&i)))
            .collect();
        fan.validate()?;
        Ok(fan)
    }

    pub fn from_doc(doc: &FanDoc) -> Result<Self, FanError> {
        let n = doc.lattice_rank;
        if n == 0 {
            return Err(FanError::Invalid("lattice_rank must be at least 1".into()));
        }
        let amb = match &doc.ambient {
            Some(a) => {
                if a.lattice_rank != n {
                    return Err(FanError::Invalid("ambient fan has a different lattice rank".into()));
                }
                AmbientFan::new(n, &a.rays, &a.cones)?
            }
            None => AmbientFan::trivial(n),
        };
        let mut cones = Vec::new();
        for c in &doc.cones {
            let mut gens = Vec::new();
            for &i in c {
                let r = doc
                    .rays
                    .get(i)
                    .ok_or_else(|| FanError::Invalid(format!("cone {c:?} references ray {i}")))?;
                if r.len() != n {
                    return Err(FanError::Invalid(format!("ray {r:?} has wrong length")));
                }
                gens.push(amb.to_orbit(0, &r.iter().map(|&x| q(x)).collect::<Vec<_>>()));
            }
            cones.push(Cone::new(0, amb.orbit_dim(0), &gens)?);
        }
        if cones.is_empty() {
            return Fan::new(amb, &[]);
        }
        Fan::new(amb, &cones)
    }

    /// Fan in N_R with no compactification.
    pub fn plain(n: usize, rays: &[Vec<i64>], cones: &[Vec<usize>]) -> Result<Self, FanError> {
        Self::from_doc(&FanDoc { lattice_rank: n, rays: rays.to_vec(), cones: cones.to_vec(), ambient: None })
    }

    fn validate(&self) -> Result<(), FanError> {
        for i in 0..self.cells.len() {
            for j in i + 1..self.cells.len() {
                let (a, b) = (&self.cells[i], &self.cells[j]);
                if a.orbit != b.orbit {
                    continue;
                }
                let inter = intersect(&a.gens(), &b.gens(), a.ambient_dim)?;
                let ic = Cone { orbit: a.orbit, ambient_dim: a.ambient_dim, dim: 0, rays: inter };
                let ok_a = a.own_faces().iter().any(|f| f.rays == ic.rays);
                let ok_b = b.own_faces().iter().any(|f| f.rays == ic.rays);
                if !ok_a || !ok_b {
                    return Err(FanError::BadIntersection(format!(
                        "cells with rays {:?} and {:?} in orbit {}",
                        fmt_rays(&a.rays),
                        fmt_rays(&b.rays),
                        a.orbit
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ambient(&self) -> &AmbientFan {
        &self.amb
    }

    pub fn rank(&self) -> usize {
        self.amb.rank()
    }

    pub fn cells(&self) -> &[Cone] {
        &self.cells
    }

    pub fn cell(&self, i: usize) -> &Cone {
        &self.cells[i]
    }

    pub fn index_of(&self, c: &Cone) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn is_face(&self, child: usize, parent: usize) -> bool {
        self.face_sets[parent].contains(&child)
    }

    pub fn faces_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.face_sets[i].iter().copied()
    }

    /// Face relations as (child, parent) pairs, child ≠ parent.
    pub fn face_relations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (p, fs) in self.face_sets.iter().enumerate() {
            for &c in fs {
                if c != p {
                    out.push((c, p));
                }
            }
        }
        out
    }

    /// Codimension-one faces of cell i.
    pub fn facets_of(&self, i: usize) -> Vec<usize> {
        let d = self.cells[i].dim;
        self.face_sets[i].iter().copied().filter(|&j| self.cells[j].dim + 1 == d).collect()
    }

    /// Cells of N_R (orbit 0).
    pub fn open_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i].orbit == 0).collect()
    }

    /// Maximal cells of N_R.
    pub fn maximal_open(&self) -> Vec<usize> {
        self.maximal.iter().copied().filter(|&i| self.cells[i].orbit == 0).collect()
    }

    pub fn is_simplicial(&self) -> bool {
        self.cells.iter().all(|c| c.is_simplicial())
    }

    pub fn dim(&self) -> usize {
        self.cells.iter().map(|c| c.dim).max().unwrap_or(0)
    }

    pub fn is_pure(&self) -> bool {
        let d = self.dim();
        self.maximal_open().iter().all(|&i| self.cells[i].dim == d)
    }

    /// Cones of N_R as a description document (ambient omitted).
    pub fn to_doc(&self) -> FanDoc {
        let mut rays: Vec<ZVec> = Vec::new();
        let mut cones = Vec::new();
        for &i in &self.maximal_open() {
            let mut idx = Vec::new();
            for r in &self.cells[i].rays {
                let pos = rays.iter().position(|x| x == r).unwrap_or_else(|| {
                    rays.push(r.clone());
                    rays.len() - 1
                });
                idx.push(pos);
            }
            cones.push(idx);
        }
        // orbit-0 coordinates agree with N when Σ is trivial; otherwise convert back
        let n = self.rank();
        let basis: Vec<Vec<Q>> = self.amb.orbit_basis(0).iter().map(|v| z_to_q(v)).collect();
        let bm = RatMatrix::from_rows(&basis, n);
        let rays_n: Vec<Vec<i64>> = rays
            .iter()
            .map(|r| {
                let x = solve(&bm, &z_to_q(r)).expect("orbit 0 basis is invertible");
                crate::exact_linalg::z_to_i64(&primitive_of(&x).expect("nonzero"))
            })
            .collect();
        FanDoc { lattice_rank: n, rays: rays_n, cones, ambient: None }
    }
}

pub fn fmt_rays(r: &[ZVec]) -> Vec<Vec<String>> {
    r.iter().map(|v| v.iter().map(|x| x.to_string()).collect()).collect()
}

/// Do the full-dimensional pieces (cones inside `c`) tile `c`? Each interior
/// codimension-one face must be shared by exactly two pieces.
fn tiles(c: &Cone, pieces: &[Cone]) -> bool {
    let full: Vec<&Cone> = pieces.iter().filter(|p| p.dim == c.dim).collect();
    if c.dim == 0 {
        return true;
    }
    if full.is_empty() {
        return false;
    }
    let boundary: Vec<Cone> = c.own_faces().into_iter().filter(|f| f.dim + 1 == c.dim).collect();
    let mut count: BTreeMap<Vec<ZVec>, usize> = BTreeMap::new();
    for p in &full {
        for f in p.own_faces().into_iter().filter(|f| f.dim + 1 == c.dim) {
            *count.entry(f.rays).or_default() += 1;
        }
    }
    count.iter().all(|(rays, &k)| {
        let probe = Cone { orbit: c.orbit, ambient_dim: c.ambient_dim, rays: rays.clone(), dim: c.dim - 1 };
        let on_boundary = boundary.iter().any(|b| b.contains(&probe.relint_point()));
        if on_boundary {
            k == 1
        } else {
            k == 2
        }
    })
}

/// Common refinement of two fans of N_R with the same support.
pub fn common_refinement(f1: &Fan, f2: &Fan) -> Result<Fan, FanError> {
    if f1.rank() != f2.rank() {
        return Err(FanError::SupportMismatch("different lattice ranks".into()));
    }
    let n = f1.amb.orbit_dim(0);
    let m1 = f1.maximal_open();
    let m2 = f2.maximal_open();
    let mut pieces: BTreeSet<Cone> = BTreeSet::new();
    let mut per1: Vec<Vec<Cone>> = vec![Vec::new(); m1.len()];
    let mut per2: Vec<Vec<Cone>> = vec![Vec::new(); m2.len()];
    for (a, &i) in m1.iter().enumerate() {
        for (b, &j) in m2.iter().enumerate() {
            let (ci, cj) = (f1.cell(i), f2.cell(j));
            let rays = intersect(&ci.gens(), &cj.gens(), n)?;
            let g: Vec<Vec<Q>> = rays.iter().map(|r| z_to_q(r)).collect();
            let piece = Cone::new(0, n, &g)?;
            per1[a].push(piece.clone());
            per2[b].push(piece.clone());
            pieces.insert(piece);
        }
    }
    for (a, &i) in m1.iter().enumerate() {
        if !tiles(f1.cell(i), &per1[a]) {
            return Err(FanError::SupportMismatch(format!(
                "cone {:?} of the first fan is not covered by the second",
                fmt_rays(&f1.cell(i).rays)
            )));
        }
    }
    for (b, &j) in m2.iter().enumerate() {
        if !tiles(f2.cell(j), &per2[b]) {
            return Err(FanError::SupportMismatch(format!(
                "cone {:?} of the second fan is not covered by the first",
                fmt_rays(&f2.cell(j).rays)
            )));
        }
    }
    let cones: Vec<Cone> = pieces.into_iter().collect();
    Fan::new(f1.amb.clone(), &cones)
}

/// Stellar subdivision of the N_R part of a fan at the open cell `cell`.
pub fn stellar_subdivision(f: &Fan, cell: usize) -> Result<Fan, FanError> {
    let c = f.cell(cell);
    if c.orbit != 0 || c.dim == 0 {
        return Err(FanError::Invalid("stellar subdivision needs a nonzero cone of N_R".into()));
    }
    let center = primitive_of(&c.relint_point()).expect("nonzero");
    let mut out: Vec<Cone> = Vec::new();
    for &m in &f.maximal_open() {
        if !f.is_face(cell, m) {
            out.push(f.cell(m).clone());
            continue;
        }
        // replace m by joins of the center with faces of m not containing c
        let mc = f.cell(m);
        for face in mc.own_faces() {
            if face.dim + 1 != mc.dim {
                continue;
            }
            let contains_c = c.rays.iter().all(|r| face.rays.contains(r));
            if contains_c {
                continue;
            }
            let mut g = face.gens();
            g.push(z_to_q(&center));
            out.push(Cone::new(0, mc.ambient_dim, &g)?);
        }
    }
    Fan::new(f.amb.clone(), &out)
}

pub fn zero_vec(n: usize) -> Vec<Q> {
    vec![Q::zero(); n]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2_ambient() -> AmbientFan {
        AmbientFan::new(2, &[vec![1, 0], vec![0, 1], vec![-1, -1]], &[vec![0, 1], vec![1, 2], vec![2, 0]]).unwrap()
    }

    fn a2_ambient() -> AmbientFan {
        AmbientFan::new(2, &[vec![1, 0], vec![0, 1]], &[vec![0, 1]]).unwrap()
    }

    #[test]
    fn primitive_examples() {
        assert_eq!(primitive(&[2, 4]).unwrap(), vec![1, 2]);
        assert_eq!(primitive(&[-3, 0]).unwrap(), vec![-1, 0]);
        assert_eq!(primitive(&[6, 10, 15]).unwrap(), vec![6, 10, 15]);
        assert_eq!(primitive(&[0, 0]), Err(FanError::ZeroVector));
    }

    #[test]
    fn faces_plain() {
        let amb = AmbientFan::trivial(2);
        let c = Cone::from_i64(0, 2, &[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(faces(&c, &amb).len(), 4);
        let r = Cone::from_i64(0, 2, &[vec![1, 0]]).unwrap();
        assert_eq!(faces(&r, &amb).len(), 2);
    }

    #[test]
    fn faces_compactified_quadrant() {
        let amb = a2_ambient();
        let c = Cone::from_i64(0, 2, &[vec![1, 0], vec![0, 1]]).unwrap();
        let fs = faces(&c, &amb);
        assert_eq!(fs.len(), 9);
        let sigma = amb.find_cone(&[0]).unwrap();
        // the boundary ray x2 >= 0 in N_{e1}
        assert!(fs.iter().any(|f| f.orbit == sigma && f.dim == 1));
    }

    #[test]
    fn orientation_examples() {
        let r = Cone::from_i64(0, 2, &[vec![1, 2]]).unwrap();
        let o = orientation_generator(&r, &[zvec(&[1, 2])]).unwrap();
        assert_eq!(o.generator, zvec(&[1, 2]));
        let c = Cone::from_i64(0, 2, &[vec![1, 0], vec![0, 1]]).unwrap();
        let o = orientation_generator(&c, &[zvec(&[1, 0]), zvec(&[0, 1])]).unwrap();
        assert_eq!(o.generator, zvec(&[1]));
        let o = orientation_generator(&c, &[zvec(&[0, 1]), zvec(&[1, 0])]).unwrap();
        assert_eq!(o.generator, zvec(&[-1]));
        let c = Cone::from_i64(0, 2, &[vec![1, 0], vec![1, 2]]).unwrap();
        let o = orientation_generator(&c, &[zvec(&[1, 0]), zvec(&[1, 2])]).unwrap();
        assert_eq!(o.generator, zvec(&[1]));
        assert_eq!(orientation_generator(&c, &[zvec(&[1, 0])]), Err(FanError::Degenerate));
    }

    #[test]
    fn projections() {
        let amb = AmbientFan::new(2, &[vec![1, 0]], &[vec![0]]).unwrap();
        let s = amb.find_cone(&[0]).unwrap();
        let p = amb.orbit_projection(s, 0).unwrap();
        assert_eq!(p, RatMatrix::from_i64(&[vec![0, 1]]));
        assert_eq!(amb.orbit_projection(s, s).unwrap(), RatMatrix::identity(1));
        let amb3 = AmbientFan::new(3, &[vec![1, 0, 0], vec![0, 1, 0]], &[vec![0, 1]]).unwrap();
        let s = amb3.find_cone(&[0, 1]).unwrap();
        let t = amb3.find_cone(&[0]).unwrap();
        assert_eq!(amb3.orbit_projection(s, t).unwrap(), RatMatrix::from_i64(&[vec![0, 1]]));
        assert!(amb3.orbit_projection(t, s).is_err());
    }

    #[test]
    fn p2_has_seven_orbits_and_line_seven_cells() {
        let amb = p2_ambient();
        assert_eq!(amb.num_orbits(), 7);
        let doc = FanDoc {
            lattice_rank: 2,
            rays: vec![vec![1, 0], vec![0, 1], vec![-1, -1]],
            cones: vec![vec![0], vec![1], vec![2]],
            ambient: Some(Box::new(FanDoc {
                lattice_rank: 2,
                rays: vec![vec![1, 0], vec![0, 1], vec![-1, -1]],
                cones: vec![vec![0, 1], vec![1, 2], vec![2, 0]],
                ambient: None,
            })),
        };
        let f = Fan::from_doc(&doc).unwrap();
        assert_eq!(f.cells().len(), 7);
        let full = Fan::from_doc(&FanDoc { cones: vec![vec![0, 1], vec![1, 2], vec![2, 0]], ..doc }).unwrap();
        assert_eq!(full.cells().len(), 19);
    }

    #[test]
    fn refinements() {
        let p1p1 = Fan::plain(2, &[vec![1, 0], vec![0, 1], vec![-1, 0], vec![0, -1]], &[vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 0]]).unwrap();
        let p2 = Fan::plain(2, &[vec![1, 0], vec![0, 1], vec![-1, -1]], &[vec![0, 1], vec![1, 2], vec![2, 0]]).unwrap();
        let bl = Fan::plain(
            2,
            &[vec![1, 0], vec![1, 1], vec![0, 1], vec![-1, -1]],
            &[vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 0]],
        )
        .unwrap();
        let r = common_refinement(&p1p1, &p2).unwrap();
        assert_eq!(r.cells().iter().filter(|c| c.dim == 1).count(), 5);
        assert_eq!(r.cells().iter().filter(|c| c.dim == 2).count(), 5);
        let r = common_refinement(&p1p1, &bl).unwrap();
        assert_eq!(r.cells().iter().filter(|c| c.dim == 1).count(), 6);
        assert_eq!(r.cells().iter().filter(|c| c.dim == 2).count(), 6);
        assert_eq!(common_refinement(&p2, &p2).unwrap(), p2);
        let a = Fan::plain(2, &[vec![1, 0], vec![-1, 0]], &[vec![0], vec![1]]).unwrap();
        let b = Fan::plain(2, &[vec![0, 1], vec![0, -1]], &[vec![0], vec![1]]).unwrap();
        assert!(matches!(common_refinement(&a, &b), Err(FanError::SupportMismatch(_))));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Cone::from_i64(0, 2, &[vec![1, 0], vec![-1, 0]]),
            Err(FanError::NotPointed(_))
        ));
        let r = Fan::plain(2, &[vec![1, 0], vec![0, 1], vec![1, 1]], &[vec![0, 1], vec![2]]);
        assert!(matches!(r, Err(FanError::BadIntersection(_))));
        let r = Fan::plain(2, &[vec![1, 0], vec![0, 1], vec![1, 2]], &[vec![0, 1], vec![0, 2]]);
        assert!(matches!(r, Err(FanError::BadIntersection(_))));
    }

    #[test]
    fn stellar_adds_center() {
        let p2 = Fan::plain(2, &[vec![1, 0], vec![0, 1], vec![-1, -1]], &[vec![0, 1], vec![1, 2], vec![2, 0]]).unwrap();
        let c = p2.cells().iter().position(|c| c.dim == 2).unwrap();
        let s = stellar_subdivision(&p2, c).unwrap();
        assert_eq!(s.cells().iter().filter(|c| c.dim == 2).count(), 4);
    }
}
