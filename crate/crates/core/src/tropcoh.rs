//! Tropical homology of fans with rational coefficients.
//!
//! Each cell of a (simplicial) fan is one q-cell; its coefficient group is
//! F_p(P) ⊂ ∧^p N_{σ_P}. Boundary blocks are incidence sign × restriction.

use crate::exact_linalg::{
    binomial, sign_of, subsets, wedge_of, wedge_power_map, wedge_power_span, LinalgError, RatMatrix,
    Subspace, Q,
};
use crate::polyfan::{canonical_generator, intersect, Cone, Fan, FanError};
use num::{Signed, Zero};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohError {
    #[error("cell {0} is not in the fan")]
    NotInFan(usize),
    #[error("cell {child} is not a face of cell {parent}")]
    NotAFace { child: usize, parent: usize },
    #[error("cell {0} is not simplicial; subdivide first")]
    NonSimplicial(usize),
    #[error("boundary of boundary is nonzero in degree {0}")]
    BoundarySquare(usize),
    #[error("the fan has no origin cell")]
    NoOrigin,
    #[error(transparent)]
    Fan(#[from] FanError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// F_p(P) as a subspace of ∧^p N_{σ_P}.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefSpace {
    pub cell: usize,
    pub p: usize,
    pub space: Subspace,
    pub dual_dim: usize,
}

pub fn coefficient_space(fan: &Fan, cell: usize, p: usize) -> Result<CoefSpace, CohError> {
    if cell >= fan.cells().len() {
        return Err(CohError::NotInFan(cell));
    }
    let c = fan.cell(cell);
    let k = c.ambient_dim;
    if p > k {
        return Ok(CoefSpace { cell, p, space: Subspace::zero(0), dual_dim: 0 });
    }
    let mut space = Subspace::zero(binomial(k, p));
    for (j, other) in fan.cells().iter().enumerate() {
        if other.orbit == c.orbit && fan.is_face(cell, j) {
            space = space.sum(&wedge_power_span(&other.span(), p)?);
        }
    }
    let dual_dim = space.dim();
    Ok(CoefSpace { cell, p, space, dual_dim })
}

/// i_{P2 ⊂ P1}: F_p(P1) → F_p(P2).
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictionMap {
    pub source: usize,
    pub target: usize,
    pub p: usize,
    /// Map between the ambient wedge spaces ∧^p N_{σ_{P1}} → ∧^p N_{σ_{P2}}.
    pub ambient: RatMatrix,
    /// Map in the canonical bases of F_p(P1) and F_p(P2).
    pub matrix: RatMatrix,
}

pub fn restriction(fan: &Fan, p1: usize, p2: usize, p: usize) -> Result<RestrictionMap, CohError> {
    let n = fan.cells().len();
    if p1 >= n {
        return Err(CohError::NotInFan(p1));
    }
    if p2 >= n {
        return Err(CohError::NotInFan(p2));
    }
    if !fan.is_face(p2, p1) {
        return Err(CohError::NotAFace { child: p2, parent: p1 });
    }
    let src = coefficient_space(fan, p1, p)?;
    let dst = coefficient_space(fan, p2, p)?;
    let (a, b) = (fan.cell(p1), fan.cell(p2));
    let ambient = if a.orbit == b.orbit {
        RatMatrix::identity(binomial(a.ambient_dim, p))
    } else {
        let pi = fan.ambient().orbit_projection(b.orbit, a.orbit)?;
        wedge_power_map(&pi, p)
    };
    let mut matrix = RatMatrix::zeros(dst.space.dim(), src.space.dim());
    for (j, v) in src.space.basis().iter().enumerate() {
        let img = ambient.apply(v);
        let c = dst
            .space
            .coords(&img)
            .expect("restriction lands in the coefficient space of the face");
        for (i, x) in c.into_iter().enumerate() {
            matrix.set(i, j, x);
        }
    }
    Ok(RestrictionMap { source: p1, target: p2, p, ambient, matrix })
}

/// Vectors giving the canonical orientation of a cell (see `canonical_generator`).
fn orientation_vectors(c: &Cone) -> Vec<Vec<Q>> {
    let mut picked: Vec<Vec<Q>> = Vec::new();
    for g in c.gens() {
        let mut t = picked.clone();
        t.push(g.clone());
        if Subspace::span(c.ambient_dim, &t).dim() == t.len() {
            picked.push(g);
        }
    }
    picked
}

/// v ∧ w for a vector v and w ∈ ∧^d Q^n, in ∧^{d+1} coordinates.
pub fn wedge_vec(v: &[Q], w: &[Q], n: usize, d: usize) -> Vec<Q> {
    let src = subsets(n, d);
    subsets(n, d + 1)
        .iter()
        .map(|t| {
            let mut s = Q::zero();
            for (pos, &i) in t.iter().enumerate() {
                if v[i].is_zero() {
                    continue;
                }
                let rest: Vec<usize> = t.iter().copied().filter(|&x| x != i).collect();
                let j = src.binary_search(&rest).expect("subset");
                let term = &v[i] * &w[j];
                if pos % 2 == 0 {
                    s += term;
                } else {
                    s -= term;
                }
            }
            s
        })
        .collect()
}

fn ratio_sign(a: &[Q], b: &[Q]) -> i32 {
    a.iter()
        .zip(b)
        .find(|(_, y)| !y.is_zero())
        .map(|(x, y)| sign_of(&(x / y)))
        .unwrap_or(0)
}

/// Incidence number [P : Q] for a facet Q of P (outward normal first).
pub fn incidence(fan: &Fan, parent: usize, facet: usize) -> Result<i32, CohError> {
    if !fan.is_face(facet, parent) || fan.cell(facet).dim + 1 != fan.cell(parent).dim {
        return Err(CohError::NotAFace { child: facet, parent });
    }
    let (pc, qc) = (fan.cell(parent), fan.cell(facet));
    let k = pc.ambient_dim;
    let d = pc.dim;
    let wp = canonical_generator(pc);
    let (normal, lifted): (Vec<Q>, Vec<Vec<Q>>) = if pc.orbit == qc.orbit {
        let qspan = qc.span();
        let r = pc.gens().into_iter().find(|g| !qspan.contains(g)).expect("facet misses a ray");
        (r.iter().map(|x| -x).collect(), orientation_vectors(qc))
    } else {
        let amb = fan.ambient();
        let pi = amb.orbit_projection(qc.orbit, pc.orbit)?;
        let tbar = amb.image_in(pc.orbit, qc.orbit);
        let inter = intersect(&pc.gens(), &tbar, k)?;
        let mut dir = vec![Q::zero(); k];
        for r in &inter {
            for (a, b) in dir.iter_mut().zip(r) {
                *a += Q::from_integer(b.clone());
            }
        }
        // lift the facet's orientation vectors into span(P)
        let pbasis = pc.span().basis().to_vec();
        let pim = pi.mul(&RatMatrix::from_cols(&pbasis, k))?;
        let lifts = orientation_vectors(qc)
            .iter()
            .map(|t| {
                let c = crate::polyfan::solve(&pim, t).expect("facet is the image of the cell");
                let mut v = vec![Q::zero(); k];
                for (ci, b) in c.iter().zip(&pbasis) {
                    for (x, y) in v.iter_mut().zip(b) {
                        *x += ci * y;
                    }
                }
                v
            })
            .collect();
        (dir, lifts)
    };
    let wq = if lifted.is_empty() { vec![Q::from_integer(1.into())] } else { wedge_of(&lifted, k) };
    let w = wedge_vec(&normal, &wq, k, d - 1);
    let s = ratio_sign(&w, &wp);
    debug_assert!(s != 0);
    Ok(s)
}

/// Cellular complex C_{p,*} of a fan.
#[derive(Clone, Debug)]
pub struct CellComplex {
    pub p: usize,
    /// cells[q] = fan cell indices of dimension q, in chain order.
    pub cells: Vec<Vec<usize>>,
    pub spaces: BTreeMap<usize, CoefSpace>,
    /// offsets[q][i] = start of cells[q][i]'s block in C_q.
    pub offsets: Vec<Vec<usize>>,
    /// boundary[q] : C_q → C_{q-1} (boundary[0] is the zero map to nothing).
    pub boundary: Vec<RatMatrix>,
}

impl CellComplex {
    pub fn chain_dim(&self, q: usize) -> usize {
        self.cells.get(q).map_or(0, |cs| cs.iter().map(|c| self.spaces[c].space.dim()).sum())
    }

    pub fn max_q(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    /// Block of C_q belonging to a cell.
    pub fn block(&self, cell: usize) -> Option<(usize, usize, usize)> {
        for (q, cs) in self.cells.iter().enumerate() {
            if let Some(i) = cs.iter().position(|&c| c == cell) {
                return Some((q, self.offsets[q][i], self.spaces[&cell].space.dim()));
            }
        }
        None
    }
}

pub fn build_complex(fan: &Fan, p: usize) -> Result<CellComplex, CohError> {
    for (i, c) in fan.cells().iter().enumerate() {
        if !c.is_simplicial() {
            return Err(CohError::NonSimplicial(i));
        }
    }
    let dim = fan.cells().iter().map(|c| c.dim).max();
    let Some(dim) = dim else {
        return Ok(CellComplex { p, cells: Vec::new(), spaces: BTreeMap::new(), offsets: Vec::new(), boundary: Vec::new() });
    };
    let mut cells = vec![Vec::new(); dim + 1];
    for (i, c) in fan.cells().iter().enumerate() {
        cells[c.dim].push(i);
    }
    let mut spaces = BTreeMap::new();
    for i in 0..fan.cells().len() {
        spaces.insert(i, coefficient_space(fan, i, p)?);
    }
    let offsets: Vec<Vec<usize>> = cells
        .iter()
        .map(|cs| {
            let mut o = 0;
            cs.iter()
                .map(|c| {
                    let s = o;
                    o += spaces[c].space.dim();
                    s
                })
                .collect()
        })
        .collect();
    let mut cc = CellComplex { p, cells, spaces, offsets, boundary: Vec::new() };
    let mut boundary = vec![RatMatrix::zeros(0, cc.chain_dim(0))];
    for q in 1..=dim {
        let mut m = RatMatrix::zeros(cc.chain_dim(q - 1), cc.chain_dim(q));
        for (pi, &pc) in cc.cells[q].iter().enumerate() {
            let col0 = cc.offsets[q][pi];
            for f in fan.facets_of(pc) {
                let s = incidence(fan, pc, f)?;
                let r = restriction(fan, pc, f, p)?;
                let fi = cc.cells[q - 1].iter().position(|&x| x == f).expect("facet cell");
                let row0 = cc.offsets[q - 1][fi];
                for i in 0..r.matrix.rows() {
                    for j in 0..r.matrix.cols() {
                        let v = r.matrix.get(i, j);
                        if v.is_zero() {
                            continue;
                        }
                        let cur = m.get(row0 + i, col0 + j).clone();
                        m.set(row0 + i, col0 + j, cur + v * Q::from_integer((s as i64).into()));
                    }
                }
            }
        }
        boundary.push(m);
    }
    for q in 2..=dim {
        if !boundary[q - 1].mul(&boundary[q])?.is_zero() {
            return Err(CohError::BoundarySquare(q));
        }
    }
    cc.boundary = boundary;
    Ok(cc)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HomologyResult {
    pub p: usize,
    /// rank H_{p,q} indexed by q.
    pub ranks: BTreeMap<usize, usize>,
    /// rank H^{p,q} (equal to the homology ranks over Q).
    pub coranks: BTreeMap<usize, usize>,
}

pub fn homology(cc: &CellComplex) -> HomologyResult {
    let mut ranks = BTreeMap::new();
    let top = cc.cells.len();
    let bank: Vec<usize> = (0..=top).map(|q| cc.boundary.get(q).map_or(0, |m| m.rank())).collect();
    for q in 0..top {
        let r = cc.chain_dim(q) - bank[q] - bank.get(q + 1).copied().unwrap_or(0);
        ranks.insert(q, r);
    }
    HomologyResult { p: cc.p, coranks: ranks.clone(), ranks }
}

/// Convenience: H_{p,*} of a fan; degrees above the fan dimension are 0.
pub fn homology_of(fan: &Fan, p: usize) -> Result<HomologyResult, CohError> {
    let cc = build_complex(fan, p)?;
    Ok(homology(&cc))
}

/// dim F^p(0, Λ) and the annihilator J₀ ⊂ ∧^p M_Q of F_p(0, Λ).
#[derive(Clone, Debug, PartialEq)]
pub struct KGroup {
    pub p: usize,
    pub dim: usize,
    pub kernel: Subspace,
}

#[allow(non_snake_case)]
pub fn tropical_K_F0(fan: &Fan, p: usize) -> Result<KGroup, CohError> {
    let origin = fan
        .cells()
        .iter()
        .position(|c| c.orbit == 0 && c.dim == 0)
        .ok_or(CohError::NoOrigin)?;
    let n = fan.cell(origin).ambient_dim;
    if p > n {
        return Ok(KGroup { p, dim: 0, kernel: Subspace::zero(0) });
    }
    let f = coefficient_space(fan, origin, p)?;
    let kernel = f.space.annihilator();
    Ok(KGroup { p, dim: f.space.dim(), kernel })
}

/// Total rank table for all p.
pub fn betti_table(fan: &Fan) -> Result<BTreeMap<(usize, usize), usize>, CohError> {
    let mut out = BTreeMap::new();
    for p in 0..=fan.rank() {
        for (q, r) in homology_of(fan, p)?.ranks {
            out.insert((p, q), r);
        }
    }
    Ok(out)
}

pub fn is_abs_one(x: &Q) -> bool {
    x.abs() == Q::from_integer(1.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_linalg::qvec;
    use crate::polyfan::FanDoc;

    fn p2() -> FanDoc {
        FanDoc {
            lattice_rank: 2,
            rays: vec![vec![1, 0], vec![0, 1], vec![-1, -1]],
            cones: vec![vec![0, 1], vec![1, 2], vec![2, 0]],
            ambient: None,
        }
    }

    fn line(compact: bool) -> Fan {
        Fan::from_doc(&FanDoc {
            cones: vec![vec![0], vec![1], vec![2]],
            ambient: compact.then(|| Box::new(p2())),
            ..p2()
        })
        .unwrap()
    }

    fn cell_of(f: &Fan, orbit: usize, rays: &[Vec<i64>]) -> usize {
        let c = Cone::from_i64(orbit, f.ambient().orbit_dim(orbit), rays).unwrap();
        f.index_of(&c).unwrap()
    }

    #[test]
    fn line_coefficients() {
        let f = line(false);
        let o = cell_of(&f, 0, &[]);
        assert_eq!(coefficient_space(&f, o, 1).unwrap().space, Subspace::full(2));
        let e1 = cell_of(&f, 0, &[vec![1, 0]]);
        assert_eq!(coefficient_space(&f, e1, 1).unwrap().space, Subspace::span_i64(2, &[vec![1, 0]]));
        assert!(coefficient_space(&f, o, 2).unwrap().space.is_zero());
    }

    #[test]
    fn restriction_across_orbits() {
        let f = line(true);
        let e1 = cell_of(&f, 0, &[vec![1, 0]]);
        let sigma = f.ambient().find_cone(&[0]).unwrap();
        let pt = cell_of(&f, sigma, &[]);
        let r = restriction(&f, e1, pt, 1).unwrap();
        // F_1 of the boundary point is 0: the projection kills e1
        assert_eq!(r.matrix.rows(), 0);
        assert_eq!(r.ambient, RatMatrix::from_i64(&[vec![0, 1]]));
        let r0 = restriction(&f, e1, pt, 0).unwrap();
        assert_eq!(r0.matrix, RatMatrix::identity(1));
        assert_eq!(restriction(&f, e1, e1, 1).unwrap().matrix, RatMatrix::identity(1));
    }

    #[test]
    fn compact_line_homology() {
        let f = line(true);
        let h0 = homology_of(&f, 0).unwrap();
        assert_eq!(h0.ranks[&0], 1);
        assert_eq!(h0.ranks[&1], 0);
        let h1 = homology_of(&f, 1).unwrap();
        assert_eq!(h1.ranks[&0], 0);
        assert_eq!(h1.ranks[&1], 1);
        let h2 = homology_of(&f, 2).unwrap();
        assert!(h2.ranks.values().all(|&r| r == 0));
    }

    #[test]
    fn compact_plane_is_p2() {
        let f = Fan::from_doc(&FanDoc { ambient: Some(Box::new(p2())), ..p2() }).unwrap();
        let t = betti_table(&f).unwrap();
        for p in 0..=2 {
            for q in 0..=2 {
                assert_eq!(t[&(p, q)], usize::from(p == q), "H_{p},{q}");
            }
        }
    }

    #[test]
    fn incidence_of_a_ray() {
        let f = line(true);
        let e1 = cell_of(&f, 0, &[vec![1, 0]]);
        let o = cell_of(&f, 0, &[]);
        let sigma = f.ambient().find_cone(&[0]).unwrap();
        let inf = cell_of(&f, sigma, &[]);
        assert_eq!(incidence(&f, e1, o).unwrap(), -1);
        assert_eq!(incidence(&f, e1, inf).unwrap(), 1);
    }

    #[test]
    fn kgroup_examples() {
        let f = line(false);
        let k = tropical_K_F0(&f, 1).unwrap();
        assert_eq!((k.dim, k.kernel.dim()), (2, 0));
        let k = tropical_K_F0(&f, 2).unwrap();
        assert_eq!((k.dim, k.kernel.dim()), (0, 1));
        let ray = Fan::plain(2, &[vec![1, 0]], &[vec![0]]).unwrap();
        let k = tropical_K_F0(&ray, 1).unwrap();
        assert_eq!(k.dim, 1);
        assert_eq!(k.kernel, Subspace::span(2, &[qvec(&[0, 1])]));
    }

    #[test]
    fn empty_fan() {
        let f = Fan::plain(2, &[], &[]).unwrap();
        let h = homology_of(&f, 0).unwrap();
        assert!(h.ranks.values().all(|&r| r == 0));
    }
}
