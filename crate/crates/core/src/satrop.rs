//! Positive-part tools: exponential basic cones, sampled logarithmic limit
//! sets of semialgebraic sets in R^n_{>0}, the leading-coefficient test for
//! whether a set meets an irrational orbit, and boundary slices of chains.
//!
//! Sampled directions are evidence, not certificates.

use crate::analytic::{perm_sign, Chart, End, Expr, Op, ParamChain};
use crate::exact_linalg::{q, rational_reconstruct, Q};
use crate::analytic::orbit_monomial_basis;
use num::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SatropError {
    #[error("invalid cone: {0}")]
    Cone(String),
    #[error("invalid set: {0}")]
    Set(String),
    #[error("no point of the set found after {0} attempts")]
    Sampling(usize),
    #[error("no product structure declared near ray {0:?}")]
    NoProduct(Vec<i64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpBasicCone {
    pub r: usize,
    pub n: Vec<f64>,
    pub h: f64,
}

impl ExpBasicCone {
    pub fn new(n: Vec<f64>, h: f64) -> Result<Self, SatropError> {
        if n.iter().any(|x| !(*x > 0.0)) {
            return Err(SatropError::Cone("exponents must be positive".into()));
        }
        if !(h > 0.0) {
            return Err(SatropError::Cone("h must be positive".into()));
        }
        Ok(ExpBasicCone { r: n.len() + 1, n, h })
    }
}

/// a ∈ (0,h]^r and a_i ≤ a_{i+1}^{N_i}.
pub fn in_exp_cone(a: &[f64], c: &ExpBasicCone) -> bool {
    a.len() == c.r
        && a.iter().all(|x| *x > 0.0 && *x <= c.h)
        && (0..c.r - 1).all(|i| a[i] <= a[i + 1].powf(c.n[i]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rel {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "=")]
    Eq,
}

/// Real Laurent polynomial on R^n_{>0}: (coefficient, exponents).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealPoly(pub Vec<(f64, Vec<i64>)>);

impl RealPoly {
    /// Sign and log-magnitude of each term at u = −log x.
    fn log_terms(&self, u: &[f64]) -> Vec<(f64, f64)> {
        self.0
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(c, a)| (c.signum(), c.abs().ln() - a.iter().zip(u).map(|(e, x)| *e as f64 * x).sum::<f64>()))
            .collect()
    }

    /// Value divided by the largest term magnitude, so it stays finite.
    fn scaled(&self, u: &[f64]) -> f64 {
        let t = self.log_terms(u);
        let m = t.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return 0.0;
        }
        t.iter().map(|(s, l)| s * (l - m).exp()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub poly: RealPoly,
    pub rel: Rel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemialgSet {
    pub n: usize,
    pub constraints: Vec<Constraint>,
}

impl SemialgSet {
    pub fn validate(&self) -> Result<(), SatropError> {
        for (i, c) in self.constraints.iter().enumerate() {
            if c.poly.0.iter().all(|(a, _)| *a == 0.0) {
                return Err(SatropError::Set(format!("constraint {i} is the zero polynomial")));
            }
            if c.poly.0.iter().any(|(_, e)| e.len() != self.n) {
                return Err(SatropError::Set(format!("constraint {i} has exponents of the wrong length")));
            }
        }
        Ok(())
    }

    /// Inequalities at u = −log x (equalities are handled by solving).
    fn holds(&self, u: &[f64]) -> bool {
        self.constraints.iter().all(|c| {
            let v = c.poly.scaled(u);
            match c.rel {
                Rel::Ge => v >= -1e-12,
                Rel::Gt => v > 1e-12,
                Rel::Eq => v.abs() <= 1e-9,
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cluster {
    pub direction: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionCloud {
    pub directions: Vec<(Vec<f64>, f64)>,
    pub clusters: Vec<Cluster>,
    pub tolerance: f64,
    pub certified: bool,
}

impl DirectionCloud {
    pub fn cluster(mut directions: Vec<(Vec<f64>, f64)>, tolerance: f64) -> Self {
        directions.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut sums: Vec<(Vec<f64>, f64)> = Vec::new();
        for (d, w) in &directions {
            let hit = sums.iter_mut().find(|(s, _)| angle(&unit(s), d) < tolerance);
            match hit {
                Some((s, cw)) => {
                    for (a, b) in s.iter_mut().zip(d) {
                        *a += b * w;
                    }
                    *cw += w;
                }
                None => sums.push((d.iter().map(|x| x * w).collect(), *w)),
            }
        }
        let clusters = sums.into_iter().map(|(s, w)| Cluster { direction: unit(&s), weight: w }).collect();
        DirectionCloud { directions, clusters, tolerance, certified: false }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d.clamp(-1.0, 1.0).acos()
}

/// Roots of t ↦ p(u with u_k = t) on [lo, hi], by sign changes and bisection.
fn roots_in(p: &RealPoly, u: &[f64], k: usize, lo: f64, hi: f64) -> Vec<f64> {
    let grid = 4000;
    let mut v = u.to_vec();
    let mut at = |t: f64| {
        v[k] = t;
        p.scaled(&v)
    };
    let mut out = Vec::new();
    let mut prev_t = lo;
    let mut prev = at(lo);
    for i in 1..=grid {
        let t = lo + (hi - lo) * i as f64 / grid as f64;
        let cur = at(t);
        if prev == 0.0 {
            out.push(prev_t);
        } else if prev * cur < 0.0 {
            let (mut a, mut b, mut fa) = (prev_t, t, prev);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = at(m);
                if fm == 0.0 || (b - a) < 1e-14 * (1.0 + m.abs()) {
                    a = m;
                    b = m;
                    break;
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            out.push(0.5 * (a + b));
        }
        prev = cur;
        prev_t = t;
    }
    out
}

/// Try to produce one point of S with ‖−log x‖ ≤ 2R; equalities are solved
/// one variable at a time (each equality takes the first free variable it uses).
fn draw(s: &SemialgSet, radius: f64, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let n = s.n;
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let r = rng.gen_range(0.0..2.0 * radius);
    for x in &mut u {
        *x *= r / norm;
    }
    let mut fixed = vec![false; n];
    for c in s.constraints.iter().filter(|c| c.rel == Rel::Eq) {
        let used: Vec<usize> = (0..n).filter(|&k| c.poly.0.iter().any(|(a, e)| *a != 0.0 && e[k] != 0)).collect();
        let k = *used.iter().find(|&&k| !fixed[k])?;
        let span = 4.0 * radius + 10.0;
        let rs = roots_in(&c.poly, &u, k, -span, span);
        if rs.is_empty() {
            return None;
        }
        u[k] = rs[rng.gen_range(0..rs.len())];
        fixed[k] = true;
    }
    s.holds(&u).then_some(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCfg {
    pub radii: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// attempts per accepted sample before giving up
    pub budget: usize,
    pub tolerance: f64,
}

impl Default for SampleCfg {
    fn default() -> Self {
        SampleCfg { radii: vec![4.0, 8.0, 16.0, 32.0], samples: 400, seed: 1, budget: 50, tolerance: 0.1 }
    }
}

/// Directions of −log x for sample points beyond each radius, clustered.
pub fn log_limit_sample(s: &SemialgSet, cfg: &SampleCfg) -> Result<DirectionCloud, SatropError> {
    s.validate()?;
    if cfg.radii.windows(2).any(|w| w[1] <= w[0]) || cfg.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(SatropError::Set("radii must be positive and increasing".into()));
    }
    let chunks = 16usize;
    let per = cfg.samples.div_ceil(chunks);
    let results: Vec<(Vec<(Vec<f64>, f64)>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(c as u64));
            let mut out = Vec::new();
            let mut found = 0;
            for &radius in &cfg.radii {
                for _ in 0..per {
                    for _ in 0..cfg.budget {
                        if let Some(u) = draw(s, radius, &mut rng) {
                            found += 1;
                            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                            if norm >= radius {
                                out.push((u.iter().map(|x| x / norm).collect(), 1.0));
                            }
                            break;
                        }
                    }
                }
            }
            (out, found)
        })
        .collect();
    let found: usize = results.iter().map(|r| r.1).sum();
    if found == 0 {
        return Err(SatropError::Sampling(cfg.samples * cfg.budget * cfg.radii.len()));
    }
    let dirs = results.into_iter().flat_map(|r| r.0).collect();
    Ok(DirectionCloud::cluster(dirs, cfg.tolerance))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Meets {
    MeetsFully,
    Empty,
    Indeterminate,
}

fn rational_dir(w: &[f64]) -> Option<Vec<Q>> {
    w.iter().map(|x| rational_reconstruct(*x, 1_000_000, 1e-9)).collect()
}

/// Leading-coefficient test along x = e^{−t w}: every ≥-constraint is
/// dominated by its ⟨a,w⟩-minimal monomial.
pub fn orbit_meets(s: &SemialgSet, w: &[f64]) -> Meets {
    if w.len() != s.n || s.validate().is_err() {
        return Meets::Indeterminate;
    }
    let wq = rational_dir(w);
    let mut all_pos = true;
    for c in &s.constraints {
        if c.rel != Rel::Ge {
            return Meets::Indeterminate;
        }
        let mut merged: BTreeMap<&Vec<i64>, f64> = BTreeMap::new();
        for (k, a) in &c.poly.0 {
            *merged.entry(a).or_insert(0.0) += k;
        }
        let terms: Vec<(f64, &Vec<i64>)> = merged.into_iter().filter(|t| t.1 != 0.0).map(|(a, k)| (k, a)).collect();
        let vals: Vec<f64> = terms.iter().map(|(_, a)| a.iter().zip(w).map(|(e, x)| *e as f64 * x).sum()).collect();
        let m = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = 1.0 + m.abs();
        let near: Vec<usize> = (0..terms.len()).filter(|&i| vals[i] - m <= 1e-9 * scale).collect();
        let lead = if near.len() == 1 {
            near[0]
        } else {
            // floating tie: decide exactly on a rational approximation
            let Some(wq) = &wq else { return Meets::Indeterminate };
            let exact: Vec<Q> = near.iter().map(|&i| terms[i].1.iter().zip(wq).map(|(e, x)| q(*e) * x).sum()).collect();
            let mn = exact.iter().min().cloned().unwrap_or_else(Q::zero);
            let at_min: Vec<usize> = near.iter().zip(&exact).filter(|(_, v)| **v == mn).map(|(i, _)| *i).collect();
            if at_min.len() != 1 {
                return Meets::Indeterminate;
            }
            at_min[0]
        };
        let v = terms[lead].0;
        if v < 0.0 {
            return Meets::Empty;
        }
        all_pos &= v > 0.0;
    }
    if all_pos {
        Meets::MeetsFully
    } else {
        Meets::Indeterminate
    }
}

fn monomial_expr(map: &[Expr], row: &[i64]) -> Expr {
    let factors: Vec<Expr> = row
        .iter()
        .zip(map)
        .filter(|(e, _)| **e != 0)
        .map(|(e, z)| if *e == 1 { z.clone() } else { Expr::Op(Op::Pow, vec![z.clone(), Expr::Num(*e as f64)]) })
        .collect();
    if factors.is_empty() {
        Expr::Num(1.0)
    } else {
        Expr::Op(Op::Mul, factors)
    }
}

/// The slice of V at the divisor of `ray` with the radial param frozen: maps
/// to O(l)(R_{>0}) × (S¹)^n as (orbit monomials, unit phases of coordinates).
/// Orientations are set so that the log integral of (χ^m-phase, rest) over
/// the slice equals the face-map weight, where ⟨m, ray⟩ = 1.
pub fn phase_boundary_slice(v: &ParamChain, ray: &[i64]) -> Result<ParamChain, SatropError> {
    if !v.charts.iter().any(|c| c.products.iter().any(|p| p.ray == ray)) {
        return Err(SatropError::NoProduct(ray.to_vec()));
    }
    let n = v.n;
    let basis = orbit_monomial_basis(&[ray.to_vec()], n);
    let rows: Vec<Vec<i64>> = basis.iter().map(|b| b.iter().map(|x| x.to_i64().unwrap_or(0)).collect()).collect();
    let mut out = ParamChain::empty(2 * n - 1, v.dim - 1);
    for c in &v.charts {
        for p in c.products.iter().filter(|p| p.ray == ray) {
            let keep: Vec<usize> = (0..c.params.len()).filter(|&k| k != p.radial).collect();
            let frozen = match p.end {
                End::Lo => c.lo[p.radial],
                End::Hi => c.hi[p.radial],
            };
            let reidx: Vec<Expr> = (0..c.params.len())
                .map(|k| match keep.iter().position(|&j| j == k) {
                    Some(i) => Expr::Param(i),
                    None => Expr::Num(frozen),
                })
                .collect();
            let map: Vec<Expr> = c.map.iter().map(|e| substitute(e, &reidx)).collect();
            let mut new_map: Vec<Expr> = rows.iter().map(|r| monomial_expr(&map, r)).collect();
            new_map.extend(map.iter().map(|z| Expr::Op(Op::Unit, vec![z.clone()])));
            let mut full = vec![p.radial, p.angle];
            full.extend((0..c.params.len()).filter(|&k| k != p.radial && k != p.angle));
            let mut sliced: Vec<usize> = vec![p.angle];
            sliced.extend(keep.iter().copied().filter(|&k| k != p.angle));
            let pos: Vec<usize> = sliced.iter().map(|k| keep.iter().position(|j| j == k).expect("kept")).collect();
            let end_sign = if p.end == End::Hi { -1 } else { 1 };
            let orientation = -c.orientation * perm_sign(&full) * end_sign * perm_sign(&pos);
            out.charts.push(Chart {
                params: keep.iter().map(|&k| c.params[k].clone()).collect(),
                lo: keep.iter().map(|&k| c.lo[k]).collect(),
                hi: keep.iter().map(|&k| c.hi[k]).collect(),
                map: new_map,
                orientation,
                multiplicity: c.multiplicity.clone(),
                periodic: c.periodic.iter().filter_map(|k| keep.iter().position(|j| j == k)).collect(),
                products: Vec::new(),
            });
        }
    }
    Ok(out)
}

fn substitute(e: &Expr, by: &[Expr]) -> Expr {
    match e {
        Expr::Param(k) => by[*k].clone(),
        Expr::Op(op, a) => Expr::Op(*op, a.iter().map(|x| substitute(x, by)).collect()),
        other => other.clone(),
    }
}

/// Monomial list for the slice: the unit phase of χ^m with ⟨m, ray⟩ = 1,
/// then the given orbit monomials (orbit coordinates).
pub fn slice_monomials(n: usize, ray: &[i64], orbit_monomials: &[Vec<i64>]) -> Option<Vec<Vec<i64>>> {
    let m = unit_dual(ray)?;
    let mut out = Vec::new();
    let mut first = vec![0i64; n - 1];
    first.extend(m);
    out.push(first);
    for f in orbit_monomials {
        let mut row = f.clone();
        row.extend(std::iter::repeat(0).take(n));
        out.push(row);
    }
    Some(out)
}

fn unit_dual(ray: &[i64]) -> Option<Vec<i64>> {
    // extended gcd over the entries
    let mut x = vec![0i64; ray.len()];
    let mut g = 0i64;
    for (i, &a) in ray.iter().enumerate() {
        if a == 0 {
            continue;
        }
        if g == 0 {
            g = a;
            x[i] = 1;
            continue;
        }
        let (d, s, t) = egcd(g, a);
        for xi in x.iter_mut() {
            *xi *= s;
        }
        x[i] = t;
        g = d;
    }
    if g < 0 {
        x.iter_mut().for_each(|v| *v = -*v);
        g = -g;
    }
    (g == 1).then_some(x)
}

fn egcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (d, s, t) = egcd(b, a % b);
        (d, t, s - (a / b) * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::tests::line_near_zero;
    use crate::analytic::{face_map, log_integral, QuadratureCfg};
    use proptest::prelude::*;

    fn set(n: usize, cs: Vec<(Vec<(f64, Vec<i64>)>, Rel)>) -> SemialgSet {
        SemialgSet { n, constraints: cs.into_iter().map(|(p, rel)| Constraint { poly: RealPoly(p), rel }).collect() }
    }

    #[test]
    fn exp_cone_examples() {
        let c = ExpBasicCone::new(vec![2.0], 0.5).unwrap();
        assert!(in_exp_cone(&[1e-4, 0.1], &c));
        assert!(!in_exp_cone(&[0.1, 0.1], &c));
        assert!(in_exp_cone(&[0.01, 0.1], &c));
        assert!(ExpBasicCone::new(vec![0.0], 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn exp_cone_monotone(a in proptest::collection::vec(1e-6f64..1.0, 3), n1 in 0.5f64..3.0, n2 in 0.5f64..3.0, h in 0.1f64..1.0, s in 0.1f64..1.0) {
            let base = ExpBasicCone::new(vec![n1, n2], h).unwrap();
            // points lie below 1, so a larger exponent is a tighter bound
            let smaller_h = ExpBasicCone::new(vec![n1, n2], h * s).unwrap();
            let larger_n = ExpBasicCone::new(vec![n1 / s, n2 / s], h).unwrap();
            if in_exp_cone(&a, &smaller_h) { prop_assert!(in_exp_cone(&a, &base)); }
            if in_exp_cone(&a, &larger_n) { prop_assert!(in_exp_cone(&a, &base)); }
        }
    }

    #[test]
    fn parabola_directions() {
        let s = set(2, vec![(vec![(1.0, vec![0, 1]), (-1.0, vec![2, 0])], Rel::Eq)]);
        let cloud = log_limit_sample(&s, &SampleCfg::default()).unwrap();
        let t = (1.0f64 / 5.0).sqrt();
        let targets = [vec![t, 2.0 * t], vec![-t, -2.0 * t]];
        assert_eq!(cloud.clusters.len(), 2);
        for c in &cloud.clusters {
            assert!(targets.iter().any(|d| angle(d, &c.direction) < 0.05), "{:?}", c.direction);
        }
    }

    #[test]
    fn point_and_half_line() {
        let p = set(2, vec![(vec![(1.0, vec![1, 0]), (-1.0, vec![0, 0])], Rel::Eq), (vec![(1.0, vec![0, 1]), (-1.0, vec![0, 0])], Rel::Eq)]);
        assert!(log_limit_sample(&p, &SampleCfg::default()).unwrap().clusters.is_empty());
        let h = set(1, vec![(vec![(1.0, vec![0]), (-1.0, vec![1])], Rel::Ge)]);
        let cloud = log_limit_sample(&h, &SampleCfg::default()).unwrap();
        assert_eq!(cloud.clusters.len(), 1);
        assert!((cloud.clusters[0].direction[0] - 1.0).abs() < 1e-12);
        let none = set(1, vec![(vec![(-1.0, vec![0])], Rel::Ge)]);
        assert!(matches!(log_limit_sample(&none, &SampleCfg::default()), Err(SatropError::Sampling(_))));
    }

    #[test]
    fn orbit_meets_examples() {
        let a = set(1, vec![(vec![(1.0, vec![0]), (1.0, vec![1])], Rel::Ge)]);
        assert_eq!(orbit_meets(&a, &[1.0]), Meets::MeetsFully);
        let b = set(1, vec![(vec![(-1.0, vec![0]), (1.0, vec![1])], Rel::Ge)]);
        assert_eq!(orbit_meets(&b, &[1.0]), Meets::Empty);
        let c = set(2, vec![(vec![(1.0, vec![1, 0]), (-1.0, vec![0, 1])], Rel::Ge)]);
        assert_eq!(orbit_meets(&c, &[1.0, 1.0]), Meets::Indeterminate);
        // irrational direction separates the tie
        assert_eq!(orbit_meets(&c, &[std::f64::consts::SQRT_2, 1.0]), Meets::Empty);
    }

    #[test]
    fn slice_weight_matches_face_map() {
        let v = ParamChain::from_doc(&line_near_zero()).unwrap();
        let slice = phase_boundary_slice(&v, &[1, 0]).unwrap();
        assert_eq!(slice.dim, 1);
        assert_eq!(slice.n, 3);
        let fs = slice_monomials(2, &[1, 0], &[]).unwrap();
        let w = log_integral(&slice, &fs, &QuadratureCfg::default()).unwrap();
        let face: f64 = face_map(&v, &[1, 0]).unwrap().points().iter().map(|p| p.1).sum();
        assert!((w.value.re - face).abs() < 1e-9, "{} vs {face}", w.value);
        assert!(phase_boundary_slice(&v, &[0, 1]).is_err());
    }
}
