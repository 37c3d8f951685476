//! Superforms with polynomial-times-bump coefficients: d', d'', wedge,
//! boundary-condition checks against orbit charts, and integration over
//! simplex and cone cells.

use crate::exact_linalg::{binomial, q, sort_sign, subsets, to_f64, RatMatrix, Subspace, Q};
use crate::polyfan::{canonical_generator, hrep_to_rays, AmbientFan, Cone, Fan, FanError};
use crate::quad::{integrate_box, AdaptiveCfg};
use num::complex::Complex64;
use num::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormError {
    #[error("degree mismatch: {0}")]
    Degree(String),
    #[error("charts of the two forms differ")]
    ChartMismatch,
    #[error("no chart declared for orbit {0}")]
    MissingChart(String),
    #[error("integral over an unbounded cell diverges: {0}")]
    Divergent(String),
    #[error("quadrature did not converge (error estimate {0:e})")]
    NoConvergence(f64),
    #[error("invalid form: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fan(#[from] FanError),
}

/// Chain coefficient in ∧^p of a chart's lattice (wedge coordinates).
#[derive(Clone, Debug, PartialEq)]
pub enum Coef {
    Exact(Vec<Q>),
    Numeric(Vec<Complex64>),
}

impl Coef {
    pub fn numeric(&self) -> Vec<Complex64> {
        match self {
            Coef::Exact(v) => v.iter().map(|x| Complex64::new(to_f64(x), 0.0)).collect(),
            Coef::Numeric(v) => v.clone(),
        }
    }
}

// ---------- coefficient profiles ----------

/// Standard bump exp(-1/(1-t^2)) with t = (x_coord - center) / radius.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bump {
    pub coord: usize,
    pub center: Q,
    pub radius: Q,
}

/// b(t)^e · t^k · (1 - t^2)^(-m)
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BumpPow {
    pub bump: Bump,
    pub e: u32,
    pub k: u32,
    pub m: u32,
}

impl BumpPow {
    fn eval(&self, x: &[f64]) -> f64 {
        let t = (x[self.bump.coord] - to_f64(&self.bump.center)) / to_f64(&self.bump.radius);
        let u = 1.0 - t * t;
        if u <= 0.0 {
            return 0.0;
        }
        let l = -(self.e as f64) / u - self.m as f64 * u.ln();
        l.exp() * t.powi(self.k as i32)
    }
}

type TermKey = (Vec<u32>, Vec<BumpPow>);

/// Finite sum of c · x^a · Π bump powers, exact rational coefficients.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoefProfile {
    pub n: usize,
    terms: BTreeMap<TermKey, Q>,
}

fn merge_bumps(a: &[BumpPow], b: &[BumpPow]) -> Vec<BumpPow> {
    let mut out: BTreeMap<Bump, (u32, u32, u32)> = BTreeMap::new();
    for f in a.iter().chain(b) {
        let e = out.entry(f.bump.clone()).or_insert((0, 0, 0));
        e.0 += f.e;
        e.1 += f.k;
        e.2 += f.m;
    }
    out.into_iter().map(|(bump, (e, k, m))| BumpPow { bump, e, k, m }).collect()
}

impl CoefProfile {
    pub fn zero(n: usize) -> Self {
        CoefProfile { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Q) -> Self {
        Self::monomial(n, c, &vec![0; n])
    }

    pub fn monomial(n: usize, c: Q, exps: &[u32]) -> Self {
        let mut p = Self::zero(n);
        p.add_term(c, exps.to_vec(), Vec::new());
        p
    }

    /// A single bump in coordinate `coord`.
    pub fn bump(n: usize, coord: usize, center: Q, radius: Q) -> Self {
        let mut p = Self::zero(n);
        p.add_term(Q::one(), vec![0; n], vec![BumpPow { bump: Bump { coord, center, radius }, e: 1, k: 0, m: 0 }]);
        p
    }

    pub fn add_term(&mut self, c: Q, exps: Vec<u32>, bumps: Vec<BumpPow>) {
        if c.is_zero() {
            return;
        }
        let key = (exps, merge_bumps(&bumps, &[]));
        let slot = self.terms.entry(key.clone()).or_insert_with(Q::zero);
        *slot += c;
        if slot.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Vec<BumpPow>, &Q)> {
        self.terms.iter().map(|((a, b), c)| (a, b, c))
    }

    pub fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|(_, b)| b.is_empty())
    }

    pub fn add(&self, o: &CoefProfile) -> CoefProfile {
        let mut r = self.clone();
        for ((a, b), c) in &o.terms {
            r.add_term(c.clone(), a.clone(), b.clone());
        }
        r
    }

    pub fn scale(&self, s: &Q) -> CoefProfile {
        let mut r = Self::zero(self.n);
        for ((a, b), c) in &self.terms {
            r.add_term(c * s, a.clone(), b.clone());
        }
        r
    }

    pub fn mul(&self, o: &CoefProfile) -> CoefProfile {
        let mut r = Self::zero(self.n);
        for ((a1, b1), c1) in &self.terms {
            for ((a2, b2), c2) in &o.terms {
                let a: Vec<u32> = a1.iter().zip(a2).map(|(x, y)| x + y).collect();
                r.add_term(c1 * c2, a, merge_bumps(b1, b2));
            }
        }
        r
    }

    /// Exact partial derivative in coordinate i.
    pub fn diff(&self, i: usize) -> CoefProfile {
        let mut r = Self::zero(self.n);
        for ((a, bs), c) in &self.terms {
            if a[i] > 0 {
                let mut a2 = a.clone();
                a2[i] -= 1;
                r.add_term(c * q(a[i] as i64), a2, bs.clone());
            }
            for (j, f) in bs.iter().enumerate() {
                if f.bump.coord != i {
                    continue;
                }
                let inv = Q::one() / &f.bump.radius;
                let mut put = |coef: Q, k: u32, m: u32| {
                    if coef.is_zero() {
                        return;
                    }
                    let mut b2 = bs.clone();
                    b2[j] = BumpPow { bump: f.bump.clone(), e: f.e, k, m };
                    r.add_term(c * coef * &inv, a.clone(), b2);
                };
                put(q(-2 * f.e as i64), f.k + 1, f.m + 2);
                if f.k > 0 {
                    put(q(f.k as i64), f.k - 1, f.m);
                }
                put(q(2 * f.m as i64), f.k + 1, f.m + 1);
            }
        }
        r
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, bs), c) in &self.terms {
            let mut v = to_f64(c);
            for f in bs {
                v *= f.eval(x);
                if v == 0.0 {
                    break;
                }
            }
            if v == 0.0 {
                continue;
            }
            for (xi, &k) in x.iter().zip(a) {
                if k > 0 {
                    v *= xi.powi(k as i32);
                }
            }
            s += v;
        }
        s
    }

    /// Exact value of a polynomial profile at a rational point.
    pub fn eval_exact(&self, x: &[Q]) -> Option<Q> {
        let mut s = Q::zero();
        for ((a, bs), c) in &self.terms {
            if !bs.is_empty() {
                return None;
            }
            let mut v = c.clone();
            for (xi, &k) in x.iter().zip(a) {
                for _ in 0..k {
                    v *= xi;
                }
            }
            s += v;
        }
        Some(s)
    }

    /// Does the coefficient depend on coordinate i (structurally)?
    pub fn depends_on(&self, i: usize) -> bool {
        self.terms.keys().any(|(a, bs)| a[i] > 0 || bs.iter().any(|f| f.bump.coord == i))
    }

    /// Terms that survive where coordinate i exceeds `t` (bumps in i supported below t vanish).
    pub fn restrict_above(&self, i: usize, t: &Q) -> CoefProfile {
        self.restrict_beyond(i, t, true)
    }

    /// Drop terms whose bump support misses {x_i ≥ t} (or {x_i ≤ −t}).
    pub fn restrict_beyond(&self, i: usize, t: &Q, up: bool) -> CoefProfile {
        let mut r = Self::zero(self.n);
        for ((a, bs), c) in &self.terms {
            let dead = bs.iter().any(|f| {
                f.bump.coord == i
                    && if up { &(&f.bump.center + &f.bump.radius) <= t } else { &(&f.bump.center - &f.bump.radius) >= &-t }
            });
            if !dead {
                r.add_term(c.clone(), a.clone(), bs.clone());
            }
        }
        r
    }

    /// Rename chart coordinate j to coordinate sel[j] of an n_new-dimensional chart.
    fn pull_coordinate(&self, sel: &[usize], n_new: usize) -> CoefProfile {
        let mut r = Self::zero(n_new);
        for ((a, bs), c) in &self.terms {
            let mut a2 = vec![0u32; n_new];
            for (j, &k) in a.iter().enumerate() {
                a2[sel[j]] += k;
            }
            let b2 = bs
                .iter()
                .map(|f| BumpPow { bump: Bump { coord: sel[f.bump.coord], ..f.bump.clone() }, ..f.clone() })
                .collect();
            r.add_term(c.clone(), a2, b2);
        }
        r
    }

    /// Per-term box bounds from bumps: coordinate → [lo, hi].
    fn support_bounds(bs: &[BumpPow]) -> BTreeMap<usize, (Q, Q)> {
        let mut out: BTreeMap<usize, (Q, Q)> = BTreeMap::new();
        for f in bs {
            let lo = &f.bump.center - &f.bump.radius;
            let hi = &f.bump.center + &f.bump.radius;
            let e = out.entry(f.bump.coord).or_insert((lo.clone(), hi.clone()));
            if lo > e.0 {
                e.0 = lo;
            }
            if hi < e.1 {
                e.1 = hi;
            }
        }
        out
    }

    fn single(&self, key: &TermKey, c: &Q) -> CoefProfile {
        let mut r = Self::zero(self.n);
        r.add_term(c.clone(), key.0.clone(), key.1.clone());
        r
    }
}

// ---------- superforms ----------

/// (I, J) index pair of d'x_I ⊗ d''x_J, both strictly increasing.
pub type Comp = (Vec<usize>, Vec<usize>);

/// The form restricted to one orbit chart N_σ.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub orbit: usize,
    pub dim: usize,
    /// Depth past which the form near this orbit must be pulled back from it.
    pub threshold: f64,
    /// Box in chart coordinates where the boundary condition is checked.
    pub nbhd: Vec<(f64, f64)>,
    pub comps: BTreeMap<Comp, CoefProfile>,
}

impl Chart {
    fn new(orbit: usize, dim: usize) -> Self {
        Chart { orbit, dim, threshold: 10.0, nbhd: vec![(-10.0, 10.0); dim], comps: BTreeMap::new() }
    }

    fn put(&mut self, i: &[usize], j: &[usize], f: CoefProfile) {
        let (si, ii) = sort_sign(i);
        let (sj, jj) = sort_sign(j);
        if si == 0 || sj == 0 || f.is_zero() {
            return;
        }
        let f = f.scale(&q((si * sj) as i64));
        let key = (ii, jj);
        let v = match self.comps.remove(&key) {
            Some(old) => old.add(&f),
            None => f,
        };
        if !v.is_zero() {
            self.comps.insert(key, v);
        }
    }

    pub fn eval(&self, x: &[f64]) -> BTreeMap<Comp, f64> {
        self.comps.iter().map(|(k, f)| (k.clone(), f.eval(x))).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Superform {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// charts[0] is the chart of N_R itself (orbit 0)
    pub charts: Vec<Chart>,
}

impl Superform {
    pub fn zero(n: usize, p: usize, q: usize) -> Self {
        Superform { n, p, q, charts: vec![Chart::new(0, n)] }
    }

    /// f d'x_I ⊗ d''x_J on N_R.
    pub fn term(n: usize, i: &[usize], j: &[usize], f: CoefProfile) -> Self {
        let mut w = Self::zero(n, i.len(), j.len());
        w.charts[0].put(i, j, f);
        w
    }

    pub fn add_chart(&mut self, orbit: usize, dim: usize, threshold: f64, nbhd: Vec<(f64, f64)>) -> usize {
        let mut c = Chart::new(orbit, dim);
        c.threshold = threshold;
        c.nbhd = nbhd;
        self.charts.push(c);
        self.charts.len() - 1
    }

    pub fn put(&mut self, chart: usize, i: &[usize], j: &[usize], f: CoefProfile) -> Result<(), FormError> {
        if i.len() != self.p || j.len() != self.q {
            return Err(FormError::Degree(format!("term of degree ({},{}) in a ({},{})-form", i.len(), j.len(), self.p, self.q)));
        }
        let c = &mut self.charts[chart];
        if i.iter().chain(j).any(|&k| k >= c.dim) || f.n != c.dim {
            return Err(FormError::Invalid("index outside the chart".into()));
        }
        c.put(i, j, f);
        Ok(())
    }

    pub fn main(&self) -> &Chart {
        &self.charts[0]
    }

    pub fn chart_for(&self, orbit: usize) -> Option<&Chart> {
        self.charts.iter().find(|c| c.orbit == orbit)
    }

    pub fn is_zero(&self) -> bool {
        self.charts.iter().all(|c| c.comps.is_empty())
    }

    fn same_charts(&self, o: &Superform) -> bool {
        self.charts.len() == o.charts.len()
            && self.charts.iter().zip(&o.charts).all(|(a, b)| a.orbit == b.orbit && a.dim == b.dim)
    }

    fn map_charts<F: Fn(&Chart) -> BTreeMap<Comp, CoefProfile>>(&self, p: usize, q: usize, f: F) -> Superform {
        let charts = self
            .charts
            .iter()
            .map(|c| Chart { comps: f(c), ..c.clone() })
            .collect();
        Superform { n: self.n, p, q, charts }
    }

    pub fn add(&self, o: &Superform) -> Result<Superform, FormError> {
        if !self.same_charts(o) {
            return Err(FormError::ChartMismatch);
        }
        if (self.p, self.q) != (o.p, o.q) && !o.is_zero() && !self.is_zero() {
            return Err(FormError::Degree("sum of forms of different degree".into()));
        }
        let (p, q) = if self.is_zero() { (o.p, o.q) } else { (self.p, self.q) };
        let mut r = self.clone();
        r.p = p;
        r.q = q;
        for (c, oc) in r.charts.iter_mut().zip(&o.charts) {
            for ((i, j), f) in &oc.comps {
                c.put(i, j, f.clone());
            }
        }
        Ok(r)
    }

    pub fn scale(&self, s: &Q) -> Superform {
        self.map_charts(self.p, self.q, |c| {
            let mut out = Chart::new(c.orbit, c.dim);
            for ((i, j), f) in &c.comps {
                out.put(i, j, f.scale(s));
            }
            out.comps
        })
    }

    pub fn d_double_prime(&self) -> Superform {
        self.map_charts(self.p, self.q + 1, |c| {
            let mut out = Chart::new(c.orbit, c.dim);
            for ((i, j), f) in &c.comps {
                for k in 0..c.dim {
                    if j.contains(&k) {
                        continue;
                    }
                    let mut jj = vec![k];
                    jj.extend(j.iter().copied());
                    out.put(i, &jj, f.diff(k));
                }
            }
            out.comps
        })
    }

    pub fn d_prime(&self) -> Superform {
        let sign = if self.q % 2 == 0 { q(1) } else { q(-1) };
        self.map_charts(self.p + 1, self.q, |c| {
            let mut out = Chart::new(c.orbit, c.dim);
            for ((i, j), f) in &c.comps {
                for k in 0..c.dim {
                    if i.contains(&k) {
                        continue;
                    }
                    let mut ii = vec![k];
                    ii.extend(i.iter().copied());
                    out.put(&ii, j, f.diff(k).scale(&sign));
                }
            }
            out.comps
        })
    }

    pub fn wedge(&self, o: &Superform) -> Result<Superform, FormError> {
        if !self.same_charts(o) {
            return Err(FormError::ChartMismatch);
        }
        let sign = if (self.p * o.q) % 2 == 0 { q(1) } else { q(-1) };
        let mut r = Superform { n: self.n, p: self.p + o.p, q: self.q + o.q, charts: Vec::new() };
        for (a, b) in self.charts.iter().zip(&o.charts) {
            let mut out = Chart { comps: BTreeMap::new(), ..a.clone() };
            for ((i1, j1), f1) in &a.comps {
                for ((i2, j2), f2) in &b.comps {
                    let ii: Vec<usize> = i1.iter().chain(i2).copied().collect();
                    let jj: Vec<usize> = j1.iter().chain(j2).copied().collect();
                    out.put(&ii, &jj, f1.mul(f2).scale(&sign));
                }
            }
            r.charts.push(out);
        }
        Ok(r)
    }

    /// Components of the pullback along a linear map A (rows: target functionals
    /// in source coordinates), evaluated at the image point.
    fn pulled_values(chart: &Chart, a: &RatMatrix, y: &[f64], p: usize, qd: usize) -> BTreeMap<Comp, f64> {
        let src = a.cols();
        let af: Vec<Vec<f64>> = (0..a.rows()).map(|r| a.row(r).iter().map(to_f64).collect()).collect();
        let minor = |rows: &[usize], cols: &[usize]| -> f64 {
            let m: Vec<Vec<f64>> = rows.iter().map(|&r| cols.iter().map(|&c| af[r][c]).collect()).collect();
            det_small(m)
        };
        let vals = chart.eval(y);
        let mut out = BTreeMap::new();
        for ii in subsets(src, p) {
            for jj in subsets(src, qd) {
                let mut s = 0.0;
                for ((i, j), v) in &vals {
                    if *v == 0.0 {
                        continue;
                    }
                    s += v * minor(i, &ii) * minor(j, &jj);
                }
                if s != 0.0 {
                    out.insert((ii.clone(), jj), s);
                }
            }
        }
        out
    }
}

fn det_small(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap_or(c);
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

// ---------- boundary condition ----------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryWitness {
    pub sigma: usize,
    pub tau: usize,
    pub point: Vec<f64>,
    pub component: (Vec<usize>, Vec<usize>),
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryVerdict {
    pub ok: bool,
    /// pairs settled by the symbolic comparison
    pub symbolic_pairs: usize,
    pub numeric_points: usize,
    pub witness: Option<BoundaryWitness>,
}

/// Check that near each orbit σ met by the fan, every chart τ ⊂ σ agrees with
/// the pullback of the σ-chart along π_{σ,τ}. Symbolic where π_{σ,0} selects
/// coordinates, numeric (10³ points per pair, tol 1e-9) always.
pub fn boundary_condition_check(w: &Superform, fan: &Fan, seed: u64) -> Result<BoundaryVerdict, FormError> {
    let amb = fan.ambient();
    let mut orbits: Vec<usize> = fan.cells().iter().map(|c| c.orbit).collect();
    orbits.sort();
    orbits.dedup();
    for &o in &orbits {
        if w.chart_for(o).is_none() {
            return Err(FormError::MissingChart(format!("{:?}", amb.cones()[o])));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdict = BoundaryVerdict { ok: true, symbolic_pairs: 0, numeric_points: 0, witness: None };
    for sc in w.charts.iter().filter(|c| c.orbit != 0) {
        let sigma = sc.orbit;
        if amb.cones()[sigma].len() != amb.orbit_dim(0) - amb.orbit_dim(sigma) {
            return Err(FormError::Invalid("boundary charts need simplicial orbits".into()));
        }
        if symbolic_match(w, amb, sc)? {
            verdict.symbolic_pairs += 1;
        }
        for tc in w.charts.iter().filter(|c| c.orbit != sigma && amb.is_face(c.orbit, sigma)) {
            let tau = tc.orbit;
            let proj = amb.orbit_projection(sigma, tau)?;
            for _ in 0..1000 {
                let x = sample_near(amb, sigma, sc, &mut rng);
                let xq: Vec<Q> = x.iter().map(|v| Q::from_float(*v).expect("finite")).collect();
                let yt: Vec<f64> = amb.to_orbit(tau, &xq).iter().map(to_f64).collect();
                let ys: Vec<f64> = amb.to_orbit(sigma, &xq).iter().map(to_f64).collect();
                let lhs = tc.eval(&yt);
                let rhs = Superform::pulled_values(sc, &proj, &ys, w.p, w.q);
                verdict.numeric_points += 1;
                let keys: std::collections::BTreeSet<&Comp> = lhs.keys().chain(rhs.keys()).collect();
                for k in keys {
                    let a = lhs.get(k).copied().unwrap_or(0.0);
                    let b = rhs.get(k).copied().unwrap_or(0.0);
                    let dev = (a - b).abs();
                    if dev > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                        verdict.ok = false;
                        verdict.witness =
                            Some(BoundaryWitness { sigma, tau, point: x, component: k.clone(), deviation: dev });
                        return Ok(verdict);
                    }
                }
            }
        }
    }
    Ok(verdict)
}

/// A point x of N_R with every ray coordinate of σ past the chart threshold
/// and orbit coordinates inside the declared box.
fn sample_near(amb: &AmbientFan, sigma: usize, sc: &Chart, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = amb.rank();
    let rays: Vec<Vec<f64>> = amb.cones()[sigma]
        .iter()
        .map(|&r| amb.rays()[r].iter().map(|x| x.to_f64().unwrap_or(0.0)).collect())
        .collect();
    let z: Vec<f64> = sc.nbhd.iter().map(|(a, b)| rng.gen_range(*a..*b)).collect();
    // lift z: rows m_j (orbit functionals) and ray directions, rhs (z, 0)
    let mut rows: Vec<Vec<Q>> = amb.orbit_basis(sigma).iter().map(|m| crate::exact_linalg::z_to_q(m)).collect();
    rows.extend(amb.cones()[sigma].iter().map(|&r| crate::exact_linalg::z_to_q(&amb.rays()[r])));
    let a = RatMatrix::from_rows(&rows, n);
    let inv = invert_f64(&a);
    let mut rhs = z.clone();
    rhs.extend(std::iter::repeat(0.0).take(rays.len()));
    let mut x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * rhs[j]).sum()).collect();
    for r in &rays {
        let depth = sc.threshold + 10f64.powf(rng.gen_range(-3.0..3.0));
        for (xi, ri) in x.iter_mut().zip(r) {
            *xi += depth * ri;
        }
    }
    x
}

fn invert_f64(a: &RatMatrix) -> Vec<Vec<f64>> {
    let n = a.rows();
    let mut m: Vec<Vec<Q>> = a.row_vecs();
    for (i, r) in m.iter_mut().enumerate() {
        r.extend((0..n).map(|j| if i == j { Q::one() } else { Q::zero() }));
    }
    let (r, _) = RatMatrix::from_rows(&m, 2 * n).rref();
    (0..n).map(|i| (0..n).map(|j| to_f64(r.get(i, n + j))).collect()).collect()
}

/// Symbolic comparison for orbit charts whose coordinates are a selection of
/// the standard ones (σ spanned by standard basis vectors).
fn symbolic_match(w: &Superform, amb: &AmbientFan, sc: &Chart) -> Result<bool, FormError> {
    let n = amb.rank();
    let sigma = sc.orbit;
    let mut dirs = Vec::new();
    for &r in &amb.cones()[sigma] {
        let ray = &amb.rays()[r];
        let nz: Vec<usize> = (0..n).filter(|&i| !ray[i].is_zero()).collect();
        if nz.len() != 1 || !ray[nz[0]].abs().is_one() {
            return Ok(false);
        }
        dirs.push((nz[0], ray[nz[0]].is_positive()));
    }
    let rest: Vec<usize> = (0..n).filter(|i| !dirs.iter().any(|d| d.0 == *i)).collect();
    // orbit coordinates must be exactly the remaining standard coordinates
    let basis = amb.orbit_basis(sigma);
    for (j, m) in basis.iter().enumerate() {
        let nz: Vec<usize> = (0..n).filter(|&i| !m[i].is_zero()).collect();
        if nz != vec![rest[j]] || !m[rest[j]].is_one() {
            return Ok(false);
        }
    }
    let t = Q::from_float(sc.threshold).unwrap_or_else(Q::zero);
    let mut restricted: BTreeMap<Comp, CoefProfile> = BTreeMap::new();
    for (k, f) in &w.main().comps {
        let mut g = f.clone();
        for &(d, up) in &dirs {
            g = g.restrict_beyond(d, &t, up);
        }
        if !g.is_zero() {
            restricted.insert(k.clone(), g);
        }
    }
    let mut pulled: BTreeMap<Comp, CoefProfile> = BTreeMap::new();
    for ((i, j), f) in &sc.comps {
        let ii: Vec<usize> = i.iter().map(|&a| rest[a]).collect();
        let jj: Vec<usize> = j.iter().map(|&a| rest[a]).collect();
        pulled.insert((ii, jj), f.pull_coordinate(&rest, n));
    }
    Ok(restricted == pulled)
}

// ---------- integration ----------

#[derive(Clone, Debug, PartialEq)]
pub enum CellShape {
    /// Oriented simplex [v0, ..., vq].
    Simplex(Vec<Vec<Q>>),
    /// Cone from the origin over ordered rays (orientation = ray order).
    Cone(Vec<Vec<Q>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellTerm {
    pub orbit: usize,
    pub shape: CellShape,
    pub coef: Coef,
}

/// Σ v ⊗ γ with γ simplices or cones, all of dimension q, v ∈ ∧^p.
#[derive(Clone, Debug, PartialEq)]
pub struct CellChain {
    pub p: usize,
    pub q: usize,
    pub terms: Vec<CellTerm>,
}

impl CellChain {
    /// Simplicial boundary of a simplex chain (coefficients unchanged).
    pub fn boundary(&self) -> Result<CellChain, FormError> {
        let mut terms = Vec::new();
        for t in &self.terms {
            let CellShape::Simplex(vs) = &t.shape else {
                return Err(FormError::Invalid("boundary of cone cells is not supported".into()));
            };
            for i in 0..vs.len() {
                let mut face = vs.clone();
                face.remove(i);
                let coef = if i % 2 == 0 {
                    t.coef.clone()
                } else {
                    match &t.coef {
                        Coef::Exact(v) => Coef::Exact(v.iter().map(|x| -x).collect()),
                        Coef::Numeric(v) => Coef::Numeric(v.iter().map(|x| -x).collect()),
                    }
                };
                terms.push(CellTerm { orbit: t.orbit, shape: CellShape::Simplex(face), coef });
            }
        }
        Ok(CellChain { p: self.p, q: self.q.saturating_sub(1), terms })
    }

    /// Cone cells of a fan, each in its canonical orientation.
    pub fn from_cells(fan: &Fan, p: usize, q: usize, cells: &[(usize, Coef)]) -> CellChain {
        let terms = cells
            .iter()
            .map(|(i, coef)| {
                let c: &Cone = fan.cell(*i);
                CellTerm { orbit: c.orbit, shape: CellShape::Cone(oriented_rays(c)), coef: coef.clone() }
            })
            .collect();
        CellChain { p, q, terms }
    }
}

/// Rays of a simplicial cone ordered and signed so that their wedge is a
/// positive multiple of the canonical generator.
pub fn oriented_rays(c: &Cone) -> Vec<Vec<Q>> {
    let mut rays = c.gens();
    if rays.len() < 2 {
        return rays;
    }
    let w = crate::exact_linalg::wedge_of(&rays, c.ambient_dim);
    let g = canonical_generator(c);
    let s = w.iter().zip(&g).find(|(_, b)| !b.is_zero()).map(|(a, b)| a / b).unwrap_or_else(Q::one);
    if s.is_negative() {
        rays.swap(0, 1);
    }
    rays
}

fn pairing(coef: &[Complex64], dim: usize, i: &[usize]) -> Complex64 {
    let idx = subsets(dim, i.len());
    match idx.binary_search(&i.to_vec()) {
        Ok(k) => coef.get(k).copied().unwrap_or_default(),
        Err(_) => Complex64::zero(),
    }
}

fn det_q(m: Vec<Vec<Q>>) -> Q {
    let n = m.len();
    if n == 0 {
        return Q::one();
    }
    RatMatrix::from_rows(&m, n).det().expect("square")
}

/// Exact ∫ over the standard q-simplex of t^a.
fn simplex_monomial(a: &[u32]) -> Q {
    let fact = |k: u64| -> num::BigInt { (1..=k).fold(num::BigInt::one(), |acc, i| acc * num::BigInt::from(i)) };
    let qd = a.len() as u64;
    let tot: u64 = a.iter().map(|&x| x as u64).sum();
    let num = a.iter().fold(num::BigInt::one(), |acc, &k| acc * fact(k as u64));
    Q::new(num, fact(tot + qd))
}

type TPoly = BTreeMap<Vec<u32>, Q>;

fn tpoly_mul(a: &TPoly, b: &TPoly) -> TPoly {
    let mut out = TPoly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert_with(Q::zero) += ca * cb;
        }
    }
    out.retain(|_, c| !c.is_zero());
    out
}

/// Exact integral of a polynomial profile times dx_J over an affine simplex.
fn simplex_exact(f: &CoefProfile, j: &[usize], vs: &[Vec<Q>]) -> Option<Q> {
    let qd = vs.len() - 1;
    let v0 = &vs[0];
    let d: Vec<Vec<Q>> = vs[1..].iter().map(|v| v.iter().zip(v0).map(|(a, b)| a - b).collect()).collect();
    if qd == 0 {
        return f.eval_exact(v0);
    }
    let jac = det_q(j.iter().map(|&r| d.iter().map(|col| col[r].clone()).collect()).collect());
    if jac.is_zero() {
        return Some(Q::zero());
    }
    // x_c as a linear polynomial in t
    let lin: Vec<TPoly> = (0..f.n)
        .map(|c| {
            let mut p = TPoly::new();
            if !v0[c].is_zero() {
                p.insert(vec![0; qd], v0[c].clone());
            }
            for (i, col) in d.iter().enumerate() {
                if !col[c].is_zero() {
                    let mut e = vec![0; qd];
                    e[i] = 1;
                    p.insert(e, col[c].clone());
                }
            }
            p
        })
        .collect();
    let mut total = Q::zero();
    for (a, bs, c) in f.terms() {
        if !bs.is_empty() {
            return None;
        }
        let mut p: TPoly = [(vec![0; qd], c.clone())].into_iter().collect();
        for (ci, &k) in a.iter().enumerate() {
            for _ in 0..k {
                p = tpoly_mul(&p, &lin[ci]);
            }
        }
        for (e, c) in p {
            total += c * simplex_monomial(&e);
        }
    }
    Some(total * jac)
}

/// Exact integral of a polynomial form over a simplex chain with exact coefficients.
pub fn integrate_exact(chain: &CellChain, w: &Superform) -> Result<Q, FormError> {
    if (chain.p, chain.q) != (w.p, w.q) {
        return Err(FormError::Degree(format!("({},{})-chain against a ({},{})-form", chain.p, chain.q, w.p, w.q)));
    }
    let mut total = Q::zero();
    for t in &chain.terms {
        let chart = w.chart_for(t.orbit).ok_or_else(|| FormError::MissingChart(t.orbit.to_string()))?;
        let (CellShape::Simplex(vs), Coef::Exact(v)) = (&t.shape, &t.coef) else {
            return Err(FormError::Invalid("exact integration needs simplices with exact coefficients".into()));
        };
        let idx = subsets(chart.dim, chain.p);
        for ((i, j), f) in &chart.comps {
            let k = idx.binary_search(i).map_err(|_| FormError::Invalid("index".into()))?;
            if v[k].is_zero() {
                continue;
            }
            let val = simplex_exact(f, j, vs)
                .ok_or_else(|| FormError::Invalid("coefficient is not polynomial".into()))?;
            total += &v[k] * val;
        }
    }
    Ok(total)
}

/// ∫_chain ω: exact for polynomial data on simplices, adaptive quadrature otherwise.
pub fn integrate(chain: &CellChain, w: &Superform, cfg: &AdaptiveCfg) -> Result<Complex64, FormError> {
    if (chain.p, chain.q) != (w.p, w.q) {
        return Err(FormError::Degree(format!("({},{})-chain against a ({},{})-form", chain.p, chain.q, w.p, w.q)));
    }
    let mut parts = Vec::new();
    for t in &chain.terms {
        let chart = w.chart_for(t.orbit).ok_or_else(|| FormError::MissingChart(t.orbit.to_string()))?;
        let coef = t.coef.numeric();
        for ((i, j), f) in &chart.comps {
            let pv = pairing(&coef, chart.dim, i);
            if pv == Complex64::zero() {
                continue;
            }
            let val = match &t.shape {
                CellShape::Simplex(vs) => match simplex_exact(f, j, vs) {
                    Some(x) => to_f64(&x),
                    None => simplex_numeric(f, j, vs, cfg)?,
                },
                CellShape::Cone(rays) => cone_numeric(f, j, rays, cfg)?,
            };
            parts.push(pv * val);
        }
    }
    Ok(crate::quad::pairwise_sum(&parts))
}

fn simplex_numeric(f: &CoefProfile, j: &[usize], vs: &[Vec<Q>], cfg: &AdaptiveCfg) -> Result<f64, FormError> {
    let qd = vs.len() - 1;
    let v0: Vec<f64> = vs[0].iter().map(to_f64).collect();
    let d: Vec<Vec<f64>> = vs[1..].iter().map(|v| v.iter().map(to_f64).zip(&v0).map(|(a, b)| a - b).collect()).collect();
    let jac = det_small(j.iter().map(|&r| d.iter().map(|col| col[r]).collect()).collect());
    if qd == 0 {
        return Ok(f.eval(&v0));
    }
    let integrand = |u: &[f64]| -> Complex64 {
        // collapse the unit cube onto the simplex
        let mut t = vec![0.0; qd];
        let mut rest = 1.0;
        let mut w = 1.0;
        for k in 0..qd {
            t[k] = rest * u[k];
            w *= rest;
            rest *= 1.0 - u[k];
        }
        let x: Vec<f64> = (0..v0.len()).map(|c| v0[c] + (0..qd).map(|i| d[i][c] * t[i]).sum::<f64>()).collect();
        Complex64::new(f.eval(&x) * w, 0.0)
    };
    let r = integrate_box(&integrand, &vec![0.0; qd], &vec![1.0; qd], cfg);
    if !r.converged {
        return Err(FormError::NoConvergence(r.error));
    }
    Ok(r.value.re * jac)
}

/// Integral over the cone Σ s_i r_i (s ≥ 0); each term must be bump-bounded.
fn cone_numeric(f: &CoefProfile, j: &[usize], rays: &[Vec<Q>], cfg: &AdaptiveCfg) -> Result<f64, FormError> {
    let qd = rays.len();
    let n = f.n;
    if qd == 0 {
        return Ok(f.eval(&vec![0.0; n]));
    }
    let jac = to_f64(&det_q(j.iter().map(|&r| rays.iter().map(|v| v[r].clone()).collect()).collect()));
    if jac == 0.0 {
        return Ok(0.0);
    }
    let rf: Vec<Vec<f64>> = rays.iter().map(|r| r.iter().map(to_f64).collect()).collect();
    let mut total = 0.0;
    for (a, bs, c) in f.terms() {
        let bounds = CoefProfile::support_bounds(bs);
        // recession directions of {s >= 0, (Rs)_c bounded}
        let eqs: Vec<Vec<Q>> = bounds.keys().map(|&cc| rays.iter().map(|r| r[cc].clone()).collect()).collect();
        let ineqs: Vec<Vec<Q>> = (0..qd).map(|i| (0..qd).map(|k| if i == k { q(1) } else { q(0) }).collect()).collect();
        let rec = hrep_to_rays(&ineqs, &eqs, qd)?;
        if !rec.is_empty() {
            return Err(FormError::Divergent(format!("no bump bounds the cell in direction {:?}", rec[0])));
        }
        let smax = box_extent(&bounds, rays, qd);
        let Some(smax) = smax else { continue };
        let single = CoefProfile::zero(n).single(&(a.clone(), bs.clone()), c);
        let integrand = |s: &[f64]| -> Complex64 {
            let x: Vec<f64> = (0..n).map(|cc| (0..qd).map(|i| rf[i][cc] * s[i]).sum()).collect();
            Complex64::new(single.eval(&x), 0.0)
        };
        let r = integrate_box(&integrand, &vec![0.0; qd], &smax, cfg);
        if !r.converged {
            return Err(FormError::NoConvergence(r.error));
        }
        total += r.value.re;
    }
    Ok(total * jac)
}

/// Upper bounds for each s_i over {s >= 0, lo_c <= (Rs)_c <= hi_c}; None if empty.
fn box_extent(bounds: &BTreeMap<usize, (Q, Q)>, rays: &[Vec<Q>], qd: usize) -> Option<Vec<f64>> {
    // vertices from qd active constraints among s_i = 0 and the slab faces
    let mut cons: Vec<(Vec<Q>, Q)> = (0..qd).map(|i| ((0..qd).map(|k| if i == k { q(1) } else { q(0) }).collect(), q(0))).collect();
    for (&c, (lo, hi)) in bounds {
        let row: Vec<Q> = rays.iter().map(|r| r[c].clone()).collect();
        cons.push((row.clone(), lo.clone()));
        cons.push((row, hi.clone()));
    }
    let feasible = |s: &[Q]| -> bool {
        s.iter().all(|x| !x.is_negative())
            && bounds.iter().all(|(&c, (lo, hi))| {
                let v: Q = rays.iter().zip(s).map(|(r, x)| &r[c] * x).sum();
                &v >= lo && &v <= hi
            })
    };
    let mut best: Option<Vec<Q>> = None;
    for sub in subsets(cons.len(), qd) {
        let a = RatMatrix::from_rows(&sub.iter().map(|&k| cons[k].0.clone()).collect::<Vec<_>>(), qd);
        if a.rank() < qd {
            continue;
        }
        let b: Vec<Q> = sub.iter().map(|&k| cons[k].1.clone()).collect();
        let Some(s) = crate::polyfan::solve(&a, &b) else { continue };
        if !feasible(&s) {
            continue;
        }
        best = Some(match best {
            None => s,
            Some(m) => m.into_iter().zip(s).map(|(x, y)| if y > x { y } else { x }).collect(),
        });
    }
    best.map(|m| m.iter().map(to_f64).collect())
}

// ---------- documents ----------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Num {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Num {
    pub fn to_q(&self) -> Result<Q, FormError> {
        match self {
            Num::Int(i) => Ok(q(*i)),
            Num::Float(f) => Q::from_float(*f).ok_or_else(|| FormError::Invalid(format!("number {f}"))),
            Num::Text(s) => s.trim().parse().map_err(|_| FormError::Invalid(format!("rational {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BumpDoc {
    pub coord: usize,
    pub center: Num,
    pub radius: Num,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TermDoc {
    #[serde(rename = "I")]
    pub i: Vec<usize>,
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    /// [coefficient, exponent vector] pairs; an empty list means the constant 1
    #[serde(default)]
    pub poly: Vec<(Num, Vec<u32>)>,
    #[serde(default)]
    pub bump: Vec<BumpDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChartDoc {
    /// ray indices of the ambient cone σ; absent or empty for N_R itself
    #[serde(default)]
    pub sigma: Vec<usize>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default, rename = "box")]
    pub nbhd: Option<Vec<(f64, f64)>>,
    pub terms: Vec<TermDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FormDoc {
    pub lattice_rank: usize,
    pub p: usize,
    pub q: usize,
    pub charts: Vec<ChartDoc>,
}

impl Superform {
    pub fn from_doc(doc: &FormDoc, amb: Option<&AmbientFan>) -> Result<Superform, FormError> {
        let n = doc.lattice_rank;
        let mut w = Superform::zero(n, doc.p, doc.q);
        for cd in &doc.charts {
            let (orbit, dim) = if cd.sigma.is_empty() {
                (0, n)
            } else {
                let amb = amb.ok_or_else(|| FormError::Invalid("orbit charts need an ambient fan".into()))?;
                let o = amb
                    .find_cone(&cd.sigma)
                    .ok_or_else(|| FormError::MissingChart(format!("{:?} is not a cone of the ambient fan", cd.sigma)))?;
                (o, amb.orbit_dim(o))
            };
            let idx = if orbit == 0 {
                0
            } else {
                w.add_chart(orbit, dim, cd.threshold.unwrap_or(10.0), cd.nbhd.clone().unwrap_or_else(|| vec![(-10.0, 10.0); dim]))
            };
            for t in &cd.terms {
                let mut f = if t.poly.is_empty() {
                    CoefProfile::constant(dim, q(1))
                } else {
                    let mut f = CoefProfile::zero(dim);
                    for (c, e) in &t.poly {
                        if e.len() != dim {
                            return Err(FormError::Invalid(format!("exponent {e:?} in a chart of dimension {dim}")));
                        }
                        f.add_term(c.to_q()?, e.clone(), Vec::new());
                    }
                    f
                };
                for b in &t.bump {
                    let r = b.radius.to_q()?;
                    if !r.is_positive() || b.coord >= dim {
                        return Err(FormError::Invalid(format!("bump on coordinate {} with radius {r}", b.coord)));
                    }
                    f = f.mul(&CoefProfile::bump(dim, b.coord, b.center.to_q()?, r));
                }
                w.put(idx, &t.i, &t.j, f)?;
            }
        }
        Ok(w)
    }
}

/// Number of (I, J) components of a (p,q)-form in dimension n.
pub fn component_count(n: usize, p: usize, qd: usize) -> usize {
    binomial(n, p) * binomial(n, qd)
}

pub fn span_check(v: &[Q], space: &Subspace) -> bool {
    space.contains(v)
}
