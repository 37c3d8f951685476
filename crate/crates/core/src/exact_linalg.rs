//! Exact linear algebra over the rationals (and a little over the integers).
//!
//! Subspaces are kept in reduced row echelon form, so two subspaces are equal
//! iff their stored bases are equal.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, Signed, ToPrimitive, Zero};
use std::fmt;
use thiserror::Error;

pub type Q = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("wedge degree {p} exceeds ambient dimension {n}")]
    Degree { p: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qf(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(x: &Q) -> f64 {
    // ToPrimitive on BigRational handles huge numerators/denominators.
    x.to_f64().unwrap_or_else(|| {
        let n = x.numer().to_f64().unwrap_or(f64::NAN);
        let d = x.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

pub fn qvec(v: &[i64]) -> Vec<Q> {
    v.iter().map(|&x| q(x)).collect()
}

/// Dense rational matrix, row major.
#[derive(Clone, PartialEq, Eq)]
pub struct RatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Q>,
}

impl fmt::Debug for RatMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RatMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl RatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RatMatrix { rows, cols, data: vec![Q::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Q::one());
        }
        m
    }

    /// Builds from row vectors; `cols` is needed for the zero-row case.
    pub fn from_rows(rows: &[Vec<Q>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().cloned());
        }
        RatMatrix { rows: rows.len(), cols, data }
    }

    pub fn from_i64(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let rs: Vec<Vec<Q>> = rows.iter().map(|r| qvec(r)).collect();
        Self::from_rows(&rs, cols)
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_cols(cols: &[Vec<Q>], rows: usize) -> Self {
        Self::from_rows(cols, rows).transpose()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Q {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Q) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Q] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vecs(&self) -> Vec<Vec<Q>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn col(&self, j: usize) -> Vec<Q> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn mul(&self, other: &RatMatrix) -> Result<RatMatrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(k, j);
                    if !b.is_zero() {
                        let idx = i * other.cols + j;
                        out.data[idx] = &out.data[idx] + a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, v: &[Q]) -> Vec<Q> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut s = Q::zero();
                for (a, b) in self.row(i).iter().zip(v) {
                    if !a.is_zero() && !b.is_zero() {
                        s += a * b;
                    }
                }
                s
            })
            .collect()
    }

    /// Reduced row echelon form and pivot columns.
    pub fn rref(&self) -> (RatMatrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| !m.get(i, c).is_zero()) else {
                continue;
            };
            if p != r {
                for j in 0..m.cols {
                    m.data.swap(p * m.cols + j, r * m.cols + j);
                }
            }
            let inv = m.get(r, c).recip();
            for j in c..m.cols {
                let v = m.get(r, j) * &inv;
                m.set(r, j, v);
            }
            for i in 0..m.rows {
                if i == r || m.get(i, c).is_zero() {
                    continue;
                }
                let f = m.get(i, c).clone();
                for j in c..m.cols {
                    let rv = m.get(r, j);
                    if rv.is_zero() {
                        continue;
                    }
                    let v = m.get(i, j) - &f * rv;
                    m.set(i, j, v);
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    pub fn det(&self) -> Result<Q, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::Shape("determinant of non-square matrix".into()));
        }
        let n = self.rows;
        let mut m = self.clone();
        let mut det = Q::one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&i| !m.get(i, c).is_zero()) else {
                return Ok(Q::zero());
            };
            if p != c {
                for j in 0..n {
                    m.data.swap(p * n + j, c * n + j);
                }
                det = -det;
            }
            let piv = m.get(c, c).clone();
            det *= &piv;
            for i in c + 1..n {
                if m.get(i, c).is_zero() {
                    continue;
                }
                let f = m.get(i, c) / &piv;
                for j in c..n {
                    let v = m.get(i, j) - &f * m.get(c, j);
                    m.set(i, j, v);
                }
            }
        }
        Ok(det)
    }
}

pub fn rank(m: &RatMatrix) -> usize {
    m.rank()
}

/// Right kernel of `m`.
pub fn kernel_basis(m: &RatMatrix) -> Subspace {
    let (r, pivots) = m.rref();
    let n = m.cols();
    let mut basis = Vec::new();
    for free in (0..n).filter(|c| !pivots.contains(c)) {
        let mut v = vec![Q::zero(); n];
        v[free] = Q::one();
        for (row, &pc) in pivots.iter().enumerate() {
            v[pc] = -r.get(row, free).clone();
        }
        basis.push(v);
    }
    Subspace::span(n, &basis)
}

/// A linear subspace of Q^n with canonical (RREF) basis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Subspace {
    ambient_dim: usize,
    basis: Vec<Vec<Q>>,
}

impl Subspace {
    pub fn zero(n: usize) -> Self {
        Subspace { ambient_dim: n, basis: Vec::new() }
    }

    pub fn full(n: usize) -> Self {
        Self::span(n, &RatMatrix::identity(n).row_vecs())
    }

    pub fn span(n: usize, vecs: &[Vec<Q>]) -> Self {
        if vecs.is_empty() {
            return Self::zero(n);
        }
        let (r, piv) = RatMatrix::from_rows(vecs, n).rref();
        let basis = (0..piv.len()).map(|i| r.row(i).to_vec()).collect();
        Subspace { ambient_dim: n, basis }
    }

    pub fn span_i64(n: usize, vecs: &[Vec<i64>]) -> Self {
        let v: Vec<Vec<Q>> = vecs.iter().map(|x| qvec(x)).collect();
        Self::span(n, &v)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<Q>] {
        &self.basis
    }

    pub fn is_zero(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn sum(&self, other: &Subspace) -> Subspace {
        let mut v = self.basis.clone();
        v.extend(other.basis.iter().cloned());
        Self::span(self.ambient_dim, &v)
    }

    pub fn contains(&self, v: &[Q]) -> bool {
        self.coords(v).is_some()
    }

    pub fn contains_space(&self, other: &Subspace) -> bool {
        other.basis.iter().all(|v| self.contains(v))
    }

    /// Coordinates of `v` in the canonical basis, if `v` lies in the subspace.
    pub fn coords(&self, v: &[Q]) -> Option<Vec<Q>> {
        let mut rest = v.to_vec();
        let mut c = Vec::with_capacity(self.basis.len());
        for b in &self.basis {
            let p = b.iter().position(|x| !x.is_zero()).expect("nonzero basis row");
            let f = rest[p].clone();
            if !f.is_zero() {
                for (r, bi) in rest.iter_mut().zip(b) {
                    if !bi.is_zero() {
                        *r -= &f * bi;
                    }
                }
            }
            c.push(f);
        }
        rest.iter().all(|x| x.is_zero()).then_some(c)
    }

    /// Vectors f with f.v = 0 for all v in the subspace.
    pub fn annihilator(&self) -> Subspace {
        if self.basis.is_empty() {
            return Self::full(self.ambient_dim);
        }
        kernel_basis(&RatMatrix::from_rows(&self.basis, self.ambient_dim))
    }

    pub fn intersect(&self, other: &Subspace) -> Subspace {
        self.annihilator().sum(&other.annihilator()).annihilator()
    }

    /// Matrix whose columns are the basis vectors.
    pub fn basis_matrix(&self) -> RatMatrix {
        RatMatrix::from_cols(&self.basis, self.ambient_dim)
    }
}

/// Lexicographically ordered p-subsets of {0..n}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WedgeIndex {
    n: usize,
    p: usize,
    tuples: Vec<Vec<usize>>,
}

impl WedgeIndex {
    pub fn new(n: usize, p: usize) -> Self {
        WedgeIndex { n, p, tuples: subsets(n, p) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Vec<usize>] {
        &self.tuples
    }

    pub fn index_of(&self, t: &[usize]) -> Option<usize> {
        self.tuples.binary_search_by(|x| x.as_slice().cmp(t)).ok()
    }
}

pub fn subsets(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < p - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if p <= n {
        go(0, n, p, &mut Vec::new(), &mut out);
    }
    out
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Sign of the permutation sorting `idx` (0 if it has repeats), plus the sorted tuple.
pub fn sort_sign(idx: &[usize]) -> (i32, Vec<usize>) {
    let mut v = idx.to_vec();
    let mut sign = 1;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            } else if v[j] == v[j + 1] {
                return (0, v);
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return (0, v);
    }
    (sign, v)
}

/// Coordinates of v_1 ∧ ... ∧ v_p in the basis e_I (I increasing) of ∧^p Q^n.
pub fn wedge_of(vs: &[Vec<Q>], n: usize) -> Vec<Q> {
    let p = vs.len();
    let idx = WedgeIndex::new(n, p);
    idx.tuples()
        .iter()
        .map(|t| {
            let mut m = RatMatrix::zeros(p, p);
            for (i, v) in vs.iter().enumerate() {
                for (j, &c) in t.iter().enumerate() {
                    m.set(i, j, v[c].clone());
                }
            }
            m.det().expect("square")
        })
        .collect()
}

/// ∧^p of a subspace, inside ∧^p Q^n.
pub fn wedge_power_span(v: &Subspace, p: usize) -> Result<Subspace, LinalgError> {
    let n = v.ambient_dim();
    if p > n {
        return Err(LinalgError::Degree { p, n });
    }
    let wn = binomial(n, p);
    if p > v.dim() {
        return Ok(Subspace::zero(wn));
    }
    let gens: Vec<Vec<Q>> = subsets(v.dim(), p)
        .iter()
        .map(|s| {
            let vs: Vec<Vec<Q>> = s.iter().map(|&i| v.basis()[i].clone()).collect();
            wedge_of(&vs, n)
        })
        .collect();
    Ok(Subspace::span(wn, &gens))
}

/// Matrix of ∧^p A for A: Q^n -> Q^m (columns indexed by p-subsets of the source).
pub fn wedge_power_map(a: &RatMatrix, p: usize) -> RatMatrix {
    let src = subsets(a.cols(), p);
    let dst = subsets(a.rows(), p);
    let mut out = RatMatrix::zeros(dst.len(), src.len());
    for (j, s) in src.iter().enumerate() {
        for (i, d) in dst.iter().enumerate() {
            let mut m = RatMatrix::zeros(p, p);
            for (r, &di) in d.iter().enumerate() {
                for (c, &sj) in s.iter().enumerate() {
                    m.set(r, c, a.get(di, sj).clone());
                }
            }
            out.set(i, j, m.det().expect("square"));
        }
    }
    out
}

/// Best small-denominator rational near `x`, via continued-fraction convergents.
pub fn rational_reconstruct(x: f64, max_den: u64, tol: f64) -> Option<Q> {
    if !x.is_finite() || tol <= 0.0 {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e18 {
            break;
        }
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        if (x - h2 as f64 / k2 as f64).abs() <= tol {
            return Some(Q::new(BigInt::from(h2), BigInt::from(k2)));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac == 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

// ---------- integer lattice helpers ----------

pub type ZVec = Vec<BigInt>;

pub fn zvec(v: &[i64]) -> ZVec {
    v.iter().map(|&x| BigInt::from(x)).collect()
}

pub fn z_to_q(v: &[BigInt]) -> Vec<Q> {
    v.iter().map(|x| Q::from_integer(x.clone())).collect()
}

pub fn z_to_i64(v: &[BigInt]) -> Vec<i64> {
    v.iter().map(|x| x.to_i64().expect("coordinate fits in i64")).collect()
}

/// Scales a rational vector to a primitive integer vector with the same direction.
pub fn primitive_of(v: &[Q]) -> Option<ZVec> {
    if v.iter().all(|x| x.is_zero()) {
        return None;
    }
    let l = v.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    let ints: Vec<BigInt> = v.iter().map(|x| (x * Q::from_integer(l.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    Some(ints.into_iter().map(|x| x / &g).collect())
}

/// Integer column-operation reduction: returns (H, U) with A·U = H, U unimodular,
/// and H in column echelon form (the zero columns of H come last).
fn column_hermite(a: &[Vec<BigInt>], ncols: usize) -> (Vec<Vec<BigInt>>, Vec<Vec<BigInt>>, usize) {
    let rows = a.len();
    let mut h: Vec<Vec<BigInt>> = a.to_vec();
    let mut u: Vec<Vec<BigInt>> = (0..ncols)
        .map(|i| (0..ncols).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
        .collect();
    let col_op = |m: &mut Vec<Vec<BigInt>>, i: usize, j: usize, a: &BigInt, b: &BigInt, c: &BigInt, d: &BigInt| {
        // (col_i, col_j) <- (a col_i + b col_j, c col_i + d col_j)
        for row in m.iter_mut() {
            let xi = row[i].clone();
            let xj = row[j].clone();
            row[i] = a * &xi + b * &xj;
            row[j] = c * &xi + d * &xj;
        }
    };
    let mut piv_col = 0;
    for r in 0..rows {
        if piv_col == ncols {
            break;
        }
        for j in piv_col + 1..ncols {
            if h[r][j].is_zero() {
                continue;
            }
            let x = h[r][piv_col].clone();
            let y = h[r][j].clone();
            let eg = x.extended_gcd(&y);
            let g = eg.gcd;
            let (s, t) = (eg.x, eg.y);
            let xa = &x / &g;
            let ya = &y / &g;
            // new col_p = s col_p + t col_j ; new col_j = -ya col_p + xa col_j ; det = s xa + t ya = 1
            let nya = -ya;
            col_op(&mut h, piv_col, j, &s, &t, &nya, &xa);
            col_op(&mut u, piv_col, j, &s, &t, &nya, &xa);
        }
        if !h[r][piv_col].is_zero() {
            piv_col += 1;
        }
    }
    (h, u, piv_col)
}

/// Z-basis of { x in Z^n : A x = 0 } for an integer matrix A (rows given).
pub fn integer_kernel(a: &[Vec<BigInt>], n: usize) -> Vec<ZVec> {
    if a.is_empty() {
        return (0..n)
            .map(|i| (0..n).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
            .collect();
    }
    let (_, u, rank) = column_hermite(a, n);
    (rank..n).map(|j| u.iter().map(|row| row[j].clone()).collect()).collect()
}

/// Z-basis of the saturation Span_Q(vs) ∩ Z^n.
pub fn saturated_basis(vs: &[Vec<Q>], n: usize) -> Vec<ZVec> {
    let span = Subspace::span(n, vs);
    if span.dim() == 0 {
        return Vec::new();
    }
    let ann = span.annihilator();
    let rows: Vec<ZVec> = ann.basis().iter().map(|v| primitive_of(v).expect("nonzero")).collect();
    integer_kernel(&rows, n)
}

pub fn int_dot(a: &[BigInt], b: &[BigInt]) -> BigInt {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sign_of(x: &Q) -> i32 {
    if x.is_positive() {
        1
    } else if x.is_negative() {
        -1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> RatMatrix {
        RatMatrix::from_i64(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&RatMatrix::identity(2)), 2);
        assert_eq!(rank(&m(&[&[1, 1, 1]])), 1);
        assert_eq!(rank(&m(&[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]])), 1);
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_basis(&m(&[&[1, 1, 1]])).dim(), 2);
        assert_eq!(kernel_basis(&RatMatrix::identity(3)).dim(), 0);
        let k = kernel_basis(&m(&[&[1, 2], &[2, 4]]));
        assert_eq!(k, Subspace::span_i64(2, &[vec![2, -1]]));
    }

    #[test]
    fn wedge_examples() {
        let s = Subspace::span_i64(3, &[vec![1, 0, 0], vec![0, 1, 0]]);
        let w = wedge_power_span(&s, 2).unwrap();
        assert_eq!(w, Subspace::span_i64(3, &[vec![1, 0, 0]]));
        let s = Subspace::span_i64(2, &[vec![1, 0]]);
        assert!(wedge_power_span(&s, 2).unwrap().is_zero());
        let s = Subspace::span_i64(3, &[vec![1, 1, 0], vec![0, 1, 1]]);
        assert_eq!(wedge_of(s.basis(), 3).len(), 3);
        let direct = wedge_of(&[qvec(&[1, 1, 0]), qvec(&[0, 1, 1])], 3);
        assert_eq!(direct, qvec(&[1, 1, 1]));
        assert_eq!(wedge_power_span(&s, 2).unwrap().dim(), 1);
        assert_eq!(
            wedge_power_span(&s, 4),
            Err(LinalgError::Degree { p: 4, n: 3 })
        );
    }

    #[test]
    fn reconstruct_examples() {
        assert_eq!(rational_reconstruct(-1.0000002, 10, 1e-5), Some(q(-1)));
        assert_eq!(rational_reconstruct(0.3333331, 10, 1e-5), Some(qf(1, 3)));
        assert_eq!(rational_reconstruct(0.123456, 3, 1e-7), None);
    }

    #[test]
    fn saturation_uses_lattice_basis() {
        let b = saturated_basis(&[qvec(&[1, 0]), qvec(&[1, 2])], 2);
        let bq: Vec<Vec<Q>> = b.iter().map(|v| z_to_q(v)).collect();
        let d = RatMatrix::from_rows(&bq, 2).det().unwrap();
        assert_eq!(d.abs(), q(1));
        let b = saturated_basis(&[qvec(&[2, 4, 6])], 3);
        assert_eq!(b.len(), 1);
        let g = b[0].iter().fold(BigInt::zero(), |a, x| a.gcd(x));
        assert!(g.is_one());
    }

    #[test]
    fn integer_kernel_of_ray() {
        let k = integer_kernel(&[zvec(&[1, 1])], 2);
        assert_eq!(k.len(), 1);
        assert_eq!(int_dot(&k[0], &zvec(&[1, 1])), BigInt::zero());
        assert!(k[0].iter().any(|x| x.abs().is_one()));
    }

    #[test]
    fn subspace_ops() {
        let a = Subspace::span_i64(3, &[vec![1, 0, 0], vec![0, 1, 0]]);
        let b = Subspace::span_i64(3, &[vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(a.intersect(&b), Subspace::span_i64(3, &[vec![0, 1, 0]]));
        assert_eq!(a.sum(&b).dim(), 3);
        assert_eq!(a.coords(&qvec(&[2, 3, 0])), Some(qvec(&[2, 3])));
        assert_eq!(a.coords(&qvec(&[0, 0, 1])), None);
    }

    #[test]
    fn wedge_power_map_composes_with_wedge() {
        let a = m(&[&[1, 2, 0], &[0, 1, 3], &[1, 0, 1]]);
        let u = qvec(&[1, 0, 2]);
        let v = qvec(&[0, 1, 1]);
        let lhs = wedge_power_map(&a, 2).apply(&wedge_of(&[u.clone(), v.clone()], 3));
        let rhs = wedge_of(&[a.apply(&u), a.apply(&v)], 3);
        assert_eq!(lhs, rhs);
        assert_eq!(wedge_power_map(&a, 3).get(0, 0), &a.det().unwrap());
    }
}
