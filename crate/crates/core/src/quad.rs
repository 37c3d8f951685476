//! Gauss–Legendre rules and adaptive tensor quadrature on boxes.
//! Panels are evaluated in parallel and summed in a fixed order so results
//! do not depend on the thread count.

use num::complex::Complex64;
use num::Zero;
use rayon::prelude::*;

/// Nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

pub fn pairwise_sum(v: &[Complex64]) -> Complex64 {
    match v.len() {
        0 => Complex64::zero(),
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

#[derive(Clone, Debug)]
pub struct BoxRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl BoxRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        BoxRule { nodes, weights }
    }

    /// Tensor rule on one box.
    pub fn apply<F: Fn(&[f64]) -> Complex64>(&self, f: &F, lo: &[f64], hi: &[f64]) -> Complex64 {
        let d = lo.len();
        let m = self.nodes.len();
        if d == 0 {
            return f(&[]);
        }
        let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let vol: f64 = half.iter().product();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut acc = Complex64::zero();
        loop {
            let mut w = vol;
            for k in 0..d {
                x[k] = mid[k] + half[k] * self.nodes[idx[k]];
                w *= self.weights[idx[k]];
            }
            acc += f(&x) * w;
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveCfg {
    pub order: usize,
    /// initial panels per dimension
    pub panels: usize,
    pub tol: f64,
    pub max_depth: usize,
}

impl Default for AdaptiveCfg {
    fn default() -> Self {
        AdaptiveCfg { order: 16, panels: 8, tol: 1e-11, max_depth: 12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: Complex64,
    pub error: f64,
    pub converged: bool,
    pub evals: u64,
}

struct Leaf {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: Complex64,
    error: f64,
    depth: usize,
    id: u64,
}

fn halves<F: Fn(&[f64]) -> Complex64>(rule: &BoxRule, f: &F, lo: &[f64], hi: &[f64], k: usize) -> [(Vec<f64>, Vec<f64>, Complex64); 2] {
    let m = 0.5 * (lo[k] + hi[k]);
    let mut b0 = hi.to_vec();
    b0[k] = m;
    let mut a1 = lo.to_vec();
    a1[k] = m;
    let v0 = rule.apply(f, lo, &b0);
    let v1 = rule.apply(f, &a1, hi);
    [(lo.to_vec(), b0, v0), (a1, hi.to_vec(), v1)]
}

/// Bisect along the axis where halving changes the estimate most; the two
/// halves share that change as their error estimate.
fn children<F: Fn(&[f64]) -> Complex64>(rule: &BoxRule, f: &F, lo: &[f64], hi: &[f64], whole: Complex64, depth: usize) -> Vec<(Vec<f64>, Vec<f64>, Complex64, f64, usize)> {
    let mut best: Option<(f64, [(Vec<f64>, Vec<f64>, Complex64); 2])> = None;
    for k in 0..lo.len() {
        let h = halves(rule, f, lo, hi, k);
        let err = (h[0].2 + h[1].2 - whole).norm();
        if best.as_ref().map_or(true, |(e, _)| err > *e) {
            best = Some((err, h));
        }
    }
    let (err, h) = best.expect("at least one axis");
    h.into_iter().map(|(a, b, v)| (a, b, v, err / 2.0, depth + 1)).collect()
}

/// Globally adaptive integral of f over the box [lo, hi]: the leaves with the
/// largest error estimates are split first, in batches evaluated in parallel.
/// Leaves are summed in creation order, so the result is thread-count independent.
pub fn integrate_box<F: Fn(&[f64]) -> Complex64 + Sync>(f: &F, lo: &[f64], hi: &[f64], cfg: &AdaptiveCfg) -> QuadResult {
    let d = lo.len();
    if d == 0 {
        return QuadResult { value: f(&[]), error: 0.0, converged: true, evals: 1 };
    }
    let rule = BoxRule::new(cfg.order);
    let per_box = rule.nodes.len().pow(d as u32) as u64;
    let p = cfg.panels.max(1);
    let count = p.pow(d as u32);
    let boxes: Vec<(Vec<f64>, Vec<f64>)> = (0..count)
        .map(|mut c| {
            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            for k in 0..d {
                let i = c % p;
                c /= p;
                let h = (hi[k] - lo[k]) / p as f64;
                a[k] = lo[k] + h * i as f64;
                b[k] = if i + 1 == p { hi[k] } else { lo[k] + h * (i + 1) as f64 };
            }
            (a, b)
        })
        .collect();
    let first: Vec<Vec<(Vec<f64>, Vec<f64>, Complex64, f64, usize)>> = boxes
        .par_iter()
        .map(|(a, b)| {
            let whole = rule.apply(f, a, b);
            children(&rule, f, a, b, whole, 0)
        })
        .collect();
    let mut evals = count as u64 * per_box * (1 + 2 * d as u64);
    let mut leaves: Vec<Leaf> = Vec::new();
    let mut next_id = 0u64;
    for (a, b, v, e, dep) in first.into_iter().flatten() {
        leaves.push(Leaf { lo: a, hi: b, value: v, error: e, depth: dep, id: next_id });
        next_id += 1;
    }
    let max_evals: u64 = 400_000_000;
    loop {
        let total: f64 = leaves.iter().map(|l| l.error).sum();
        if total <= cfg.tol || evals >= max_evals {
            break;
        }
        // worst leaves that may still be split
        let mut order: Vec<usize> = (0..leaves.len()).filter(|&i| leaves[i].depth < cfg.max_depth && leaves[i].error > 0.0).collect();
        if order.is_empty() {
            break;
        }
        order.sort_by(|&x, &y| leaves[y].error.total_cmp(&leaves[x].error).then(leaves[x].id.cmp(&leaves[y].id)));
        // split enough leaves to cover half of the excess error, at least one
        let mut take = 0;
        let mut covered = 0.0;
        while take < order.len() && take < 4096 && (take == 0 || covered < 0.5 * (total - cfg.tol)) {
            covered += leaves[order[take]].error;
            take += 1;
        }
        let chosen: Vec<usize> = order[..take].to_vec();
        let new: Vec<Vec<(Vec<f64>, Vec<f64>, Complex64, f64, usize)>> = chosen
            .par_iter()
            .map(|&i| {
                let l = &leaves[i];
                children(&rule, f, &l.lo, &l.hi, l.value, l.depth)
            })
            .collect();
        evals += take as u64 * per_box * 2 * d as u64;
        let mut drop = vec![false; leaves.len()];
        for &i in &chosen {
            drop[i] = true;
        }
        let mut kept: Vec<Leaf> = leaves.into_iter().zip(drop).filter(|(_, x)| !x).map(|(l, _)| l).collect();
        for (a, b, v, e, dep) in new.into_iter().flatten() {
            kept.push(Leaf { lo: a, hi: b, value: v, error: e, depth: dep, id: next_id });
            next_id += 1;
        }
        leaves = kept;
    }
    leaves.sort_by_key(|l| l.id);
    let error: f64 = leaves.iter().map(|l| l.error).sum();
    let value = pairwise_sum(&leaves.iter().map(|l| l.value).collect::<Vec<_>>());
    QuadResult { value, error, converged: error <= cfg.tol, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_exact_on_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((i - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_on_smooth_and_peaked() {
        let cfg = AdaptiveCfg::default();
        let r = integrate_box(&|x: &[f64]| Complex64::new(x[0] * x[1], 0.0), &[0.0, 0.0], &[1.0, 2.0], &cfg);
        assert!((r.value.re - 1.0).abs() < 1e-13);
        let r = integrate_box(&|x: &[f64]| Complex64::new((-x[0] * x[0] * 400.0).exp(), 0.0), &[-1.0], &[1.0], &cfg);
        let exact = (std::f64::consts::PI / 400.0).sqrt() * 0.999_999_999_999_999_9;
        assert!((r.value.re - exact).abs() < 1e-12, "{}", r.value.re);
        assert!(r.converged);
    }
}
