use num::complex::Complex64;
use num::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;
use tropmap::analytic::{eps_integral, limit_integral, rationality_check, ChainDoc, EpsSchedule, ParamChain, QuadratureCfg};
use tropmap::cycles::{check_balanced, trop_hypersurface, weighted_chain, wt_trop_chain, Poly, PolyDoc, WeightedCycle};
use tropmap::exact_linalg::{q, to_f64, RatMatrix, Q};
use tropmap::polyfan::{canonical_generator, stellar_subdivision, Fan, FanDoc};
use tropmap::quad::AdaptiveCfg;
use tropmap::satrop::{angle, in_exp_cone, log_limit_sample, orbit_meets, Constraint, ExpBasicCone, Meets, RealPoly, Rel, SampleCfg, SemialgSet};
use tropmap::superform::{integrate, integrate_exact, CellChain, CellShape, CellTerm, Coef, CoefProfile, FormDoc, Superform};
use tropmap::tropcoh::{betti_table, build_complex};

type Outcome = Result<String, String>;

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn load<T: serde::de::DeserializeOwned>(rel: &str) -> T {
    let text = std::fs::read_to_string(data(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn fan(rel: &str) -> Fan {
    Fan::from_doc(&load::<FanDoc>(rel)).unwrap()
}

fn chain(rel: &str) -> ParamChain {
    ParamChain::from_doc(&load::<ChainDoc>(rel)).unwrap()
}

fn form(rel: &str) -> Superform {
    Superform::from_doc(&load::<FormDoc>(rel), None).unwrap()
}

fn hypersurface(rel: &str) -> WeightedCycle {
    trop_hypersurface(&Poly::from_doc(&load::<PolyDoc>(rel)).unwrap()).unwrap()
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Plain fraction-field elimination, kept separate from the library's rref.
fn brute_rank(m: &RatMatrix) -> usize {
    let mut a: Vec<Vec<Q>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    let cols = m.cols();
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..a.len()).find(|&r| !a[r][c].is_zero()) else { continue };
        a.swap(rank, p);
        for r in 0..a.len() {
            if r != rank && !a[r][c].is_zero() {
                let f = &a[r][c] / &a[rank][c];
                for k in 0..cols {
                    let d = &f * &a[rank][k];
                    a[r][k] -= d;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn line_homology() -> Outcome {
    let start = Instant::now();
    let f = fan("fans/line_compact.json");
    check(f.cells().len() == 7, format!("{} cells, expected 7", f.cells().len()))?;
    let table = betti_table(&f).map_err(|e| e.to_string())?;
    for p in 0..=2 {
        let cc = build_complex(&f, p).map_err(|e| e.to_string())?;
        let top = cc.cells.len();
        let ranks: Vec<usize> = (0..=top).map(|q| cc.boundary.get(q).map_or(0, brute_rank)).collect();
        for qd in 0..=2 {
            let dim = if qd < top { cc.chain_dim(qd) } else { 0 };
            let oracle = dim - ranks.get(qd).copied().unwrap_or(0) - ranks.get(qd + 1).copied().unwrap_or(0);
            let got = table.get(&(p, qd)).copied().unwrap_or(0);
            // a projective line has h^{p,q} = δ_pq for p, q ≤ 1
            let expected = usize::from(p == qd && p <= 1);
            check(got == oracle && got == expected, format!("H_{p},{qd}: library {got}, elimination {oracle}, expected {expected}"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 1.0, format!("{secs:.2} s"))?;
    Ok(format!("ranks δ_pq on 7 cells in {secs:.3} s"))
}

fn subdivision_invariance() -> Outcome {
    let quadrant = Fan::plain(2, &[vec![1, 0], vec![0, 1]], &[vec![0, 1]]).unwrap();
    let plane = hypersurface("polys/plane.json").fan;
    let cases = [("P2", fan("fans/p2.json")), ("P1xP1", fan("fans/p1xp1.json")), ("quadrant", quadrant), ("plane", plane)];
    for (name, f) in &cases {
        let before = betti_table(f).map_err(|e| e.to_string())?;
        let cell = f.cells().iter().position(|c| c.orbit == 0 && c.dim == 2).ok_or(format!("{name}: no 2-cone"))?;
        let g = stellar_subdivision(f, cell).map_err(|e| format!("{name}: {e}"))?;
        check(g.cells().len() > f.cells().len(), format!("{name}: subdivision added nothing"))?;
        let after = betti_table(&g).map_err(|e| e.to_string())?;
        check(before == after, format!("{name}: {before:?} vs {after:?}"))?;
    }
    Ok(format!("{} fans unchanged", cases.len()))
}

fn cross(a: &[i64], b: &[i64]) -> [i64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn affine_rank(pts: &[Vec<i64>]) -> usize {
    let rows: Vec<Vec<i64>> = pts[1..].iter().map(|p| p.iter().zip(&pts[0]).map(|(a, b)| a - b).collect()).collect();
    if rows.is_empty() {
        0
    } else {
        RatMatrix::from_i64(&rows).rank()
    }
}

/// Balancing re-derived from the weighted cones alone.
fn balanced_by_hand(c: &WeightedCycle, n: usize) -> bool {
    let cones: Vec<(Vec<Vec<i64>>, i64)> = c
        .cone_weights()
        .into_iter()
        .map(|(rays, w)| {
            assert!(w.is_integer());
            (rays, w.to_integer().try_into().unwrap())
        })
        .collect();
    if n == 2 {
        let mut s = [0i64; 2];
        for (rays, w) in &cones {
            for k in 0..2 {
                s[k] += w * rays[0][k];
            }
        }
        return s == [0, 0];
    }
    let mut ridge: Vec<Vec<i64>> = cones.iter().flat_map(|(r, _)| r.clone()).collect();
    ridge.sort();
    ridge.dedup();
    ridge.iter().all(|r| {
        let mut s = [0i64; 3];
        for (rays, w) in &cones {
            if !rays.contains(r) {
                continue;
            }
            let u = rays.iter().find(|x| *x != r).unwrap();
            let x = cross(r, u);
            let g = gcd(gcd(x[0], x[1]), x[2]);
            for k in 0..3 {
                s[k] += w * x[k] / g;
            }
        }
        s == [0, 0, 0]
    })
}

fn balancing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 50 {
        let n = if done % 2 == 0 { 2 } else { 3 };
        let k = rng.gen_range(n + 1..=6);
        let mut support: Vec<Vec<i64>> = (0..k).map(|_| (0..n).map(|_| rng.gen_range(0..=4)).collect()).collect();
        support.sort();
        support.dedup();
        if affine_rank(&support) < n {
            continue;
        }
        let terms: Vec<(f64, Vec<i64>)> = support.iter().map(|e| (rng.gen_range(0.5..2.0), e.clone())).collect();
        let c = trop_hypersurface(&Poly::real(n, &terms).unwrap()).map_err(|e| e.to_string())?;
        let v = check_balanced(&c).map_err(|e| e.to_string())?;
        check(v.balanced, format!("library verdict unbalanced for {support:?}"))?;
        check(balanced_by_hand(&c, n), format!("hand check unbalanced for {support:?}"))?;
        done += 1;
    }
    let c = hypersurface("polys/parabola.json");
    let mut got: Vec<(Vec<i64>, String)> = c.cone_weights().into_iter().map(|(r, w)| (r[0].clone(), w.to_string())).collect();
    got.sort();
    let want = vec![(vec![-1, -2], "1".to_string()), (vec![0, 1], "2".to_string()), (vec![1, 0], "1".to_string())];
    check(got == want, format!("x²+y+1 weights {got:?}"))?;
    Ok("50 random hypersurfaces balanced; x²+y+1 weights (2,1,1)".into())
}

fn random_profile(rng: &mut ChaCha8Rng, n: usize) -> CoefProfile {
    let mut f = CoefProfile::zero(n);
    for _ in 0..rng.gen_range(1..=3) {
        let e: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=3)).collect();
        f.add_term(q(rng.gen_range(-4..=4)), e, Vec::new());
    }
    f
}

fn subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    while all.len() > k {
        all.remove(rng.gen_range(0..all.len()));
    }
    all
}

fn random_form(rng: &mut ChaCha8Rng, n: usize) -> Superform {
    let p = rng.gen_range(0..=1);
    let qd = rng.gen_range(0..=1);
    let mut w = Superform::zero(n, p, qd);
    for _ in 0..rng.gen_range(1..=2) {
        let i = subset(rng, n, p);
        let j = subset(rng, n, qd);
        let f = random_profile(rng, n);
        let cur = Superform::term(n, &i, &j, f);
        w = w.add(&cur).unwrap();
    }
    w
}

fn is_zero_diff(a: &Superform, b: &Superform) -> bool {
    a.add(&b.scale(&q(-1))).unwrap().is_zero()
}

fn sign(deg: usize) -> Q {
    if deg % 2 == 0 {
        q(1)
    } else {
        q(-1)
    }
}

fn superform_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let a = random_form(&mut rng, 3);
        let b = random_form(&mut rng, 3);
        check(a.d_double_prime().d_double_prime().is_zero(), format!("case {case}: d''² ≠ 0"))?;
        check(a.d_prime().d_prime().is_zero(), format!("case {case}: d'² ≠ 0"))?;
        check(is_zero_diff(&a.d_prime().d_double_prime(), &a.d_double_prime().d_prime().scale(&q(-1))), format!("case {case}: d'd'' ≠ −d''d'"))?;
        let (da, db) = (a.p + a.q, b.p + b.q);
        let ab = a.wedge(&b).unwrap();
        let ba = b.wedge(&a).unwrap();
        check(is_zero_diff(&ab, &ba.scale(&sign(da * db))), format!("case {case}: graded commutativity"))?;
        let lhs = ab.d_double_prime();
        let rhs = a.d_double_prime().wedge(&b).unwrap().add(&a.wedge(&b.d_double_prime()).unwrap().scale(&sign(da))).unwrap();
        check(is_zero_diff(&lhs, &rhs), format!("case {case}: Leibniz for d''"))?;
        let lhs = ab.d_prime();
        let rhs = a.d_prime().wedge(&b).unwrap().add(&a.wedge(&b.d_prime()).unwrap().scale(&sign(da))).unwrap();
        check(is_zero_diff(&lhs, &rhs), format!("case {case}: Leibniz for d'"))?;
    }
    for case in 0..100 {
        let i = rng.gen_range(0..2);
        let j = rng.gen_range(0..2);
        let w = Superform::term(2, &[i], &[j], random_profile(&mut rng, 2));
        let vs: Vec<Vec<Q>> = (0..3).map(|_| vec![q(rng.gen_range(-4..=4)), q(rng.gen_range(-4..=4))]).collect();
        let coef = Coef::Exact(vec![q(rng.gen_range(-2..=2)), q(rng.gen_range(-2..=2))]);
        let c = CellChain { p: 1, q: 2, terms: vec![CellTerm { orbit: 0, shape: CellShape::Simplex(vs), coef }] };
        let lhs = integrate_exact(&c.boundary().unwrap(), &w).map_err(|e| e.to_string())?;
        let rhs = integrate_exact(&c, &w.d_double_prime()).map_err(|e| e.to_string())?;
        check(lhs == rhs, format!("Stokes case {case}: {lhs} vs {rhs}"))?;
    }
    Ok("100 random forms, 100 exact Stokes triangles".into())
}

fn tropical_side(c: &WeightedCycle, w: &Superform) -> Complex64 {
    let tc = weighted_chain(c, 1).unwrap();
    integrate(&tc.cell_chain(), w, &AdaptiveCfg::default()).unwrap()
}

fn limit_identity() -> Outcome {
    let v = chain("chains/line.json");
    let w = form("forms/ray_window_11.json");
    let start = Instant::now();
    let lim = limit_integral(&v, &w, &EpsSchedule::default(), &QuadratureCfg::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let trop = tropical_side(&hypersurface("polys/line.json"), &w);
    let rel = (lim.limit - trop).norm() / trop.norm();
    check(trop.norm() > 0.1, format!("degenerate test form: {trop}"))?;
    check(rel <= 1e-3, format!("limit {} vs tropical {trop}, rel {rel:e}", lim.limit))?;
    check(secs < 60.0, format!("{secs:.1} s"))?;
    Ok(format!("limit {:.9} vs {:.9}, rel {rel:.1e}, {secs:.1} s", lim.limit.re, trop.re))
}

fn eps_independence() -> Outcome {
    let v = chain("chains/gm_annulus.json");
    let w = form("forms/annulus_bump.json");
    let cfg = QuadratureCfg::default();
    let vals: Vec<Complex64> = EpsSchedule::default()
        .values()
        .iter()
        .map(|&e| eps_integral(&v, &w, e, &cfg).map(|r| r.value))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let spread = vals.iter().map(|x| (x - vals[0]).norm()).fold(0.0, f64::max);
    check(spread < 1e-9, format!("spread {spread:e}"))?;
    Ok(format!("spread {spread:.1e} over {} levels", vals.len()))
}

fn vanishing() -> Outcome {
    let cfg = QuadratureCfg::default();
    let v = chain("chains/small_circle_on_line.json");
    let w = form("forms/ray_window_01.json");
    let (hi, lo) = (0.2, 0.2 * 2f64.powi(-6));
    let a = eps_integral(&v, &w, hi, &cfg).map_err(|e| e.to_string())?.value.norm();
    let b = eps_integral(&v, &w, lo, &cfg).map_err(|e| e.to_string())?.value.norm();
    let ratio = a / b.max(f64::MIN_POSITIVE);
    check(a > 1e-6, format!("nothing to decay: {a:e}"))?;
    check(ratio >= 1e3, format!("decay only {ratio:.1}×"))?;
    Ok(format!("|I| {a:.2e} -> {b:.2e}"))
}

fn rationality() -> Outcome {
    let cfg = QuadratureCfg::default();
    let names = ["circle_ccw", "circle_cw", "circle_double", "torus_skew", "line_circle"];
    let mut got = Vec::new();
    for name in names {
        let v = chain(&format!("chains/closed/{name}.json"));
        let doc: serde_json::Value = load(&format!("chains/closed/{name}.monomials.json"));
        let fs: Vec<Vec<i64>> = serde_json::from_value(doc["monomials"].clone()).unwrap();
        let expected = doc["expected"].as_str().unwrap().to_string();
        let r = rationality_check(&v, &fs, &cfg).map_err(|e| format!("{name}: {e}"))?;
        check(r.rational.as_deref() == Some(expected.as_str()), format!("{name}: {:?} ({}), expected {expected}", r.rational, r.value))?;
        if name == "circle_ccw" {
            check((r.value - Complex64::new(-1.0, 0.0)).norm() <= 1e-9, format!("winding integral {}", r.value))?;
        }
        got.push(expected);
    }
    Ok(format!("values {}", got.join(", ")))
}

fn weight_agreement() -> Outcome {
    let mut worst = 0.0f64;
    for (c_file, p_file) in [("chains/line.json", "polys/line.json"), ("chains/parabola.json", "polys/parabola.json")] {
        let v = chain(c_file);
        let c = hypersurface(p_file);
        let classes = wt_trop_chain(&v, &c.fan, 2, &QuadratureCfg::default()).map_err(|e| e.to_string())?;
        let (_, one) = classes.iter().find(|(qd, _)| *qd == 1).ok_or("no degree-1 class")?;
        for cell in c.top_cells() {
            let g = canonical_generator(c.fan.cell(cell));
            let got = one.term_weight(cell, &g).ok_or(format!("{c_file}: cell {cell} missing"))?;
            let want = to_f64(&c.weight(cell));
            let err = (got - Complex64::new(want, 0.0)).norm();
            worst = worst.max(err);
            check(err < 1e-6, format!("{c_file}: cell {cell} weight {got} vs {want}"))?;
        }
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn brute_exp_cone(a: &[f64], n: &[f64], h: f64) -> bool {
    if a.len() != n.len() + 1 {
        return false;
    }
    for x in a {
        if !(*x > 0.0) || *x > h {
            return false;
        }
    }
    for i in 0..n.len() {
        if a[i] > a[i + 1].powf(n[i]) {
            return false;
        }
    }
    true
}

fn set(n: usize, cs: Vec<Vec<(f64, Vec<i64>)>>) -> SemialgSet {
    SemialgSet { n, constraints: cs.into_iter().map(|p| Constraint { poly: RealPoly(p), rel: Rel::Ge }).collect() }
}

/// Sign of every constraint far out along x = e^{−t w}, evaluated directly.
fn meets_numerically(s: &SemialgSet, w: &[f64]) -> Meets {
    let t = 40.0;
    let mut ok = true;
    for c in &s.constraints {
        let terms: Vec<(f64, f64)> = c.poly.0.iter().map(|(k, a)| (*k, -t * a.iter().zip(w).map(|(e, x)| *e as f64 * x).sum::<f64>())).collect();
        let top = terms.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let v: f64 = terms.iter().map(|(k, l)| k * (l - top).exp()).sum();
        ok &= v > 0.0;
    }
    if ok {
        Meets::MeetsFully
    } else {
        Meets::Empty
    }
}

fn appendix() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..1000 {
        let r = rng.gen_range(1..=4);
        let n: Vec<f64> = (0..r - 1).map(|_| rng.gen_range(0.2..3.0)).collect();
        let h = rng.gen_range(0.05..1.5);
        let a: Vec<f64> = (0..r).map(|_| if rng.gen_bool(0.1) { -rng.gen_range(0.0..1.0) } else { rng.gen_range(0.0..1.2f64).powi(3) }).collect();
        let cone = ExpBasicCone::new(n.clone(), h).map_err(|e| e.to_string())?;
        check(in_exp_cone(&a, &cone) == brute_exp_cone(&a, &n, h), format!("point {i}: {a:?} N={n:?} h={h}"))?;
    }

    let s: SemialgSet = load("sets/parabola.json");
    let cloud = log_limit_sample(&s, &SampleCfg::default()).map_err(|e| e.to_string())?;
    let t = 0.2f64.sqrt();
    let targets = [vec![t, 2.0 * t], vec![-t, -2.0 * t]];
    check(cloud.clusters.len() == 2, format!("{} clusters", cloud.clusters.len()))?;
    let mut worst = 0.0f64;
    for c in &cloud.clusters {
        let a = targets.iter().map(|d| angle(d, &c.direction)).fold(f64::INFINITY, f64::min);
        worst = worst.max(a);
        check(a < 0.05, format!("cluster {:?} off by {a} rad", c.direction))?;
    }

    // directions with rationally independent entries, so no leading ties
    let dirs = [vec![1.0, std::f64::consts::SQRT_2], vec![-std::f64::consts::E, 1.0], vec![std::f64::consts::PI, -1.0], vec![-1.0, -std::f64::consts::SQRT_2]];
    let mut sets = vec![
        set(1, vec![vec![(1.0, vec![0]), (1.0, vec![1])]]),
        set(1, vec![vec![(-1.0, vec![0]), (1.0, vec![1])]]),
        set(1, vec![vec![(1.0, vec![0]), (-1.0, vec![1])]]),
        set(1, vec![vec![(-2.0, vec![2]), (3.0, vec![-1])]]),
    ];
    let mut k = 0;
    while sets.len() < 20 {
        k += 1;
        let mut local = ChaCha8Rng::seed_from_u64(100 + k);
        let ncons = local.gen_range(1..=2);
        let cs = (0..ncons)
            .map(|_| (0..local.gen_range(2..=4)).map(|_| (if local.gen_bool(0.5) { 1.0 } else { -1.0 } * local.gen_range(0.5..3.0), vec![local.gen_range(-2..=2), local.gen_range(-2..=2)])).collect())
            .collect();
        sets.push(set(2, cs));
    }
    let (mut full, mut empty) = (0, 0);
    for (i, s) in sets.iter().enumerate() {
        let w: Vec<f64> = if s.n == 1 { vec![[1.0, -1.0][i % 2]] } else { dirs[i % dirs.len()].clone() };
        let got = orbit_meets(s, &w);
        let want = meets_numerically(s, &w);
        check(got == want, format!("set {i} along {w:?}: {got:?} vs {want:?}"))?;
        match got {
            Meets::MeetsFully => full += 1,
            _ => empty += 1,
        }
    }
    check(full > 0 && empty > 0, format!("one-sided sample: {full} meet, {empty} empty"))?;
    Ok(format!("1000 cone points; clusters within {worst:.3} rad; 20 sets ({full} meet, {empty} empty)"))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tropmap")).args(args).current_dir(data("")).output().map_err(|e| e.to_string())?;
    check(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let runs: [&[&str]; 4] = [
        &["homology", "--fan", "fans/p2.json"],
        &["trophyp", "--poly", "polys/plane.json"],
        &["loglimit", "--set", "sets/parabola.json", "--seed", "7"],
        &["logint", "--chain", "chains/closed/torus_skew.json", "--monomials", "chains/closed/torus_skew.monomials.json", "--mc-samples", "20000", "--seed", "5", "--threads", "3"],
    ];
    for args in runs {
        let a = run_cli(args)?;
        let b = run_cli(args)?;
        check(a == b, format!("{} differs between runs", args[0]))?;
    }
    Ok(format!("{} verbs byte-identical", runs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("tropical line homology", line_homology),
        ("subdivision invariance", subdivision_invariance),
        ("balancing", balancing),
        ("superform algebra", superform_algebra),
        ("limit identity", limit_identity),
        ("epsilon independence", eps_independence),
        ("vanishing for p < q", vanishing),
        ("rationality", rationality),
        ("weight agreement", weight_agreement),
        ("exponential cones and limit sets", appendix),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
