use num::complex::Complex64;
use std::path::PathBuf;
use std::time::Instant;
use tropmap::analytic::{eps_integral, limit_integral, ChainDoc, EpsSchedule, ParamChain, QuadratureCfg};
use tropmap::cycles::{trop_hypersurface, weighted_chain, wt_trop_chain, Poly, PolyDoc, WeightedCycle};
use tropmap::polyfan::{canonical_generator, Fan, FanDoc};
use tropmap::quad::AdaptiveCfg;
use tropmap::superform::{integrate, FormDoc, Superform};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn load<T: serde::de::DeserializeOwned>(rel: &str) -> T {
    let text = std::fs::read_to_string(data(rel)).unwrap();
    serde_json::from_str(&text).unwrap()
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

/// ∫ over the weighted tropical 1-cycle of a (1,1)-form.
fn tropical_side(c: &WeightedCycle, w: &Superform) -> Complex64 {
    let tc = weighted_chain(c, 1).unwrap();
    integrate(&tc.cell_chain(), w, &AdaptiveCfg::default()).unwrap()
}

#[test]
fn line_limit_matches_tropical_integral() {
    let v = chain("chains/line.json");
    let w = form("forms/ray_window_11.json");
    let start = Instant::now();
    let lim = limit_integral(&v, &w, &EpsSchedule::default(), &QuadratureCfg::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let trop = tropical_side(&hypersurface("polys/line.json"), &w);
    assert!(trop.re > 0.1);
    let rel = (lim.limit - trop).norm() / trop.norm();
    assert!(rel <= 1e-3, "limit {} vs tropical {trop} (rel {rel:e})", lim.limit);
    assert!(!lim.diverging);
    assert!(elapsed < 60.0, "{elapsed} s");
}

#[test]
fn diagonal_window_on_the_line() {
    let v = chain("chains/line.json");
    let w = form("forms/diagonal_window_11.json");
    let lim = limit_integral(&v, &w, &EpsSchedule::default(), &QuadratureCfg::default()).unwrap();
    let trop = tropical_side(&hypersurface("polys/line.json"), &w);
    assert!(trop.norm() > 0.1);
    assert!((lim.limit - trop).norm() <= 1e-3 * trop.norm(), "{} vs {trop}", lim.limit);
}

#[test]
fn wt_trop_tropical_side_agrees_with_hypersurface_side() {
    let v = chain("chains/line.json");
    let w = form("forms/ray_window_11.json");
    let fan: Fan = Fan::from_doc(&load::<FanDoc>("fans/line_fan.json")).unwrap();
    let classes = wt_trop_chain(&v, &fan, 2, &QuadratureCfg::default()).unwrap();
    let (_, one) = classes.iter().find(|(q, _)| *q == 1).unwrap();
    let a = integrate(&one.cell_chain(), &w, &AdaptiveCfg::default()).unwrap();
    let b = tropical_side(&hypersurface("polys/line.json"), &w);
    assert!((a - b).norm() < 1e-9, "{a} vs {b}");
}

#[test]
fn annulus_is_epsilon_independent() {
    let v = chain("chains/gm_annulus.json");
    let w = form("forms/annulus_bump.json");
    let lim = limit_integral(&v, &w, &EpsSchedule::default(), &QuadratureCfg::default()).unwrap();
    let vals: Vec<Complex64> = lim.levels.iter().map(|l| l.value).collect();
    let spread = vals.iter().map(|x| (x - vals[0]).norm()).fold(0.0, f64::max);
    assert!(spread < 1e-9, "{vals:?}");
    // ∫ exp(-1/(1-(x/2)^2)) dx over (-2, 2)
    let exact = 2.0 * 0.443_993_816_168_079_4;
    assert!((vals[0].re - exact).abs() < 1e-9, "{}", vals[0]);
    assert!(vals[0].im.abs() < 1e-12);
}

#[test]
fn truncated_chart_must_carry_no_form() {
    let v = chain("chains/gm_annulus.json");
    // support reaches |x| = 8 > eps * 1000 at eps = 0.003
    let mut doc: FormDoc = load("forms/annulus_bump.json");
    doc.charts[0].terms[0].bump[0].radius = tropmap::superform::Num::Int(8);
    let w = Superform::from_doc(&doc, None).unwrap();
    assert!(eps_integral(&v, &w, 0.003, &QuadratureCfg::default()).is_err());
}

#[test]
fn forms_with_p_below_q_decay() {
    let s = EpsSchedule::default();
    let cfg = QuadratureCfg::default();
    let eps = s.values();
    let (first, last) = (eps[0], eps[eps.len() - 1]);
    let v = chain("chains/small_circle_on_line.json");
    let w = form("forms/ray_window_01.json");
    let a = eps_integral(&v, &w, first, &cfg).unwrap().value.norm();
    let b = eps_integral(&v, &w, last, &cfg).unwrap().value.norm();
    assert!(a > 1e-3);
    assert!(b <= a * 1e-3, "{a} -> {b}");
    // generic ε² rate for a (0,2)-form on the unit torus
    let v = chain("chains/unit_torus.json");
    let w = form("forms/torus_02.json");
    let a = eps_integral(&v, &w, first, &cfg).unwrap().value.norm();
    let b = eps_integral(&v, &w, last, &cfg).unwrap().value.norm();
    let ratio = a / b;
    assert!((ratio / 4096.0 - 1.0).abs() < 1e-6, "{ratio}");
}

#[test]
fn monte_carlo_cross_check() {
    let v = chain("chains/line_near_zero.json");
    let w = form("forms/ray_window_11.json");
    let gl = eps_integral(&v, &w, 0.2, &QuadratureCfg::default()).unwrap();
    let mut mc_chain = v.clone();
    // keep the sampled box close to the support so the variance stays small
    mc_chain.charts[0].hi[0] = 20.0;
    let mc = eps_integral(&mc_chain, &w, 0.2, &QuadratureCfg::monte_carlo(200_000, 11)).unwrap();
    assert!((mc.value - gl.value).norm() < 5.0 * mc.error + 1e-6, "{} vs {} ± {}", gl.value, mc.value, mc.error);
}

fn weights_agree(chain_file: &str, poly_file: &str) {
    let v = chain(chain_file);
    let c = hypersurface(poly_file);
    let classes = wt_trop_chain(&v, &c.fan, 2, &QuadratureCfg::default()).unwrap();
    let (_, one) = classes.iter().find(|(q, _)| *q == 1).unwrap();
    for cell in c.top_cells() {
        let g = canonical_generator(c.fan.cell(cell));
        let got = one.term_weight(cell, &g).unwrap();
        let want = tropmap::exact_linalg::to_f64(&c.weight(cell));
        assert!((got - Complex64::new(want, 0.0)).norm() < 1e-6, "cell {cell}: {got} vs {want}");
    }
}

#[test]
fn weights_of_the_line() {
    weights_agree("chains/line.json", "polys/line.json");
}

#[test]
fn weights_of_the_parabola() {
    weights_agree("chains/parabola.json", "polys/parabola.json");
}
