use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use tropmap::analytic::{self, AnalyticError, ChainDoc, EpsSchedule, ParamChain, QuadratureCfg, Rule};
use tropmap::cycles::{self, CycleDoc, CycleError, Poly, PolyDoc, WeightedCycle};
use tropmap::polyfan::{canonical_generator, Fan, FanDoc};
use tropmap::satrop::{self, ExpBasicCone, SampleCfg, SemialgSet};
use tropmap::superform::{FormDoc, FormError, Superform};
use tropmap::tropcoh;

#[derive(Parser)]
#[command(name = "tropmap", version, about = "Tropical homology, weighted tropicalization and superform limits")]
struct Cli {
    /// worker threads (falls back to TROPMAP_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// write the report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// include wall-clock timing (reports are then no longer reproducible byte for byte)
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Quad {
    /// Gauss-Legendre order per chart dimension
    #[arg(long, default_value_t = 16)]
    gl_order: usize,
    /// initial panels per chart dimension
    #[arg(long, default_value_t = 16)]
    panels: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// bisection depth limit; quadrature that misses the tolerance exits with 3
    #[arg(long, default_value_t = 40)]
    max_depth: usize,
    /// use Monte Carlo with this many samples instead
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl Quad {
    fn cfg(&self) -> QuadratureCfg {
        match self.mc_samples {
            Some(n) => QuadratureCfg::monte_carlo(n, self.seed),
            None => QuadratureCfg {
                rule: Rule::GaussLegendre { order: self.gl_order, panels: self.panels, max_depth: self.max_depth },
                tol: self.tol,
            },
        }
    }
}

#[derive(Subcommand)]
enum Verb {
    /// ranks of tropical homology H_{p,q}
    Homology {
        #[arg(long)]
        fan: PathBuf,
        /// a single p; all p when omitted
        #[arg(long)]
        p: Option<usize>,
    },
    /// dimension of F^p at the origin cell and its annihilator
    Kgroup {
        #[arg(long)]
        fan: PathBuf,
        #[arg(long)]
        p: usize,
    },
    /// tropical hypersurface with Newton-edge weights
    Trophyp {
        #[arg(long)]
        poly: PathBuf,
    },
    /// balancing check of a weighted cycle
    Balance {
        #[arg(long)]
        cycle: PathBuf,
    },
    /// weights of a parametrized chain from logarithmic integrals over face chains
    Wttrop {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        fan: PathBuf,
        #[command(flatten)]
        quad: Quad,
    },
    /// epsilon sweep of the pulled-back integral with extrapolation
    Limit {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        form: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        eps0: f64,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = 7)]
        levels: usize,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// CSV of (eps, value, error); defaults to the report path with .csv
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        quad: Quad,
    },
    /// logarithmic integral of monomials over a chain
    Logint {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        monomials: PathBuf,
        /// also reconstruct a rational value (closed chains only)
        #[arg(long)]
        rational: bool,
        #[command(flatten)]
        quad: Quad,
    },
    /// sampled logarithmic limit set
    Loglimit {
        #[arg(long)]
        set: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![4.0, 8.0, 16.0, 32.0])]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
    },
    /// membership in an exponential basic cone
    Expcone {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Vec<f64>,
        /// the r−1 exponents of an r-dimensional cone
        #[arg(long = "N", value_delimiter = ',')]
        n: Vec<f64>,
        #[arg(long)]
        h: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Parse(String),
    Invariant(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Invariant(m) | Failure::Numeric(m) => m,
        }
    }
}

fn invariant(e: impl std::fmt::Display) -> Failure {
    Failure::Invariant(e.to_string())
}

fn from_analytic(e: AnalyticError) -> Failure {
    match e {
        AnalyticError::NoConvergence(_) => Failure::Numeric(e.to_string()),
        AnalyticError::Parse(_) => Failure::Parse(e.to_string()),
        other => invariant(other),
    }
}

fn from_cycle(e: CycleError) -> Failure {
    match e {
        CycleError::Analytic(a) => from_analytic(a),
        other => invariant(other),
    }
}

fn from_form(e: FormError) -> Failure {
    match e {
        FormError::NoConvergence(_) => Failure::Numeric(e.to_string()),
        other => invariant(other),
    }
}

/// Input files are read once; their digests go into the report.
struct Inputs {
    seen: Vec<(String, String)>,
}

impl Inputs {
    fn read<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T, Failure> {
        let bytes = std::fs::read(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
        self.seen.push((path.display().to_string(), hex(&Sha256::digest(&bytes))));
        serde_json::from_slice(&bytes).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
    }
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn c_json(z: num::complex::Complex64) -> Value {
    json!({ "re": z.re, "im": z.im })
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable report")
}

fn cycle_report(c: &WeightedCycle) -> Value {
    let cones: Vec<Value> = c
        .cone_weights()
        .into_iter()
        .map(|(rays, w)| json!({ "rays": rays, "weight": w.to_string() }))
        .collect();
    json!({ "dim": c.dim, "cones": cones, "document": to_value(&c.to_doc()) })
}

fn run(verb: &Verb, inputs: &mut Inputs, out: Option<&Path>) -> Result<Value, Failure> {
    match verb {
        Verb::Homology { fan, p } => {
            let f = Fan::from_doc(&inputs.read::<FanDoc>(fan)?).map_err(invariant)?;
            let ps: Vec<usize> = match p {
                Some(p) => vec![*p],
                None => (0..=f.rank()).collect(),
            };
            let mut ranks = BTreeMap::new();
            for p in ps {
                let h = tropcoh::homology_of(&f, p).map_err(invariant)?;
                for (q, r) in h.ranks {
                    ranks.insert(format!("({p},{q})"), r);
                }
            }
            Ok(json!({ "ranks": ranks }))
        }
        Verb::Kgroup { fan, p } => {
            let f = Fan::from_doc(&inputs.read::<FanDoc>(fan)?).map_err(invariant)?;
            let k = tropcoh::tropical_K_F0(&f, *p).map_err(invariant)?;
            let basis: Vec<Vec<String>> = k.kernel.basis().iter().map(|v| v.iter().map(|x| x.to_string()).collect()).collect();
            Ok(json!({ "p": k.p, "dim": k.dim, "annihilator_basis": basis }))
        }
        Verb::Trophyp { poly } => {
            let f = Poly::from_doc(&inputs.read::<PolyDoc>(poly)?).map_err(from_cycle)?;
            let c = cycles::trop_hypersurface(&f).map_err(from_cycle)?;
            Ok(cycle_report(&c))
        }
        Verb::Balance { cycle } => {
            let c = WeightedCycle::from_doc(&inputs.read::<CycleDoc>(cycle)?).map_err(from_cycle)?;
            let v = cycles::check_balanced(&c).map_err(from_cycle)?;
            Ok(to_value(&v))
        }
        Verb::Wttrop { chain, fan, quad } => {
            let v = ParamChain::from_doc(&inputs.read::<ChainDoc>(chain)?).map_err(from_analytic)?;
            let f = Fan::from_doc(&inputs.read::<FanDoc>(fan)?).map_err(invariant)?;
            let classes = cycles::wt_trop_chain(&v, &f, v.dim(), &quad.cfg()).map_err(from_cycle)?;
            let mut cells = Vec::new();
            for (q, class) in &classes {
                for t in &class.terms {
                    let cone = f.cell(t.cell);
                    let rays: Vec<Vec<i64>> = cone.rays.iter().map(|r| tropmap::exact_linalg::z_to_i64(r)).collect();
                    let coef: Vec<Value> = t.coef.numeric().into_iter().map(c_json).collect();
                    let mut entry = json!({ "q": q, "rays": rays, "coefficient": coef });
                    if *q > 0 {
                        let w = class.term_weight(t.cell, &canonical_generator(cone)).expect("term present");
                        entry["weight"] = c_json(w);
                    }
                    cells.push(entry);
                }
            }
            Ok(json!({ "dim": v.dim(), "cells": cells }))
        }
        Verb::Limit { chain, form, eps0, ratio, levels, order, csv, quad } => {
            let v = ParamChain::from_doc(&inputs.read::<ChainDoc>(chain)?).map_err(from_analytic)?;
            let w = Superform::from_doc(&inputs.read::<FormDoc>(form)?, None).map_err(from_form)?;
            let s = EpsSchedule { eps0: *eps0, ratio: *ratio, levels: *levels, order: *order };
            let r = analytic::limit_integral(&v, &w, &s, &quad.cfg()).map_err(from_analytic)?;
            let csv_path = csv.clone().or_else(|| out.map(|o| o.with_extension("csv")));
            if let Some(path) = &csv_path {
                let mut text = String::from("eps,re,im,error\n");
                for l in &r.levels {
                    text.push_str(&format!("{:e},{:e},{:e},{:e}\n", l.eps, l.value.re, l.value.im, l.error));
                }
                std::fs::write(path, text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
            }
            let levels: Vec<Value> = r.levels.iter().map(|l| json!({ "eps": l.eps, "value": c_json(l.value), "error": l.error })).collect();
            Ok(json!({
                "limit": c_json(r.limit),
                "error_estimate": r.error_estimate,
                "order_estimate": r.order_estimate,
                "diverging": r.diverging,
                "levels": levels,
                "csv": csv_path.map(|p| p.display().to_string()),
            }))
        }
        Verb::Logint { chain, monomials, rational, quad } => {
            let v = ParamChain::from_doc(&inputs.read::<ChainDoc>(chain)?).map_err(from_analytic)?;
            let doc: Value = inputs.read(monomials)?;
            let fs: Vec<Vec<i64>> = serde_json::from_value(doc.get("monomials").cloned().unwrap_or(Value::Null))
                .map_err(|e| Failure::Parse(format!("{}: monomials: {e}", monomials.display())))?;
            if *rational {
                let r = analytic::rationality_check(&v, &fs, &quad.cfg()).map_err(from_analytic)?;
                Ok(json!({ "value": c_json(r.value), "error": r.error, "rational": r.rational }))
            } else {
                let r = analytic::log_integral(&v, &fs, &quad.cfg()).map_err(from_analytic)?;
                Ok(json!({ "value": c_json(r.value), "error": r.error }))
            }
        }
        Verb::Loglimit { set, radii, samples, seed, tolerance } => {
            let s: SemialgSet = inputs.read(set)?;
            let cfg = SampleCfg { radii: radii.clone(), samples: *samples, seed: *seed, budget: 50, tolerance: *tolerance };
            let cloud = satrop::log_limit_sample(&s, &cfg).map_err(|e| match e {
                satrop::SatropError::Sampling(_) => Failure::Numeric(e.to_string()),
                other => invariant(other),
            })?;
            Ok(json!({ "clusters": to_value(&cloud.clusters), "samples": cloud.directions.len(), "certified": cloud.certified }))
        }
        Verb::Expcone { point, n, h } => {
            let c = ExpBasicCone::new(n.clone(), *h).map_err(invariant)?;
            if point.len() != c.r {
                return Err(Failure::Invariant(format!("point has {} coordinates, the cone has dimension {}", point.len(), c.r)));
            }
            Ok(json!({ "inside": satrop::in_exp_cone(point, &c) }))
        }
    }
}

fn verb_name(v: &Verb) -> &'static str {
    match v {
        Verb::Homology { .. } => "homology",
        Verb::Kgroup { .. } => "kgroup",
        Verb::Trophyp { .. } => "trophyp",
        Verb::Balance { .. } => "balance",
        Verb::Wttrop { .. } => "wttrop",
        Verb::Limit { .. } => "limit",
        Verb::Logint { .. } => "logint",
        Verb::Loglimit { .. } => "loglimit",
        Verb::Expcone { .. } => "expcone",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| std::env::var("TROPMAP_THREADS").ok().and_then(|s| s.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    let mut inputs = Inputs { seen: Vec::new() };
    let result = run(&cli.verb, &mut inputs, cli.out.as_deref());
    let payload = match result {
        Ok(v) => v,
        Err(f) => {
            eprintln!("error: {}", f.message());
            return ExitCode::from(f.code());
        }
    };
    let digests: Vec<Value> = inputs.seen.iter().map(|(p, d)| json!({ "path": p, "sha256": d })).collect();
    let mut report = json!({
        "tool": "tropmap",
        "version": env!("CARGO_PKG_VERSION"),
        "verb": verb_name(&cli.verb),
        "inputs": digests,
        "result": payload,
    });
    if cli.timing {
        report["wall_clock_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
    }
    let text = serde_json::to_string_pretty(&report).expect("report") + "\n";
    match &cli.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}
