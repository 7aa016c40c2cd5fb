//! Scenario files and the command dispatcher behind the `gmfg` binary.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control;
use crate::error::{Error, Result};
use crate::gmfg::{picard_iterate, GmfgProblem, GmfgSolution, PicardOptions, TraceEntry};
use crate::graphon::{self, CutNormOptions, Graphon};
use crate::grid::{TimeGrid, VertexGrid};
use crate::io::{fmt_f64, write_csv, write_json, Provenance};
use crate::lq::{self, LqConfig, LqInit, LqOptions, LqParams, LqSolution};
use crate::measure::{self, InitialLaw, TestFn};
use crate::model::{ControlSet, Couplings, ProblemFunctions};
use crate::popsim::{self, DeviationReport, EnashOptions};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 1;
    pub const CONVERGENCE: i32 = 2;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SolveLq,
    SolveGmfg,
    SimulateEnash,
    GraphonDiag,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveLq => "solve-lq",
            Command::SolveGmfg => "solve-gmfg",
            Command::SimulateEnash => "simulate-enash",
            Command::GraphonDiag => "graphon-diag",
        }
    }
}

/// Nonlinear model block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmfgConfig {
    pub couplings: Couplings,
    pub control: ControlSet,
    pub sigma: f64,
    pub horizon: f64,
    pub initial: InitialLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProblemConfig {
    Lq(LqConfig),
    Gmfg(GmfgConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Vertex cells.
    pub m: usize,
    /// Time steps.
    pub k: usize,
    pub n_x: usize,
    pub n_u: usize,
    /// Particles per vertex.
    pub particles: usize,
    /// Extra margin added on both sides of the automatic space domain.
    pub padding: f64,
}

impl Default for Grids {
    fn default() -> Self {
        Self { m: 8, k: 64, n_x: 201, n_u: 101, particles: 2000, padding: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub picard: PicardOptions,
    pub lq: LqOptions,
    /// Fixed-point tolerance for vertex extensions and cluster laws.
    pub inner: f64,
    pub max_inner: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { picard: PicardOptions::default(), lq: LqOptions::default(), inner: 1e-6, max_inner: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnashConfig {
    /// `(clusters, agents per cluster)` rungs.
    pub ladder: Vec<(usize, usize)>,
    pub replications: usize,
    pub deviator: usize,
}

impl Default for EnashConfig {
    fn default() -> Self {
        Self { ladder: vec![(2, 25), (4, 50), (8, 100)], replications: 20, deviator: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Step resolutions for `graphon-diag`.
    pub m_list: Vec<usize>,
    pub refine: usize,
    pub restarts: usize,
    /// Monte-Carlo replicas for the LQ simulation check (0 skips it).
    pub lq_mc_replicas: usize,
    /// Also solve the LQ fixed point from a random start and report the gap.
    pub lq_random_init: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { m_list: vec![4, 8, 16, 32], refine: 8, restarts: 32, lq_mc_replicas: 0, lq_random_init: false }
    }
}

/// A validated scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub graphon: Graphon,
    pub problem: ProblemConfig,
    pub grids: Grids,
    pub tolerances: Tolerances,
    pub enash: EnashConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Raw file contents, hashed into every output header.
    pub source: Vec<u8>,
}

const KEYS: [&str; 7] = ["seed", "graphon", "problem", "grids", "tolerances", "enash", "diagnostics"];

fn block<T: DeserializeOwned + Default>(obj: &serde_json::Map<String, Value>, key: &str, errs: &mut Vec<String>) -> T {
    match obj.get(key) {
        None => T::default(),
        Some(v) => T::deserialize(v).unwrap_or_else(|e| {
            errs.push(format!("{key}: {e}"));
            T::default()
        }),
    }
}

fn required<T: DeserializeOwned>(obj: &serde_json::Map<String, Value>, key: &str, errs: &mut Vec<String>) -> Option<T> {
    match obj.get(key) {
        None => {
            errs.push(format!("{key}: missing"));
            None
        }
        Some(v) => T::deserialize(v).map_err(|e| errs.push(format!("{key}: {e}"))).ok(),
    }
}

fn check(errs: &mut Vec<String>, ok: bool, path: &str, msg: impl std::fmt::Display) {
    if !ok {
        errs.push(format!("{path}: {msg}"));
    }
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Parses scenario JSON, reporting every schema violation at once.
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Scenario(vec![format!("<root>: {e}")]))?;
    let Value::Object(obj) = root else {
        return Err(Error::Scenario(vec!["<root>: expected a JSON object".into()]));
    };
    let mut errs = Vec::new();
    for k in obj.keys() {
        if !KEYS.contains(&k.as_str()) {
            errs.push(format!("{k}: unknown field, expected one of {}", KEYS.join(", ")));
        }
    }
    let seed: u64 = block(&obj, "seed", &mut errs);
    let graphon: Option<Graphon> = required(&obj, "graphon", &mut errs);
    let problem: Option<ProblemConfig> = required(&obj, "problem", &mut errs);
    let grids: Grids = block(&obj, "grids", &mut errs);
    let tolerances: Tolerances = block(&obj, "tolerances", &mut errs);
    let enash: EnashConfig = block(&obj, "enash", &mut errs);
    let diagnostics: DiagnosticsConfig = block(&obj, "diagnostics", &mut errs);

    if let Some(g) = &graphon {
        if let Err(e) = g.validate() {
            errs.push(format!("graphon: {e}"));
        }
    }
    check(&mut errs, grids.m >= 1, "grids.m", "must be at least 1");
    check(&mut errs, grids.k >= 1, "grids.k", "must be at least 1");
    check(&mut errs, grids.n_x >= 3, "grids.n_x", "must be at least 3");
    check(&mut errs, grids.n_u >= 3, "grids.n_u", "must be at least 3");
    check(&mut errs, grids.particles >= 100, "grids.particles", "must be at least 100");
    check(
        &mut errs,
        grids.padding.is_finite() && grids.padding >= 0.0,
        "grids.padding",
        "must be finite and non-negative",
    );
    let t = &tolerances;
    check(&mut errs, finite_positive(t.picard.tol), "tolerances.picard.tol", "must be positive");
    check(&mut errs, finite_positive(t.picard.tol_inner), "tolerances.picard.tol_inner", "must be positive");
    check(&mut errs, t.picard.max_outer >= 1, "tolerances.picard.max_outer", "must be at least 1");
    check(&mut errs, finite_positive(t.lq.tol), "tolerances.lq.tol", "must be positive");
    check(&mut errs, finite_positive(t.inner), "tolerances.inner", "must be positive");
    for (i, &(m, n)) in enash.ladder.iter().enumerate() {
        check(&mut errs, m >= 1 && n >= 1, &format!("enash.ladder[{i}]"), "clusters and sizes must be positive");
    }
    check(&mut errs, enash.replications >= 2, "enash.replications", "must be at least 2");
    check(&mut errs, diagnostics.refine >= 1, "diagnostics.refine", "must be at least 1");
    check(&mut errs, diagnostics.m_list.iter().all(|&m| m >= 1), "diagnostics.m_list", "entries must be positive");

    match &problem {
        Some(ProblemConfig::Gmfg(c)) => {
            check(&mut errs, finite_positive(c.sigma), "problem.sigma", format!("must be positive, got {}", c.sigma));
            check(
                &mut errs,
                finite_positive(c.horizon),
                "problem.horizon",
                format!("must be positive, got {}", c.horizon),
            );
            if let Err(e) = ControlSet::new(c.control.a, c.control.b) {
                errs.push(format!("problem.control: {e}"));
            }
            if let Err(e) = c.initial.validate() {
                errs.push(format!("problem.initial: {e}"));
            }
            if errs.is_empty() {
                if let Err(e) = ProblemFunctions::new(c.couplings.clone(), c.control, c.sigma, c.horizon) {
                    errs.push(format!("problem.couplings: {e}"));
                }
            }
        }
        Some(ProblemConfig::Lq(c)) => {
            check(
                &mut errs,
                finite_positive(c.horizon),
                "problem.horizon",
                format!("must be positive, got {}", c.horizon),
            );
            if let lq::MatrixInput::Scalar(s) = c.sigma {
                check(&mut errs, s.is_finite() && s >= 0.0, "problem.sigma", format!("must be non-negative, got {s}"));
            }
            if errs.is_empty() {
                if let Some(g) = &graphon {
                    if let Err(e) = LqParams::from_config(c, g.clone(), grids.m, grids.k) {
                        errs.push(format!("problem: {e}"));
                    }
                }
            }
        }
        None => {}
    }

    match (errs.is_empty(), graphon, problem) {
        (true, Some(graphon), Some(problem)) => Ok(Scenario {
            seed,
            graphon,
            problem,
            grids,
            tolerances,
            enash,
            diagnostics,
            source: text.as_bytes().to_vec(),
        }),
        _ => Err(Error::Scenario(errs)),
    }
}

/// Reads and parses a scenario file; `GMFG_SEED` overrides its seed.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Scenario(vec![format!("{}: {e}", path.display())]))?;
    let mut s = parse_scenario_str(&text)?;
    if let Ok(v) = std::env::var("GMFG_SEED") {
        s.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Scenario(vec![format!("GMFG_SEED: not an unsigned integer: {v:?}")]))?;
    }
    Ok(s)
}

/// `"2x25,4x50"` (or `2:25`) into ladder rungs.
pub fn parse_ladder(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once(['x', ':'])
                .ok_or_else(|| Error::Scenario(vec![format!("--ladder: expected MxSIZE, got {p:?}")]))?;
            let parse = |t: &str| {
                t.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Scenario(vec![format!("--ladder: bad count {t:?}")]))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub dump_paths: bool,
    pub ladder: Option<Vec<(usize, usize)>>,
    /// Record per-iteration wall time in traces (breaks byte reproducibility).
    pub timing: bool,
}

/// Maps an outcome to the process exit code.
pub fn exit_code(r: &Result<i32>) -> i32 {
    match r {
        Ok(code) => *code,
        Err(Error::Convergence { .. }) => exit::CONVERGENCE,
        Err(_) => exit::INPUT,
    }
}

/// Runs `cmd` and writes its outputs into `out`. Returns the exit code on
/// success paths (0, or 2 when a solver stopped without converging after
/// its trace was written).
pub fn dispatch(cmd: Command, sc: &Scenario, out: &Path, opts: &RunOptions) -> Result<i32> {
    let prov = Provenance::new(&sc.source);
    let res = match cmd {
        Command::SolveLq => solve_lq(sc, out, &prov),
        Command::SolveGmfg => solve_gmfg(sc, out, &prov, opts),
        Command::SimulateEnash => simulate_enash(sc, out, &prov, opts),
        Command::GraphonDiag => graphon_diag(sc, out, &prov),
    };
    if let Err(Error::Convergence { iterations, message, trace }) = &res {
        #[derive(Serialize)]
        struct Failed<'a> {
            converged: bool,
            iterations: usize,
            message: &'a str,
            distances: &'a [f64],
        }
        let body = Failed { converged: false, iterations: *iterations, message, distances: trace };
        write_json(&out.join("trace.json"), &prov, &body)?;
    }
    res
}

fn lq_params(sc: &Scenario) -> Result<LqParams> {
    match &sc.problem {
        ProblemConfig::Lq(c) => LqParams::from_config(c, sc.graphon.clone(), sc.grids.m, sc.grids.k),
        ProblemConfig::Gmfg(_) => Err(Error::Config("solve-lq needs a problem block of type \"lq\"".into())),
    }
}

#[derive(Serialize)]
struct LqGains {
    /// `u = gain(t) x + offset(vertex, t)`.
    time: Vec<f64>,
    gain: Vec<Vec<Vec<f64>>>,
    offset: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct LqDiagnostics {
    c_lambda: f64,
    c_g: f64,
    iterations: usize,
    residual: f64,
    observed_ratio: Option<f64>,
    trace: Vec<f64>,
    random_init_gap: Option<f64>,
    simulation: Option<lq::LqConsistencyReport>,
}

fn solve_lq(sc: &Scenario, out: &Path, prov: &Provenance) -> Result<i32> {
    let p = lq_params(sc)?;
    let sol = lq::solve_lq_fixed_point(&p, &sc.tolerances.lq)?;
    write_csv(&out.join("riccati.csv"), prov, &sol.ops.riccati.to_csv())?;
    write_csv(&out.join("meanfield.csv"), prov, &sol.meanfield_csv())?;

    let nodes = sol.nodes();
    let m = p.vertices.len();
    let zero = DVector::zeros(p.n());
    let gain_at = |k: usize| -> Vec<Vec<f64>> {
        let g = (0..p.n())
            .map(|j| {
                let mut e = DVector::zeros(p.n());
                e[j] = 1.0;
                sol.feedback(&p, 0, k, &e) - sol.feedback(&p, 0, k, &zero)
            })
            .collect::<Vec<_>>();
        (0..g[0].len()).map(|i| g.iter().map(|c| c[i]).collect()).collect()
    };
    let gains = LqGains {
        time: (0..nodes).map(|k| p.time.t(k)).collect(),
        gain: (0..nodes).map(gain_at).collect(),
        offset: (0..m)
            .map(|a| (0..nodes).map(|k| sol.feedback(&p, a, k, &zero).iter().copied().collect()).collect())
            .collect(),
    };
    write_json(&out.join("gains.json"), prov, &gains)?;

    let random_init_gap = if sc.diagnostics.lq_random_init {
        let opts = LqOptions { init: LqInit::Random { seed: sc.seed }, ..sc.tolerances.lq };
        Some(lq_path_gap(&sol, &lq::solve_lq_fixed_point(&p, &opts)?))
    } else {
        None
    };
    let simulation = match sc.diagnostics.lq_mc_replicas {
        0 => None,
        r => Some(lq::lq_consistency_vs_simulation(&p, &sol, r, sc.seed)?),
    };
    let diag = LqDiagnostics {
        c_lambda: sol.c_lambda,
        c_g: sol.ops.c_g(),
        iterations: sol.iterations,
        residual: sol.residual,
        observed_ratio: sol.observed_ratio(),
        trace: sol.trace.clone(),
        random_init_gap,
        simulation,
    };
    write_json(&out.join("diagnostics.json"), prov, &diag)?;
    Ok(exit::OK)
}

/// Sup-norm distance between two mean-field solutions.
pub fn lq_path_gap(a: &LqSolution, b: &LqSolution) -> f64 {
    a.xbar.iter().zip(&b.xbar).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Builds the nonlinear problem of a scenario on its grids.
pub fn gmfg_problem(sc: &Scenario, m: usize) -> Result<GmfgProblem> {
    let ProblemConfig::Gmfg(c) = &sc.problem else {
        return Err(Error::Config("this command needs a problem block of type \"gmfg\"".into()));
    };
    let f = ProblemFunctions::new(c.couplings.clone(), c.control, c.sigma, c.horizon)?.with_n_u(sc.grids.n_u);
    let space = control::auto_space_grid(&f, &c.initial, sc.grids.n_x, sc.grids.padding)?;
    let time = TimeGrid::new(c.horizon, sc.grids.k)?;
    GmfgProblem::new(
        f,
        sc.graphon.clone(),
        c.initial.clone(),
        VertexGrid::new(m)?,
        time,
        space,
        sc.grids.particles,
        sc.seed,
    )
}

#[derive(Serialize)]
struct TraceFile<'a> {
    converged: bool,
    tolerance: f64,
    noise_floor: f64,
    entries: &'a [TraceEntry],
}

#[derive(Serialize)]
struct GmfgDiagnostics {
    converged: bool,
    iterations: usize,
    final_distance: f64,
    tolerance: f64,
    noise_floor: f64,
    contraction_ratio: Option<f64>,
    ties: usize,
    value_sup: f64,
    /// Largest marginal W1 between any two vertices' laws.
    vertex_spread: f64,
    holder: Option<measure::HolderFit>,
}

/// Largest marginal W1 between any two vertices of a solution.
pub fn vertex_spread(sol: &GmfgSolution) -> f64 {
    let b = &sol.paths;
    let nv = b.vertices().len();
    let mut worst: f64 = 0.0;
    for k in 0..b.time().nodes() {
        let slices: Vec<Vec<f64>> = (0..nv)
            .map(|v| {
                let mut s = b.slice_at(v, k);
                s.sort_by(f64::total_cmp);
                s
            })
            .collect();
        for i in 0..nv {
            for j in i + 1..nv {
                let d =
                    slices[i].iter().zip(&slices[j]).map(|(x, y)| (x - y).abs()).sum::<f64>() / slices[i].len() as f64;
                worst = worst.max(d);
            }
        }
    }
    worst
}

fn ensemble_summary_csv(sol: &GmfgSolution) -> String {
    const Q: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
    let b = &sol.paths;
    let mut s = String::from("vertex_index,alpha,time_index,t,mean,std,q05,q25,q50,q75,q95\n");
    for (v, alpha) in b.vertices().iter().enumerate() {
        for k in 0..b.time().nodes() {
            let mut xs = b.slice_at(v, k);
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let _ = write!(
                s,
                "{v},{},{k},{},{},{}",
                fmt_f64(*alpha),
                fmt_f64(b.time().t(k)),
                fmt_f64(mean),
                fmt_f64(var.sqrt())
            );
            for q in Q {
                let i = ((q * n).ceil() as usize).clamp(1, xs.len()) - 1;
                let _ = write!(s, ",{}", fmt_f64(xs[i]));
            }
            s.push('\n');
        }
    }
    s
}

fn picard_options(sc: &Scenario, opts: &RunOptions) -> PicardOptions {
    PicardOptions { record_time: opts.timing, ..sc.tolerances.picard }
}

fn solve_gmfg(sc: &Scenario, out: &Path, prov: &Provenance, opts: &RunOptions) -> Result<i32> {
    let problem = gmfg_problem(sc, sc.grids.m)?;
    let popts = picard_options(sc, opts);
    let sol = picard_iterate(&problem, &popts)?;
    let trace =
        TraceFile { converged: sol.converged, tolerance: popts.tol, noise_floor: sol.noise_floor, entries: &sol.trace };
    write_json(&out.join("trace.json"), prov, &trace)?;
    write_csv(&out.join("ensemble.csv"), prov, &ensemble_summary_csv(&sol))?;
    for (v, (pol, val)) in sol.policies.iter().zip(&sol.values).enumerate() {
        write_csv(&out.join(format!("policy_v{v:03}.csv")), prov, &pol.to_csv())?;
        write_csv(&out.join(format!("value_v{v:03}.csv")), prov, &val.to_csv())?;
    }
    if opts.dump_paths {
        write_csv(&out.join("paths.csv"), prov, &sol.paths.to_csv())?;
    }
    let holder = (problem.time.nodes() >= 3)
        .then(|| measure::holder_modulus(&sol.ensemble(), &TestFn::default_family()))
        .transpose()?;
    let diag = GmfgDiagnostics {
        converged: sol.converged,
        iterations: sol.trace.len(),
        final_distance: sol.trace.last().map_or(f64::NAN, |e| e.distance),
        tolerance: popts.tol,
        noise_floor: sol.noise_floor,
        contraction_ratio: sol.contraction_ratio(),
        ties: sol.policies.iter().map(|p| p.ties()).sum(),
        value_sup: sol.values.iter().map(|v| v.sup_abs()).fold(0.0, f64::max),
        vertex_spread: vertex_spread(&sol),
        holder,
    };
    write_json(&out.join("diagnostics.json"), prov, &diag)?;
    Ok(if sol.converged { exit::OK } else { exit::CONVERGENCE })
}

/// One ladder rung of the epsilon-Nash experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rung {
    pub m_k: usize,
    pub cluster_size: usize,
    #[serde(flatten)]
    pub report: DeviationReport,
}

#[derive(Serialize)]
struct EnashFile<'a> {
    reference_vertices: usize,
    reference_iterations: usize,
    reference_converged: bool,
    /// Every deviation is a lower bound on the true gap: only this family
    /// of unilateral strategies is searched.
    gap_is_lower_bound: bool,
    rungs: &'a [Rung],
    /// Least-squares slope of `log eps1` against `log min cluster size`.
    eps1_slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`; `None` with fewer than
/// two usable points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Reference solve plus every ladder rung.
pub fn run_ladder(
    sc: &Scenario,
    ladder: &[(usize, usize)],
    popts: &PicardOptions,
) -> Result<(GmfgSolution, GmfgProblem, Vec<Rung>)> {
    let problem = gmfg_problem(sc, sc.grids.m)?;
    let sol = picard_iterate(&problem, popts)?;
    if !sol.converged {
        return Err(Error::Convergence {
            iterations: sol.trace.len(),
            message: "reference equilibrium did not converge".into(),
            trace: sol.trace.iter().map(|e| e.distance).collect(),
        });
    }
    let eopts = EnashOptions {
        replications: sc.enash.replications,
        deviator: sc.enash.deviator,
        tol_inner: sc.tolerances.inner,
        max_inner: sc.tolerances.max_inner,
        seed: sc.seed,
    };
    let mut rungs = Vec::with_capacity(ladder.len());
    for &(m_k, size) in ladder {
        let pop = popsim::build_population(&sc.graphon, m_k, &vec![size; m_k], &problem.initial, sc.seed)?;
        let en = popsim::Enash::new(&problem, &sol, &pop, sc.tolerances.inner, sc.tolerances.max_inner)?;
        let report = popsim::deviation_metrics(&en, &eopts)?;
        rungs.push(Rung { m_k, cluster_size: size, report });
    }
    Ok((sol, problem, rungs))
}

fn simulate_enash(sc: &Scenario, out: &Path, prov: &Provenance, opts: &RunOptions) -> Result<i32> {
    let ladder = opts.ladder.clone().unwrap_or_else(|| sc.enash.ladder.clone());
    if ladder.is_empty() {
        return Err(Error::Config("the ladder is empty".into()));
    }
    let popts = picard_options(sc, opts);
    let (sol, problem, rungs) = run_ladder(sc, &ladder, &popts)?;
    let slope =
        loglog_slope(&rungs.iter().map(|r| (r.report.min_cluster as f64, r.report.eps1.value)).collect::<Vec<_>>());
    let file = EnashFile {
        reference_vertices: problem.vertices.len(),
        reference_iterations: sol.trace.len(),
        reference_converged: sol.converged,
        gap_is_lower_bound: true,
        rungs: &rungs,
        eps1_slope: slope,
    };
    write_json(&out.join("report.json"), prov, &file)?;
    if opts.dump_paths {
        let mut s = String::from("rung,agent,cluster,time_index,value\n");
        for (ri, &(m_k, size)) in ladder.iter().enumerate() {
            let pop = popsim::build_population(&sc.graphon, m_k, &vec![size; m_k], &problem.initial, sc.seed)?;
            let en = popsim::Enash::new(&problem, &sol, &pop, sc.tolerances.inner, sc.tolerances.max_inner)?;
            let a = en.run_system_a(&pop.noise(0, problem.time.steps()));
            for i in 0..pop.n() {
                for (k, x) in a.path(i).iter().enumerate() {
                    let _ = writeln!(s, "{ri},{i},{},{k},{}", pop.cluster(i), fmt_f64(*x));
                }
            }
        }
        write_csv(&out.join("trajectories.csv"), prov, &s)?;
    }
    Ok(exit::OK)
}

#[derive(Serialize)]
struct DiagRow {
    m: usize,
    h11_deviation: f64,
    cut_norm_bound: f64,
}

fn graphon_diag(sc: &Scenario, out: &Path, prov: &Provenance) -> Result<i32> {
    let d = &sc.diagnostics;
    if d.m_list.is_empty() {
        return Err(Error::Config("diagnostics.m_list is empty".into()));
    }
    let lcm = d.m_list.iter().fold(1usize, |a, &b| a / gcd(a, b) * b);
    let fine = lcm * d.refine.max(1);
    let copts = CutNormOptions { restarts: d.restarts, seed: sc.seed, ..Default::default() };
    let mut rows = Vec::new();
    let mut csv = String::from("m,h11_deviation,cut_norm_bound\n");
    for &m in &d.m_list {
        let gk = graphon::sample_step_graphon(&sc.graphon, m)?;
        let h11 = graphon::h11_deviation(&gk, &sc.graphon, d.refine)?;
        let cut = graphon::cut_distance_to_limit(&gk, &sc.graphon, fine, &copts)?;
        let _ = writeln!(csv, "{m},{},{}", fmt_f64(h11), fmt_f64(cut));
        write_csv(&out.join(format!("step_m{m:03}.csv")), prov, &graphon::step_matrix_csv(&gk)?)?;
        rows.push(DiagRow { m, h11_deviation: h11, cut_norm_bound: cut });
    }
    write_csv(&out.join("h11.csv"), prov, &csv)?;
    #[derive(Serialize)]
    struct File<'a> {
        fine_cells: usize,
        rows: &'a [DiagRow],
    }
    write_json(&out.join("graphon_diag.json"), prov, &File { fine_cells: fine, rows: &rows })?;
    Ok(exit::OK)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LQ: &str = r#"{
        "seed": 3,
        "graphon": {"kind": "uniform_attachment"},
        "problem": {"type": "lq", "a": 0, "b": 1, "sigma": 0.5, "q": 1, "r": 1,
                    "d": 0.5, "gamma": 0.5, "x0": 1, "horizon": 1},
        "grids": {"m": 4, "k": 40}
    }"#;

    #[test]
    fn minimal_lq_parses() {
        let s = parse_scenario_str(LQ).unwrap();
        assert_eq!(s.seed, 3);
        assert!(matches!(s.problem, ProblemConfig::Lq(_)));
        assert_eq!(s.grids.m, 4);
    }

    #[test]
    fn errors_are_aggregated_with_paths() {
        let text = r#"{
            "graphon": {"kind": "uniform_attachment"},
            "problem": {"type": "gmfg", "couplings": {"form": "structured", "f0": 1, "f": 0,
                "l1": 0, "l2": 1, "l3": 0, "l4": 0}, "control": {"a": -1, "b": 1},
                "sigma": -0.3, "horizon": 0.5, "initial": {"kind": "dirac", "x": 0}},
            "grids": {"m": 0},
            "bogus": 1
        }"#;
        let Err(Error::Scenario(errs)) = parse_scenario_str(text) else { panic!() };
        assert!(errs.iter().any(|e| e.starts_with("problem.sigma")), "{errs:?}");
        assert!(errs.iter().any(|e| e.starts_with("grids.m")));
        assert!(errs.iter().any(|e| e.starts_with("bogus")));
    }

    #[test]
    fn unknown_graphon_kind_rejected() {
        let text = LQ.replace("uniform_attachment", "erdos_renyi");
        let Err(Error::Scenario(errs)) = parse_scenario_str(&text) else { panic!() };
        assert!(errs[0].starts_with("graphon:"), "{errs:?}");
    }

    #[test]
    fn ladder_syntax() {
        assert_eq!(parse_ladder("2x25, 4:50").unwrap(), vec![(2, 25), (4, 50)]);
        assert!(parse_ladder("2x0").is_err());
        assert!(parse_ladder("3").is_err());
    }

    #[test]
    fn solve_lq_writes_outputs() {
        let s = parse_scenario_str(LQ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(dispatch(Command::SolveLq, &s, dir.path(), &RunOptions::default()).unwrap(), 0);
        for f in ["riccati.csv", "meanfield.csv", "gains.json", "diagnostics.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let d: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
        assert!(d["c_lambda"].as_f64().unwrap() < 1.0);
        assert!(d["meta"]["scenario_sha256"].is_string());
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [1.0, 4.0, 16.0].iter().map(|&x: &f64| (x, 2.0 / x.sqrt())).collect();
        assert!((loglog_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
    }
}
