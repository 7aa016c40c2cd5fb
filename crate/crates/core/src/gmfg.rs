//! The graphon mean field game fixed point: ensemble -> per-vertex best
//! responses -> closed-loop McKean-Vlasov propagation -> new ensemble.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{self, Policy, ValueGrid};
use crate::error::{Error, Result};
use crate::graphon::Graphon;
use crate::grid::{SpaceGrid, TimeGrid, VertexGrid};
use crate::measure::{self, InitialLaw, Measure1D, MeasureEnsemble, PathBundle};
use crate::model::{CompiledModel, FrozenFields, MomentTable, ProblemFunctions};
use crate::rng;

/// A full GMFG instance on solver grids.
#[derive(Clone, Debug)]
pub struct GmfgProblem {
    pub functions: ProblemFunctions,
    pub graphon: Graphon,
    pub initial: InitialLaw,
    pub vertices: VertexGrid,
    pub time: TimeGrid,
    pub space: SpaceGrid,
    pub particles: usize,
    pub seed: u64,
    model: CompiledModel,
}

impl GmfgProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        functions: ProblemFunctions,
        graphon: Graphon,
        initial: InitialLaw,
        vertices: VertexGrid,
        time: TimeGrid,
        space: SpaceGrid,
        particles: usize,
        seed: u64,
    ) -> Result<Self> {
        graphon.validate()?;
        initial.validate()?;
        if particles < 100 {
            return Err(Error::Domain(format!("particle count must be at least 100, got {particles}")));
        }
        if (time.horizon() - functions.horizon).abs() > 1e-12 * functions.horizon {
            return Err(Error::Shape("time grid horizon differs from the problem horizon".into()));
        }
        let model = functions.compile();
        Ok(Self { functions, graphon, initial, vertices, time, space, particles, seed, model })
    }

    /// Same as [`GmfgProblem::new`] with the space domain sized automatically.
    #[allow(clippy::too_many_arguments)]
    pub fn with_auto_space(
        functions: ProblemFunctions,
        graphon: Graphon,
        initial: InitialLaw,
        m: usize,
        k: usize,
        n_x: usize,
        particles: usize,
        seed: u64,
    ) -> Result<Self> {
        let space = control::auto_space_grid(&functions, &initial, n_x, 0.0)?;
        let time = TimeGrid::new(functions.horizon, k)?;
        Self::new(functions, graphon, initial, VertexGrid::new(m)?, time, space, particles, seed)
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }

    /// `3 / sqrt(R)`: sampling resolution of the particle marginals.
    pub fn noise_floor(&self) -> f64 {
        3.0 / (self.particles as f64).sqrt()
    }

    /// Smallest accepted outer tolerance, `5 / sqrt(R)`.
    pub fn min_tol(&self) -> f64 {
        5.0 / (self.particles as f64).sqrt()
    }

    pub fn moments(&self, b: &PathBundle) -> MomentTable {
        MomentTable::from_bundle(&self.model, b)
    }

    /// Frozen fields of grid vertex `v`.
    pub fn vertex_fields(&self, table: &MomentTable, v: usize) -> Result<FrozenFields> {
        FrozenFields::from_table(table, &self.graphon, self.vertices.midpoint(v), v, &self.vertices)
    }

    /// Per-vertex HJB solves against a frozen moment table.
    pub fn best_responses(&self, table: &MomentTable) -> Result<(Vec<ValueGrid>, Vec<Policy>)> {
        let out: Vec<(ValueGrid, Policy)> = (0..self.vertices.len())
            .into_par_iter()
            .map(|v| {
                let fields = self.vertex_fields(table, v)?;
                control::solve_hjb(&self.model, &fields, self.functions.sigma, &self.space, &self.time)
            })
            .collect::<Result<_>>()?;
        Ok(out.into_iter().unzip())
    }

    /// Noise stream of vertex `alpha`: the grid index at a grid midpoint,
    /// otherwise derived from the bits of `alpha`.
    pub fn vertex_stream(&self, alpha: f64) -> u64 {
        let cell = self.vertices.cell_of(alpha);
        if self.vertices.midpoint(cell) == alpha {
            cell as u64
        } else {
            alpha.to_bits()
        }
    }

    fn bundle(&self, data: Vec<f64>) -> Result<PathBundle> {
        PathBundle::new(self.vertices.midpoints(), self.time, self.particles, self.seed, data)
    }

    /// Zero-drift propagation of the initial law; the first Picard iterate.
    pub fn zero_drift_bundle(&self) -> Result<PathBundle> {
        let block = self.particles * self.time.nodes();
        let empty = FrozenFields::from_parts(0, Vec::new(), Vec::new())?;
        let mut data = vec![0.0; self.vertices.len() * block];
        data.par_chunks_mut(block).enumerate().for_each(|(v, out)| self.simulate_paths(&empty, None, v as u64, 0, out));
        self.bundle(data)
    }
}

/// Closed-loop particle propagation of every vertex under its policy, with
/// the drift evaluated against the frozen `drift` moments.
pub fn propagate_closed_loop(problem: &GmfgProblem, policies: &[Policy], drift: &MomentTable) -> Result<PathBundle> {
    let m = problem.vertices.len();
    if policies.len() != m {
        return Err(Error::Shape(format!("{} policies for {m} vertices", policies.len())));
    }
    let fields: Vec<FrozenFields> = (0..m).map(|v| problem.vertex_fields(drift, v)).collect::<Result<_>>()?;
    let nodes = problem.time.nodes();
    let chunk = 64 * nodes;
    let per_vertex = problem.particles * nodes;
    let mut data = vec![0.0; m * per_vertex];
    data.par_chunks_mut(per_vertex).enumerate().for_each(|(v, block)| {
        block
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, out)| problem.simulate_paths(&fields[v], Some(&policies[v]), v as u64, c * 64, out))
    });
    problem.bundle(data)
}

impl GmfgProblem {
    /// Euler-Maruyama paths from i.i.d. initial draws, replica `first + i`
    /// keyed by `(seed, stream, first + i)`. No policy means zero drift.
    pub(crate) fn simulate_paths(
        &self,
        fields: &FrozenFields,
        policy: Option<&Policy>,
        stream: u64,
        first: usize,
        out: &mut [f64],
    ) {
        let nodes = self.time.nodes();
        let dt = self.time.dt();
        let noise = self.functions.sigma * dt.sqrt();
        for (i, path) in out.chunks_mut(nodes).enumerate() {
            let mut g = rng::keyed(self.seed, rng::domain::PARTICLE, stream, (first + i) as u64);
            let mut x = self.initial.sample(&mut g);
            path[0] = x;
            for k in 0..nodes - 1 {
                let b = match policy {
                    Some(pol) => self.model.drift(x, pol.eval(k, x), &fields.at(k)),
                    None => 0.0,
                };
                x += b * dt + noise * rng::normal(&mut g);
                path[k + 1] = x;
            }
        }
    }
}

/// Self-consistent law for fixed policies: propagate against `nu_j`, take
/// marginals as `nu_{j+1}`, until successive marginals differ by less than
/// `tol_inner`. Returns the bundle and the inner distance trace.
pub fn inner_mv_consistency(
    problem: &GmfgProblem,
    policies: &[Policy],
    source: &PathBundle,
    tol_inner: f64,
    max_inner: usize,
) -> Result<(PathBundle, Vec<f64>)> {
    let first = propagate_closed_loop(problem, policies, &problem.moments(source))?;
    if problem.model.drift_is_measure_free() {
        return Ok((first, vec![0.0]));
    }
    let mut trace = vec![measure::sup_marginal_w1(&first, source)?];
    let mut current = first;
    for _ in 1..max_inner.max(1) {
        if *trace.last().expect("non-empty") < tol_inner {
            return Ok((current, trace));
        }
        let next = propagate_closed_loop(problem, policies, &problem.moments(&current))?;
        trace.push(measure::sup_marginal_w1(&next, &current)?);
        current = next;
    }
    if *trace.last().expect("non-empty") < tol_inner {
        return Ok((current, trace));
    }
    Err(Error::Convergence {
        iterations: trace.len(),
        message: format!("inner consistency did not reach {tol_inner}"),
        trace,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    /// Propagate directly against the current ensemble.
    #[default]
    SingleLoop,
    /// Make the law consistent with the new policies before updating.
    DoubleLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_outer: usize,
    /// Keep iterating until at least this many iterations are recorded.
    pub min_outer: usize,
    pub mode: LoopMode,
    pub tol_inner: f64,
    pub max_inner: usize,
    #[serde(skip)]
    pub record_time: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 0.1,
            max_outer: 50,
            min_outer: 1,
            mode: LoopMode::SingleLoop,
            tol_inner: 1e-3,
            max_inner: 50,
            record_time: false,
        }
    }
}

/// One outer Picard iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `sup` over (vertex, time) of marginal W1 between successive ensembles.
    pub distance: f64,
    pub ratio: Option<f64>,
    /// `sup |V^(i)(0, .) - V^(i-1)(0, .)|` over vertices.
    pub value_change: Option<f64>,
    pub inner_iterations: usize,
    pub ties: usize,
    /// Seconds spent in the iteration; only recorded when requested so that
    /// traces stay reproducible.
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct GmfgSolution {
    pub values: Vec<ValueGrid>,
    pub policies: Vec<Policy>,
    pub paths: PathBundle,
    pub moments: MomentTable,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub noise_floor: f64,
}

impl GmfgSolution {
    pub fn ensemble(&self) -> MeasureEnsemble {
        measure::marginals(&self.paths)
    }

    /// Last distance over the one before it.
    pub fn contraction_ratio(&self) -> Option<f64> {
        self.trace.last().and_then(|e| e.ratio)
    }
}

/// Picard iteration on the ensemble until successive iterates differ by
/// less than `tol` in sup marginal W1.
pub fn picard_solve(problem: &GmfgProblem, opts: &PicardOptions) -> Result<GmfgSolution> {
    let sol = picard_iterate(problem, opts)?;
    if sol.converged {
        return Ok(sol);
    }
    Err(Error::Convergence {
        iterations: sol.trace.len(),
        message: format!(
            "ensemble distance {} still above tolerance {}",
            sol.trace.last().map_or(f64::NAN, |e| e.distance),
            opts.tol
        ),
        trace: sol.trace.iter().map(|e| e.distance).collect(),
    })
}

/// Like [`picard_solve`] but returns the last iterate with
/// `converged == false` when the budget runs out.
pub fn picard_iterate(problem: &GmfgProblem, opts: &PicardOptions) -> Result<GmfgSolution> {
    if !(opts.tol >= problem.min_tol()) {
        return Err(Error::Config(format!(
            "tolerance {} is below the Monte-Carlo resolution 5/sqrt(R) = {}",
            opts.tol,
            problem.min_tol()
        )));
    }
    if opts.max_outer == 0 {
        return Err(Error::Config("max_outer must be at least 1".into()));
    }
    let mut bundle = problem.zero_drift_bundle()?;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut prev_v0: Option<Vec<Vec<f64>>> = None;
    let mut last = None;
    for iteration in 1..=opts.max_outer {
        let start = std::time::Instant::now();
        let table = problem.moments(&bundle);
        let (values, policies) = problem.best_responses(&table)?;
        let (next, inner_iterations) = match opts.mode {
            LoopMode::SingleLoop => (propagate_closed_loop(problem, &policies, &table)?, 0),
            LoopMode::DoubleLoop => {
                let (b, t) = inner_mv_consistency(problem, &policies, &bundle, opts.tol_inner, opts.max_inner)?;
                (b, t.len())
            }
        };
        let distance = measure::sup_marginal_w1(&next, &bundle)?;
        let ratio = trace.last().and_then(|e| (e.distance > 0.0).then(|| distance / e.distance));
        let v0: Vec<Vec<f64>> = values.iter().map(|v| v.row(0).to_vec()).collect();
        let value_change = prev_v0
            .as_ref()
            .map(|p| p.iter().flatten().zip(v0.iter().flatten()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
        let ties = policies.iter().map(Policy::ties).sum();
        let wall_time = opts.record_time.then(|| start.elapsed().as_secs_f64());
        trace.push(TraceEntry { iteration, distance, ratio, value_change, inner_iterations, ties, wall_time });
        prev_v0 = Some(v0);
        bundle = next;
        let done = distance < opts.tol && iteration >= opts.min_outer;
        last = Some((values, policies));
        if done {
            break;
        }
    }
    let (values, policies) = last.expect("at least one iteration");
    let converged = trace.last().is_some_and(|e| e.distance < opts.tol && e.iteration >= opts.min_outer);
    let moments = problem.moments(&bundle);
    Ok(GmfgSolution { values, policies, paths: bundle, moments, trace, converged, noise_floor: problem.noise_floor() })
}

/// Local finite-difference estimates of the policy and propagation
/// sensitivities around a solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub delta: f64,
    pub policy_change: f64,
    pub ensemble_change: f64,
    /// `sup |phi - phi'| / |delta|`.
    pub c1: Option<f64>,
    /// Ensemble change of the re-propagated laws over the policy change.
    pub c2: Option<f64>,
    pub product: Option<f64>,
}

/// Shifts every particle by `delta`, recomputes best responses, and
/// re-propagates both policy sets to self-consistency with common noise.
pub fn sensitivity_probe(
    problem: &GmfgProblem,
    base: &GmfgSolution,
    delta: f64,
    tol_inner: f64,
    max_inner: usize,
) -> Result<SensitivityReport> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::Domain(format!("probe shift must be non-zero, got {delta}")));
    }
    let shifted = MomentTable::from_fn(problem.model(), problem.vertices.len(), problem.time.nodes(), |v, k| {
        base.paths.slice_at(v, k).into_iter().map(|x| x + delta).collect()
    });
    let (_, p0) = problem.best_responses(&base.moments)?;
    let (_, p1) = problem.best_responses(&shifted)?;
    let policy_change = p0.iter().zip(&p1).map(|(a, b)| a.sup_diff(b)).try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))?;
    let (b0, _) = inner_mv_consistency(problem, &p0, &base.paths, tol_inner, max_inner)?;
    let (b1, _) = inner_mv_consistency(problem, &p1, &base.paths, tol_inner, max_inner)?;
    let ensemble_change = measure::sup_marginal_w1(&b0, &b1)?;
    let c1 = Some(policy_change / delta.abs());
    let c2 = (policy_change > 0.0).then(|| ensemble_change / policy_change);
    let product = c2.map(|c2| c2 * policy_change / delta.abs());
    Ok(SensitivityReport { delta, policy_change, ensemble_change, c1, c2, product })
}

/// The solution restricted to an arbitrary vertex `alpha`: the graphon
/// field comes from the solved ensemble, the own-vertex law from a
/// one-vertex fixed point.
#[derive(Clone, Debug)]
pub struct VertexSolution {
    pub alpha: f64,
    pub fields: FrozenFields,
    pub value: ValueGrid,
    pub policy: Policy,
    /// Particle states per time node.
    pub law: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl VertexSolution {
    pub fn marginal(&self, k: usize) -> Measure1D {
        Measure1D::empirical(&self.law[k]).expect("finite particle states")
    }
}

/// Extends a grid solution to vertex `alpha`. At a grid midpoint this
/// reproduces that vertex with the same noise.
pub fn extend_to_vertex(
    problem: &GmfgProblem,
    sol: &GmfgSolution,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<VertexSolution> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("vertex {alpha} outside [0,1]")));
    }
    let cell = problem.vertices.cell_of(alpha);
    let stream = problem.vertex_stream(alpha);
    let weights = problem.graphon.section_weights(alpha, &problem.vertices);
    let nodes = problem.time.nodes();
    let r = problem.particles;
    let model = problem.model();
    let mut law: Vec<Vec<f64>> = (0..nodes).map(|k| sol.paths.slice_at(cell, k)).collect();
    let mut buf = vec![0.0; r * nodes];
    for iteration in 1..=max_iter.max(1) {
        let own = MomentTable::from_fn(model, 1, nodes, |_, k| law[k].clone());
        let fields = FrozenFields::weighted(&sol.moments, &weights, |k| own.get(0, k).to_vec());
        let (value, policy) =
            control::solve_hjb(model, &fields, problem.functions.sigma, &problem.space, &problem.time)?;
        problem.simulate_paths(&fields, Some(&policy), stream, 0, &mut buf);
        let next: Vec<Vec<f64>> = (0..nodes).map(|k| (0..r).map(|i| buf[i * nodes + k]).collect()).collect();
        let d = next
            .iter()
            .zip(&law)
            .map(|(a, b)| {
                let (mut a, mut b) = (a.clone(), b.clone());
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / r as f64
            })
            .fold(0.0, f64::max);
        law = next;
        if d < tol || model.drift_is_measure_free() && iteration > 1 {
            return Ok(VertexSolution { alpha, fields, value, policy, law, iterations: iteration });
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        message: format!("vertex extension at {alpha} did not converge"),
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Basis, Coefficient, ControlSet, Couplings, Term};
    use crate::testutil::normal_quantile;

    fn general(f0: Coefficient, f: Coefficient, l0: Coefficient, sigma: f64, horizon: f64) -> ProblemFunctions {
        ProblemFunctions::new(
            Couplings::General { f0, f, l0, l: Coefficient::zero() },
            ControlSet::new(-1.0, 1.0).unwrap(),
            sigma,
            horizon,
        )
        .unwrap()
    }

    fn problem(f: ProblemFunctions, g: Graphon, m: usize, k: usize, r: usize) -> GmfgProblem {
        GmfgProblem::with_auto_space(f, g, InitialLaw::Dirac { x: 0.0 }, m, k, 121, r, 7).unwrap()
    }

    fn u() -> Coefficient {
        Coefficient::from_terms(vec![Term::new(1.0, Basis::One, Basis::Id, Basis::One)])
    }

    #[test]
    fn zero_drift_marginals_are_gaussian() {
        let p = problem(
            general(Coefficient::zero(), Coefficient::zero(), Coefficient::zero(), 1.0, 1.0),
            Graphon::constant(0.0),
            1,
            10,
            10_000,
        );
        let b = p.zero_drift_bundle().unwrap();
        for k in [5, 10] {
            let t = p.time.t(k);
            let n = 2000;
            let oracle = Measure1D::empirical(
                &(0..n).map(|i| t.sqrt() * normal_quantile((i as f64 + 0.5) / n as f64)).collect::<Vec<_>>(),
            )
            .unwrap();
            let emp = Measure1D::empirical(&b.slice_at(0, k)).unwrap();
            assert!(measure::w1(&emp, &oracle) < 0.05);
        }
    }

    #[test]
    fn constant_control_shifts_the_mean() {
        let f = ProblemFunctions::new(
            Couplings::Structured {
                f0: Coefficient::zero(),
                f: Coefficient::constant(1.0),
                l1: Coefficient::zero(),
                l2: Coefficient::zero(),
                l3: Coefficient::zero(),
                l4: Coefficient::constant(1.0),
            },
            ControlSet::new(-1.0, 1.0).unwrap(),
            0.5,
            1.0,
        )
        .unwrap();
        let p = problem(f, Graphon::constant(1.0), 2, 20, 4000);
        let pols: Vec<Policy> =
            (0..2).map(|_| Policy::constant(p.space, p.time, ControlSet::new(-1.0, 1.0).unwrap(), 0.4)).collect();
        let b = propagate_closed_loop(&p, &pols, &p.moments(&p.zero_drift_bundle().unwrap())).unwrap();
        for v in 0..2 {
            let mean = b.slice_at(v, 20).iter().sum::<f64>() / 4000.0;
            assert!((mean - 0.4).abs() < 3.0 * 0.5 / 4000f64.sqrt(), "{mean}");
        }
    }

    #[test]
    fn measure_free_drift_needs_one_inner_step() {
        let p = problem(
            general(u(), Coefficient::constant(0.3), Coefficient::squared_difference(1.0), 0.4, 0.5),
            Graphon::constant(0.5),
            2,
            10,
            200,
        );
        let pols: Vec<Policy> =
            (0..2).map(|_| Policy::constant(p.space, p.time, ControlSet::new(-1.0, 1.0).unwrap(), 0.1)).collect();
        let (_, trace) = inner_mv_consistency(&p, &pols, &p.zero_drift_bundle().unwrap(), 1e-9, 10).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn weak_coupling_inner_iterations_contract() {
        let f = Coefficient::from_terms(vec![Term::new(0.1, Basis::One, Basis::One, Basis::Id)]);
        let mut p = problem(general(u(), f, Coefficient::zero(), 0.3, 1.0), Graphon::constant(1.0), 2, 20, 500);
        p.initial = InitialLaw::Normal { mean: 1.0, std: 0.2 };
        let pols: Vec<Policy> =
            (0..2).map(|_| Policy::constant(p.space, p.time, ControlSet::new(-1.0, 1.0).unwrap(), 0.5)).collect();
        let (_, trace) = inner_mv_consistency(&p, &pols, &p.zero_drift_bundle().unwrap(), 1e-10, 20).unwrap();
        assert!(trace.len() >= 3);
        for w in trace.windows(2).filter(|w| w[0] > 1e-13) {
            assert!(w[1] / w[0] < 0.5, "{trace:?}");
        }
    }

    #[test]
    fn uncoupled_problem_converges_in_two_iterations() {
        let l0 = Coefficient::from_terms(vec![
            Term::new(1.0, Basis::Pow { p: 2 }, Basis::One, Basis::One),
            Term::new(0.5, Basis::One, Basis::Pow { p: 2 }, Basis::One),
        ]);
        let p = problem(general(u(), Coefficient::zero(), l0, 0.3, 0.5), Graphon::constant(0.0), 2, 32, 400);
        let sol = picard_solve(&p, &PicardOptions { tol: 0.3, min_outer: 2, ..Default::default() }).unwrap();
        assert_eq!(sol.trace.len(), 2);
        assert_eq!(sol.trace[1].distance, 0.0);
        let probe = sensitivity_probe(&p, &sol, 0.05, 1e-9, 10).unwrap();
        assert_eq!(probe.c1, Some(0.0));
    }

    #[test]
    fn picard_is_deterministic_and_extension_reproduces_grid_vertices() {
        let f0 = u();
        let l0 = Coefficient::from_terms(vec![Term::new(0.5, Basis::One, Basis::Pow { p: 2 }, Basis::One)]);
        let l = Coefficient::squared_difference(1.0);
        let funcs = ProblemFunctions::new(
            Couplings::General { f0, f: Coefficient::zero(), l0, l },
            ControlSet::new(-1.0, 1.0).unwrap(),
            0.3,
            0.5,
        )
        .unwrap();
        let mut p = problem(funcs, Graphon::uniform_attachment(), 4, 16, 400);
        p.initial = InitialLaw::Atoms { atoms: vec![-1.0, 1.5], weights: vec![0.5, 0.5] };
        let opts = PicardOptions { tol: 0.26, ..Default::default() };
        let a = picard_solve(&p, &opts).unwrap();
        let b = picard_solve(&p, &opts).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.paths, b.paths);
        let alpha = p.vertices.midpoint(1);
        let ext = extend_to_vertex(&p, &a, alpha, 1e-12, 30).unwrap();
        assert!(ext.iterations >= 1);
        let fields = p.vertex_fields(&a.moments, 1).unwrap();
        assert_eq!(ext.fields.at(3).graph, fields.at(3).graph);
        assert!(picard_solve(&p, &PicardOptions { tol: 1e-3, ..opts }).is_err());
    }
}
