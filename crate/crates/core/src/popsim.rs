//! Finite populations on weighted graphs driven by the limit strategies:
//! Systems A (all agents use the GMFG policy), B (one deviator), C
//! (independent agents coupled through cluster laws) and D (agents in the
//! infinite population), the deviations between them and the epsilon-Nash
//! gap over a family of unilateral deviations.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{self, CostEstimate, Feedback, Policy};
use crate::error::{Error, Result};
use crate::gmfg::{extend_to_vertex, GmfgProblem, GmfgSolution, VertexSolution};
use crate::graphon::Graphon;
use crate::grid::VertexGrid;
use crate::measure::InitialLaw;
use crate::model::{FrozenFields, LocalField, MomentTable};
use crate::rng;

/// Agents in `M_k` clusters on a weighted graph; cluster `l` sits at node
/// `I*_l = (l + 1/2) / M_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FinitePopulation {
    graph: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    cluster_of: Vec<usize>,
    initial: InitialLaw,
    seed: u64,
}

/// Population with the midpoint-sampled graph of `g` (or `g` itself when it
/// is a step graphon of matching size). Agents are numbered in cluster order.
pub fn build_population(
    g: &Graphon,
    m_k: usize,
    sizes: &[usize],
    initial: &InitialLaw,
    seed: u64,
) -> Result<FinitePopulation> {
    if m_k == 0 || sizes.len() != m_k {
        return Err(Error::Shape(format!("{} cluster sizes for {m_k} nodes", sizes.len())));
    }
    if sizes.contains(&0) {
        return Err(Error::Domain("every cluster needs at least one agent".into()));
    }
    g.validate()?;
    initial.validate()?;
    let graph = match g {
        Graphon::Step { matrix } if matrix.len() == m_k => matrix.clone(),
        _ => g.sample_matrix(m_k),
    };
    let mut offsets = vec![0];
    let mut cluster_of = Vec::new();
    for (l, &n) in sizes.iter().enumerate() {
        offsets.push(offsets[l] + n);
        cluster_of.extend(std::iter::repeat_n(l, n));
    }
    Ok(FinitePopulation { graph, sizes: sizes.to_vec(), offsets, cluster_of, initial: initial.clone(), seed })
}

impl FinitePopulation {
    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn cluster(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn members(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn min_cluster(&self) -> usize {
        self.sizes.iter().copied().min().unwrap_or(0)
    }

    /// `I*_l`.
    pub fn anchor(&self, l: usize) -> f64 {
        (l as f64 + 0.5) / self.clusters() as f64
    }

    pub fn graph(&self) -> &[Vec<f64>] {
        &self.graph
    }

    /// Initial states and standard normal increments of replication `rep`,
    /// keyed by `(seed, rep, agent)`.
    pub fn noise(&self, rep: u64, steps: usize) -> Noise {
        let n = self.n();
        let mut x0 = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n * steps);
        for i in 0..n {
            let mut g = rng::keyed(self.seed, rng::domain::AGENT, rep, i as u64);
            x0.push(self.initial.sample(&mut g));
            z.extend((0..steps).map(|_| rng::normal(&mut g)));
        }
        Noise { steps, x0, z }
    }
}

/// Shared initial states and Brownian increments of one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    steps: usize,
    pub x0: Vec<f64>,
    z: Vec<f64>,
}

impl Noise {
    pub fn increments(&self, i: usize) -> &[f64] {
        &self.z[i * self.steps..(i + 1) * self.steps]
    }
}

/// Agent paths `[agent][time node]` with accumulated running costs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    nodes: usize,
    pub paths: Vec<f64>,
    pub costs: Vec<f64>,
}

impl TrajectorySet {
    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i * self.nodes..(i + 1) * self.nodes]
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }
}

/// Perturbation magnitudes of the deviator along one run, per time step.
#[derive(Clone, Debug, Default, PartialEq)]
struct Perturbations {
    f0: Vec<f64>,
    f: Vec<f64>,
    l0: Vec<f64>,
    l: Vec<f64>,
}

/// Reference strategies and fields for a population: the GMFG solution
/// extended to every cluster node.
pub struct Enash<'a> {
    pub problem: &'a GmfgProblem,
    pub pop: &'a FinitePopulation,
    pub clusters: Vec<VertexSolution>,
    weights: Vec<Vec<f64>>,
}

impl<'a> Enash<'a> {
    pub fn new(
        problem: &'a GmfgProblem,
        sol: &GmfgSolution,
        pop: &'a FinitePopulation,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let clusters = (0..pop.clusters())
            .into_par_iter()
            .map(|l| extend_to_vertex(problem, sol, pop.anchor(l), tol, max_iter))
            .collect::<Result<Vec<_>>>()?;
        let m = pop.clusters() as f64;
        let weights = pop.graph.iter().map(|row| row.iter().map(|g| g / m).collect()).collect();
        Ok(Self { problem, pop, clusters, weights })
    }

    /// GMFG policy of agent `i`'s cluster.
    pub fn policy(&self, i: usize) -> &Policy {
        &self.clusters[self.pop.cluster(i)].policy
    }

    fn cluster_moments(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let model = self.problem.model();
        let nb = model.n_bases();
        let own: Vec<Vec<f64>> = (0..self.pop.clusters())
            .map(|l| {
                let mut out = vec![0.0; nb];
                model.sample_moments(&x[self.pop.members(l)], &mut out);
                out
            })
            .collect();
        let graph = self
            .weights
            .iter()
            .map(|w| {
                let mut g = vec![0.0; nb];
                for (wl, ol) in w.iter().zip(&own) {
                    for (gi, oi) in g.iter_mut().zip(ol) {
                        *gi += wl * oi;
                    }
                }
                g
            })
            .collect();
        (own, graph)
    }

    /// Interacting population. Agent `deviator` (if any) follows `psi`;
    /// its perturbation terms against the GMFG fields are recorded.
    fn interacting(&self, noise: &Noise, deviator: Option<(usize, &dyn Feedback)>) -> (TrajectorySet, Perturbations) {
        let model = self.problem.model();
        let time = self.problem.time;
        let (dt, steps) = (time.dt(), time.steps());
        let sq = self.problem.functions.sigma * dt.sqrt();
        let n = self.pop.n();
        let nodes = steps + 1;
        let mut x = noise.x0.clone();
        let mut paths = vec![0.0; n * nodes];
        let mut costs = vec![0.0; n];
        let mut pert = Perturbations::default();
        for (i, xi) in x.iter().enumerate() {
            paths[i * nodes] = *xi;
        }
        for k in 0..steps {
            let (own, graph) = self.cluster_moments(&x);
            for i in 0..n {
                let l = self.pop.cluster(i);
                let field = LocalField { own: &own[l], graph: &graph[l] };
                let u = match deviator {
                    Some((d, psi)) if d == i => psi.control(k, x[i]),
                    _ => self.clusters[l].policy.eval(k, x[i]),
                };
                if let Some((d, _)) = deviator {
                    if d == i {
                        let limit = self.clusters[l].fields.at(k);
                        let (f0a, fa) = model.drift_parts(x[i], u, &field);
                        let (f0b, fb) = model.drift_parts(x[i], u, &limit);
                        let (l0a, la) = model.cost_parts(x[i], u, &field);
                        let (l0b, lb) = model.cost_parts(x[i], u, &limit);
                        pert.f0.push((f0a - f0b).abs());
                        pert.f.push((fa - fb).abs());
                        pert.l0.push((l0a - l0b).abs());
                        pert.l.push((la - lb).abs());
                    }
                }
                costs[i] += model.cost(x[i], u, &field) * dt;
                x[i] += model.drift(x[i], u, &field) * dt + sq * noise.increments(i)[k];
                paths[i * nodes + k + 1] = x[i];
            }
        }
        (TrajectorySet { nodes, paths, costs }, pert)
    }

    /// Independent agents in frozen per-cluster fields.
    fn frozen(&self, noise: &Noise, fields: &[FrozenFields]) -> TrajectorySet {
        let model = self.problem.model();
        let time = self.problem.time;
        let (dt, steps) = (time.dt(), time.steps());
        let sq = self.problem.functions.sigma * dt.sqrt();
        let n = self.pop.n();
        let nodes = steps + 1;
        let mut paths = vec![0.0; n * nodes];
        let mut costs = vec![0.0; n];
        for i in 0..n {
            let l = self.pop.cluster(i);
            let pol = &self.clusters[l].policy;
            let mut x = noise.x0[i];
            paths[i * nodes] = x;
            let z = noise.increments(i);
            for k in 0..steps {
                let field = fields[l].at(k);
                let u = pol.eval(k, x);
                costs[i] += model.cost(x, u, &field) * dt;
                x += model.drift(x, u, &field) * dt + sq * z[k];
                paths[i * nodes + k + 1] = x;
            }
        }
        TrajectorySet { nodes, paths, costs }
    }

    /// System A: every agent applies its cluster's GMFG policy.
    pub fn run_system_a(&self, noise: &Noise) -> TrajectorySet {
        self.interacting(noise, None).0
    }

    /// System B: agent `iota` deviates to `psi`; everybody else is
    /// re-simulated with the same noise.
    pub fn run_system_b(&self, noise: &Noise, iota: usize, psi: &dyn Feedback) -> Result<TrajectorySet> {
        if iota >= self.pop.n() {
            return Err(Error::Domain(format!("deviator {iota} outside population of {}", self.pop.n())));
        }
        Ok(self.interacting(noise, Some((iota, psi))).0)
    }

    /// Cluster laws of System C: a fixed point over the `M_k` clusters on
    /// the finite graph, each law represented by the particle streams of its
    /// node (shared with the GMFG extension).
    pub fn system_c_laws(&self, tol_inner: f64, max_inner: usize) -> Result<ClusterLaws> {
        let p = self.problem;
        let model = p.model();
        let nodes = p.time.nodes();
        let r = p.particles;
        let m = self.pop.clusters();
        let slice = |law: &[f64], k: usize| -> Vec<f64> { (0..r).map(|i| law[i * nodes + k]).collect() };
        let mut laws: Vec<Vec<f64>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut out = vec![0.0; r * nodes];
                for (k, xs) in c.law.iter().enumerate() {
                    for (i, x) in xs.iter().enumerate() {
                        out[i * nodes + k] = *x;
                    }
                }
                out
            })
            .collect();
        let mut trace = Vec::new();
        for _ in 0..max_inner.max(1) {
            let table = MomentTable::from_fn(model, m, nodes, |l, k| slice(&laws[l], k));
            let fields: Vec<FrozenFields> = (0..m)
                .map(|l| FrozenFields::weighted(&table, &self.weights[l], |k| table.get(l, k).to_vec()))
                .collect();
            let next: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|l| {
                    let mut out = vec![0.0; r * nodes];
                    let stream = p.vertex_stream(self.pop.anchor(l));
                    p.simulate_paths(&fields[l], Some(&self.clusters[l].policy), stream, 0, &mut out);
                    out
                })
                .collect();
            let mut d: f64 = 0.0;
            for l in 0..m {
                for k in 0..nodes {
                    let (mut a, mut b) = (slice(&next[l], k), slice(&laws[l], k));
                    a.sort_by(f64::total_cmp);
                    b.sort_by(f64::total_cmp);
                    d = d.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / r as f64);
                }
            }
            trace.push(d);
            laws = next;
            if d < tol_inner {
                let table = MomentTable::from_fn(model, m, nodes, |l, k| slice(&laws[l], k));
                let fields = (0..m)
                    .map(|l| FrozenFields::weighted(&table, &self.weights[l], |k| table.get(l, k).to_vec()))
                    .collect();
                return Ok(ClusterLaws { fields, trace });
            }
        }
        Err(Error::Convergence {
            iterations: trace.len(),
            message: format!("cluster-law iteration did not reach {tol_inner}"),
            trace,
        })
    }

    /// System C: independent agents in their cluster-law fields.
    pub fn run_system_c(&self, noise: &Noise, laws: &ClusterLaws) -> TrajectorySet {
        self.frozen(noise, &laws.fields)
    }

    /// System D: independent agents in the limit ensemble.
    pub fn run_system_d(&self, noise: &Noise) -> TrajectorySet {
        let fields: Vec<FrozenFields> = self.clusters.iter().map(|c| c.fields.clone()).collect();
        self.frozen(noise, &fields)
    }

    /// Best response of the deviator's cluster against the realized
    /// System-A cluster averages, pooled over `reps` replications.
    pub fn empirical_best_response(&self, iota: usize, reps: &[TrajectorySet]) -> Result<Policy> {
        let p = self.problem;
        let model = p.model();
        let nodes = p.time.nodes();
        let m = self.pop.clusters();
        let table = MomentTable::from_fn(model, m, nodes, |l, k| {
            reps.iter().flat_map(|ts| self.pop.members(l).map(move |i| ts.path(i)[k])).collect()
        });
        let l = self.pop.cluster(iota);
        let fields = FrozenFields::weighted(&table, &self.weights[l], |k| table.get(l, k).to_vec());
        Ok(control::solve_hjb(model, &fields, p.functions.sigma, &p.space, &p.time)?.1)
    }
}

/// Converged System-C cluster fields and the iteration trace.
#[derive(Clone, Debug)]
pub struct ClusterLaws {
    pub fields: Vec<FrozenFields>,
    pub trace: Vec<f64>,
}

/// Monte-Carlo estimate with standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Running per-(cluster, time) statistics of per-replication values.
#[derive(Clone, Debug)]
struct Grid {
    sum: Vec<f64>,
    sq: Vec<f64>,
    reps: usize,
}

impl Grid {
    fn new(clusters: usize, nodes: usize) -> Self {
        Self { sum: vec![0.0; clusters * nodes], sq: vec![0.0; clusters * nodes], reps: 0 }
    }

    fn add(&mut self, values: &[f64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sq.iter_mut()).zip(values) {
            *s += v;
            *q += v * v;
        }
        self.reps += 1;
    }

    /// Largest mean over cells, with its standard error.
    fn sup(&self) -> Estimate {
        let n = self.reps as f64;
        let mut best = Estimate { value: f64::NEG_INFINITY, se: 0.0 };
        for (s, q) in self.sum.iter().zip(&self.sq) {
            let mean = s / n;
            if mean > best.value {
                let var = if self.reps > 1 { ((q - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
                best = Estimate { value: mean, se: (var / n).sqrt() };
            }
        }
        best
    }

    fn cell_means(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.reps as f64).collect()
    }
}

/// Per-(cluster, time) mean of `|a - b|` over the cluster's agents,
/// skipping `exclude`.
fn cluster_abs_diff(pop: &FinitePopulation, a: &TrajectorySet, b: &TrajectorySet, exclude: Option<usize>) -> Vec<f64> {
    let nodes = a.nodes;
    let mut out = vec![0.0; pop.clusters() * nodes];
    for l in 0..pop.clusters() {
        let members: Vec<usize> = pop.members(l).filter(|i| Some(*i) != exclude).collect();
        if members.is_empty() {
            continue;
        }
        for k in 0..nodes {
            out[l * nodes + k] =
                members.iter().map(|&i| (a.path(i)[k] - b.path(i)[k]).abs()).sum::<f64>() / members.len() as f64;
        }
    }
    out
}

/// A member of the deviation family.
pub struct Deviation {
    pub name: String,
    pub policy: Policy,
}

/// Default family: constants `a`, `b`, the midpoint, the best response to
/// the realized System-A cluster averages and three random Lipschitz tables.
pub fn default_deviation_family(
    enash: &Enash<'_>,
    iota: usize,
    realized_a: &[TrajectorySet],
    seed: u64,
) -> Result<Vec<Deviation>> {
    let p = enash.problem;
    let u = p.functions.control;
    let mut fam = vec![
        Deviation { name: "constant_a".into(), policy: Policy::constant(p.space, p.time, u, u.a) },
        Deviation { name: "constant_b".into(), policy: Policy::constant(p.space, p.time, u, u.b) },
        Deviation { name: "midpoint".into(), policy: Policy::constant(p.space, p.time, u, u.midpoint()) },
        Deviation { name: "empirical_best_response".into(), policy: enash.empirical_best_response(iota, realized_a)? },
    ];
    for j in 0..3u64 {
        fam.push(Deviation {
            name: format!("random_lipschitz_{j}"),
            policy: control::random_lipschitz_policy(p.space, p.time, u, 6, seed.wrapping_add(j)),
        });
    }
    Ok(fam)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationCost {
    pub name: String,
    pub cost: Estimate,
}

/// `sup_t E|delta|` of the deviator's perturbation terms, maximized over
/// the family; `eps_fl` is `sup_t E` of their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub delta_f0: f64,
    pub delta_f: f64,
    pub delta_l0: f64,
    pub delta_l: f64,
    pub eps_fl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationReport {
    pub clusters: usize,
    pub min_cluster: usize,
    pub n: usize,
    pub replications: usize,
    pub deviator: usize,
    pub eps1: Estimate,
    pub eps2: Estimate,
    pub eps3: Estimate,
    /// Lower bound on the epsilon-Nash gap over the declared family.
    pub gap: Estimate,
    pub gmfg_cost: Estimate,
    pub deviations: Vec<DeviationCost>,
    pub perturbation: PerturbationReport,
    pub c_law_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnashOptions {
    pub replications: usize,
    pub deviator: usize,
    pub tol_inner: f64,
    pub max_inner: usize,
    pub seed: u64,
}

impl Default for EnashOptions {
    fn default() -> Self {
        Self { replications: 20, deviator: 0, tol_inner: 1e-6, max_inner: 100, seed: 0 }
    }
}

struct RepOutcome {
    eps1: Vec<f64>,
    eps2: Vec<f64>,
    eps3: Vec<Vec<f64>>,
    cost_a: f64,
    cost_b: Vec<f64>,
    pert: Vec<Perturbations>,
}

/// Runs Systems A-D over independent replications, with the deviation
/// family built from a pilot pass of System A.
pub fn deviation_metrics(enash: &Enash<'_>, opts: &EnashOptions) -> Result<DeviationReport> {
    let pop = enash.pop;
    let iota = opts.deviator;
    if iota >= pop.n() {
        return Err(Error::Domain(format!("deviator {iota} outside population of {}", pop.n())));
    }
    let reps = opts.replications.max(2);
    let steps = enash.problem.time.steps();
    let nodes = steps + 1;
    let laws = enash.system_c_laws(opts.tol_inner, opts.max_inner)?;
    let realized: Vec<TrajectorySet> =
        (0..reps as u64).into_par_iter().map(|r| enash.run_system_a(&pop.noise(r, steps))).collect();
    let family = default_deviation_family(enash, iota, &realized, opts.seed)?;
    let outcomes: Vec<RepOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let noise = pop.noise(r, steps);
            let a = &realized[r as usize];
            let c = enash.run_system_c(&noise, &laws);
            let d = enash.run_system_d(&noise);
            let mut eps3 = Vec::new();
            let mut cost_b = Vec::new();
            let mut pert = Vec::new();
            for dev in &family {
                let (b, pb) = enash.interacting(&noise, Some((iota, &dev.policy)));
                eps3.push(cluster_abs_diff(pop, &b, &d, Some(iota)));
                cost_b.push(b.costs[iota]);
                pert.push(pb);
            }
            RepOutcome {
                eps1: cluster_abs_diff(pop, a, &c, None),
                eps2: cluster_abs_diff(pop, &c, &d, None),
                eps3,
                cost_a: a.costs[iota],
                cost_b,
                pert,
            }
        })
        .collect();

    let m = pop.clusters();
    let (mut g1, mut g2) = (Grid::new(m, nodes), Grid::new(m, nodes));
    let mut g3: Vec<Grid> = family.iter().map(|_| Grid::new(m, nodes)).collect();
    for o in &outcomes {
        g1.add(&o.eps1);
        g2.add(&o.eps2);
        for (g, v) in g3.iter_mut().zip(&o.eps3) {
            g.add(v);
        }
    }
    let eps3 = g3.iter().map(Grid::sup).fold(Estimate { value: f64::NEG_INFINITY, se: 0.0 }, |b, e| {
        if e.value > b.value {
            e
        } else {
            b
        }
    });

    let cost_a: Vec<f64> = outcomes.iter().map(|o| o.cost_a).collect();
    let gmfg_cost = estimate(&CostEstimate::from_samples(&cost_a));
    let deviations: Vec<DeviationCost> = family
        .iter()
        .enumerate()
        .map(|(j, d)| DeviationCost {
            name: d.name.clone(),
            cost: estimate(&CostEstimate::from_samples(&outcomes.iter().map(|o| o.cost_b[j]).collect::<Vec<_>>())),
        })
        .collect();
    let best = (0..family.len())
        .min_by(|&x, &y| deviations[x].cost.value.total_cmp(&deviations[y].cost.value))
        .expect("non-empty family");
    let diffs: Vec<f64> = outcomes.iter().map(|o| o.cost_a - o.cost_b[best]).collect();
    let diff = CostEstimate::from_samples(&diffs);
    let gap = Estimate { value: diff.mean.max(0.0), se: diff.se };

    let mut perturbation = PerturbationReport::default();
    for j in 0..family.len() {
        let mean_at = |sel: &dyn Fn(&Perturbations) -> &Vec<f64>, k: usize| {
            outcomes.iter().map(|o| sel(&o.pert[j])[k]).sum::<f64>() / reps as f64
        };
        for k in 0..steps {
            let f0 = mean_at(&|p| &p.f0, k);
            let f = mean_at(&|p| &p.f, k);
            let l0 = mean_at(&|p| &p.l0, k);
            let l = mean_at(&|p| &p.l, k);
            perturbation.delta_f0 = perturbation.delta_f0.max(f0);
            perturbation.delta_f = perturbation.delta_f.max(f);
            perturbation.delta_l0 = perturbation.delta_l0.max(l0);
            perturbation.delta_l = perturbation.delta_l.max(l);
            perturbation.eps_fl = perturbation.eps_fl.max(f0 + f + l0 + l);
        }
    }

    Ok(DeviationReport {
        clusters: m,
        min_cluster: pop.min_cluster(),
        n: pop.n(),
        replications: reps,
        deviator: iota,
        eps1: g1.sup(),
        eps2: g2.sup(),
        eps3,
        gap,
        gmfg_cost,
        deviations,
        perturbation,
        c_law_iterations: laws.trace.len(),
    })
}

fn estimate(c: &CostEstimate) -> Estimate {
    Estimate { value: c.mean, se: c.se }
}

/// `max(0, J(GMFG) - min_family J(deviation))` for agent `iota` with common
/// noise, and the per-deviation costs.
pub fn epsilon_nash_gap(
    enash: &Enash<'_>,
    iota: usize,
    family: &[Deviation],
    replications: usize,
) -> Result<(Estimate, Vec<DeviationCost>)> {
    if family.is_empty() {
        return Err(Error::Domain("deviation family is empty".into()));
    }
    let steps = enash.problem.time.steps();
    let rows: Vec<(f64, Vec<f64>)> = (0..replications.max(2) as u64)
        .into_par_iter()
        .map(|r| {
            let noise = enash.pop.noise(r, steps);
            let a = enash.run_system_a(&noise).costs[iota];
            let b = family.iter().map(|d| enash.interacting(&noise, Some((iota, &d.policy))).0.costs[iota]).collect();
            (a, b)
        })
        .collect();
    let costs: Vec<DeviationCost> = family
        .iter()
        .enumerate()
        .map(|(j, d)| DeviationCost {
            name: d.name.clone(),
            cost: estimate(&CostEstimate::from_samples(&rows.iter().map(|r| r.1[j]).collect::<Vec<_>>())),
        })
        .collect();
    let best =
        (0..family.len()).min_by(|&x, &y| costs[x].cost.value.total_cmp(&costs[y].cost.value)).expect("non-empty");
    let diff = CostEstimate::from_samples(&rows.iter().map(|r| r.0 - r.1[best]).collect::<Vec<_>>());
    Ok((Estimate { value: diff.mean.max(0.0), se: diff.se }, costs))
}

/// Mean-of-cluster statistics used by the exchangeability checks:
/// per-(cluster, time) mean of agent paths pooled over replications.
pub fn cluster_mean_paths(pop: &FinitePopulation, sets: &[TrajectorySet]) -> Vec<f64> {
    let nodes = sets.first().map_or(0, |s| s.nodes);
    let mut g = Grid::new(pop.clusters(), nodes);
    for ts in sets {
        let mut v = vec![0.0; pop.clusters() * nodes];
        for l in 0..pop.clusters() {
            let members = pop.members(l);
            let n = members.len() as f64;
            for i in members {
                for k in 0..nodes {
                    v[l * nodes + k] += ts.path(i)[k] / n;
                }
            }
        }
        g.add(&v);
    }
    g.cell_means()
}

/// Vertex grid matching a population's cluster nodes.
pub fn cluster_grid(pop: &FinitePopulation) -> Result<VertexGrid> {
    VertexGrid::new(pop.clusters())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmfg::{picard_solve, PicardOptions};
    use crate::model::{Basis, Coefficient, ControlSet, Couplings, ProblemFunctions, Term};

    #[test]
    fn population_layout() {
        let law = InitialLaw::Normal { mean: 0.0, std: 1.0 };
        let p = build_population(&Graphon::constant(0.5), 1, &[5], &law, 1).unwrap();
        assert_eq!(p.n(), 5);
        assert!((0..5).all(|i| p.cluster(i) == 0));
        assert_eq!(p.anchor(0), 0.5);
        let p = build_population(&Graphon::uniform_attachment(), 2, &[3, 4], &law, 1).unwrap();
        assert_eq!(p.n(), 7);
        assert_eq!(p.members(1), 3..7);
        assert_eq!(p.noise(2, 10), p.noise(2, 10));
        assert!(build_population(&Graphon::constant(0.5), 2, &[3], &law, 1).is_err());
        assert!(build_population(&Graphon::constant(0.5), 2, &[3, 0], &law, 1).is_err());
    }

    fn instance(f0: Coefficient, f: Coefficient, m: usize) -> (GmfgProblem, GmfgSolution) {
        let funcs = ProblemFunctions::new(
            Couplings::Structured {
                f0,
                f,
                l1: Coefficient::squared_difference(1.0),
                l2: Coefficient::constant(0.5),
                l3: Coefficient::zero(),
                l4: Coefficient::constant(0.5),
            },
            ControlSet::new(-1.0, 1.0).unwrap(),
            0.3,
            0.5,
        )
        .unwrap();
        let law = InitialLaw::Normal { mean: 0.5, std: 0.3 };
        let p = GmfgProblem::with_auto_space(funcs, Graphon::uniform_attachment(), law, m, 32, 101, 400, 3).unwrap();
        let sol = picard_solve(&p, &PicardOptions { tol: 0.25, ..Default::default() }).unwrap();
        (p, sol)
    }

    #[test]
    fn gmfg_policy_as_deviation_reproduces_system_a() {
        let tanh = Coefficient::from_terms(vec![
            Term::new(1.0, Basis::One, Basis::One, Basis::One),
            Term::new(0.5, Basis::One, Basis::One, Basis::Tanh { k: 1.0 }),
        ]);
        let (p, sol) = instance(tanh.clone(), tanh, 2);
        let pop = build_population(&p.graphon, 2, &[4, 5], &p.initial, 11).unwrap();
        let en = Enash::new(&p, &sol, &pop, 1e-8, 50).unwrap();
        let noise = pop.noise(0, p.time.steps());
        let a = en.run_system_a(&noise);
        let b = en.run_system_b(&noise, 3, en.policy(3)).unwrap();
        assert_eq!(a, b);
        let fam = vec![Deviation { name: "self".into(), policy: en.policy(3).clone() }];
        let (gap, _) = epsilon_nash_gap(&en, 3, &fam, 3).unwrap();
        assert_eq!(gap.value, 0.0);
    }

    #[test]
    fn coupling_free_systems_coincide() {
        let (p, sol) = instance(Coefficient::constant(1.0), Coefficient::zero(), 2);
        let pop = build_population(&p.graphon, 2, &[3, 3], &p.initial, 5).unwrap();
        let en = Enash::new(&p, &sol, &pop, 1e-8, 50).unwrap();
        let noise = pop.noise(1, p.time.steps());
        let a = en.run_system_a(&noise);
        let laws = en.system_c_laws(1e-8, 20).unwrap();
        let c = en.run_system_c(&noise, &laws);
        let d = en.run_system_d(&noise);
        for i in 0..pop.n() {
            for k in 0..a.nodes() {
                assert!((a.path(i)[k] - c.path(i)[k]).abs() < 1e-12);
                assert!((a.path(i)[k] - d.path(i)[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_graph_keeps_only_intra_cluster_drift() {
        let (p, sol) = instance(Coefficient::constant(1.0), Coefficient::constant(1.0), 1);
        let zero = Graphon::constant(0.0);
        let pop = build_population(&zero, 1, &[4], &p.initial, 5).unwrap();
        let en = Enash::new(&p, &sol, &pop, 1e-8, 50).unwrap();
        let noise = pop.noise(0, p.time.steps());
        let a = en.run_system_a(&noise);
        let (own, graph) = en.cluster_moments(&noise.x0);
        assert_eq!(graph[0].iter().sum::<f64>(), 0.0);
        assert!(own[0].iter().all(|v| v.is_finite()));
        assert_eq!(a.nodes(), p.time.nodes());
    }
}
