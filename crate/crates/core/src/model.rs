//! Dynamics and cost coefficient functions, the frozen mean-field brackets
//! they induce, and pointwise Hamiltonian minimization.
//!
//! Every coupling function is a finite sum of separable terms
//! `c * bx(x) * bu(u) * by(y)`. Integrating against a measure in `y` then
//! reduces to one expectation per distinct `by`, which is what makes the
//! brackets cheap to tabulate for particle ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::Graphon;
use crate::grid::{TimeGrid, VertexGrid};
use crate::measure::{MeasureEnsemble, PathBundle};

/// Scalar basis functions for separable terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case", deny_unknown_fields)]
pub enum Basis {
    #[default]
    One,
    Id,
    Pow {
        p: i32,
    },
    Sin {
        k: f64,
    },
    Cos {
        k: f64,
    },
    Tanh {
        k: f64,
    },
    Clamp {
        lo: f64,
        hi: f64,
    },
}

impl Basis {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Basis::One => 1.0,
            Basis::Id => s,
            Basis::Pow { p } => s.powi(p),
            Basis::Sin { k } => (k * s).sin(),
            Basis::Cos { k } => (k * s).cos(),
            Basis::Tanh { k } => (k * s).tanh(),
            Basis::Clamp { lo, hi } => s.clamp(lo, hi),
        }
    }
}

/// One separable term `c * x(x) * u(u) * y(y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    #[serde(default)]
    pub x: Basis,
    #[serde(default)]
    pub u: Basis,
    #[serde(default)]
    pub y: Basis,
}

impl Term {
    pub fn new(c: f64, x: Basis, u: Basis, y: Basis) -> Self {
        Self { c, x, u, y }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CoefficientRepr {
    Constant(f64),
    SquaredDifference { sq_diff: f64 },
    Terms(Vec<Term>),
}

/// Sum of separable terms. In JSON: a number (constant), `{"sq_diff": a}`
/// for `a (x - y)^2`, or a list of terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "CoefficientRepr", into = "CoefficientRepr")]
pub struct Coefficient {
    terms: Vec<Term>,
}

impl From<CoefficientRepr> for Coefficient {
    fn from(r: CoefficientRepr) -> Self {
        match r {
            CoefficientRepr::Constant(c) => Coefficient::constant(c),
            CoefficientRepr::SquaredDifference { sq_diff } => Coefficient::squared_difference(sq_diff),
            CoefficientRepr::Terms(terms) => Coefficient { terms },
        }
    }
}

impl From<Coefficient> for CoefficientRepr {
    fn from(c: Coefficient) -> Self {
        CoefficientRepr::Terms(c.terms)
    }
}

impl Coefficient {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            Self::zero()
        } else {
            Self { terms: vec![Term::new(c, Basis::One, Basis::One, Basis::One)] }
        }
    }

    /// `a (x - y)^2`.
    pub fn squared_difference(a: f64) -> Self {
        let sq = Basis::Pow { p: 2 };
        Self {
            terms: vec![
                Term::new(a, sq, Basis::One, Basis::One),
                Term::new(-2.0 * a, Basis::Id, Basis::One, Basis::Id),
                Term::new(a, Basis::One, Basis::One, sq),
            ],
        }
    }

    pub fn from_terms(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.c == 0.0)
    }

    /// True when no term depends on `y`.
    pub fn is_measure_free(&self) -> bool {
        self.terms.iter().all(|t| t.y == Basis::One || t.c == 0.0)
    }

    pub fn eval(&self, x: f64, u: f64, y: f64) -> f64 {
        self.terms.iter().map(|t| t.c * t.x.eval(x) * t.u.eval(u) * t.y.eval(y)).sum()
    }

    fn with_u(&self, u: Basis) -> Self {
        Self { terms: self.terms.iter().map(|t| Term { u, ..*t }).collect() }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.terms.iter().any(|t| !t.c.is_finite()) {
            return Err(Error::Domain(format!("{name}: non-finite coefficient")));
        }
        Ok(())
    }
}

/// Compact control set `U = [a, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub a: f64,
    pub b: f64,
}

impl ControlSet {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!("control set needs a < b, got [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    /// Clamp onto `U`; the closed-form minimizer of `u^2 - 2 s u`.
    #[inline]
    pub fn theta(&self, s: f64) -> f64 {
        s.clamp(self.a, self.b)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

/// Coupling functions in the form used by the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Couplings {
    /// `f0(x,u,y) = f0(x,y) u`, `f(x,u,y) = f(x,y) u`,
    /// `l0 = l1(x,y) + l2(x,y) u^2`, `l = l3(x,y) + l4(x,y) u^2`.
    Structured { f0: Coefficient, f: Coefficient, l1: Coefficient, l2: Coefficient, l3: Coefficient, l4: Coefficient },
    /// Arbitrary separable functions of `(x, u, y)`.
    General { f0: Coefficient, f: Coefficient, l0: Coefficient, l: Coefficient },
}

/// Full per-agent model: intra-cluster (`f0`, `l0`) and graphon-weighted
/// (`f`, `l`) couplings, compact controls, constant diffusion and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFunctions {
    pub f0: Coefficient,
    pub f: Coefficient,
    pub l0: Coefficient,
    pub l: Coefficient,
    pub control: ControlSet,
    pub sigma: f64,
    pub horizon: f64,
    /// Grid points for the generic minimizer.
    pub n_u: usize,
    structured: bool,
}

impl ProblemFunctions {
    pub fn new(couplings: Couplings, control: ControlSet, sigma: f64, horizon: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        let (f0, f, l0, l, structured) = match couplings {
            Couplings::Structured { f0, f, l1, l2, l3, l4 } => {
                for (n, c) in [("f0", &f0), ("f", &f), ("l1", &l1), ("l2", &l2), ("l3", &l3), ("l4", &l4)] {
                    c.validate(n)?;
                    if c.terms.iter().any(|t| t.u != Basis::One) {
                        return Err(Error::Domain(format!("structured coefficient {n} must not depend on u")));
                    }
                }
                let sq = Basis::Pow { p: 2 };
                let mut l0 = l1;
                l0.terms.extend(l2.with_u(sq).terms);
                let mut l = l3;
                l.terms.extend(l4.with_u(sq).terms);
                (f0.with_u(Basis::Id), f.with_u(Basis::Id), l0, l, true)
            }
            Couplings::General { f0, f, l0, l } => {
                for (n, c) in [("f0", &f0), ("f", &f), ("l0", &l0), ("l", &l)] {
                    c.validate(n)?;
                }
                (f0, f, l0, l, false)
            }
        };
        Ok(Self { f0, f, l0, l, control, sigma, horizon, n_u: 101, structured })
    }

    pub fn with_n_u(mut self, n_u: usize) -> Self {
        self.n_u = n_u.max(3);
        self
    }

    /// Closed-form Hamiltonian minimizer applies.
    pub fn is_structured(&self) -> bool {
        self.structured
    }

    /// No coupling function depends on the population state.
    pub fn is_measure_free(&self) -> bool {
        [&self.f0, &self.f, &self.l0, &self.l].iter().all(|c| c.is_measure_free())
    }

    /// Rough bound on `|f0| + |f|` over a box, used to size the space domain.
    pub fn drift_bound(&self, lo: f64, hi: f64) -> f64 {
        let n = 21;
        let pts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let us = [self.control.a, self.control.midpoint(), self.control.b];
        let mut best: f64 = 0.0;
        for &x in &pts {
            for &u in &us {
                for &y in &pts {
                    best = best.max(self.f0.eval(x, u, y).abs() + self.f.eval(x, u, y).abs());
                }
            }
        }
        best
    }

    /// Compiled bracket evaluator for this model.
    pub fn compile(&self) -> CompiledModel {
        CompiledModel::new(self)
    }
}

#[derive(Clone, Copy, Debug)]
struct CTerm {
    c: f64,
    x: Basis,
    u: Basis,
    y: usize,
    graph: bool,
}

/// Model terms indexed against the distinct `y` bases, so a local field is
/// just two vectors of expectations.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    bases: Vec<Basis>,
    drift: Vec<CTerm>,
    cost: Vec<CTerm>,
    control: ControlSet,
    structured: bool,
    quadratic_in_u: bool,
    n_u: usize,
}

/// Expectations of every `y` basis under the own-vertex law and under the
/// graphon-weighted ensemble, at one time.
#[derive(Clone, Copy, Debug)]
pub struct LocalField<'a> {
    pub own: &'a [f64],
    pub graph: &'a [f64],
}

/// Structured-form coefficients at a fixed `x`:
/// drift `D u`, cost `L + Q u^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic {
    pub d: f64,
    pub l: f64,
    pub q: f64,
}

impl CompiledModel {
    fn new(p: &ProblemFunctions) -> Self {
        let mut bases: Vec<Basis> = Vec::new();
        let mut index = |b: Basis| -> usize {
            if let Some(i) = bases.iter().position(|x| *x == b) {
                i
            } else {
                bases.push(b);
                bases.len() - 1
            }
        };
        let mut compile = |c: &Coefficient, graph: bool| -> Vec<CTerm> {
            c.terms
                .iter()
                .filter(|t| t.c != 0.0)
                .map(|t| CTerm { c: t.c, x: t.x, u: t.u, y: index(t.y), graph })
                .collect()
        };
        let mut drift = compile(&p.f0, false);
        drift.extend(compile(&p.f, true));
        let mut cost = compile(&p.l0, false);
        cost.extend(compile(&p.l, true));
        let quadratic_in_u = drift.iter().all(|t| matches!(t.u, Basis::One | Basis::Id))
            && cost.iter().all(|t| matches!(t.u, Basis::One | Basis::Id | Basis::Pow { p: 2 }));
        Self { bases, drift, cost, control: p.control, structured: p.structured, quadratic_in_u, n_u: p.n_u }
    }

    /// The drift does not read the population state.
    pub fn drift_is_measure_free(&self) -> bool {
        self.drift.iter().all(|t| self.bases[t.y] == Basis::One)
    }

    pub fn bases(&self) -> &[Basis] {
        &self.bases
    }

    pub fn n_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn control(&self) -> ControlSet {
        self.control
    }

    /// Basis expectations of a sample with uniform weights.
    pub fn sample_moments(&self, xs: &[f64], out: &mut [f64]) {
        let n = xs.len() as f64;
        for (o, b) in out.iter_mut().zip(&self.bases) {
            *o = match b {
                Basis::One => 1.0,
                _ => xs.iter().map(|&x| b.eval(x)).sum::<f64>() / n,
            };
        }
    }

    #[inline]
    fn sum(terms: &[CTerm], x: f64, u: f64, field: &LocalField<'_>) -> f64 {
        terms
            .iter()
            .map(|t| {
                let m = if t.graph { field.graph[t.y] } else { field.own[t.y] };
                t.c * m * t.x.eval(x) * t.u.eval(u)
            })
            .sum()
    }

    /// Bracketed drift `f0[x,u,mu_alpha] + f[x,u,mu_G; g_alpha]`.
    #[inline]
    pub fn drift(&self, x: f64, u: f64, field: &LocalField<'_>) -> f64 {
        Self::sum(&self.drift, x, u, field)
    }

    /// Bracketed running cost `l0[x,u,mu_alpha] + l[x,u,mu_G; g_alpha]`.
    #[inline]
    pub fn cost(&self, x: f64, u: f64, field: &LocalField<'_>) -> f64 {
        Self::sum(&self.cost, x, u, field)
    }

    /// Drift split into the intra-cluster and graphon parts.
    pub fn drift_parts(&self, x: f64, u: f64, field: &LocalField<'_>) -> (f64, f64) {
        split(&self.drift, x, u, field)
    }

    /// Cost split into the intra-cluster and graphon parts.
    pub fn cost_parts(&self, x: f64, u: f64, field: &LocalField<'_>) -> (f64, f64) {
        split(&self.cost, x, u, field)
    }

    /// Structured-form coefficients at `x`.
    pub fn quadratic(&self, x: f64, field: &LocalField<'_>) -> Quadratic {
        let mut out = Quadratic { d: 0.0, l: 0.0, q: 0.0 };
        for t in &self.drift {
            let m = if t.graph { field.graph[t.y] } else { field.own[t.y] };
            out.d += t.c * m * t.x.eval(x);
        }
        for t in &self.cost {
            let m = if t.graph { field.graph[t.y] } else { field.own[t.y] };
            let v = t.c * m * t.x.eval(x);
            if t.u == Basis::One {
                out.l += v;
            } else {
                out.q += v;
            }
        }
        out
    }

    /// `argmin_{u in U} q * drift(x,u) + cost(x,u)`.
    ///
    /// Structured models use `Theta(q h(x))` with `h = -D / (2 Q)`. General
    /// models that are affine in `u` in the drift and quadratic in the cost
    /// are solved exactly the same way; the rest scan `n_u` grid points (ties toward smaller `u`) and refine by ternary
    /// search. The flag reports a near-tie between the two best grid points.
    pub fn minimize(&self, x: f64, q: f64, field: &LocalField<'_>) -> Result<(f64, bool)> {
        if self.structured {
            let c = self.quadratic(x, field);
            if !(c.q > 0.0) {
                return Err(Error::Invariant(format!(
                    "control weight l2 + l4 bracket is {} at x = {x}; must be positive",
                    c.q
                )));
            }
            return Ok((self.control.theta(-q * c.d / (2.0 * c.q)), false));
        }
        if self.quadratic_in_u {
            return Ok(self.minimize_quadratic(x, q, field));
        }
        Ok(self.minimize_grid(x, q, field))
    }

    /// Exact minimizer when the drift is affine and the cost quadratic in `u`:
    /// `H(u) = s u + Q u^2 + const`. Ties go to the smaller endpoint.
    fn minimize_quadratic(&self, x: f64, q: f64, field: &LocalField<'_>) -> (f64, bool) {
        let (mut s, mut qq) = (0.0, 0.0);
        for t in &self.drift {
            if t.u == Basis::Id {
                let m = if t.graph { field.graph[t.y] } else { field.own[t.y] };
                s += q * t.c * m * t.x.eval(x);
            }
        }
        for t in &self.cost {
            let m = if t.graph { field.graph[t.y] } else { field.own[t.y] };
            match t.u {
                Basis::Id => s += t.c * m * t.x.eval(x),
                Basis::Pow { p: 2 } => qq += t.c * m * t.x.eval(x),
                _ => {}
            }
        }
        let ControlSet { a, b } = self.control;
        if qq > 0.0 {
            return (self.control.theta(-s / (2.0 * qq)), false);
        }
        let (ha, hb) = (s * a + qq * a * a, s * b + qq * b * b);
        ((if hb < ha { b } else { a }), (ha - hb).abs() <= 1e-9)
    }

    /// Generic grid-plus-ternary minimizer, also usable on structured models.
    pub fn minimize_grid(&self, x: f64, q: f64, field: &LocalField<'_>) -> (f64, bool) {
        let h = |u: f64| q * self.drift(x, u, field) + self.cost(x, u, field);
        let ControlSet { a, b } = self.control;
        let n = self.n_u;
        let step = (b - a) / (n - 1) as f64;
        let (mut best_i, mut best, mut second) = (0, f64::INFINITY, f64::INFINITY);
        for i in 0..n {
            let v = h(a + i as f64 * step);
            if v < best {
                second = best;
                best = v;
                best_i = i;
            } else if v < second {
                second = v;
            }
        }
        let tie = (second - best).abs() <= 1e-9;
        let (mut lo, mut hi) = (a + best_i.saturating_sub(1) as f64 * step, (a + (best_i + 1) as f64 * step).min(b));
        for _ in 0..60 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if h(m1) <= h(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let refined = 0.5 * (lo + hi);
        let u = if h(refined) < best { refined } else { a + best_i as f64 * step };
        (u, tie)
    }
}

fn split(terms: &[CTerm], x: f64, u: f64, field: &LocalField<'_>) -> (f64, f64) {
    let (mut own, mut graph) = (0.0, 0.0);
    for t in terms {
        if t.graph {
            graph += t.c * field.graph[t.y] * t.x.eval(x) * t.u.eval(u);
        } else {
            own += t.c * field.own[t.y] * t.x.eval(x) * t.u.eval(u);
        }
    }
    (own, graph)
}

/// Basis expectations per (vertex, time node).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    n_vertices: usize,
    nodes: usize,
    nb: usize,
    values: Vec<f64>,
}

impl MomentTable {
    pub fn from_fn(
        model: &CompiledModel,
        n_vertices: usize,
        nodes: usize,
        sample: impl Fn(usize, usize) -> Vec<f64>,
    ) -> Self {
        let nb = model.n_bases();
        let mut values = vec![0.0; n_vertices * nodes * nb];
        for v in 0..n_vertices {
            for k in 0..nodes {
                let off = (v * nodes + k) * nb;
                model.sample_moments(&sample(v, k), &mut values[off..off + nb]);
            }
        }
        Self { n_vertices, nodes, nb, values }
    }

    pub fn from_bundle(model: &CompiledModel, b: &PathBundle) -> Self {
        Self::from_fn(model, b.vertices().len(), b.time().nodes(), |v, k| b.slice_at(v, k))
    }

    pub fn from_ensemble(model: &CompiledModel, e: &MeasureEnsemble) -> Self {
        let nb = model.n_bases();
        let nodes = e.time().nodes();
        let nv = e.vertices().len();
        let mut values = vec![0.0; nv * nodes * nb];
        for v in 0..nv {
            for k in 0..nodes {
                let m = e.get(v, k);
                for (i, b) in model.bases().iter().enumerate() {
                    values[(v * nodes + k) * nb + i] = m.expect(|x| b.eval(x));
                }
            }
        }
        Self { n_vertices: nv, nodes, nb, values }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn get(&self, v: usize, k: usize) -> &[f64] {
        let off = (v * self.nodes + k) * self.nb;
        &self.values[off..off + self.nb]
    }
}

/// Frozen local fields of one vertex over the time grid: the own-vertex
/// expectations and their graphon-weighted aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenFields {
    nb: usize,
    own: Vec<f64>,
    graph: Vec<f64>,
}

impl FrozenFields {
    /// `own` and `graph` laid out `[time node][basis]`.
    pub fn from_parts(nb: usize, own: Vec<f64>, graph: Vec<f64>) -> Result<Self> {
        if nb == 0 && (own.is_empty() && graph.is_empty()) {
            return Ok(Self { nb, own, graph });
        }
        if own.len() != graph.len() || nb == 0 || !own.len().is_multiple_of(nb) {
            return Err(Error::Shape("frozen field arrays have inconsistent sizes".into()));
        }
        Ok(Self { nb, own, graph })
    }

    /// Fields of vertex `alpha`: own law from table row `own_vertex`, graphon
    /// term by midpoint quadrature `sum_j g(alpha, beta_j) / M * E_j`.
    pub fn from_table(
        table: &MomentTable,
        graphon: &Graphon,
        alpha: f64,
        own_vertex: usize,
        grid: &VertexGrid,
    ) -> Result<Self> {
        if grid.len() != table.n_vertices() {
            return Err(Error::Shape(format!(
                "moment table has {} vertices, grid has {}",
                table.n_vertices(),
                grid.len()
            )));
        }
        let weights = graphon.section_weights(alpha, grid);
        Ok(Self::weighted(table, &weights, |k| table.get(own_vertex, k).to_vec()))
    }

    /// Graphon part from explicit vertex weights, own part from a closure.
    pub fn weighted(table: &MomentTable, weights: &[f64], own: impl Fn(usize) -> Vec<f64>) -> Self {
        let nb = table.nb;
        let nodes = table.nodes;
        let mut g = vec![0.0; nodes * nb];
        let mut o = Vec::with_capacity(nodes * nb);
        for k in 0..nodes {
            for (v, w) in weights.iter().enumerate() {
                if *w != 0.0 {
                    for (gi, m) in g[k * nb..(k + 1) * nb].iter_mut().zip(table.get(v, k)) {
                        *gi += w * m;
                    }
                }
            }
            o.extend(own(k));
        }
        Self { nb, own: o, graph: g }
    }

    pub fn nodes(&self) -> usize {
        self.own.len().checked_div(self.nb).unwrap_or(usize::MAX)
    }

    #[inline]
    pub fn at(&self, k: usize) -> LocalField<'_> {
        let r = k * self.nb..(k + 1) * self.nb;
        LocalField { own: &self.own[r.clone()], graph: &self.graph[r] }
    }
}

/// Frozen fields of vertex `alpha` against an ensemble on `grid` (own law
/// taken from the cell containing `alpha`).
pub fn frozen_fields(
    p: &ProblemFunctions,
    g: &Graphon,
    alpha: f64,
    e: &MeasureEnsemble,
    grid: &VertexGrid,
    time: &TimeGrid,
) -> Result<(CompiledModel, FrozenFields)> {
    if e.time() != time {
        return Err(Error::Shape("ensemble time grid differs from solver grid".into()));
    }
    let model = p.compile();
    let table = MomentTable::from_ensemble(&model, e);
    let fields = FrozenFields::from_table(&table, g, alpha, grid.cell_of(alpha), grid)?;
    Ok((model, fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Measure1D;
    use rand::Rng;

    fn structured(f0: Coefficient, f: Coefficient, l1: Coefficient, l2: f64, l4: f64) -> ProblemFunctions {
        ProblemFunctions::new(
            Couplings::Structured {
                f0,
                f,
                l1,
                l2: Coefficient::constant(l2),
                l3: Coefficient::zero(),
                l4: Coefficient::constant(l4),
            },
            ControlSet::new(-1.0, 1.0).unwrap(),
            0.3,
            1.0,
        )
        .unwrap()
    }

    fn ensemble(m: usize, k: usize, f: impl Fn(usize, usize) -> Measure1D) -> (MeasureEnsemble, VertexGrid, TimeGrid) {
        let grid = VertexGrid::new(m).unwrap();
        let time = TimeGrid::new(1.0, k).unwrap();
        (MeasureEnsemble::from_fn(grid.midpoints(), time, f), grid, time)
    }

    #[test]
    fn coefficient_json_forms() {
        let c: Coefficient = serde_json::from_str("2.5").unwrap();
        assert_eq!(c.eval(1.0, 0.0, 3.0), 2.5);
        let c: Coefficient = serde_json::from_str(r#"{"sq_diff": 1.0}"#).unwrap();
        assert!((c.eval(3.0, 0.0, 1.0) - 4.0).abs() < 1e-14);
        let c: Coefficient =
            serde_json::from_str(r#"[{"c": 0.5, "y": {"fn": "tanh", "k": 1.0}}, {"c": 1.0}]"#).unwrap();
        assert!((c.eval(0.0, 0.0, 0.7) - (1.0 + 0.5 * 0.7f64.tanh())).abs() < 1e-14);
    }

    #[test]
    fn zero_graphon_keeps_only_intra_cluster_terms() {
        let p = structured(Coefficient::constant(2.0), Coefficient::constant(5.0), Coefficient::zero(), 1.0, 1.0);
        let (e, grid, time) = ensemble(4, 2, |_, _| Measure1D::dirac(0.0));
        let (model, fields) = frozen_fields(&p, &Graphon::constant(0.0), 0.375, &e, &grid, &time).unwrap();
        let (own, graph) = model.drift_parts(0.3, 0.5, &fields.at(1));
        assert_eq!(own, 1.0);
        assert_eq!(graph, 0.0);
    }

    #[test]
    fn graphon_term_of_identity_coupling_is_the_common_location() {
        let f = Coefficient::from_terms(vec![Term::new(1.0, Basis::One, Basis::One, Basis::Id)]);
        let p = ProblemFunctions::new(
            Couplings::General { f0: Coefficient::zero(), f, l0: Coefficient::zero(), l: Coefficient::zero() },
            ControlSet::new(-1.0, 1.0).unwrap(),
            1.0,
            1.0,
        )
        .unwrap();
        let (e, grid, time) = ensemble(5, 3, |_, _| Measure1D::dirac(0.7));
        let (model, fields) = frozen_fields(&p, &Graphon::constant(1.0), 0.1, &e, &grid, &time).unwrap();
        assert!((model.drift(-2.0, 0.3, &fields.at(2)) - 0.7).abs() < 1e-14);
    }

    #[test]
    fn graphon_term_reduces_to_section_integral() {
        let f = Coefficient::constant(1.0);
        let p = ProblemFunctions::new(
            Couplings::General { f0: Coefficient::zero(), f, l0: Coefficient::zero(), l: Coefficient::zero() },
            ControlSet::new(-1.0, 1.0).unwrap(),
            1.0,
            1.0,
        )
        .unwrap();
        let (e, grid, time) = ensemble(8, 2, |v, k| Measure1D::empirical(&[v as f64, k as f64 - 3.0]).unwrap());
        let (model, fields) = frozen_fields(&p, &Graphon::uniform_attachment(), 0.5, &e, &grid, &time).unwrap();
        assert!((model.drift(0.0, 0.0, &fields.at(0)) - 0.375).abs() < 1e-14);
    }

    #[test]
    fn theta_clamps() {
        let u = ControlSet::new(-0.5, 2.0).unwrap();
        assert_eq!(u.theta(-3.0), -0.5);
        assert_eq!(u.theta(-0.5), -0.5);
        assert_eq!(u.theta(1.25), 1.25);
        assert_eq!(u.theta(2.0), 2.0);
        assert_eq!(u.theta(7.0), 2.0);
    }

    #[test]
    fn closed_form_agrees_with_grid_search() {
        let f0 = Coefficient::from_terms(vec![
            Term::new(1.0, Basis::One, Basis::One, Basis::One),
            Term::new(0.5, Basis::Sin { k: 1.0 }, Basis::One, Basis::Tanh { k: 1.0 }),
        ]);
        let p = structured(f0, Coefficient::constant(0.7), Coefficient::squared_difference(1.0), 0.4, 0.6);
        let (e, grid, time) = ensemble(4, 1, |v, _| Measure1D::empirical(&[v as f64 * 0.3, -0.2]).unwrap());
        let (model, fields) = frozen_fields(&p, &Graphon::uniform_attachment(), 0.6, &e, &grid, &time).unwrap();
        let field = fields.at(0);
        let mut rng = crate::rng::keyed(1, 0, 0, 0);
        let tol = 2.0 * 2.0 / p.n_u as f64;
        for _ in 0..200 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let q: f64 = rng.random_range(-8.0..8.0);
            let (exact, _) = model.minimize(x, q, &field).unwrap();
            let (grid_u, _) = model.minimize_grid(x, q, &field);
            assert!((exact - grid_u).abs() < tol, "x={x} q={q} {exact} vs {grid_u}");
        }
    }

    #[test]
    fn nonpositive_control_weight_is_an_invariant_error() {
        let p = structured(Coefficient::constant(1.0), Coefficient::zero(), Coefficient::zero(), 0.0, 1.0);
        let (e, grid, time) = ensemble(2, 1, |_, _| Measure1D::dirac(0.0));
        let (model, fields) = frozen_fields(&p, &Graphon::constant(0.0), 0.25, &e, &grid, &time).unwrap();
        assert!(matches!(model.minimize(0.0, 1.0, &fields.at(0)), Err(Error::Invariant(_))));
    }

    #[test]
    fn rejects_bad_problem_parameters() {
        let c = || Couplings::General {
            f0: Coefficient::zero(),
            f: Coefficient::zero(),
            l0: Coefficient::zero(),
            l: Coefficient::zero(),
        };
        let u = ControlSet::new(-1.0, 1.0).unwrap();
        assert!(ProblemFunctions::new(c(), u, -0.1, 1.0).is_err());
        assert!(ProblemFunctions::new(c(), u, 0.1, 0.0).is_err());
        assert!(ControlSet::new(1.0, 1.0).is_err());
    }
}
