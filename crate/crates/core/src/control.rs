//! Per-vertex optimal control against a frozen ensemble: backward HJB sweep,
//! policy extraction and Monte-Carlo rollout of feedback laws.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::io::fmt_f64;
use crate::measure::InitialLaw;
use crate::model::{CompiledModel, ControlSet, FrozenFields, ProblemFunctions};
use crate::rng;

/// Space domain sized from the initial support, diffusion spread and drift
/// range: `support +- (6 sigma sqrt(T) + drift * T) + padding`.
pub fn auto_space_grid(p: &ProblemFunctions, law: &InitialLaw, n_x: usize, padding: f64) -> Result<SpaceGrid> {
    let (lo, hi) = law.support();
    let spread = 6.0 * p.sigma * p.horizon.sqrt();
    let drift = p.drift_bound(lo - spread, hi + spread);
    let pad = spread + drift * p.horizon + padding.max(0.0);
    SpaceGrid::new(lo - pad, hi + pad, n_x)
}

/// Value function `V(t_k, x_j)` on the solver grids.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    space: SpaceGrid,
    time: TimeGrid,
    values: Vec<f64>,
}

impl ValueGrid {
    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.space.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// Linear interpolation in `x` at time node `k`.
    pub fn at(&self, k: usize, x: f64) -> f64 {
        let (j, w) = self.space.locate(x);
        let r = self.row(k);
        if w == 0.0 {
            r[j]
        } else {
            (1.0 - w) * r[j] + w * r[j + 1]
        }
    }

    /// Central first differences with zero-slope boundaries.
    pub fn v_x(&self, k: usize) -> Vec<f64> {
        let r = self.row(k);
        let n = r.len();
        let dx = self.space.dx();
        (0..n).map(|j| (r[(j + 1).min(n - 1)] - r[j.saturating_sub(1)]) / (2.0 * dx)).collect()
    }

    /// Second differences with reflected ghost nodes.
    pub fn v_xx(&self, k: usize) -> Vec<f64> {
        let r = self.row(k);
        let n = r.len();
        let dx2 = self.space.dx().powi(2);
        (0..n).map(|j| (r[(j + 1).min(n - 1)] - 2.0 * r[j] + r[j.saturating_sub(1)]) / dx2).collect()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `t_index,x_index,value`.
    pub fn to_csv(&self) -> String {
        table_csv(&self.values, self.space.len())
    }
}

/// Feedback law evaluated at time node `k` (held on `[t_k, t_{k+1})`).
pub trait Feedback: Sync {
    fn control(&self, k: usize, x: f64) -> f64;
}

impl<F: Fn(usize, f64) -> f64 + Sync> Feedback for F {
    fn control(&self, k: usize, x: f64) -> f64 {
        self(k, x)
    }
}

/// Tabulated feedback: piecewise constant in time, linear in `x`, clamped
/// to the space domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    space: SpaceGrid,
    time: TimeGrid,
    control: ControlSet,
    values: Vec<f64>,
    ties: usize,
}

impl Policy {
    pub fn from_fn(space: SpaceGrid, time: TimeGrid, control: ControlSet, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(time.nodes() * space.len());
        for k in 0..time.nodes() {
            for j in 0..space.len() {
                values.push(control.theta(f(k, space.x(j))));
            }
        }
        Self { space, time, control, values, ties: 0 }
    }

    pub fn constant(space: SpaceGrid, time: TimeGrid, control: ControlSet, u: f64) -> Self {
        Self::from_fn(space, time, control, |_, _| u)
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn control_set(&self) -> ControlSet {
        self.control
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.space.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// Grid points where the generic minimizer saw a near-tie.
    pub fn ties(&self) -> usize {
        self.ties
    }

    #[inline]
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        let (j, w) = self.space.locate(x);
        let r = self.row(k.min(self.time.steps()));
        if w == 0.0 {
            r[j]
        } else {
            (1.0 - w) * r[j] + w * r[j + 1]
        }
    }

    /// Evaluation at continuous time `t`.
    pub fn eval_at(&self, t: f64, x: f64) -> f64 {
        let k = ((t / self.time.dt()).floor().max(0.0) as usize).min(self.time.steps());
        self.eval(k, x)
    }

    /// Largest difference from another policy on the same grids.
    pub fn sup_diff(&self, other: &Policy) -> Result<f64> {
        if self.space != other.space || self.time != other.time {
            return Err(Error::Shape("policies live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// CSV with columns `t_index,x_index,value`.
    pub fn to_csv(&self) -> String {
        table_csv(&self.values, self.space.len())
    }
}

impl Feedback for Policy {
    fn control(&self, k: usize, x: f64) -> f64 {
        self.eval(k, x)
    }
}

fn table_csv(values: &[f64], n: usize) -> String {
    let mut out = String::from("t_index,x_index,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i / n, i % n, fmt_f64(*v)));
    }
    out
}

/// Max over time of the largest adjacent difference quotient in `x`.
pub fn policy_lipschitz(pol: &Policy) -> f64 {
    let dx = pol.space.dx();
    (0..pol.time.nodes())
        .map(|k| pol.row(k).windows(2).fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs() / dx)))
        .fold(0.0, f64::max)
}

/// Factored tridiagonal system `(I - lambda L)` with reflecting ends.
struct Implicit {
    c_prime: Vec<f64>,
    denom: Vec<f64>,
    lam: f64,
}

impl Implicit {
    fn new(n: usize, lam: f64) -> Self {
        let diag = |j: usize| if j == 0 || j == n - 1 { 1.0 + lam } else { 1.0 + 2.0 * lam };
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag(0);
        c_prime[0] = -lam / denom[0];
        for j in 1..n {
            denom[j] = diag(j) + lam * c_prime[j - 1];
            c_prime[j] = -lam / denom[j];
        }
        Self { c_prime, denom, lam }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for j in 1..n {
            rhs[j] = (rhs[j] + self.lam * rhs[j - 1]) / self.denom[j];
        }
        for j in (0..n - 1).rev() {
            rhs[j] -= self.c_prime[j] * rhs[j + 1];
        }
    }
}

/// Backward semi-implicit sweep for
/// `-V_t = min_u { f~ V_x + l~ } + sigma^2/2 V_xx`, `V(T, .) = 0`.
///
/// Each step picks `u` from the central slope of `V(t_{k+1})`, transports
/// with the upwind difference in the drift direction, adds the running
/// cost explicitly and solves the diffusion implicitly with zero-slope
/// boundaries. The final policy row uses `q = 0`.
pub fn solve_hjb(
    model: &CompiledModel,
    fields: &FrozenFields,
    sigma: f64,
    space: &SpaceGrid,
    time: &TimeGrid,
) -> Result<(ValueGrid, Policy)> {
    let n = space.len();
    let steps = time.steps();
    if fields.nodes() != usize::MAX && fields.nodes() != time.nodes() {
        return Err(Error::Shape(format!(
            "frozen fields have {} time nodes, grid has {}",
            fields.nodes(),
            time.nodes()
        )));
    }
    let (dx, dt) = (space.dx(), time.dt());
    let implicit = Implicit::new(n, 0.5 * sigma * sigma * dt / (dx * dx));
    let xs = space.nodes();
    let mut values = vec![0.0; time.nodes() * n];
    let mut controls = vec![0.0; time.nodes() * n];
    let mut ties = 0;
    let mut bound = 0.0;
    let mut rhs = vec![0.0; n];

    let field = fields.at(steps);
    for j in 0..n {
        let (u, tie) = model.minimize(xs[j], 0.0, &field)?;
        controls[steps * n + j] = u;
        ties += tie as usize;
    }

    for k in (0..steps).rev() {
        let field = fields.at(k);
        let (head, tail) = values.split_at_mut((k + 1) * n);
        let next = &tail[..n];
        let mut max_cost: f64 = 0.0;
        for j in 0..n {
            let up = next[(j + 1).min(n - 1)];
            let down = next[j.saturating_sub(1)];
            let q = (up - down) / (2.0 * dx);
            let (u, tie) = model.minimize(xs[j], q, &field)?;
            ties += tie as usize;
            let b = model.drift(xs[j], u, &field);
            let c = model.cost(xs[j], u, &field);
            if b.abs() * dt > dx * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "explicit drift step unstable: |f| dt = {} exceeds dx = {dx} at t_{k}, x = {}; \
                     increase K or decrease N_x",
                    b.abs() * dt,
                    xs[j]
                )));
            }
            let slope = if b > 0.0 { (up - next[j]) / dx } else { (next[j] - down) / dx };
            rhs[j] = next[j] + dt * (b * slope + c);
            controls[k * n + j] = u;
            max_cost = max_cost.max(c.abs());
        }
        implicit.solve(&mut rhs);
        bound += dt * max_cost;
        let row = &mut head[k * n..];
        for j in 0..n {
            if !rhs[j].is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite value at t_{k}, x = {}; last finite row: {:?}",
                    xs[j],
                    &next[..n.min(8)]
                )));
            }
            row[j] = rhs[j];
        }
        let sup = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sup > bound * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Invariant(format!("value bound violated at t_{k}: {sup} > {bound}")));
        }
    }
    let control = model.control();
    Ok((
        ValueGrid { space: *space, time: *time, values },
        Policy { space: *space, time: *time, control, values: controls, ties },
    ))
}

/// Mean running cost of a feedback law with its Monte-Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub se: f64,
    pub paths: usize,
}

impl CostEstimate {
    pub fn from_samples(costs: &[f64]) -> Self {
        let n = costs.len() as f64;
        let mean = costs.iter().sum::<f64>() / n;
        let var = if costs.len() > 1 { costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, se: (var / n).sqrt(), paths: costs.len() }
    }
}

/// Euler-Maruyama rollout of `pol` from `x0` against frozen fields, with
/// left-point cost accumulation. Noise is keyed by `(seed, path)`, so
/// different policies rolled out with one seed share their noise.
pub fn rollout_cost(
    model: &CompiledModel,
    fields: &FrozenFields,
    sigma: f64,
    time: &TimeGrid,
    pol: &dyn Feedback,
    x0: f64,
    paths: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let steps = time.steps();
    let dt = time.dt();
    let sq = dt.sqrt();
    let costs: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|r| {
            let z = rng::normals(seed, rng::domain::ROLLOUT, r as u64, 0, steps);
            let mut x = x0;
            let mut j = 0.0;
            for (k, zk) in z.iter().enumerate() {
                let field = fields.at(k);
                let u = pol.control(k, x);
                j += model.cost(x, u, &field) * dt;
                x += model.drift(x, u, &field) * dt + sigma * sq * zk;
            }
            j
        })
        .collect();
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite rollout cost".into()));
    }
    Ok(CostEstimate::from_samples(&costs))
}

/// Random Lipschitz feedback table: piecewise-linear in `x` through
/// uniform knots, values uniform in `U`, constant in time.
pub fn random_lipschitz_policy(
    space: SpaceGrid,
    time: TimeGrid,
    control: ControlSet,
    knots: usize,
    seed: u64,
) -> Policy {
    use rand::Rng;
    let mut r = rng::keyed(seed, rng::domain::PROBE, knots as u64, 0);
    let ys: Vec<f64> = (0..knots.max(2)).map(|_| r.random_range(control.a..=control.b)).collect();
    let knot_grid = SpaceGrid::new(space.x_min(), space.x_max(), ys.len().max(3)).ok();
    Policy::from_fn(space, time, control, |_, x| match &knot_grid {
        Some(g) if ys.len() >= 3 => {
            let (j, w) = g.locate(x);
            if w == 0.0 {
                ys[j]
            } else {
                (1.0 - w) * ys[j] + w * ys[j + 1]
            }
        }
        _ => {
            let w = (x - space.x_min()) / (space.x_max() - space.x_min());
            (1.0 - w) * ys[0] + w * ys[1]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphon::Graphon;
    use crate::grid::VertexGrid;
    use crate::measure::{Measure1D, MeasureEnsemble};
    use crate::model::{frozen_fields, Basis, Coefficient, Couplings, Term};

    fn general(f: Coefficient, l: Coefficient, u: (f64, f64), sigma: f64, horizon: f64) -> ProblemFunctions {
        ProblemFunctions::new(
            Couplings::General { f0: f, f: Coefficient::zero(), l0: l, l: Coefficient::zero() },
            ControlSet::new(u.0, u.1).unwrap(),
            sigma,
            horizon,
        )
        .unwrap()
    }

    fn solve(p: &ProblemFunctions, space: SpaceGrid, steps: usize) -> (ValueGrid, Policy, CompiledModel, FrozenFields) {
        let grid = VertexGrid::new(1).unwrap();
        let time = TimeGrid::new(p.horizon, steps).unwrap();
        let e = MeasureEnsemble::from_fn(grid.midpoints(), time, |_, _| Measure1D::dirac(0.0));
        let (model, fields) = frozen_fields(p, &Graphon::constant(0.0), 0.5, &e, &grid, &time).unwrap();
        let (v, pol) = solve_hjb(&model, &fields, p.sigma, &space, &time).unwrap();
        (v, pol, model, fields)
    }

    fn control_u() -> Coefficient {
        Coefficient::from_terms(vec![Term::new(1.0, Basis::One, Basis::Id, Basis::One)])
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let p = general(control_u(), Coefficient::zero(), (-1.0, 1.0), 0.5, 1.0);
        let (v, _, _, _) = solve(&p, SpaceGrid::new(-3.0, 3.0, 61).unwrap(), 50);
        assert!(v.sup_abs() < 1e-12);
    }

    #[test]
    fn quadratic_control_cost_stays_at_zero() {
        let l = Coefficient::from_terms(vec![Term::new(1.0, Basis::One, Basis::Pow { p: 2 }, Basis::One)]);
        let p = general(control_u(), l, (-1.0, 1.0), 0.05, 1.0);
        let (v, pol, _, _) = solve(&p, SpaceGrid::new(-2.0, 2.0, 81).unwrap(), 40);
        assert!(v.sup_abs() < 1e-12);
        assert!(pol.row(0).iter().all(|u| u.abs() < 1e-9));
    }

    #[test]
    fn scalar_lq_matches_riccati() {
        let l = Coefficient::from_terms(vec![
            Term::new(1.0, Basis::Pow { p: 2 }, Basis::One, Basis::One),
            Term::new(1.0, Basis::One, Basis::Pow { p: 2 }, Basis::One),
        ]);
        let sigma: f64 = 0.2;
        let p = general(control_u(), l, (-10.0, 10.0), sigma, 1.0);
        let (v, _, _, _) = solve(&p, SpaceGrid::new(-4.0, 4.0, 3201).unwrap(), 2000);
        let pi0 = 1.0f64.tanh();
        let c0 = sigma * sigma * 1.0f64.cosh().ln();
        let err = (0..=40)
            .map(|i| -2.0 + 0.1 * i as f64)
            .map(|x| (v.at(0, x) - (pi0 * x * x + c0)).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "max error {err}");
    }

    #[test]
    fn lipschitz_of_reference_tables() {
        let space = SpaceGrid::new(-2.0, 2.0, 41).unwrap();
        let time = TimeGrid::new(1.0, 4).unwrap();
        let u = ControlSet::new(-1.0, 1.0).unwrap();
        assert_eq!(policy_lipschitz(&Policy::constant(space, time, u, 0.3)), 0.0);
        let clamp = Policy::from_fn(space, time, u, |_, x| x);
        assert!((policy_lipschitz(&clamp) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_grid_is_rejected() {
        let p = general(control_u(), Coefficient::squared_difference(1.0), (-5.0, 5.0), 0.3, 1.0);
        let grid = VertexGrid::new(1).unwrap();
        let time = TimeGrid::new(1.0, 4).unwrap();
        let e = MeasureEnsemble::from_fn(grid.midpoints(), time, |_, _| Measure1D::dirac(0.0));
        let (model, fields) = frozen_fields(&p, &Graphon::constant(0.0), 0.5, &e, &grid, &time).unwrap();
        let space = SpaceGrid::new(-3.0, 3.0, 301).unwrap();
        assert!(matches!(solve_hjb(&model, &fields, 0.3, &space, &time), Err(Error::Config(_))));
    }

    #[test]
    fn rollout_is_reproducible_and_shares_noise() {
        let l = Coefficient::from_terms(vec![Term::new(1.0, Basis::Pow { p: 2 }, Basis::One, Basis::One)]);
        let p = general(control_u(), l, (-1.0, 1.0), 0.4, 1.0);
        let (_, pol, model, fields) = solve(&p, SpaceGrid::new(-4.0, 4.0, 161).unwrap(), 100);
        let time = *pol.time();
        let a = rollout_cost(&model, &fields, 0.4, &time, &pol, 0.5, 500, 9).unwrap();
        let b = rollout_cost(&model, &fields, 0.4, &time, &pol, 0.5, 500, 9).unwrap();
        assert_eq!(a, b);
        let zero = rollout_cost(&model, &fields, 0.4, &time, &|_: usize, _: f64| 0.0, 0.5, 500, 9).unwrap();
        assert!(a.mean < zero.mean);
    }

    #[test]
    fn csv_layout() {
        let space = SpaceGrid::new(0.0, 1.0, 3).unwrap();
        let time = TimeGrid::new(1.0, 1).unwrap();
        let pol = Policy::constant(space, time, ControlSet::new(0.0, 1.0).unwrap(), 0.5);
        let csv = pol.to_csv();
        assert!(csv.starts_with("t_index,x_index,value\n0,0,"));
        assert_eq!(csv.lines().count(), 7);
    }
}
