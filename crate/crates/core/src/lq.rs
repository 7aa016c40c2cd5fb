//! Linear-quadratic graphon mean field games.
//!
//! Agent dynamics `dx = (A x + D0 z0 + D z + B u) dt + Sigma dw` with cost
//! tracking `nu = gamma0 z0 + gamma z + eta`. The equilibrium mean path is
//! the fixed point of an affine operator built from the Riccati solution
//! `Pi` and the fundamental matrices `Phi`, `Psi` of the closed loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::Graphon;
use crate::grid::{TimeGrid, VertexGrid};
use crate::rng;

/// A matrix given as a scalar (`c I` for square, `c` for `1 x 1`) or rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixInput {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixInput {
    fn to_matrix(&self, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixInput::Scalar(c) if rows == cols => Ok(DMatrix::identity(rows, cols) * *c),
            MatrixInput::Scalar(c) if rows == 1 && cols == 1 => Ok(DMatrix::from_element(1, 1, *c)),
            MatrixInput::Scalar(_) => Err(Error::Shape(format!("{name}: scalar shorthand needs a square shape"))),
            MatrixInput::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::Shape(format!("{name} must be {rows}x{cols}")));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| r[i][j]))
            }
        }
    }

    fn shape(&self) -> Option<(usize, usize)> {
        match self {
            MatrixInput::Scalar(_) => None,
            MatrixInput::Rows(r) => Some((r.len(), r.first().map_or(0, Vec::len))),
        }
    }
}

/// A vector given as a scalar (constant entries) or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorInput {
    Scalar(f64),
    List(Vec<f64>),
}

impl VectorInput {
    fn to_vector(&self, n: usize, name: &str) -> Result<DVector<f64>> {
        match self {
            VectorInput::Scalar(c) => Ok(DVector::from_element(n, *c)),
            VectorInput::List(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            VectorInput::List(_) => Err(Error::Shape(format!("{name} must have length {n}"))),
        }
    }
}

/// Serialized LQ block of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    pub a: MatrixInput,
    pub b: MatrixInput,
    #[serde(default = "zero_matrix")]
    pub d0: MatrixInput,
    #[serde(default = "zero_matrix")]
    pub d: MatrixInput,
    pub sigma: MatrixInput,
    pub q: MatrixInput,
    pub r: MatrixInput,
    #[serde(default = "zero_matrix")]
    pub q_t: MatrixInput,
    #[serde(default)]
    pub gamma0: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "zero_vector")]
    pub eta: VectorInput,
    pub x0: VectorInput,
    pub horizon: f64,
}

fn zero_matrix() -> MatrixInput {
    MatrixInput::Scalar(0.0)
}

fn zero_vector() -> VectorInput {
    VectorInput::Scalar(0.0)
}

/// Validated LQ instance on solver grids.
#[derive(Clone, Debug)]
pub struct LqParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d0: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_t: DMatrix<f64>,
    pub gamma0: f64,
    pub gamma: f64,
    pub eta: DVector<f64>,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub graphon: Graphon,
    pub vertices: VertexGrid,
    pub time: TimeGrid,
}

impl LqParams {
    /// Builds from config. State dimension comes from `a` (1 for a scalar),
    /// control and noise dimensions from `b` and `sigma`.
    pub fn from_config(c: &LqConfig, graphon: Graphon, m: usize, k: usize) -> Result<Self> {
        let n = c.a.shape().map_or(1, |s| s.0);
        let nu = c.b.shape().map_or(if c.r.shape().is_some() { c.r.shape().unwrap().0 } else { n }, |s| s.1);
        let nw = c.sigma.shape().map_or(n, |s| s.1);
        let p = Self {
            a: c.a.to_matrix(n, n, "a")?,
            b: c.b.to_matrix(n, nu, "b")?,
            d0: c.d0.to_matrix(n, n, "d0")?,
            d: c.d.to_matrix(n, n, "d")?,
            sigma: c.sigma.to_matrix(n, nw, "sigma")?,
            q: c.q.to_matrix(n, n, "q")?,
            r: c.r.to_matrix(nu, nu, "r")?,
            q_t: c.q_t.to_matrix(n, n, "q_t")?,
            gamma0: c.gamma0,
            gamma: c.gamma,
            eta: c.eta.to_vector(n, "eta")?,
            x0: c.x0.to_vector(n, "x0")?,
            horizon: c.horizon,
            graphon,
            vertices: VertexGrid::new(m)?,
            time: TimeGrid::new(c.horizon, k)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let nu = self.b.ncols();
        let checks = [
            (self.a.shape() == (n, n), "a"),
            (self.b.nrows() == n, "b"),
            (self.d0.shape() == (n, n), "d0"),
            (self.d.shape() == (n, n), "d"),
            (self.sigma.nrows() == n, "sigma"),
            (self.q.shape() == (n, n), "q"),
            (self.r.shape() == (nu, nu), "r"),
            (self.q_t.shape() == (n, n), "q_t"),
            (self.eta.len() == n, "eta"),
            (self.x0.len() == n, "x0"),
        ];
        if let Some((_, name)) = checks.iter().find(|c| !c.0) {
            return Err(Error::Shape(format!("{name} has inconsistent dimensions")));
        }
        let all = [&self.a, &self.b, &self.d0, &self.d, &self.sigma, &self.q, &self.r, &self.q_t];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite()))
            || !self.gamma0.is_finite()
            || !self.gamma.is_finite()
            || self.eta.iter().chain(self.x0.iter()).any(|x| !x.is_finite())
        {
            return Err(Error::Domain("LQ parameters must be finite".into()));
        }
        if (self.time.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(Error::Shape("time grid horizon differs from the LQ horizon".into()));
        }
        psd(&self.q, "q")?;
        psd(&self.q_t, "q_t")?;
        if !symmetric(&self.r) || self.r.clone().cholesky().is_none() {
            return Err(Error::Domain("r must be symmetric positive definite".into()));
        }
        self.graphon.validate()
    }
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).abs().max() <= 1e-12 * (1.0 + m.abs().max())
}

fn psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !symmetric(m) || m.clone().symmetric_eigenvalues().min() < -1e-10 {
        return Err(Error::Domain(format!("{name} must be symmetric positive semidefinite")));
    }
    Ok(())
}

/// `Pi` on the half-step grid `t = j dt / 2`, `j = 0..=2K`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiPath {
    fine: Vec<DMatrix<f64>>,
}

impl RiccatiPath {
    /// `Pi(t_k)`.
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.fine[2 * k]
    }

    /// `Pi(t_k + dt/2)`.
    pub fn half(&self, k: usize) -> &DMatrix<f64> {
        &self.fine[2 * k + 1]
    }

    pub fn nodes(&self) -> usize {
        self.fine.len() / 2 + 1
    }

    /// CSV with columns `time_index,row,col,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_index,row,col,value\n");
        for k in 0..self.nodes() {
            let p = self.at(k);
            for i in 0..p.nrows() {
                for j in 0..p.ncols() {
                    out.push_str(&format!("{k},{i},{j},{}\n", crate::io::fmt_f64(p[(i, j)])));
                }
            }
        }
        out
    }
}

fn control_gain(p: &LqParams) -> DMatrix<f64> {
    let r_inv = p.r.clone().try_inverse().expect("validated positive definite");
    &p.b * r_inv * p.b.transpose()
}

/// `0 = Pi' + A^T Pi + Pi A - Pi S Pi + Q`, `Pi(T) = Q_T`, by backward RK4
/// with step `dt / 2`, symmetrized after every step.
pub fn solve_riccati(p: &LqParams) -> Result<RiccatiPath> {
    let s = control_gain(p);
    let at = p.a.transpose();
    let rhs = |pi: &DMatrix<f64>| -> DMatrix<f64> { -(&at * pi + pi * &p.a - pi * &s * pi + &p.q) };
    let steps = 2 * p.time.steps();
    let h = -0.5 * p.time.dt();
    let mut fine = vec![DMatrix::zeros(p.n(), p.n()); steps + 1];
    fine[steps] = p.q_t.clone();
    for j in (0..steps).rev() {
        let y = &fine[j + 1];
        let k1 = rhs(y);
        let k2 = rhs(&(y + &k1 * (0.5 * h)));
        let k3 = rhs(&(y + &k2 * (0.5 * h)));
        let k4 = rhs(&(y + &k3 * h));
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|x| x.is_finite()) || next.norm() > 1e8 {
            return Err(Error::Numerical(format!("Riccati solution escapes at t = {}", j as f64 * p.time.dt() / 2.0)));
        }
        fine[j] = next;
    }
    Ok(RiccatiPath { fine })
}

/// `Phi(t_j, t_i)` for `i <= j` and `Psi(t_i, t_j)` for `i <= j`.
#[derive(Clone, Debug)]
pub struct Fundamental {
    nodes: usize,
    phi: Vec<DMatrix<f64>>,
    psi: Vec<DMatrix<f64>>,
}

#[inline]
fn tri(j: usize, i: usize) -> usize {
    j * (j + 1) / 2 + i
}

impl Fundamental {
    /// `Phi(t_j, t_i)`, `i <= j`.
    pub fn phi(&self, j: usize, i: usize) -> &DMatrix<f64> {
        assert!(i <= j && j < self.nodes);
        &self.phi[tri(j, i)]
    }

    /// `Psi(t_i, t_j)`, `i <= j`.
    pub fn psi(&self, i: usize, j: usize) -> &DMatrix<f64> {
        assert!(i <= j && j < self.nodes);
        &self.psi[tri(j, i)]
    }
}

/// Fundamental matrices of `x' = (A - S Pi + D0) x` (forward) and
/// `y' = -(A - S Pi)^T y` (backward), by RK4 one-step propagators chained
/// over the grid.
pub fn fundamental_matrices(p: &LqParams, pi: &RiccatiPath) -> Fundamental {
    let s = control_gain(p);
    let n = p.n();
    let nodes = p.time.nodes();
    let dt = p.time.dt();
    let f = |m: &DMatrix<f64>| &p.a - &s * m + &p.d0;
    let g = |m: &DMatrix<f64>| -(&p.a - &s * m).transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let step = |m0: DMatrix<f64>, mh: DMatrix<f64>, m1: DMatrix<f64>, h: f64| {
        let k1 = &m0 * &id;
        let k2 = &mh * (&id + &k1 * (0.5 * h));
        let k3 = &mh * (&id + &k2 * (0.5 * h));
        let k4 = &m1 * (&id + &k3 * h);
        &id + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };
    let fwd: Vec<DMatrix<f64>> =
        (0..nodes - 1).map(|k| step(f(pi.at(k)), f(pi.half(k)), f(pi.at(k + 1)), dt)).collect();
    let bwd: Vec<DMatrix<f64>> =
        (0..nodes - 1).map(|k| step(g(pi.at(k + 1)), g(pi.half(k)), g(pi.at(k)), -dt)).collect();
    let mut phi = Vec::with_capacity(nodes * (nodes + 1) / 2);
    let mut psi = vec![DMatrix::zeros(n, n); nodes * (nodes + 1) / 2];
    for j in 0..nodes {
        for i in 0..=j {
            phi.push(if i == j { id.clone() } else { &fwd[j - 1] * &phi[tri(j - 1, i)] });
        }
    }
    for j in 0..nodes {
        psi[tri(j, j)] = id.clone();
        for i in (0..j).rev() {
            psi[tri(j, i)] = &bwd[i] * &psi[tri(j, i + 1)];
        }
    }
    Fundamental { nodes, phi, psi }
}

/// Mean-field values `x(alpha_a, t_k)`, laid out `[vertex][time]`.
pub type PathValues = Vec<DVector<f64>>;

/// Everything the affine fixed-point map needs, computed once.
#[derive(Clone, Debug)]
pub struct LqOperators {
    pub riccati: RiccatiPath,
    pub fundamental: Fundamental,
    s: DMatrix<f64>,
    weights: Vec<Vec<f64>>,
    own: Vec<DMatrix<f64>>,
    cross: Vec<DMatrix<f64>>,
    c_g: f64,
}

impl LqOperators {
    pub fn new(p: &LqParams) -> Result<Self> {
        let riccati = solve_riccati(p)?;
        let fundamental = fundamental_matrices(p, &riccati);
        let s = control_gain(p);
        let m = p.vertices.len();
        let weights =
            (0..m).map(|a| p.graphon.section_weights(p.vertices.midpoint(a), &p.vertices)).collect::<Vec<_>>();
        let own = (0..p.time.nodes()).map(|k| &p.q * p.gamma0 - riccati.at(k) * &p.d0).collect();
        let cross = (0..p.time.nodes()).map(|k| &p.q * p.gamma - riccati.at(k) * &p.d).collect();
        let grid_degree = weights.iter().map(|w| w.iter().sum::<f64>()).fold(0.0, f64::max);
        let c_g = p.graphon.max_degree(1001).max(grid_degree);
        Ok(Self { riccati, fundamental, s, weights, own, cross, c_g })
    }

    /// `c_g = max_alpha int g(alpha, beta) dbeta`.
    pub fn c_g(&self) -> f64 {
        self.c_g
    }

    fn graph_mean(&self, x: &[DVector<f64>], nodes: usize, a: usize, k: usize) -> DVector<f64> {
        let mut out = DVector::zeros(x[0].len());
        for (b, w) in self.weights[a].iter().enumerate() {
            if *w != 0.0 {
                out.axpy(*w, &x[b * nodes + k], 1.0);
            }
        }
        out
    }

    /// `sum_b g(alpha_a, beta_b) / M * x(beta_b, t_k)` for every vertex and node.
    pub fn graph_means(&self, x: &[DVector<f64>], nodes: usize) -> PathValues {
        let m = self.weights.len();
        (0..m * nodes).map(|i| self.graph_mean(x, nodes, i / nodes, i % nodes)).collect()
    }
}

fn trapezoid(i: usize, lo: usize, hi: usize, dt: f64) -> f64 {
    if lo == hi {
        0.0
    } else if i == lo || i == hi {
        0.5 * dt
    } else {
        dt
    }
}

/// The linear operator `Lambda`, trapezoid in both time variables and
/// midpoint over vertices.
pub fn lambda_apply(p: &LqParams, ops: &LqOperators, x: &[DVector<f64>]) -> Result<PathValues> {
    let nodes = p.time.nodes();
    let m = p.vertices.len();
    if x.len() != m * nodes || x.iter().any(|v| v.len() != p.n()) {
        return Err(Error::Shape("mean-field path does not match the solver grids".into()));
    }
    let z = ops.graph_means(x, nodes);
    Ok(affine(p, ops, x, &z, None))
}

/// Shared kernel of `Lambda` and the forcing term. With `eta`, the tracked
/// signal is `eta` alone and the graphon drift term is dropped.
fn affine(
    p: &LqParams,
    ops: &LqOperators,
    x: &[DVector<f64>],
    z: &[DVector<f64>],
    eta: Option<&DVector<f64>>,
) -> PathValues {
    let nodes = p.time.nodes();
    let last = nodes - 1;
    let dt = p.time.dt();
    let fund = &ops.fundamental;
    let m = p.vertices.len();
    let rows: Vec<PathValues> = (0..m)
        .into_par_iter()
        .map(|a| {
            let at = |k: usize| a * nodes + k;
            let h: Vec<DVector<f64>> = (0..nodes)
                .map(|k| match eta {
                    Some(e) => &p.q * e,
                    None => &ops.own[k] * &x[at(k)] + &ops.cross[k] * &z[at(k)],
                })
                .collect();
            let terminal = match eta {
                Some(e) => &p.q_t * e,
                None => &p.q_t * (&x[at(last)] * p.gamma0 + &z[at(last)] * p.gamma),
            };
            let inner: Vec<DVector<f64>> = (0..nodes)
                .map(|i| {
                    let mut acc = fund.psi(i, last) * &terminal;
                    for (tau, ht) in h.iter().enumerate().skip(i) {
                        let w = trapezoid(tau, i, last, dt);
                        if w != 0.0 {
                            acc += fund.psi(i, tau) * ht * w;
                        }
                    }
                    let mut v = &ops.s * acc;
                    if eta.is_none() {
                        v += &p.d * &z[at(i)];
                    }
                    v
                })
                .collect();
            (0..nodes)
                .map(|j| {
                    let mut acc = DVector::zeros(p.n());
                    for (r, v) in inner.iter().enumerate().take(j + 1) {
                        let w = trapezoid(r, 0, j, dt);
                        if w != 0.0 {
                            acc += fund.phi(j, r) * v * w;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// `Phi(t, 0) x0 + int_0^t Phi S [int_r^T Psi Q dtau + Psi(r, T) Q_T] eta dr`.
pub fn forcing(p: &LqParams, ops: &LqOperators) -> PathValues {
    let nodes = p.time.nodes();
    let m = p.vertices.len();
    let zero = vec![DVector::zeros(p.n()); m * nodes];
    let mut out = affine(p, ops, &zero, &zero, Some(&p.eta));
    for a in 0..m {
        for k in 0..nodes {
            out[a * nodes + k] += ops.fundamental.phi(k, 0) * &p.x0;
        }
    }
    out
}

/// The operator-norm bound `c_Lambda` with Frobenius norms, evaluated with
/// the same quadrature as [`lambda_apply`].
pub fn lambda_norm_bound(p: &LqParams, ops: &LqOperators) -> f64 {
    let nodes = p.time.nodes();
    let last = nodes - 1;
    let dt = p.time.dt();
    let fund = &ops.fundamental;
    let c_g = ops.c_g;
    let mix: Vec<f64> = (0..nodes).map(|k| ops.own[k].norm() + c_g * ops.cross[k].norm()).collect();
    let ends = p.gamma0.abs() + c_g * p.gamma.abs();
    let s_psi: Vec<DMatrix<f64>> = (0..nodes * (nodes + 1) / 2).map(|_| DMatrix::zeros(0, 0)).collect();
    let mut s_psi = s_psi;
    for tau in 0..nodes {
        for r in 0..=tau {
            s_psi[tri(tau, r)] = &ops.s * fund.psi(r, tau);
        }
    }
    let qt_term: Vec<DMatrix<f64>> = (0..nodes).map(|r| &s_psi[tri(last, r)] * &p.q_t).collect();
    (0..nodes)
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            for r in 0..=j {
                let wr = trapezoid(r, 0, j, dt);
                if wr == 0.0 {
                    continue;
                }
                let phi = fund.phi(j, r);
                let mut inner = 0.0;
                for tau in r..nodes {
                    let w = trapezoid(tau, r, last, dt);
                    if w != 0.0 && mix[tau] != 0.0 {
                        inner += w * (phi * &s_psi[tri(tau, r)]).norm() * mix[tau];
                    }
                }
                total += wr * (inner + (phi * &qt_term[r]).norm() * ends + c_g * (phi * &p.d).norm());
            }
            total
        })
        .reduce(|| 0.0, f64::max)
}

fn sup_norm(x: &[DVector<f64>]) -> f64 {
    x.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn sup_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Initial iterate of the mean-field Picard loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LqInit {
    #[default]
    Forcing,
    /// Standard normal entries keyed by `seed`.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: LqInit,
}

impl Default for LqOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, init: LqInit::Forcing }
    }
}

/// Equilibrium of the LQ game on the solver grids.
#[derive(Clone, Debug)]
pub struct LqSolution {
    pub xbar: PathValues,
    pub s: PathValues,
    pub z: PathValues,
    pub c_lambda: f64,
    pub iterations: usize,
    /// `sup |x - Lambda x - forcing|` at exit.
    pub residual: f64,
    /// Sup-norm change per Picard iteration.
    pub trace: Vec<f64>,
    pub ops: LqOperators,
}

impl LqSolution {
    pub fn nodes(&self) -> usize {
        self.xbar.len() / self.weights_len()
    }

    fn weights_len(&self) -> usize {
        self.ops.weights.len()
    }

    pub fn xbar_at(&self, a: usize, k: usize) -> &DVector<f64> {
        &self.xbar[a * self.nodes() + k]
    }

    pub fn s_at(&self, a: usize, k: usize) -> &DVector<f64> {
        &self.s[a * self.nodes() + k]
    }

    /// Feedback `u = -R^-1 B^T (Pi(t_k) x + s_alpha(t_k))`.
    pub fn feedback(&self, p: &LqParams, a: usize, k: usize, x: &DVector<f64>) -> DVector<f64> {
        let r_inv = p.r.clone().try_inverse().expect("validated");
        -(r_inv * p.b.transpose()) * (self.ops.riccati.at(k) * x + self.s_at(a, k))
    }

    /// Worst observed contraction ratio of successive Picard changes.
    pub fn observed_ratio(&self) -> Option<f64> {
        self.trace
            .windows(2)
            .filter(|w| w[0] > 1e-13)
            .map(|w| w[1] / w[0])
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))))
    }

    /// CSV with columns `vertex_index,time_index,component,xbar,s`.
    pub fn meanfield_csv(&self) -> String {
        let nodes = self.nodes();
        let mut out = String::from("vertex_index,time_index,component,xbar,s\n");
        for (i, (x, s)) in self.xbar.iter().zip(&self.s).enumerate() {
            for c in 0..x.len() {
                out.push_str(&format!(
                    "{},{},{c},{},{}\n",
                    i / nodes,
                    i % nodes,
                    crate::io::fmt_f64(x[c]),
                    crate::io::fmt_f64(s[c])
                ));
            }
        }
        out
    }
}

/// Picard iteration `x <- Lambda x + forcing`, then the offsets `s_alpha`
/// by backward RK4.
pub fn solve_lq_fixed_point(p: &LqParams, opts: &LqOptions) -> Result<LqSolution> {
    let ops = LqOperators::new(p)?;
    let c_lambda = lambda_norm_bound(p, &ops);
    let f = forcing(p, &ops);
    let mut x = match opts.init {
        LqInit::Forcing => f.clone(),
        LqInit::Random { seed } => {
            let n = p.n();
            (0..f.len()).map(|i| DVector::from_vec(rng::normals(seed, rng::domain::LQ_MC, i as u64, 1, n))).collect()
        }
    };
    let mut trace = Vec::new();
    let mut norms = vec![sup_norm(&x)];
    let mut converged = false;
    for it in 1..=opts.max_iter {
        let lx = lambda_apply(p, &ops, &x)?;
        let next: PathValues = lx.iter().zip(&f).map(|(a, b)| a + b).collect();
        let change = sup_diff(&next, &x);
        trace.push(change);
        x = next;
        norms.push(sup_norm(&x));
        if !change.is_finite() || (it >= 10 && norms[it] > 2.0 * norms[it - 10] && norms[it] > 1e-300) {
            return Err(Error::Convergence {
                iterations: it,
                message: format!("mean-field iteration diverges (c_Lambda = {c_lambda})"),
                trace,
            });
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: trace.len(),
            message: format!("mean-field iteration did not reach {}", opts.tol),
            trace,
        });
    }
    let lx = lambda_apply(p, &ops, &x)?;
    let residual = x.iter().zip(&lx).zip(&f).map(|((x, l), f)| (x - l - f).norm()).fold(0.0, f64::max);
    let nodes = p.time.nodes();
    let z = ops.graph_means(&x, nodes);
    let s = offsets(p, &ops, &x, &z);
    Ok(LqSolution { xbar: x, s, z, c_lambda, iterations: trace.len(), residual, trace, ops })
}

/// Four-point interpolation at `t_k + dt/2`.
fn midpoint(v: &[DVector<f64>], k: usize) -> DVector<f64> {
    let n = v.len();
    if n < 4 {
        return (&v[k] + &v[k + 1]) * 0.5;
    }
    let (i0, c) = if k == 0 {
        (0, [5.0, 15.0, -5.0, 1.0])
    } else if k + 2 >= n {
        (n - 4, [1.0, -5.0, 15.0, 5.0])
    } else {
        (k - 1, [-1.0, 9.0, 9.0, -1.0])
    };
    (&v[i0] * c[0] + &v[i0 + 1] * c[1] + &v[i0 + 2] * c[2] + &v[i0 + 3] * c[3]) / 16.0
}

/// `s' = -(A - S Pi)^T s + (gamma0 Q - Pi D0) x + (gamma Q - Pi D) z + Q eta`,
/// `s(T) = -Q_T (gamma0 x(T) + gamma z(T) + eta)`.
fn offsets(p: &LqParams, ops: &LqOperators, x: &[DVector<f64>], z: &[DVector<f64>]) -> PathValues {
    let nodes = p.time.nodes();
    let last = nodes - 1;
    let dt = p.time.dt();
    let m = p.vertices.len();
    let pi = &ops.riccati;
    let rows: Vec<PathValues> = (0..m)
        .into_par_iter()
        .map(|a| {
            let xs = &x[a * nodes..(a + 1) * nodes];
            let zs = &z[a * nodes..(a + 1) * nodes];
            let rhs = |pim: &DMatrix<f64>, xv: &DVector<f64>, zv: &DVector<f64>, s: &DVector<f64>| {
                -(&p.a - &ops.s * pim).transpose() * s
                    + (&p.q * p.gamma0 - pim * &p.d0) * xv
                    + (&p.q * p.gamma - pim * &p.d) * zv
                    + &p.q * &p.eta
            };
            let mut s = vec![DVector::zeros(p.n()); nodes];
            s[last] = -(&p.q_t * (&xs[last] * p.gamma0 + &zs[last] * p.gamma + &p.eta));
            for k in (0..last).rev() {
                let (xm, zm) = (midpoint(xs, k), midpoint(zs, k));
                let h = -dt;
                let y = &s[k + 1];
                let k1 = rhs(pi.at(k + 1), &xs[k + 1], &zs[k + 1], y);
                let k2 = rhs(pi.half(k), &xm, &zm, &(y + &k1 * (0.5 * h)));
                let k3 = rhs(pi.half(k), &xm, &zm, &(y + &k2 * (0.5 * h)));
                let k4 = rhs(pi.at(k), &xs[k], &zs[k], &(y + &k3 * h));
                s[k] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            s
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// Monte-Carlo check of the mean path under the computed feedback.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LqConsistencyReport {
    pub replicas: usize,
    pub max_deviation: f64,
    /// Largest ratio of deviation to the node's CLT band.
    pub max_band_ratio: f64,
    pub within_band: bool,
}

/// Simulates every vertex's linear SDE under the equilibrium feedback with
/// the population terms frozen at the solution. The drift step is RK4 and
/// the noise additive, so the sample mean follows the mean ODE to RK4
/// accuracy. Band at node `k`: `4 sqrt(tr(Sigma Sigma^T) t_k / R)`.
pub fn lq_consistency_vs_simulation(
    p: &LqParams,
    sol: &LqSolution,
    replicas: usize,
    seed: u64,
) -> Result<LqConsistencyReport> {
    if replicas == 0 {
        return Err(Error::Domain("need at least one replica".into()));
    }
    let nodes = p.time.nodes();
    let dt = p.time.dt();
    let n = p.n();
    let nw = p.sigma.ncols();
    let r_inv = p.r.clone().try_inverse().expect("validated");
    let gain = &r_inv * p.b.transpose();
    let trace_ss = (&p.sigma * p.sigma.transpose()).trace();
    let m = p.vertices.len();
    let per_vertex: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|a| {
            let slice = |v: &PathValues| v[a * nodes..(a + 1) * nodes].to_vec();
            let (xs, zs, ss) = (slice(&sol.xbar), slice(&sol.z), slice(&sol.s));
            let drift =
                |pim: &DMatrix<f64>, xv: &DVector<f64>, zv: &DVector<f64>, sv: &DVector<f64>, y: &DVector<f64>| {
                    let u = -(&gain * (pim * y + sv));
                    &p.a * y + &p.d0 * xv + &p.d * zv + &p.b * u
                };
            // The RK4 step of the affine drift is itself affine: y -> M_k y + c_k.
            let pi = &sol.ops.riccati;
            let rk4 = |k: usize, y: &DVector<f64>| {
                let (xm, zm, sm) = (midpoint(&xs, k), midpoint(&zs, k), midpoint(&ss, k));
                let k1 = drift(pi.at(k), &xs[k], &zs[k], &ss[k], y);
                let k2 = drift(pi.half(k), &xm, &zm, &sm, &(y + &k1 * (0.5 * dt)));
                let k3 = drift(pi.half(k), &xm, &zm, &sm, &(y + &k2 * (0.5 * dt)));
                let k4 = drift(pi.at(k + 1), &xs[k + 1], &zs[k + 1], &ss[k + 1], &(y + &k3 * dt));
                y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            };
            let zero = DVector::zeros(n);
            let steps: Vec<(Vec<f64>, Vec<f64>)> = (0..nodes - 1)
                .map(|k| {
                    let c = rk4(k, &zero);
                    let mut mk = vec![0.0; n * n];
                    for j in 0..n {
                        let mut e = DVector::zeros(n);
                        e[j] = 1.0;
                        let col = rk4(k, &e) - &c;
                        for i in 0..n {
                            mk[i * n + j] = col[i];
                        }
                    }
                    (mk, c.iter().copied().collect())
                })
                .collect();
            let sig: Vec<f64> =
                (0..n).flat_map(|i| (0..nw).map(move |j| (i, j))).map(|(i, j)| p.sigma[(i, j)] * dt.sqrt()).collect();
            let mut sums = vec![0.0; nodes * n];
            let (mut y, mut next, mut w) = (vec![0.0; n], vec![0.0; n], vec![0.0; nw]);
            for r in 0..replicas {
                let mut g = rng::keyed(seed, rng::domain::LQ_MC, a as u64, r as u64);
                y.copy_from_slice(p.x0.as_slice());
                for (s, yi) in sums[..n].iter_mut().zip(&y) {
                    *s += yi;
                }
                for (k, (mk, ck)) in steps.iter().enumerate() {
                    for wi in w.iter_mut() {
                        *wi = rng::normal(&mut g);
                    }
                    for i in 0..n {
                        let mut v = ck[i];
                        for j in 0..n {
                            v += mk[i * n + j] * y[j];
                        }
                        for j in 0..nw {
                            v += sig[i * nw + j] * w[j];
                        }
                        next[i] = v;
                    }
                    std::mem::swap(&mut y, &mut next);
                    for (s, yi) in sums[(k + 1) * n..(k + 2) * n].iter_mut().zip(&y) {
                        *s += yi;
                    }
                }
            }
            let sums: Vec<DVector<f64>> = sums.chunks(n).map(DVector::from_column_slice).collect();
            let mut dev: f64 = 0.0;
            let mut ratio: f64 = 0.0;
            for k in 0..nodes {
                let d = (&sums[k] / replicas as f64 - &xs[k]).norm();
                let band = 4.0 * (trace_ss * p.time.t(k) / replicas as f64).sqrt() + 1e-8;
                dev = dev.max(d);
                ratio = ratio.max(d / band);
            }
            (dev, ratio)
        })
        .collect();
    let max_deviation = per_vertex.iter().map(|v| v.0).fold(0.0, f64::max);
    let max_band_ratio = per_vertex.iter().map(|v| v.1).fold(0.0, f64::max);
    Ok(LqConsistencyReport { replicas, max_deviation, max_band_ratio, within_band: max_band_ratio <= 1.0 })
}
