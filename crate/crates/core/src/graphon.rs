//! Graphons, finite-graph step graphons and convergence diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_index, VertexGrid};
use crate::rng;

/// A symmetric kernel `g: [0,1]^2 -> [0,1]`.
///
/// Analytic kernels are evaluated pointwise; `Step` is the graphon of a
/// finite weighted graph on the equal partition of `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Graphon {
    Constant {
        c: f64,
    },
    /// `1 - max(alpha, beta)`.
    UniformAttachment,
    /// `p(alpha) p(beta)` with `p(s) = sum_k coeffs[k] s^k`.
    Product {
        coeffs: Vec<f64>,
    },
    /// Values on the uniform node lattice `(i/(n-1), j/(n-1))`, bilinear in between.
    Table {
        grid: Vec<Vec<f64>>,
    },
    /// Constant on each cell `I_i x I_j` of the equal `M x M` partition.
    Step {
        matrix: Vec<Vec<f64>>,
    },
}

impl Graphon {
    pub fn constant(c: f64) -> Self {
        Graphon::Constant { c }
    }

    pub fn uniform_attachment() -> Self {
        Graphon::UniformAttachment
    }

    pub fn step(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let g = Graphon::Step { matrix };
        g.validate()?;
        Ok(g)
    }

    /// Checks shape, symmetry and the `[0,1]` range.
    pub fn validate(&self) -> Result<()> {
        match self {
            Graphon::Constant { c } => check_unit(*c, "constant graphon value"),
            Graphon::UniformAttachment => Ok(()),
            Graphon::Product { coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::Domain("product graphon needs coefficients".into()));
                }
                for i in 0..=1000 {
                    check_unit(poly(coeffs, i as f64 / 1000.0), "product graphon profile")?;
                }
                Ok(())
            }
            Graphon::Table { grid } | Graphon::Step { matrix: grid } => {
                let n = grid.len();
                let min = if matches!(self, Graphon::Table { .. }) { 2 } else { 1 };
                if n < min || grid.iter().any(|row| row.len() != n) {
                    return Err(Error::Shape(format!("graphon matrix must be square with at least {min} rows")));
                }
                for i in 0..n {
                    for j in 0..n {
                        check_unit(grid[i][j], "graphon entry")?;
                        if (grid[i][j] - grid[j][i]).abs() > 1e-12 {
                            return Err(Error::Invariant(format!("graphon matrix not symmetric at ({i},{j})")));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// `g(alpha, beta)`; coordinates outside `[0,1]` are a domain error.
    pub fn evaluate(&self, alpha: f64, beta: f64) -> Result<f64> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} outside [0,1]")));
            }
        }
        Ok(self.value(alpha, beta))
    }

    /// Unchecked evaluation for callers that already hold in-range coordinates.
    #[inline]
    pub fn value(&self, alpha: f64, beta: f64) -> f64 {
        match self {
            Graphon::Constant { c } => *c,
            Graphon::UniformAttachment => 1.0 - alpha.max(beta),
            Graphon::Product { coeffs } => poly(coeffs, alpha) * poly(coeffs, beta),
            Graphon::Table { grid } => bilinear(grid, alpha, beta),
            Graphon::Step { matrix } => {
                let m = matrix.len();
                matrix[cell_index(alpha, m)][cell_index(beta, m)]
            }
        }
    }

    /// Resolution of a step graphon.
    pub fn step_size(&self) -> Option<usize> {
        match self {
            Graphon::Step { matrix } => Some(matrix.len()),
            _ => None,
        }
    }

    /// Midpoint-rule quadrature of `int_0^1 g(alpha, beta) h(beta) dbeta` on `grid`.
    pub fn section_integral<H: Fn(f64) -> f64>(&self, alpha: f64, h: H, grid: &VertexGrid) -> f64 {
        let w = grid.weight();
        (0..grid.len())
            .map(|j| {
                let b = grid.midpoint(j);
                self.value(alpha, b) * h(b)
            })
            .sum::<f64>()
            * w
    }

    /// Quadrature weights `g(alpha, beta_j) / M` for the section at `alpha`.
    pub fn section_weights(&self, alpha: f64, grid: &VertexGrid) -> Vec<f64> {
        let w = grid.weight();
        (0..grid.len()).map(|j| self.value(alpha, grid.midpoint(j)) * w).collect()
    }

    /// `c_g = max_alpha int_0^1 g(alpha, beta) dbeta`, maximized over `samples`
    /// equally spaced alphas (including both ends) with a fine inner rule.
    pub fn max_degree(&self, samples: usize) -> f64 {
        let inner = VertexGrid::new(4096).expect("nonzero");
        (0..samples.max(2))
            .map(|i| {
                let a = i as f64 / (samples.max(2) - 1) as f64;
                self.section_integral(a, |_| 1.0, &inner)
            })
            .fold(0.0, f64::max)
    }

    /// Symmetric `m x m` weight matrix of midpoint evaluations.
    pub fn sample_matrix(&self, m: usize) -> Vec<Vec<f64>> {
        let grid = VertexGrid::new(m.max(1)).expect("nonzero");
        (0..grid.len())
            .map(|i| {
                (0..grid.len())
                    .map(|j| {
                        // evaluate the upper triangle only so symmetry is exact
                        let (a, b) = if i <= j { (i, j) } else { (j, i) };
                        self.value(grid.midpoint(a), grid.midpoint(b))
                    })
                    .collect()
            })
            .collect()
    }
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{what} {v} outside [0,1]")));
    }
    Ok(())
}

fn poly(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

fn bilinear(grid: &[Vec<f64>], a: f64, b: f64) -> f64 {
    let n = grid.len();
    let h = (n - 1) as f64;
    let (sa, sb) = (a * h, b * h);
    let i = (sa.floor() as usize).min(n - 2);
    let j = (sb.floor() as usize).min(n - 2);
    let (ta, tb) = (sa - i as f64, sb - j as f64);
    grid[i][j] * (1.0 - ta) * (1.0 - tb)
        + grid[i + 1][j] * ta * (1.0 - tb)
        + grid[i][j + 1] * (1.0 - ta) * tb
        + grid[i + 1][j + 1] * ta * tb
}

/// Step graphon with entry `(i,j) = g(I_i*, I_j*)`.
pub fn sample_step_graphon(g: &Graphon, m: usize) -> Result<Graphon> {
    VertexGrid::new(m)?;
    Ok(Graphon::Step { matrix: g.sample_matrix(m) })
}

/// Sectional deviation between a finite-graph step graphon and a limit:
/// `max_i sum_j | gk_ij / M - int_{I_j} g(I_i*, beta) dbeta |`, with the
/// inner integrals taken by a `refine`-point midpoint rule per cell.
pub fn h11_deviation(gk: &Graphon, g: &Graphon, refine: usize) -> Result<f64> {
    let Graphon::Step { matrix } = gk else {
        return Err(Error::Domain("h11_deviation expects a step graphon".into()));
    };
    if refine == 0 {
        return Err(Error::Domain("refinement factor must be positive".into()));
    }
    let m = matrix.len();
    let grid = VertexGrid::new(m)?;
    let sub = 1.0 / (m * refine) as f64;
    let mut worst: f64 = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        let a = grid.midpoint(i);
        let mut s = 0.0;
        for (j, &gij) in row.iter().enumerate() {
            let cell: f64 =
                (0..refine).map(|r| g.value(a, (j * refine + r) as f64 * sub + 0.5 * sub)).sum::<f64>() * sub;
            s += (gij / m as f64 - cell).abs();
        }
        worst = worst.max(s);
    }
    Ok(worst)
}

/// Signed step kernel on the equal `M x M` partition, e.g. a graphon difference.
#[derive(Clone, Debug, PartialEq)]
pub struct StepKernel {
    m: usize,
    values: Vec<f64>,
}

impl StepKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("step kernel must be a non-empty square matrix".into()));
        }
        Ok(Self { m, values: rows.into_iter().flatten().collect() })
    }

    /// `a - b` for two step graphons of equal resolution.
    pub fn difference(a: &Graphon, b: &Graphon) -> Result<Self> {
        match (a, b) {
            (Graphon::Step { matrix: x }, Graphon::Step { matrix: y }) if x.len() == y.len() => {
                Self::new(x.iter().zip(y).map(|(rx, ry)| rx.iter().zip(ry).map(|(p, q)| p - q).collect()).collect())
            }
            _ => Err(Error::Shape("difference needs two step graphons of equal size".into())),
        }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    /// `int int |W|`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / (self.m * self.m) as f64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CutNormOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Largest accepted kernel size.
    pub limit: usize,
    /// Sizes up to this are enumerated exactly.
    pub exact_up_to: usize,
}

impl Default for CutNormOptions {
    fn default() -> Self {
        Self { restarts: 32, seed: 0, limit: 512, exact_up_to: 16 }
    }
}

/// Lower bound on the cut norm `sup_{S,T} |int_{S x T} W|` restricted to
/// unions of grid cells. Exact for `M <= exact_up_to`, alternating
/// row/column maximization with random restarts above.
pub fn cut_norm_grid_bound(w: &StepKernel, opts: &CutNormOptions) -> Result<f64> {
    let m = w.size();
    if m > opts.limit {
        return Err(Error::Size(format!("cut norm search on {m} cells exceeds the limit of {}", opts.limit)));
    }
    let best = if m <= opts.exact_up_to { exact_cut(w) } else { heuristic_cut(w, opts) };
    Ok(best / (m * m) as f64)
}

/// Cut-norm lower bound of `gk - g`, with `gk` refined and `g` sampled at
/// cell midpoints on `fine` cells (a multiple of the size of `gk`).
pub fn cut_distance_to_limit(gk: &Graphon, g: &Graphon, fine: usize, opts: &CutNormOptions) -> Result<f64> {
    let Graphon::Step { matrix } = gk else {
        return Err(Error::Domain("cut_distance_to_limit expects a step graphon".into()));
    };
    let m = matrix.len();
    if fine == 0 || !fine.is_multiple_of(m) {
        return Err(Error::Shape(format!("fine resolution {fine} is not a multiple of {m}")));
    }
    let r = fine / m;
    let limit = g.sample_matrix(fine);
    let rows = (0..fine).map(|i| (0..fine).map(|j| matrix[i / r][j / r] - limit[i][j]).collect()).collect();
    cut_norm_grid_bound(&StepKernel::new(rows)?, opts)
}

// Gray-code walk over row subsets; the optimal column set for given rows
// takes every column of one sign.
fn exact_cut(w: &StepKernel) -> f64 {
    let m = w.size();
    let mut col = vec![0.0; m];
    let mut in_set = vec![false; m];
    let mut best: f64 = 0.0;
    for step in 1u64..(1u64 << m) {
        let flip = step.trailing_zeros() as usize;
        let sign = if in_set[flip] { -1.0 } else { 1.0 };
        in_set[flip] = !in_set[flip];
        for (j, c) in col.iter_mut().enumerate() {
            *c += sign * w.get(flip, j);
        }
        best = best.max(best_side(&col));
    }
    best
}

fn best_side(sums: &[f64]) -> f64 {
    let (mut pos, mut neg) = (0.0, 0.0);
    for &c in sums {
        if c > 0.0 {
            pos += c;
        } else {
            neg -= c;
        }
    }
    f64::max(pos, neg)
}

fn heuristic_cut(w: &StepKernel, opts: &CutNormOptions) -> f64 {
    let m = w.size();
    let run = |restart: usize| -> f64 {
        let mut rng = rng::keyed(opts.seed, rng::domain::PROBE, restart as u64, m as u64);
        let mut best: f64 = 0.0;
        for sign in [1.0, -1.0] {
            let mut rows: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
            let mut value = f64::NEG_INFINITY;
            for _ in 0..100 {
                let cols = pick(m, |j| (0..m).filter(|&i| rows[i]).map(|i| sign * w.get(i, j)).sum());
                rows = pick(m, |i| (0..m).filter(|&j| cols[j]).map(|j| sign * w.get(i, j)).sum());
                let v: f64 = (0..m)
                    .filter(|&i| rows[i])
                    .map(|i| (0..m).filter(|&j| cols[j]).map(|j| sign * w.get(i, j)).sum::<f64>())
                    .sum();
                if v <= value + 1e-15 {
                    break;
                }
                value = v;
            }
            best = best.max(value);
        }
        best
    };
    (0..opts.restarts.max(1)).map(run).fold(0.0, f64::max)
}

fn pick(m: usize, gain: impl Fn(usize) -> f64) -> Vec<bool> {
    (0..m).map(|k| gain(k) > 0.0).collect()
}

/// CSV rendering of a step matrix, one row per line.
pub fn step_matrix_csv(g: &Graphon) -> Result<String> {
    let Graphon::Step { matrix } = g else {
        return Err(Error::Domain("only step graphons export as CSV".into()));
    };
    let header: Vec<String> = (0..matrix.len()).map(|j| format!("c{j}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|v| crate::io::fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
