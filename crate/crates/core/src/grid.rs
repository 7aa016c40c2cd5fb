//! Discretization grids shared by every solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal partition of `[0, 1]` into `m` cells with midpoint representatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexGrid {
    m: usize,
}

impl VertexGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("vertex grid needs at least one cell".into()));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Midpoint `(i + 1/2) / m` of cell `i` (zero-based).
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.m as f64
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.midpoint(i)).collect()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Cell containing `alpha`; points on a boundary belong to the lower cell.
    pub fn cell_of(&self, alpha: f64) -> usize {
        cell_index(alpha, self.m)
    }
}

pub(crate) fn cell_index(x: f64, m: usize) -> usize {
    let c = (x * m as f64).ceil();
    if c <= 1.0 {
        0
    } else {
        (c as usize - 1).min(m - 1)
    }
}

/// Uniform time grid `t_k = k T / K`, `k = 0..=K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Domain("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }
}

/// Uniform spatial grid on `[x_min, x_max]` with `n` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Domain(format!("bad space interval [{x_min}, {x_max}]")));
        }
        if n < 3 {
            return Err(Error::Domain("space grid needs at least 3 nodes".into()));
        }
        Ok(Self { x_min, x_max, n })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Left node index and weight of the right node for linear interpolation;
    /// points outside the grid clamp to the boundary node.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.x_min) / self.dx();
        if s <= 0.0 {
            (0, 0.0)
        } else if s >= (self.n - 1) as f64 {
            (self.n - 2, 1.0)
        } else {
            let j = s.floor() as usize;
            (j, s - j as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_grid_midpoints_and_weights() {
        let g = VertexGrid::new(4).unwrap();
        assert_eq!(g.midpoints(), vec![0.125, 0.375, 0.625, 0.875]);
        assert!((g.weight() * g.len() as f64 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_ties_go_to_lower_cell() {
        let g = VertexGrid::new(2).unwrap();
        assert_eq!(g.cell_of(0.0), 0);
        assert_eq!(g.cell_of(0.5), 0);
        assert_eq!(g.cell_of(0.500001), 1);
        assert_eq!(g.cell_of(1.0), 1);
        let g = VertexGrid::new(4).unwrap();
        assert_eq!(g.cell_of(0.25), 0);
        assert_eq!(g.cell_of(0.75), 2);
    }

    #[test]
    fn locate_clamps() {
        let s = SpaceGrid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(s.locate(-3.0), (0, 0.0));
        assert_eq!(s.locate(3.0), (3, 1.0));
        let (j, w) = s.locate(0.25);
        assert_eq!(j, 2);
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(VertexGrid::new(0).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(SpaceGrid::new(1.0, 1.0, 10).is_err());
    }
}
