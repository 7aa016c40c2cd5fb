//! One-dimensional probability measures, Wasserstein-1 distance, measure
//! ensembles indexed by (vertex, time) and particle path bundles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::io::fmt_f64;
use crate::rng;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
enum Weights {
    Uniform,
    Explicit(Vec<f64>),
}

/// Finitely supported probability measure on the real line.
///
/// Atoms are kept sorted; empirical measures store no weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Measure1D {
    atoms: Vec<f64>,
    weights: Weights,
}

impl Measure1D {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Invariant(format!(
                "measure needs matching non-empty atoms/weights ({} vs {})",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Invariant("measure atoms must be finite".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invariant("measure weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Invariant(format!("weights sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (atoms, weights) = pairs.into_iter().unzip();
        Ok(Self { atoms, weights: Weights::Explicit(weights) })
    }

    pub fn dirac(x: f64) -> Self {
        Self { atoms: vec![x], weights: Weights::Uniform }
    }

    /// Empirical measure with weight `1/n` on every sample.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empirical measure of an empty sample".into()));
        }
        if samples.iter().any(|a| !a.is_finite()) {
            return Err(Error::Invariant("samples must be finite".into()));
        }
        Ok(Self::from_samples_unchecked(samples.to_vec()))
    }

    pub(crate) fn from_samples_unchecked(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        Self { atoms: samples, weights: Weights::Uniform }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Weights::Uniform => 1.0 / self.atoms.len() as f64,
            Weights::Explicit(w) => w[i],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// `int phi dmu`.
    pub fn expect<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        match &self.weights {
            Weights::Uniform => self.atoms.iter().map(|&x| phi(x)).sum::<f64>() / self.atoms.len() as f64,
            Weights::Explicit(w) => self.atoms.iter().zip(w).map(|(&x, &p)| p * phi(x)).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    /// Every atom moved by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self { atoms: self.atoms.iter().map(|a| a + delta).collect(), weights: self.weights.clone() }
    }
}

/// Wasserstein-1 distance: the L1 distance between the two CDFs,
/// integrated exactly over the merged atom set.
pub fn w1(mu: &Measure1D, nu: &Measure1D) -> f64 {
    if matches!((&mu.weights, &nu.weights), (Weights::Uniform, Weights::Uniform)) && mu.len() == nu.len() {
        let n = mu.len() as f64;
        return mu.atoms.iter().zip(&nu.atoms).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    }
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut x_prev = f64::NAN;
    let mut total = 0.0;
    while i < mu.len() || j < nu.len() {
        let xa = mu.atoms.get(i).copied().unwrap_or(f64::INFINITY);
        let xb = nu.atoms.get(j).copied().unwrap_or(f64::INFINITY);
        let x = xa.min(xb);
        if x_prev.is_finite() {
            total += (fa - fb).abs() * (x - x_prev);
        }
        while i < mu.len() && mu.atoms[i] == x {
            fa += mu.weight(i);
            i += 1;
        }
        while j < nu.len() && nu.atoms[j] == x {
            fb += nu.weight(j);
            j += 1;
        }
        x_prev = x;
    }
    total
}

/// Common initial law of all agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Dirac { x: f64 },
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Atoms { atoms: Vec<f64>, weights: Vec<f64> },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Dirac { x } if x.is_finite() => Ok(()),
            InitialLaw::Normal { mean, std } if mean.is_finite() && *std >= 0.0 => Ok(()),
            InitialLaw::Uniform { low, high } if low < high => Ok(()),
            InitialLaw::Atoms { atoms, weights } => Measure1D::new(atoms.clone(), weights.clone()).map(|_| ()),
            other => Err(Error::Domain(format!("invalid initial law {other:?}"))),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InitialLaw::Dirac { x } => *x,
            InitialLaw::Normal { mean, std } => mean + std * rng::normal(rng),
            InitialLaw::Uniform { low, high } => rng.random_range(*low..*high),
            InitialLaw::Atoms { atoms, weights } => {
                let p: f64 = rng.random();
                let mut acc = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if p < acc {
                        return *a;
                    }
                }
                *atoms.last().expect("validated non-empty")
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Dirac { x } => *x,
            InitialLaw::Normal { mean, .. } => *mean,
            InitialLaw::Uniform { low, high } => 0.5 * (low + high),
            InitialLaw::Atoms { atoms, weights } => atoms.iter().zip(weights).map(|(a, w)| a * w).sum(),
        }
    }

    /// Interval holding essentially all initial mass (normal: 5 standard deviations).
    pub fn support(&self) -> (f64, f64) {
        match self {
            InitialLaw::Dirac { x } => (*x, *x),
            InitialLaw::Normal { mean, std } => (mean - 5.0 * std, mean + 5.0 * std),
            InitialLaw::Uniform { low, high } => (*low, *high),
            InitialLaw::Atoms { atoms, .. } => (
                atoms.iter().copied().fold(f64::INFINITY, f64::min),
                atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }
}

/// Measures indexed by (vertex, time node).
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureEnsemble {
    vertices: Vec<f64>,
    time: TimeGrid,
    entries: Vec<Measure1D>,
}

impl MeasureEnsemble {
    /// `entries` in vertex-major order, `time.nodes()` measures per vertex.
    pub fn new(vertices: Vec<f64>, time: TimeGrid, entries: Vec<Measure1D>) -> Result<Self> {
        if vertices.is_empty() || entries.len() != vertices.len() * time.nodes() {
            return Err(Error::Shape(format!(
                "ensemble needs {} x {} entries, got {}",
                vertices.len(),
                time.nodes(),
                entries.len()
            )));
        }
        Ok(Self { vertices, time, entries })
    }

    pub fn from_fn(vertices: Vec<f64>, time: TimeGrid, f: impl Fn(usize, usize) -> Measure1D) -> Self {
        let entries =
            (0..vertices.len()).flat_map(|v| (0..time.nodes()).map(move |k| (v, k))).map(|(v, k)| f(v, k)).collect();
        Self { vertices, time, entries }
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn get(&self, v: usize, k: usize) -> &Measure1D {
        &self.entries[v * self.time.nodes() + k]
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            vertices: self.vertices.clone(),
            time: self.time,
            entries: self.entries.iter().map(|m| m.shifted(delta)).collect(),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.vertices.len() != other.vertices.len() || self.time != other.time {
            return Err(Error::Shape("ensembles live on different grids".into()));
        }
        Ok(())
    }

    /// `sup_{v,t} W1` between corresponding entries.
    pub fn sup_w1(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.entries.iter().zip(&other.entries).map(|(a, b)| w1(a, b)).fold(0.0, f64::max))
    }

    /// CSV with columns `vertex_index,time_index,atom,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vertex_index,time_index,atom,weight\n");
        for v in 0..self.vertices.len() {
            for k in 0..self.time.nodes() {
                let m = self.get(v, k);
                for (i, a) in m.atoms().iter().enumerate() {
                    out.push_str(&format!("{v},{k},{},{}\n", fmt_f64(*a), fmt_f64(m.weight(i))));
                }
            }
        }
        out
    }
}

/// Particle trajectories per vertex, sampled on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    vertices: Vec<f64>,
    time: TimeGrid,
    replicas: usize,
    seed: u64,
    data: Vec<f64>,
}

/// Read-only view of the paths of one vertex.
#[derive(Clone, Copy, Debug)]
pub struct VertexPaths<'a> {
    replicas: usize,
    time: TimeGrid,
    data: &'a [f64],
}

impl<'a> VertexPaths<'a> {
    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn path(&self, r: usize) -> &'a [f64] {
        let n = self.time.nodes();
        &self.data[r * n..(r + 1) * n]
    }
}

impl PathBundle {
    /// `data` laid out as `[vertex][replica][time node]`.
    pub fn new(vertices: Vec<f64>, time: TimeGrid, replicas: usize, seed: u64, data: Vec<f64>) -> Result<Self> {
        if replicas == 0 || data.len() != vertices.len() * replicas * time.nodes() {
            return Err(Error::Shape("path data does not match bundle dimensions".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite particle state".into()));
        }
        Ok(Self { vertices, time, replicas, seed, data })
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vertex(&self, v: usize) -> VertexPaths<'_> {
        let block = self.replicas * self.time.nodes();
        VertexPaths { replicas: self.replicas, time: self.time, data: &self.data[v * block..(v + 1) * block] }
    }

    /// Particle values of vertex `v` at time node `k`.
    pub fn slice_at(&self, v: usize, k: usize) -> Vec<f64> {
        let paths = self.vertex(v);
        (0..self.replicas).map(|r| paths.path(r)[k]).collect()
    }

    /// CSV with columns `vertex_index,replica,time_index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vertex_index,replica,time_index,value\n");
        for v in 0..self.vertices.len() {
            let p = self.vertex(v);
            for r in 0..self.replicas {
                for (k, x) in p.path(r).iter().enumerate() {
                    out.push_str(&format!("{v},{r},{k},{}\n", fmt_f64(*x)));
                }
            }
        }
        out
    }
}

/// Synchronous-coupling estimate of the truncated path distance:
/// `(1/R) sum_r min(sup_t |X1_r(t) - X2_r(t)|, 1)`.
///
/// Both bundles must be driven by the same noise; the value is then an
/// upper bound on the infimum over couplings.
pub fn path_distance(a: VertexPaths<'_>, b: VertexPaths<'_>) -> Result<f64> {
    if a.replicas != b.replicas || a.time != b.time {
        return Err(Error::Shape("path bundles differ in replicas or time grid".into()));
    }
    let total: f64 = (0..a.replicas)
        .map(|r| {
            let sup = a.path(r).iter().zip(b.path(r)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            sup.min(1.0)
        })
        .sum();
    Ok(total / a.replicas as f64)
}

/// `sup_alpha D_T(m_alpha, mbar_alpha)` over the vertex cells.
pub fn ensemble_distance(a: &PathBundle, b: &PathBundle) -> Result<f64> {
    if a.vertices.len() != b.vertices.len() {
        return Err(Error::Shape("bundles have different vertex grids".into()));
    }
    (0..a.vertices.len())
        .map(|v| path_distance(a.vertex(v), b.vertex(v)))
        .try_fold(0.0, |acc, d| d.map(|d| f64::max(acc, d)))
}

/// `sup` over (vertex, time node) of the W1 distance between the particle
/// marginals of two bundles with equal replica counts.
pub fn sup_marginal_w1(a: &PathBundle, b: &PathBundle) -> Result<f64> {
    if a.vertices.len() != b.vertices.len() || a.time != b.time || a.replicas != b.replicas {
        return Err(Error::Shape("bundles differ in vertices, time grid or replicas".into()));
    }
    let mut best: f64 = 0.0;
    for v in 0..a.vertices.len() {
        for k in 0..a.time.nodes() {
            let mut x = a.slice_at(v, k);
            let mut y = b.slice_at(v, k);
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            let d = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64;
            best = best.max(d);
        }
    }
    Ok(best)
}

/// Time marginals of every vertex.
pub fn marginals(b: &PathBundle) -> MeasureEnsemble {
    MeasureEnsemble::from_fn(b.vertices.clone(), b.time, |v, k| Measure1D::from_samples_unchecked(b.slice_at(v, k)))
}

/// Test functions for the time-regularity diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFn {
    /// `clamp(x, -bound, bound)`.
    ClampedIdentity { bound: f64 },
    /// `sin(k x)`.
    Sin { k: f64 },
    /// Supremum over all 1-Lipschitz functions, i.e. the W1 distance.
    LipschitzDual,
}

impl TestFn {
    pub fn default_family() -> Vec<TestFn> {
        vec![
            TestFn::ClampedIdentity { bound: 1.0 },
            TestFn::Sin { k: 1.0 },
            TestFn::Sin { k: 2.0 },
            TestFn::Sin { k: 4.0 },
            TestFn::LipschitzDual,
        ]
    }

    fn lipschitz(&self) -> f64 {
        match self {
            TestFn::Sin { k } => k.abs().max(f64::MIN_POSITIVE),
            _ => 1.0,
        }
    }
}

/// Fitted `sup |E phi(t1) - E phi(t2)| <= C |t1 - t2|^eta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HolderFit {
    pub c_h: f64,
    pub eta: f64,
}

/// Least-squares fit of log increments against log time lag.
///
/// For each dyadic lag the increment is the largest `|E phi|` change over
/// vertices, start times and test functions (normalized by the Lipschitz
/// constant of `phi`). All-zero increments give `(0, 1)`.
pub fn holder_modulus(e: &MeasureEnsemble, family: &[TestFn]) -> Result<HolderFit> {
    let nodes = e.time.nodes();
    if nodes < 3 {
        return Err(Error::Domain("Hölder fit needs at least 3 time points".into()));
    }
    let nv = e.vertices.len();
    let means: Vec<Option<Vec<f64>>> = family
        .iter()
        .map(|phi| {
            let f: Option<Box<dyn Fn(f64) -> f64>> = match *phi {
                TestFn::ClampedIdentity { bound } => Some(Box::new(move |x: f64| x.clamp(-bound, bound))),
                TestFn::Sin { k } => Some(Box::new(move |x: f64| (k * x).sin())),
                TestFn::LipschitzDual => None,
            };
            f.map(|f| e.entries.iter().map(|m| m.expect(&f)).collect())
        })
        .collect();
    let mut points = Vec::new();
    let mut lag = 1;
    while lag < nodes {
        let mut inc: f64 = 0.0;
        for (phi, m) in family.iter().zip(&means) {
            let scale = 1.0 / phi.lipschitz();
            for v in 0..nv {
                for k in 0..nodes - lag {
                    let d = match m {
                        Some(m) => (m[v * nodes + k + lag] - m[v * nodes + k]).abs(),
                        None => w1(e.get(v, k + lag), e.get(v, k)),
                    };
                    inc = inc.max(d * scale);
                }
            }
        }
        if inc > 0.0 {
            points.push(((lag as f64 * e.time.dt()).ln(), inc.ln()));
        }
        lag *= 2;
    }
    if points.len() < 2 {
        return Ok(HolderFit { c_h: 0.0, eta: 1.0 });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let eta = sxy / sxx;
    Ok(HolderFit { c_h: (my - eta * mx).exp(), eta })
}

/// Largest W1 between neighbouring (vertex, time) entries.
pub fn w1_joint_continuity_scan(e: &MeasureEnsemble) -> f64 {
    let nodes = e.time.nodes();
    let nv = e.vertices.len();
    let mut worst: f64 = 0.0;
    for v in 0..nv {
        for k in 0..nodes {
            if k + 1 < nodes {
                worst = worst.max(w1(e.get(v, k), e.get(v, k + 1)));
            }
            if v + 1 < nv {
                worst = worst.max(w1(e.get(v, k), e.get(v + 1, k)));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normal_quantile_measure(n: usize) -> Measure1D {
        // midpoint quantiles of N(0,1) via statrs-free inverse erf approximation
        let q: Vec<f64> = (0..n).map(|i| crate::testutil::normal_quantile((i as f64 + 0.5) / n as f64)).collect();
        Measure1D::from_samples_unchecked(q)
    }

    #[test]
    fn w1_examples() {
        let mu = Measure1D::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(w1(&mu, &mu), 0.0);
        assert_eq!(w1(&Measure1D::dirac(2.0), &Measure1D::dirac(-1.5)), 3.5);
        let nu = Measure1D::new(vec![0.5], vec![1.0]).unwrap();
        assert!((w1(&mu, &nu) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_measures_rejected() {
        assert!(Measure1D::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(Measure1D::new(vec![0.0], vec![1.0, 0.0]).is_err());
        assert!(Measure1D::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(Measure1D::empirical(&[]).is_err());
    }

    #[test]
    fn empirical_examples() {
        let m = Measure1D::empirical(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(w1(&m, &Measure1D::dirac(1.0)), 0.0);
        assert_eq!(Measure1D::empirical(&[0.0, 2.0]).unwrap().mean(), 1.0);
        let xs = rng::normals(5, rng::domain::PROBE, 0, 0, 10_000);
        let emp = Measure1D::empirical(&xs).unwrap();
        assert!(w1(&emp, &normal_quantile_measure(4000)) < 0.05);
    }

    #[test]
    fn path_distance_examples() {
        let time = TimeGrid::new(1.0, 4).unwrap();
        let base: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = PathBundle::new(vec![0.25, 0.75], time, 3, 0, base.clone()).unwrap();
        assert_eq!(path_distance(b.vertex(0), b.vertex(0)).unwrap(), 0.0);
        let shift = |c: f64, only: Option<usize>| {
            let data = base
                .iter()
                .enumerate()
                .map(|(i, x)| if only.is_none_or(|v| i / 15 == v) { x + c } else { *x })
                .collect();
            PathBundle::new(vec![0.25, 0.75], time, 3, 0, data).unwrap()
        };
        let s = shift(0.4, None);
        assert!((path_distance(b.vertex(1), s.vertex(1)).unwrap() - 0.4).abs() < 1e-12);
        let far = shift(5.0, None);
        assert_eq!(path_distance(b.vertex(0), far.vertex(0)).unwrap(), 1.0);
        assert_eq!(ensemble_distance(&b, &b).unwrap(), 0.0);
        let one = shift(0.3, Some(1));
        assert!((ensemble_distance(&b, &one).unwrap() - 0.3).abs() < 1e-12);
        let other = PathBundle::new(vec![0.5], time, 2, 0, vec![0.0; 10]).unwrap();
        assert!(path_distance(b.vertex(0), other.vertex(0)).is_err());
    }

    #[test]
    fn marginals_examples() {
        let time = TimeGrid::new(1.0, 4).unwrap();
        let zeros = PathBundle::new(vec![0.5], time, 3, 0, vec![0.0; 15]).unwrap();
        let e = marginals(&zeros);
        for k in 0..5 {
            assert_eq!(w1(e.get(0, k), &Measure1D::dirac(0.0)), 0.0);
        }
        let drift: Vec<f64> = (0..3).flat_map(|_| (0..5).map(|k| time.t(k))).collect();
        let e = marginals(&PathBundle::new(vec![0.5], time, 3, 0, drift).unwrap());
        for k in 0..5 {
            assert!(w1(e.get(0, k), &Measure1D::dirac(time.t(k))) < 1e-15);
        }
    }

    fn brownian_bundle(r: usize, k: usize) -> PathBundle {
        let time = TimeGrid::new(1.0, k).unwrap();
        let sq = time.dt().sqrt();
        let mut data = Vec::with_capacity(r * (k + 1));
        for rep in 0..r {
            let z = rng::normals(9, rng::domain::PROBE, 0, rep as u64, k);
            let mut x = 0.0;
            data.push(x);
            for dz in z {
                x += sq * dz;
                data.push(x);
            }
        }
        PathBundle::new(vec![0.5], time, r, 9, data).unwrap()
    }

    #[test]
    fn brownian_marginal_matches_gaussian() {
        let e = marginals(&brownian_bundle(10_000, 16));
        assert!(w1(e.get(0, 16), &normal_quantile_measure(4000)) < 0.05);
    }

    #[test]
    fn holder_examples() {
        let time = TimeGrid::new(1.0, 16).unwrap();
        let flat = MeasureEnsemble::from_fn(vec![0.5], time, |_, _| Measure1D::dirac(0.3));
        assert_eq!(holder_modulus(&flat, &TestFn::default_family()).unwrap(), HolderFit { c_h: 0.0, eta: 1.0 });
        let lin = MeasureEnsemble::from_fn(vec![0.5], time, |_, k| Measure1D::dirac(time.t(k)));
        let fit = holder_modulus(&lin, &TestFn::default_family()).unwrap();
        assert!((fit.eta - 1.0).abs() < 1e-9, "{fit:?}");
        let bm = marginals(&brownian_bundle(10_000, 64));
        let fit = holder_modulus(&bm, &TestFn::default_family()).unwrap();
        assert!((fit.eta - 0.5).abs() < 0.15, "{fit:?}");
        // E|B_h| = sqrt(2h/pi)
        assert!((fit.c_h - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn continuity_scan_examples() {
        let time = TimeGrid::new(1.0, 3).unwrap();
        let flat = MeasureEnsemble::from_fn(vec![0.25, 0.75], time, |_, _| Measure1D::dirac(2.0));
        assert_eq!(w1_joint_continuity_scan(&flat), 0.0);
        let jump = MeasureEnsemble::from_fn(vec![0.25, 0.75], time, |v, _| Measure1D::dirac(v as f64));
        assert_eq!(w1_joint_continuity_scan(&jump), 1.0);
    }

    fn measure_strategy() -> impl Strategy<Value = Measure1D> {
        proptest::collection::vec((-5.0f64..5.0, 0.01f64..1.0), 1..=6).prop_map(|pairs| {
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let (a, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().map(|(a, w)| (a, w / total)).unzip();
            let mut w = w;
            let s: f64 = w.iter().sum();
            w[0] += 1.0 - s;
            Measure1D::new(a, w).unwrap()
        })
    }

    proptest! {
        #[test]
        fn w1_is_a_metric(a in measure_strategy(), b in measure_strategy(), c in measure_strategy()) {
            let ab = w1(&a, &b);
            prop_assert_eq!(ab, w1(&b, &a));
            prop_assert!(ab >= 0.0);
            prop_assert!(w1(&a, &c) <= ab + w1(&b, &c) + 1e-12);
            prop_assert!(w1(&a, &a) == 0.0);
        }

        #[test]
        fn w1_of_shift_is_shift(a in measure_strategy(), d in -3.0f64..3.0) {
            prop_assert!((w1(&a, &a.shifted(d)) - d.abs()).abs() < 1e-12);
        }
    }
}
