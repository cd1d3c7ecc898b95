//! Periodic fields on the unit torus `[0,1)^d`, `d` in {1, 2}.
//!
//! Storage is row-major with axis 0 slowest. Reductions go through
//! [`det_sum`] so that results do not depend on the thread count.

mod interp;
mod maximal;
mod snapshot;
mod spectral;

pub use interp::{interpolate, interpolate_at, Interp};
pub use maximal::{ball_offsets, maximal, radius_ladder};
pub use snapshot::{read_snapshot, snapshot_name, write_snapshot, SnapshotHeader};
pub use spectral::{
    curl, div, grad, gradient_matrix, laplacian, low_pass, mollifier_multiplier, mollify, poisson_solve,
};

use crate::error::{Error, Result};
use rayon::prelude::*;

/// A point of the torus; the second coordinate is ignored when `d = 1`.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
}

impl GridSpec {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::config("d", format!("dimension must be 1 or 2, got {d}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::config("n", format!("must be a power of two >= 8, got {n}")));
        }
        Ok(GridSpec { d, n })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Integer coordinates of a flat index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.d == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    pub fn flat(&self, i: usize, j: usize) -> usize {
        if self.d == 1 {
            i
        } else {
            i * self.n + j
        }
    }

    pub fn node(&self, idx: usize) -> Point {
        let [i, j] = self.multi_index(idx);
        let h = self.h();
        [i as f64 * h, j as f64 * h]
    }

    pub fn nodes(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed shortest displacement on the circle, in `[-1/2, 1/2)`.
#[inline]
pub fn periodic_delta(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - (d + 0.5).floor()
}

/// Torus distance between two points.
pub fn torus_distance(a: Point, b: Point, d: usize) -> f64 {
    let dx = periodic_delta(a[0], b[0]);
    if d == 1 {
        dx.abs()
    } else {
        let dy = periodic_delta(a[1], b[1]);
        (dx * dx + dy * dy).sqrt()
    }
}

const SUM_CHUNK: usize = 1024;

fn pairwise(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise(&xs[..mid]) + pairwise(&xs[mid..])
}

/// Sum with a fixed reduction tree: chunks of fixed size are reduced
/// pairwise, then the chunk partials are reduced pairwise.
pub fn det_sum(xs: &[f64]) -> f64 {
    if xs.len() <= SUM_CHUNK {
        return pairwise(xs);
    }
    let partials: Vec<f64> = xs.par_chunks(SUM_CHUNK).map(pairwise).collect();
    pairwise(&partials)
}

pub fn det_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    det_sum(xs) / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field contains non-finite values"));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Point) -> f64 + Sync) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|i| f(grid.node(i))).collect();
        ScalarField { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Average over the torus, which is the integral since `|T^d| = 1`.
    pub fn mean(&self) -> f64 {
        det_mean(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Removes tiny negative roundoff from fields that must be nonnegative.
    pub fn clamp_nonneg(&self) -> Result<Self> {
        if let Some(v) = self.values.iter().find(|&&v| v < -1e-14) {
            return Err(Error::domain(format!("nonnegative field has value {v}")));
        }
        Ok(self.map(|v| v.max(0.0)))
    }

    pub fn l1_distance(&self, other: &ScalarField) -> f64 {
        self.zip_map(other, |a, b| (a - b).abs()).mean()
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField {
            grid,
            components: (0..grid.d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_components(components: Vec<ScalarField>) -> Result<Self> {
        let grid = components
            .first()
            .ok_or_else(|| Error::domain("vector field needs components"))?
            .grid;
        if components.len() != grid.d || components.iter().any(|c| c.grid != grid) {
            return Err(Error::domain("component count or grid mismatch"));
        }
        Ok(VectorField { grid, components })
    }

    pub fn value(&self, idx: usize) -> Point {
        let mut v = [0.0; 2];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c.values[idx];
        }
        v
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let mut out = vec![0.0; self.grid.len()];
        for c in &self.components {
            for (o, v) in out.iter_mut().zip(&c.values) {
                *o += v * v;
            }
        }
        ScalarField {
            grid: self.grid,
            values: out.into_iter().map(f64::sqrt).collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    pub fn sup_distance(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .fold(0.0, |m, (a, b)| m.max(a.sup_distance(b)))
    }

    /// Mean over the torus of the Euclidean distance.
    pub fn l1_distance(&self, other: &VectorField) -> f64 {
        let n = self.grid.len();
        let v: Vec<f64> = (0..n)
            .map(|i| {
                let a = self.value(i);
                let b = other.value(i);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .collect();
        det_mean(&v)
    }

    /// `self + w (other - self)`.
    pub fn relax_toward(&self, other: &VectorField, w: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.zip_map(b, |x, y| x + w * (y - x)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kahan(xs: &[f64]) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for &x in xs {
            let y = x - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(3, 16).is_err());
        assert!(GridSpec::new(2, 12).is_err());
        assert!(GridSpec::new(1, 4).is_err());
        let g = GridSpec::new(2, 16).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.node(17), [1.0 / 16.0, 1.0 / 16.0]);
    }

    #[test]
    fn mean_examples() {
        let g = GridSpec::new(2, 16).unwrap();
        assert_eq!(ScalarField::constant(g, 2.5).mean(), 2.5);
        let s = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        assert!(s.mean().abs() < 1e-15);
    }

    #[test]
    fn det_sum_matches_compensated() {
        let xs: Vec<f64> = (0..100_000).map(|i| ((i as f64) * 0.7123).sin() * 1e3 + 1.0).collect();
        let a = det_sum(&xs);
        let b = kahan(&xs);
        assert!((a - b).abs() <= 1e-14 * b.abs());
    }

    #[test]
    fn wrap_and_delta() {
        assert_eq!(wrap(1.25), 0.25);
        assert_eq!(wrap(-0.25), 0.75);
        assert!(wrap(-1e-18) < 1.0);
        assert!((periodic_delta(0.95, 0.05) + 0.1).abs() < 1e-15);
        assert!((torus_distance([0.0, 0.0], [0.9, 0.9], 2) - (0.02f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clamp_nonneg_policy() {
        let g = GridSpec::new(1, 8).unwrap();
        let mut f = ScalarField::constant(g, 1.0);
        f.values[0] = -1e-16;
        assert_eq!(f.clamp_nonneg().unwrap().values[0], 0.0);
        f.values[0] = -1e-3;
        assert!(f.clamp_nonneg().is_err());
    }
}
