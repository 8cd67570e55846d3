//! Periodic samples on the uniform grid `x_i = i / n` of the unit torus.

use serde::{Deserialize, Serialize};
use std::ops::Index;

use crate::error::{Error, Result};

/// Reduces an integer index to `0..n`.
#[inline]
pub fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Distance between two points of the one-dimensional torus.
#[inline]
pub fn torus_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Signed representative of `a - b` in `[-1/2, 1/2)`.
#[inline]
pub fn torus_diff(a: f64, b: f64) -> f64 {
    let d = (a - b + 0.5).rem_euclid(1.0);
    d - 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "grid function needs at least one sample");
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::new(vec![c; n])
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self::new((0..n).map(|i| f(i as f64 / n as f64)).collect())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    /// Spatial dimension; all grids in this crate are one-dimensional.
    pub fn dim(&self) -> usize {
        1
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.n() as f64
    }

    /// Periodic access: `at(i) == at(i mod n)`.
    #[inline]
    pub fn at(&self, i: isize) -> f64 {
        self.values[wrap(i, self.n())]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic linear interpolation at an arbitrary point `t` of the torus.
    pub fn interpolate(&self, t: f64) -> f64 {
        let n = self.n();
        let (k, f) = grid_position(t, n);
        if f == 0.0 {
            self.values[k]
        } else {
            (1.0 - f) * self.values[k] + f * self.values[(k + 1) % n]
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn mean(&self) -> f64 {
        crate::numerics::kahan_sum(self.values.iter().copied()) / self.n() as f64
    }

    pub fn sup_dist(&self, other: &GridFunction) -> Result<f64> {
        self.check_same_size(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn check_same_size(&self, other: &GridFunction) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::GridMismatch {
                expected: self.n(),
                got: other.n(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::new(self.values.iter().map(|v| f(*v)).collect())
    }

    pub fn shifted(&self, c: f64) -> GridFunction {
        self.map(|v| v + c)
    }

    /// Pointwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        self.check_same_size(other)?;
        Ok(GridFunction::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(u, v)| a * u + b * v)
                .collect(),
        ))
    }

    /// Cyclic rotation: `result[i] = self[i + k]`.
    pub fn rotated(&self, k: isize) -> GridFunction {
        let n = self.n();
        GridFunction::new((0..n).map(|i| self.at(i as isize + k)).collect())
    }

    pub fn forward_diff(&self, i: usize) -> f64 {
        (self.at(i as isize + 1) - self.values[i]) * self.n() as f64
    }

    pub fn backward_diff(&self, i: usize) -> f64 {
        (self.values[i] - self.at(i as isize - 1)) * self.n() as f64
    }

    pub fn central_diff(&self, i: usize) -> f64 {
        0.5 * (self.at(i as isize + 1) - self.at(i as isize - 1)) * self.n() as f64
    }

    pub fn second_diff(&self, i: usize) -> f64 {
        let n = self.n() as f64;
        (self.at(i as isize + 1) - 2.0 * self.values[i] + self.at(i as isize - 1)) * n * n
    }

    /// Central first differences at every node.
    pub fn gradient(&self) -> GridFunction {
        GridFunction::new((0..self.n()).map(|i| self.central_diff(i)).collect())
    }

    /// Central second differences at every node.
    pub fn laplacian(&self) -> GridFunction {
        GridFunction::new((0..self.n()).map(|i| self.second_diff(i)).collect())
    }
}

impl Index<usize> for GridFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Cell index `k` and fraction `f in [0, 1)` of the point `t` on an `n`-point grid.
/// Fractions within 1e-9 of a node snap to it so on-grid displacements stay exact.
#[inline]
pub fn grid_position(t: f64, n: usize) -> (usize, f64) {
    let s = t.rem_euclid(1.0) * n as f64;
    let mut k = s.floor();
    let mut f = s - k;
    if f < 1e-9 {
        f = 0.0;
    } else if f > 1.0 - 1e-9 {
        f = 0.0;
        k += 1.0;
    }
    ((k as usize) % n, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_indexing() {
        let u = GridFunction::from_fn(8, |x| x);
        assert_eq!(u.at(-1), u[7]);
        assert_eq!(u.at(9), u[1]);
        assert_eq!(u.at(16), u[0]);
    }

    #[test]
    fn interpolation_hits_nodes_exactly() {
        let u = GridFunction::from_fn(10, |x| (2.0 * std::f64::consts::PI * x).sin());
        assert_eq!(u.interpolate(0.3), u[3]);
        assert_eq!(u.interpolate(1.3), u[3]);
        assert_eq!(u.interpolate(-0.7), u[3]);
        let mid = u.interpolate(0.35);
        assert!((mid - 0.5 * (u[3] + u[4])).abs() < 1e-15);
    }

    #[test]
    fn torus_distance_wraps() {
        assert!((torus_dist(0.95, 0.05) - 0.1).abs() < 1e-15);
        assert!((torus_diff(0.05, 0.95) - 0.1).abs() < 1e-15);
        assert!((torus_diff(0.95, 0.05) + 0.1).abs() < 1e-15);
    }
}
