//! Truncation `H̃ = max{H, |p|² - k}`, velocity sets and the Fenchel Lagrangian.

use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::numerics::golden_max;

/// `H̃(x, p) = max{H(x, p), |p|² - k}`, equal to `H` on `|p| <= kappa`.
#[derive(Clone)]
pub struct TruncatedHamiltonian {
    base: Arc<dyn Hamiltonian>,
    level: f64,
    kappa: f64,
}

impl std::fmt::Debug for TruncatedHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruncatedHamiltonian")
            .field("level", &self.level)
            .field("kappa", &self.kappa)
            .finish_non_exhaustive()
    }
}

impl TruncatedHamiltonian {
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn base(&self) -> &Arc<dyn Hamiltonian> {
        &self.base
    }

    /// True when the quadratic branch is strictly above `H` at `(x, p)`.
    pub fn quadratic_branch_active(&self, x: f64, p: f64) -> bool {
        p * p - self.level > self.base.value(x, p)
    }
}

impl Hamiltonian for TruncatedHamiltonian {
    fn value(&self, x: f64, p: f64) -> f64 {
        self.base.value(x, p).max(p * p - self.level)
    }

    fn dp(&self, x: f64, p: f64) -> f64 {
        if self.quadratic_branch_active(x, p) {
            2.0 * p
        } else {
            self.base.dp(x, p)
        }
    }
}

const X_SAMPLES: usize = 256;
const P_SAMPLES: usize = 401;

fn sample_xs() -> impl Iterator<Item = f64> {
    (0..X_SAMPLES).map(|i| i as f64 / X_SAMPLES as f64)
}

fn sample_ps(radius: f64) -> impl Iterator<Item = f64> {
    (0..P_SAMPLES).map(move |i| -radius + 2.0 * radius * i as f64 / (P_SAMPLES - 1) as f64)
}

/// Truncation level `k = ⌈κ² + max_{|p|<=κ} |H|⌉ + 1`, with the max sampled.
pub fn truncate_h(base: Arc<dyn Hamiltonian>, kappa: f64) -> Result<TruncatedHamiltonian> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let max_abs = sample_xs()
        .flat_map(|x| sample_ps(kappa).map(move |p| (x, p)))
        .map(|(x, p)| base.value(x, p).abs())
        .fold(0.0, f64::max);
    let level = (kappa * kappa + max_abs).ceil() + 1.0;
    Ok(TruncatedHamiltonian { base, level, kappa })
}

/// Uniform symmetric velocity grid `Q` on `[-xi_max, xi_max]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VelocitySet {
    pub xi: Vec<f64>,
    pub xi_max: f64,
    pub spacing: f64,
    /// Largest sampled `|∂_p H|` before the 10% inflation.
    pub sampled_max_slope: f64,
}

impl VelocitySet {
    pub fn uniform(xi_max: f64, n_q: usize) -> Result<Self> {
        if n_q < 3 || n_q.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "n_Q must be odd and at least 3, got {n_q}"
            )));
        }
        if !(xi_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "xi_max must be positive, got {xi_max}"
            )));
        }
        let spacing = 2.0 * xi_max / (n_q - 1) as f64;
        let half = (n_q / 2) as isize;
        let xi = (-half..=half).map(|k| k as f64 * spacing).collect();
        Ok(VelocitySet {
            xi,
            xi_max,
            spacing,
            sampled_max_slope: xi_max,
        })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Index of the velocity closest to zero.
    pub fn zero_index(&self) -> usize {
        self.xi.len() / 2
    }
}

/// `Q` spanning the sampled slopes of `H̃` over `|p| <= kappa`, inflated by 10%
/// with a floor of `0.1`.
pub fn select_q(h: &dyn Hamiltonian, kappa: f64, n_q: usize) -> Result<VelocitySet> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let slope = sample_xs()
        .flat_map(|x| sample_ps(kappa).map(move |p| (x, p)))
        .map(|(x, p)| {
            let step = 1e-4 * (1.0 + p.abs());
            ((h.value(x, p + step) - h.value(x, p - step)) / (2.0 * step)).abs()
        })
        .fold(0.0, f64::max);
    let mut q = VelocitySet::uniform((1.1 * slope).max(0.1), n_q)?;
    q.sampled_max_slope = slope;
    Ok(q)
}

/// Momentum grid used by the Fenchel transform.
#[derive(Clone, Copy, Debug)]
pub struct PGrid {
    pub radius: f64,
    pub points: usize,
    /// Number of ×2 extensions allowed when a maximizer hits the boundary.
    pub max_extensions: u32,
}

impl PGrid {
    pub fn for_velocities(kappa: f64, q: &VelocitySet) -> Self {
        PGrid {
            radius: (2.0 * kappa).max(q.xi_max).max(1.0),
            points: 801,
            max_extensions: 3,
        }
    }
}

/// `L(x_i, ξ_q)` on the product grid, row-major in `x`.
#[derive(Clone, Debug, Serialize)]
pub struct LagrangianTable {
    pub xs: Vec<f64>,
    pub q: VelocitySet,
    pub values: Vec<f64>,
    /// Maximizing momentum per entry.
    pub maximizers: Vec<f64>,
    /// Momentum radius finally used for each `x`.
    pub p_radius: Vec<f64>,
}

impl LagrangianTable {
    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    pub fn n_q(&self) -> usize {
        self.q.len()
    }

    #[inline]
    pub fn get(&self, i: usize, q: usize) -> f64 {
        self.values[i * self.q.len() + q]
    }

    /// `min_ξ L(x_i, ξ)` over `Q`.
    pub fn row_min(&self, i: usize) -> f64 {
        let nq = self.q.len();
        self.values[i * nq..(i + 1) * nq]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `L + c` entrywise.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v += c;
        }
        out
    }

    /// Smallest discrete second difference along `ξ`, normalized by `spacing²`.
    pub fn min_second_difference(&self) -> f64 {
        let nq = self.q.len();
        let s2 = self.q.spacing * self.q.spacing;
        let mut worst = f64::INFINITY;
        for i in 0..self.xs.len() {
            for q in 1..nq - 1 {
                let d = self.get(i, q + 1) - 2.0 * self.get(i, q) + self.get(i, q - 1);
                worst = worst.min(d / s2);
            }
        }
        worst
    }

    /// Smallest `L(x, ξ) + H(x, p) - pξ` over the table and the given momenta.
    pub fn fenchel_young_gap(&self, h: &dyn Hamiltonian, ps: &[f64]) -> f64 {
        let mut worst = f64::INFINITY;
        for (i, &x) in self.xs.iter().enumerate() {
            for &p in ps {
                let hp = h.value(x, p);
                for (q, &xi) in self.q.xi.iter().enumerate() {
                    worst = worst.min(self.get(i, q) + hp - p * xi);
                }
            }
        }
        worst
    }
}

/// `L(x, ξ) = sup_p [pξ - H(x, p)]`: grid maximization then golden-section
/// refinement around the best grid momentum. Maximizers on the boundary of
/// the momentum grid trigger a ×2 extension.
/// Values, maximizers and final momentum radius for one `x`.
type FenchelRow = (Vec<f64>, Vec<f64>, f64);

pub fn fenchel_lagrangian(h: &dyn Hamiltonian, xs: &[f64], q: &VelocitySet, p_grid: PGrid) -> Result<LagrangianTable> {
    if p_grid.points < 3 || !(p_grid.radius > 0.0) {
        return Err(Error::InvalidParameter(
            "momentum grid needs radius > 0 and 3 points".into(),
        ));
    }
    let rows: Vec<Result<FenchelRow>> = xs
        .par_iter()
        .enumerate()
        .map(|(i, &x)| fenchel_row(h, x, &q.xi, p_grid).ok_or(Error::FenchelBoundary(i)))
        .collect();
    let nq = q.len();
    let mut values = Vec::with_capacity(xs.len() * nq);
    let mut maximizers = Vec::with_capacity(xs.len() * nq);
    let mut p_radius = Vec::with_capacity(xs.len());
    for row in rows {
        let (v, m, r) = row?;
        values.extend(v);
        maximizers.extend(m);
        p_radius.push(r);
    }
    Ok(LagrangianTable {
        xs: xs.to_vec(),
        q: q.clone(),
        values,
        maximizers,
        p_radius,
    })
}

fn fenchel_row(h: &dyn Hamiltonian, x: f64, xis: &[f64], grid: PGrid) -> Option<FenchelRow> {
    let mut radius = grid.radius;
    for _ in 0..=grid.max_extensions {
        let m = grid.points;
        let dp = 2.0 * radius / (m - 1) as f64;
        let ps: Vec<f64> = (0..m).map(|j| -radius + j as f64 * dp).collect();
        let hs: Vec<f64> = ps.iter().map(|&p| h.value(x, p)).collect();
        let mut vals = Vec::with_capacity(xis.len());
        let mut args = Vec::with_capacity(xis.len());
        let mut interior = true;
        for &xi in xis {
            let (mut jbest, mut best) = (0, f64::NEG_INFINITY);
            for j in 0..m {
                let v = ps[j] * xi - hs[j];
                if v > best {
                    best = v;
                    jbest = j;
                }
            }
            if jbest == 0 || jbest == m - 1 {
                interior = false;
                break;
            }
            let (p, v) = golden_max(|p| p * xi - h.value(x, p), ps[jbest - 1], ps[jbest + 1], 1e-13);
            if v >= best {
                vals.push(v);
                args.push(p);
            } else {
                vals.push(best);
                args.push(ps[jbest]);
            }
        }
        if interior {
            return Some((vals, args, radius));
        }
        radius *= 2.0;
    }
    None
}

/// `H_L(x_i, p) = max_{ξ in Q} [pξ - L(x_i, ξ)]`.
pub fn rebuild_hl(table: &LagrangianTable, i: usize, p: f64) -> f64 {
    table
        .q
        .xi
        .iter()
        .enumerate()
        .map(|(q, &xi)| p * xi - table.get(i, q))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{FourierPotential, HamiltonianModel};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn half_square() -> Arc<dyn Hamiltonian> {
        Arc::new(HamiltonianModel::power(2.0, FourierPotential::default()).unwrap())
    }

    #[test]
    fn truncation_level_and_identity_on_ball() {
        let h: Arc<dyn Hamiltonian> = Arc::new(HamiltonianModel::model_problem());
        let t = truncate_h(h.clone(), 2.0).unwrap();
        assert!(t.level() >= 6.0);
        for i in 0..20 {
            let x = i as f64 / 20.0;
            for p in [-2.0, -1.3, 0.0, 0.7, 2.0] {
                assert_eq!(t.value(x, p), h.value(x, p));
            }
        }
        assert!(truncate_h(h, 0.0).is_err());
    }

    #[test]
    fn quadratic_branch_takes_over_for_sublinear_base() {
        let h: Arc<dyn Hamiltonian> = Arc::new(|_x: f64, p: f64| p.abs());
        let t = truncate_h(h, 1.0).unwrap();
        let p = 10.0;
        assert!(t.quadratic_branch_active(0.0, p));
        assert_eq!(t.value(0.0, p), p * p - t.level());
    }

    #[test]
    fn q_for_square_is_four_point_four() {
        let h = |_x: f64, p: f64| p * p;
        let q = select_q(&h, 2.0, 41).unwrap();
        assert!((q.xi_max - 4.4).abs() < 1e-6, "{}", q.xi_max);
        assert_eq!(q.xi[q.zero_index()], 0.0);
        assert_relative_eq!(q.spacing, 2.0 * q.xi_max / 40.0);
        assert!(select_q(&h, 2.0, 40).is_err());
    }

    #[test]
    fn q_floor_for_flat_hamiltonian() {
        let h = |x: f64, _p: f64| (2.0 * PI * x).cos();
        let q = select_q(&h, 2.0, 5).unwrap();
        assert_eq!(q.xi_max, 0.1);
    }

    #[test]
    fn half_square_is_self_dual() {
        let h = half_square();
        let q = VelocitySet::uniform(3.0, 31).unwrap();
        let xs = [0.0, 0.25, 0.6];
        let t = fenchel_lagrangian(h.as_ref(), &xs, &q, PGrid::for_velocities(2.0, &q)).unwrap();
        for i in 0..xs.len() {
            for (k, &xi) in q.xi.iter().enumerate() {
                assert!((t.get(i, k) - 0.5 * xi * xi).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn model_problem_lagrangian() {
        let h = HamiltonianModel::model_problem();
        let q = VelocitySet::uniform(4.4, 41).unwrap();
        let xs: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let t = fenchel_lagrangian(&h, &xs, &q, PGrid::for_velocities(2.0, &q)).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            for (k, &xi) in q.xi.iter().enumerate() {
                let exact = xi * xi / 4.0 - (2.0 * PI * x).cos();
                assert!((t.get(i, k) - exact).abs() < 1e-10);
            }
        }
        let shifted = fenchel_lagrangian(&h.shifted(-0.75), &xs, &q, PGrid::for_velocities(2.0, &q)).unwrap();
        for (a, b) in shifted.values.iter().zip(&t.values) {
            assert!((a - (b - 0.75)).abs() < 1e-10);
        }
    }

    #[test]
    fn boundary_maximizer_extends_grid() {
        let h = half_square();
        let q = VelocitySet::uniform(5.0, 11).unwrap();
        let grid = PGrid {
            radius: 1.0,
            points: 101,
            max_extensions: 3,
        };
        let t = fenchel_lagrangian(h.as_ref(), &[0.0], &q, grid).unwrap();
        assert!(t.p_radius[0] > 5.0);
        let capped = PGrid {
            max_extensions: 1,
            ..grid
        };
        assert!(matches!(
            fenchel_lagrangian(h.as_ref(), &[0.0], &q, capped),
            Err(Error::FenchelBoundary(0))
        ));
    }

    #[test]
    fn rebuilt_hamiltonian_matches() {
        let h = half_square();
        let q = VelocitySet::uniform(4.0, 161).unwrap();
        let t = fenchel_lagrangian(h.as_ref(), &[0.3], &q, PGrid::for_velocities(2.0, &q)).unwrap();
        let s = q.spacing;
        assert!((rebuild_hl(&t, 0, 1.0) - 0.5).abs() <= s * s);
        assert!(rebuild_hl(&t, 0, 0.0).abs() < 1e-12);
        for p in [0.3, 1.1, 1.9] {
            assert!((rebuild_hl(&t, 0, p) - rebuild_hl(&t, 0, -p)).abs() < 1e-12);
        }
    }
}
