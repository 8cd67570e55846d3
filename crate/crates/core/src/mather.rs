//! Closed measures on `K = T¹ × Q` and the linear programs over them.
//!
//! A probability measure `μ` on `K` is closed for `(z, λ)` when
//! `∫ (λψ - Iψ + ξ Dψ) dμ = λψ(z)` for every test function `ψ`. The test
//! functions here are the trigonometric modes up to a fixed order.

use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{torus_dist, GridFunction};
use crate::lagrangian::{LagrangianTable, VelocitySet};
use crate::levy::apply_operator;
use crate::lp::{solve_lp, LinearProgram, LpOptions};
use crate::numerics::{kahan_dot, kahan_sum};
use crate::solver::{ProblemSpec, SolveReport};

/// Product grid `x_i × ξ_q`, flattened as `i * n_q + q`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KGrid {
    pub n: usize,
    pub q: VelocitySet,
}

impl KGrid {
    pub fn new(n: usize, q: VelocitySet) -> Self {
        KGrid { n, q }
    }

    pub fn len(&self) -> usize {
        self.n * self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, q: usize) -> usize {
        i * self.q.len() + q
    }

    #[inline]
    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.q.len(), k % self.q.len())
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }
}

/// Nonnegative normalized weights on a `KGrid`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    pub grid: KGrid,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Clamps weights above `-1e-14` to zero, then requires unit mass within `1e-12`.
    pub fn new(grid: KGrid, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: weights.len(),
            });
        }
        for w in weights.iter_mut() {
            if *w < -1e-14 || !w.is_finite() {
                return Err(Error::InvalidParameter(format!("negative measure weight {w}")));
            }
            *w = w.max(0.0);
        }
        let total = kahan_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("measure has mass {total}, expected 1")));
        }
        Ok(DiscreteMeasure { grid, weights })
    }

    /// Unit mass at `(x_i, ξ_q)`.
    pub fn dirac(grid: KGrid, i: usize, q: usize) -> Self {
        let mut weights = vec![0.0; grid.len()];
        weights[grid.index(i, q)] = 1.0;
        DiscreteMeasure { grid, weights }
    }

    pub fn total(&self) -> f64 {
        kahan_sum(self.weights.iter().copied())
    }

    /// `∫ u(x) μ(dx dξ)`.
    pub fn integrate_x(&self, u: &GridFunction) -> Result<f64> {
        if u.n() != self.grid.n {
            return Err(Error::GridMismatch {
                expected: self.grid.n,
                got: u.n(),
            });
        }
        Ok(kahan_sum(
            self.weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(k, w)| w * u[self.grid.split(k).0]),
        ))
    }

    /// `∫ f dμ` for a function tabulated on `K`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        kahan_dot(&self.weights, f)
    }

    /// Atoms `(x, ξ, w)` with positive weight.
    pub fn support(&self) -> Vec<(f64, f64, f64)> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, &w)| {
                let (i, q) = self.grid.split(k);
                (self.grid.x(i), self.grid.q.xi[q], w)
            })
            .collect()
    }

    /// Mass within `cells` grid steps of `(x_{i0}, ξ_{q0})` in both coordinates.
    pub fn mass_near(&self, i0: usize, q0: usize, cells: usize) -> f64 {
        let n = self.grid.n;
        kahan_sum(self.weights.iter().enumerate().filter_map(|(k, &w)| {
            let (i, q) = self.grid.split(k);
            let di = (i + n - i0) % n;
            let di = di.min(n - di);
            (di <= cells && q.abs_diff(q0) <= cells).then_some(w)
        }))
    }
}

/// Test function of the constraint basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TestMode {
    Constant,
    Cos(usize),
    Sin(usize),
}

impl TestMode {
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            TestMode::Constant => (1.0, 0.0, 0.0),
            TestMode::Cos(m) => {
                let k = 2.0 * PI * m as f64;
                let (s, c) = (k * x).sin_cos();
                (c, -k * s, -k * k * c)
            }
            TestMode::Sin(m) => {
                let k = 2.0 * PI * m as f64;
                let (s, c) = (k * x).sin_cos();
                (s, k * c, -k * k * s)
            }
        }
    }
}

/// Rows `λψ(x_i) - Iψ(x_i) + ξ_q Dψ(x_i)` with right-hand sides `λψ(z)`.
#[derive(Clone, Debug, Serialize)]
pub struct ClosedMeasureSystem {
    pub grid: KGrid,
    pub lambda: f64,
    pub anchor: usize,
    pub order: usize,
    pub modes: Vec<TestMode>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl ClosedMeasureSystem {
    /// `max_k |Σ_j A_kj μ_j - r_k|`.
    pub fn residual_inf(&self, mu: &DiscreteMeasure) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, r)| (mu.integrate(row) - r).abs())
            .fold(0.0, f64::max)
    }
}

/// Assembles the closed-measure rows for the constant and `cos, sin(2πmx)`,
/// `m = 1..=order`. At `λ = 0` the constant row is identically zero and dropped.
pub fn closed_measure_constraints(
    problem: &ProblemSpec,
    lambda: f64,
    anchor: usize,
    order: usize,
    q: &VelocitySet,
) -> Result<ClosedMeasureSystem> {
    if order < 1 {
        return Err(Error::InvalidParameter("test basis order must be at least 1".into()));
    }
    let n = problem.n();
    if anchor >= n {
        return Err(Error::InvalidParameter(format!("anchor {anchor} outside grid of {n}")));
    }
    let mut modes = Vec::with_capacity(2 * order + 1);
    if lambda != 0.0 {
        modes.push(TestMode::Constant);
    }
    for m in 1..=order {
        modes.push(TestMode::Cos(m));
        modes.push(TestMode::Sin(m));
    }
    let grid = KGrid::new(n, q.clone());
    let z = grid.x(anchor);
    let assembled: Vec<Result<(Vec<f64>, f64)>> = modes
        .par_iter()
        .map(|&mode| {
            let psi = GridFunction::from_fn(n, |x| mode.eval(x).0);
            let dpsi = GridFunction::from_fn(n, |x| mode.eval(x).1);
            let d2psi = GridFunction::from_fn(n, |x| mode.eval(x).2);
            let ipsi = apply_operator(&problem.plan, &psi, &dpsi, &d2psi)?;
            let mut row = Vec::with_capacity(grid.len());
            for i in 0..n {
                let base = lambda * psi[i] - ipsi[i];
                for &xi in &q.xi {
                    row.push(base + xi * dpsi[i]);
                }
            }
            Ok((row, lambda * mode.eval(z).0))
        })
        .collect();
    let mut rows = Vec::with_capacity(modes.len());
    let mut rhs = Vec::with_capacity(modes.len());
    for r in assembled {
        let (row, b) = r?;
        rows.push(row);
        rhs.push(b);
    }
    Ok(ClosedMeasureSystem {
        grid,
        lambda,
        anchor,
        order,
        modes,
        rows,
        rhs,
    })
}

/// Optimal vertex of the Mather linear program.
#[derive(Clone, Debug, Serialize)]
pub struct LpSolution {
    pub measure: DiscreteMeasure,
    pub value: f64,
    /// Closed-measure residual `‖Aμ - r‖∞`, normalization included.
    pub residual_inf: f64,
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub lambda: f64,
}

fn check_table(system: &ClosedMeasureSystem, table: &LagrangianTable) -> Result<()> {
    if table.n_x() != system.grid.n || table.q.xi != system.grid.q.xi {
        return Err(Error::GridMismatch {
            expected: system.grid.len(),
            got: table.values.len(),
        });
    }
    Ok(())
}

/// Standard-form program `min Σ μ L  s.t.  Σ μ = 1, Aμ = r, μ >= 0`, plus one
/// slack column per cut row `Σ φ μ >= 0`. Rows of `A` that repeat the
/// normalization (the constant test function) are left out.
pub fn mather_lp(system: &ClosedMeasureSystem, table: &LagrangianTable, cuts: &[Vec<f64>]) -> Result<LinearProgram> {
    check_table(system, table)?;
    let nk = system.grid.len();
    if let Some(bad) = cuts.iter().position(|c| c.len() != nk) {
        return Err(Error::InvalidParameter(format!("cut {bad} has wrong length")));
    }
    let width = nk + cuts.len();
    let pad = |row: &[f64]| {
        let mut r = row.to_vec();
        r.resize(width, 0.0);
        r
    };
    let mut a = vec![pad(&vec![1.0; nk])];
    let mut b = vec![1.0];
    for (mode, (row, r)) in system.modes.iter().zip(system.rows.iter().zip(&system.rhs)) {
        if *mode == TestMode::Constant {
            // λ Σ μ = λ duplicates the normalization row
            continue;
        }
        a.push(pad(row));
        b.push(*r);
    }
    for (k, cut) in cuts.iter().enumerate() {
        let mut row = pad(cut);
        row[nk + k] = -1.0;
        a.push(row);
        b.push(0.0);
    }
    let mut c = table.values.clone();
    c.resize(width, 0.0);
    LinearProgram::new(c, a, b)
}

pub fn solve_mather_lp(system: &ClosedMeasureSystem, table: &LagrangianTable, opts: &LpOptions) -> Result<LpSolution> {
    solve_mather_lp_with_cuts(system, table, &[], opts)
}

pub fn solve_mather_lp_with_cuts(
    system: &ClosedMeasureSystem,
    table: &LagrangianTable,
    cuts: &[Vec<f64>],
    opts: &LpOptions,
) -> Result<LpSolution> {
    let lp = mather_lp(system, table, cuts)?;
    let r = solve_lp(&lp, opts)?;
    let nk = system.grid.len();
    let mut w = r.x[..nk].to_vec();
    // the vertex is feasible to round-off; renormalize so the measure invariant is exact
    let total = kahan_sum(w.iter().copied());
    for v in w.iter_mut() {
        *v /= total;
    }
    let measure = DiscreteMeasure::new(system.grid.clone(), w)?;
    let residual_inf = system.residual_inf(&measure).max((measure.total() - 1.0).abs());
    Ok(LpSolution {
        value: measure.integrate(&table.values),
        measure,
        residual_inf,
        duals: r.duals,
        iterations: r.iterations,
        lambda: system.lambda,
    })
}

/// Cut rows `φ = L + s(x) + t (λψ_k - Iψ_k + ξ Dψ_k)` with `s(x) = max(0, -min_ξ L(x, ξ))`.
///
/// `L + s >= 0` pointwise and the added term integrates to a constant over
/// closed measures, so `Σ φ μ >= 0` holds on the whole feasible set when the
/// system is homogeneous (`λ = 0`).
pub fn subsolution_cuts(
    system: &ClosedMeasureSystem,
    table: &LagrangianTable,
    t_values: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_table(system, table)?;
    if system.lambda != 0.0 {
        return Err(Error::InvalidParameter(
            "cuts are defined for the homogeneous system".into(),
        ));
    }
    let nq = system.grid.q.len();
    let lifted: Vec<f64> = (0..system.grid.n)
        .flat_map(|i| {
            let s = (-table.row_min(i)).max(0.0);
            (0..nq).map(move |q| table.get(i, q) + s)
        })
        .collect();
    let mut cuts = Vec::new();
    for row in &system.rows {
        for &t in t_values {
            cuts.push(lifted.iter().zip(row).map(|(l, a)| l + t * a).collect());
        }
    }
    Ok(cuts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualityCheck {
    /// `|λ u_λ(z) - min LP|`.
    pub gap: f64,
    /// `min LP >= λ u_λ(z) - tol`.
    pub one_sided: bool,
}

pub fn verify_duality(report: &SolveReport, lp: &LpSolution, tol: f64) -> DualityCheck {
    DualityCheck {
        gap: (report.lambda_u_at_z - lp.value).abs(),
        one_sided: lp.value >= report.lambda_u_at_z - tol,
    }
}

/// Distance on `K`: Euclidean combination of torus distance and velocity gap.
pub fn k_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    torus_dist(a.0, b.0).hypot(a.1 - b.1)
}

/// Bounded-Lipschitz distance `sup { ∫f d(μ-ν) : ‖f‖∞ <= 1, Lip f <= 1 }`,
/// computed exactly as optimal transport with cost `min(d, 2)`.
pub fn bounded_lipschitz_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let a = mu.support();
    let b = nu.support();
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasureSet);
    }
    let (na, nb) = (a.len(), b.len());
    let mut c = Vec::with_capacity(na * nb);
    for p in &a {
        for q in &b {
            c.push(k_distance((p.0, p.1), (q.0, q.1)).min(2.0));
        }
    }
    let mut rows = Vec::with_capacity(na + nb);
    let mut rhs = Vec::with_capacity(na + nb);
    for (i, p) in a.iter().enumerate() {
        let mut row = vec![0.0; na * nb];
        row[i * nb..(i + 1) * nb].fill(1.0);
        rows.push(row);
        rhs.push(p.2);
    }
    // masses agree up to round-off; scale the second marginal to match exactly
    let scale = kahan_sum(a.iter().map(|p| p.2)) / kahan_sum(b.iter().map(|q| q.2));
    for (j, q) in b.iter().enumerate() {
        let mut row = vec![0.0; na * nb];
        for i in 0..na {
            row[i * nb + j] = 1.0;
        }
        rows.push(row);
        rhs.push(q.2 * scale);
    }
    let r = solve_lp(&LinearProgram::new(c, rows, rhs)?, &LpOptions::default())?;
    Ok(r.value.max(0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct MatherLimitReport {
    pub solutions: Vec<LpSolution>,
    /// Bounded-Lipschitz distances between successive optimal measures.
    pub distances: Vec<f64>,
    /// Residual of the last measure against the `λ = 0` system.
    pub final_critical_residual: f64,
}

/// Discounted Mather measures along a decreasing ladder.
pub fn mather_limit_measures(
    problem: &ProblemSpec,
    table: &LagrangianTable,
    ladder: &[f64],
    anchor: usize,
    order: usize,
    opts: &LpOptions,
) -> Result<MatherLimitReport> {
    if ladder.is_empty() || ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "ladder must be nonempty and strictly decreasing".into(),
        ));
    }
    let mut solutions = Vec::with_capacity(ladder.len());
    for &lambda in ladder {
        let sys = closed_measure_constraints(problem, lambda, anchor, order, &table.q)?;
        solutions.push(solve_mather_lp(&sys, table, opts)?);
    }
    let mut distances = Vec::with_capacity(ladder.len().saturating_sub(1));
    for pair in solutions.windows(2) {
        distances.push(bounded_lipschitz_distance(&pair[0].measure, &pair[1].measure)?);
    }
    let critical = closed_measure_constraints(problem, 0.0, anchor, order, &table.q)?;
    let last = &solutions.last().expect("nonempty ladder").measure;
    Ok(MatherLimitReport {
        final_critical_residual: critical.residual_inf(last),
        solutions,
        distances,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct U0Result {
    pub u0: GridFunction,
    /// `max_μ ∫ u_ref dμ`, subtracted from `u_ref`.
    pub shift: f64,
    /// Index of the measure attaining the max.
    pub attaining: usize,
    pub integrals: Vec<f64>,
}

/// `u₀ = u_ref - max_μ ∫ u_ref dμ` over the available Mather measures.
pub fn compute_u0(u_ref: &GridFunction, mather_set: &[DiscreteMeasure]) -> Result<U0Result> {
    if mather_set.is_empty() {
        return Err(Error::EmptyMeasureSet);
    }
    let integrals = mather_set
        .iter()
        .map(|mu| mu.integrate_x(u_ref))
        .collect::<Result<Vec<_>>>()?;
    let (attaining, shift) =
        integrals.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (k, v)| if v > best.1 { (k, v) } else { best },
        );
    Ok(U0Result {
        u0: u_ref.shifted(-shift),
        shift,
        attaining,
        integrals,
    })
}

/// `u_λ(z) - v(z) + ∫ v dμ_λ`, nonnegative for critical subsolutions `v`.
pub fn check_subsolution_inequality(
    v: &GridFunction,
    mu: &DiscreteMeasure,
    u_lambda_at_z: f64,
    anchor: usize,
) -> Result<f64> {
    if anchor >= v.n() {
        return Err(Error::InvalidParameter(format!("anchor {anchor} outside grid")));
    }
    Ok(u_lambda_at_z - v[anchor] + mu.integrate_x(v)?)
}
