//! Dense revised simplex for `min cᵀx  s.t.  Ax = b, x >= 0`.
//!
//! Two phases with artificial variables, explicit basis inverse with periodic
//! refactorization. Sized for a few dozen rows and tens of thousands of
//! columns. Default pricing is Dantzig's rule with a lexicographic ratio test,
//! which cannot cycle; Bland's rule is available but on smooth, nearly
//! collinear column families its smallest-index choice builds ill-conditioned
//! bases.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{format_g17, kahan_dot, kahan_sum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    /// Row-major constraint matrix, `b.len()` rows of `c.len()` entries.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pricing {
    /// Smallest-index entering and leaving variables.
    Bland,
    /// Most negative reduced cost, lexicographic ties in the ratio test.
    #[default]
    Dantzig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpOptions {
    pub pricing: Pricing,
    /// Smallest admissible pivot element.
    pub pivot_tol: f64,
    /// Reduced costs above `-cost_tol` count as optimal.
    pub cost_tol: f64,
    /// Phase I objective tolerated as feasible.
    pub feas_tol: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            pricing: Pricing::Dantzig,
            pivot_tol: 1e-11,
            cost_tol: 1e-11,
            feas_tol: 1e-9,
            max_iterations: 500_000,
            refactor_every: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LpResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Multipliers `y` with `c - Aᵀy >= 0` at the optimum.
    pub duals: Vec<f64>,
    pub basis: Vec<usize>,
    pub iterations: usize,
    /// `‖Ax - b‖∞`.
    pub residual_inf: f64,
    /// Rows found linearly dependent on the others.
    pub redundant_rows: Vec<usize>,
}

impl LinearProgram {
    pub fn new(c: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let lp = LinearProgram { c, a, b };
        lp.check()?;
        Ok(lp)
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    fn check(&self) -> Result<()> {
        if self.a.len() != self.b.len() {
            return Err(Error::InvalidParameter(format!(
                "{} constraint rows but {} right-hand sides",
                self.a.len(),
                self.b.len()
            )));
        }
        if let Some(r) = self.a.iter().position(|row| row.len() != self.c.len()) {
            return Err(Error::InvalidParameter(format!(
                "row {r} has {} entries, expected {}",
                self.a[r].len(),
                self.c.len()
            )));
        }
        let finite = self
            .c
            .iter()
            .chain(&self.b)
            .chain(self.a.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite LP data".into()));
        }
        Ok(())
    }

    /// `‖Ax - b‖∞` with compensated row sums.
    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| (kahan_dot(row, x) - b).abs())
            .fold(0.0, f64::max)
    }

    /// Plain-text standard-form dump for external solvers.
    pub fn to_standard_form_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# minimize c^T x subject to A x = b, x >= 0");
        let _ = writeln!(s, "variables {}", self.n_vars());
        let _ = writeln!(s, "constraints {}", self.n_rows());
        let _ = writeln!(s, "objective");
        let _ = writeln!(s, "{}", join(&self.c));
        let _ = writeln!(s, "rows");
        for (row, b) in self.a.iter().zip(&self.b) {
            let _ = writeln!(s, "{} = {}", join(row), format_g17(*b));
        }
        let _ = writeln!(s, "bounds");
        let _ = writeln!(s, "x >= 0");
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format_g17(*x)).collect::<Vec<_>>().join(" ")
}

struct Tableau<'a> {
    a: &'a [Vec<f64>],
    b: Vec<f64>,
    m: usize,
    n: usize,
    basis: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Tableau<'a> {
    /// Column `j` of `[A | I]`.
    fn column(&self, j: usize, out: &mut [f64]) {
        if j < self.n {
            for (o, row) in out.iter_mut().zip(self.a) {
                *o = row[j];
            }
        } else {
            out.fill(0.0);
            out[j - self.n] = 1.0;
        }
    }

    fn binv_times(&self, col: &[f64], out: &mut [f64]) {
        let m = self.m;
        for (i, o) in out.iter_mut().enumerate() {
            *o = kahan_dot(&self.binv[i * m..(i + 1) * m], col);
        }
    }

    /// Lexicographic comparison of rows `i` and `r` of `B⁻¹` scaled by the pivot column.
    fn lex_order(&self, i: usize, r: usize, alpha: &[f64]) -> std::cmp::Ordering {
        let m = self.m;
        for k in 0..m {
            let a = self.binv[i * m + k] / alpha[i];
            let b = self.binv[r * m + k] / alpha[r];
            let ord = ratio_order(a, b);
            if ord.is_ne() {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    }

    /// Round-off scale of `B⁻¹ col`: entries below it are numerically zero.
    fn roundoff_bound(&self, col: &[f64], out: &mut [f64]) {
        let m = self.m;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.binv[i * m..(i + 1) * m];
            *o = 1e-13 * row.iter().zip(col).map(|(b, c)| (b * c).abs()).sum::<f64>();
        }
    }

    fn duals(&self, cost: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = self.m;
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost(j)).collect();
        (0..m)
            .map(|k| kahan_sum((0..m).map(|i| cb[i] * self.binv[i * m + k])))
            .collect()
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for i in 0..m {
                bmat[i * m + k] = col[i];
            }
        }
        self.binv = invert(bmat, m).ok_or_else(|| Error::InvalidParameter("singular basis".into()))?;
        let mut xb = vec![0.0; m];
        self.binv_times(&self.b, &mut xb);
        self.xb = xb;
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, entering: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        let theta = self.xb[r] / piv;
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        for i in 0..m {
            if i != r && alpha[i] != 0.0 {
                let f = alpha[i];
                for k in 0..m {
                    self.binv[i * m + k] -= f * self.binv[r * m + k];
                }
                self.xb[i] -= theta * f;
            }
        }
        self.xb[r] = theta;
        self.basis[r] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    /// Runs the simplex loop on the given costs. `eligible` filters entering columns.
    fn optimize(
        &mut self,
        cost: &dyn Fn(usize) -> f64,
        eligible: &dyn Fn(usize) -> bool,
        opts: &LpOptions,
    ) -> Result<()> {
        let (m, total) = (self.m, self.n + self.m);
        let mut in_basis = vec![false; total];
        for &j in &self.basis {
            in_basis[j] = true;
        }
        let mut col = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut noise = vec![0.0; m];
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(Error::SimplexIterationLimit(self.iterations));
            }
            if self.since_refactor >= opts.refactor_every {
                self.refactor()?;
            }
            let y = self.duals(cost);
            let use_bland = opts.pricing == Pricing::Bland;
            let mut entering = None;
            let mut best = -opts.cost_tol;
            for j in 0..total {
                if in_basis[j] || !eligible(j) {
                    continue;
                }
                let d = if j < self.n {
                    cost(j) - kahan_sum(self.a.iter().zip(&y).map(|(row, yi)| row[j] * yi))
                } else {
                    cost(j) - y[j - self.n]
                };
                if d < best {
                    entering = Some(j);
                    if use_bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else { return Ok(()) };
            self.column(q, &mut col);
            self.binv_times(&col, &mut alpha);
            self.roundoff_bound(&col, &mut noise);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if alpha[i] > opts.pivot_tol.max(noise[i]) {
                    let ratio = self.xb[i].max(0.0) / alpha[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let better = match opts.pricing {
                                Pricing::Bland => ratio_order(ratio, best).then(self.basis[i].cmp(&self.basis[r])),
                                Pricing::Dantzig => ratio_order(ratio, best).then_with(|| self.lex_order(i, r, &alpha)),
                            };
                            if better.is_lt() {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Unbounded);
            };
            in_basis[self.basis[r]] = false;
            in_basis[q] = true;
            for v in self.xb.iter_mut() {
                if *v < 0.0 && *v > -1e-13 {
                    *v = 0.0;
                }
            }
            self.pivot(r, q, &alpha);
        }
    }
}

/// Orders two ratios, treating values within relative `1e-12` as tied.
fn ratio_order(a: f64, b: f64) -> std::cmp::Ordering {
    if (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
        std::cmp::Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(mut a: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    let size = a.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    for col in 0..m {
        let p = (col..m).max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))?;
        if a[p * m + col].abs() <= 1e-14 * size {
            return None;
        }
        if p != col {
            for k in 0..m {
                a.swap(p * m + k, col * m + k);
                inv.swap(p * m + k, col * m + k);
            }
        }
        let d = a[col * m + col];
        for k in 0..m {
            a[col * m + k] /= d;
            inv[col * m + k] /= d;
        }
        for i in 0..m {
            if i != col {
                let f = a[i * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        a[i * m + k] -= f * a[col * m + k];
                        inv[i * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn solve_lp(lp: &LinearProgram, opts: &LpOptions) -> Result<LpResult> {
    lp.check()?;
    let (m, n) = (lp.n_rows(), lp.n_vars());
    // flip rows so that b >= 0 and the artificial basis is feasible, and
    // equilibrate so the largest entry of each row is one
    let sign: Vec<f64> =
        lp.a.iter()
            .zip(&lp.b)
            .map(|(row, b)| {
                let s = if *b < 0.0 { -1.0 } else { 1.0 };
                let scale = row.iter().fold(b.abs(), |m, v| m.max(v.abs()));
                if scale > 0.0 {
                    s / scale
                } else {
                    s
                }
            })
            .collect();
    let a: Vec<Vec<f64>> =
        lp.a.iter()
            .zip(&sign)
            .map(|(row, s)| row.iter().map(|v| v * s).collect())
            .collect();
    let b: Vec<f64> = lp.b.iter().zip(&sign).map(|(b, s)| b * s).collect();
    let mut t = Tableau {
        a: &a,
        b: b.clone(),
        m,
        n,
        basis: (n..n + m).collect(),
        binv: vec![0.0; m * m],
        xb: b,
        iterations: 0,
        since_refactor: 0,
    };
    for i in 0..m {
        t.binv[i * m + i] = 1.0;
    }

    let phase1 = |j: usize| if j >= n { 1.0 } else { 0.0 };
    t.optimize(&phase1, &|_| true, opts)?;
    t.refactor()?;
    let infeas = kahan_sum(t.basis.iter().zip(&t.xb).filter(|(j, _)| **j >= n).map(|(_, v)| *v));
    if infeas > opts.feas_tol {
        let y = t.duals(&phase1);
        return Err(Error::Infeasible {
            objective: infeas,
            certificate: y.iter().zip(&sign).map(|(y, s)| y * s).collect(),
        });
    }

    // drive zero-level artificials out of the basis where possible
    let mut redundant = Vec::new();
    let mut col = vec![0.0; m];
    let mut alpha = vec![0.0; m];
    for r in 0..m {
        if t.basis[r] < n {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if t.basis.contains(&j) {
                continue;
            }
            let v = kahan_sum((0..m).map(|k| t.binv[r * m + k] * a[k][j]));
            if v.abs() > 1e-9 && best.is_none_or(|(_, bv)| v.abs() > bv.abs()) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, _)) => {
                t.column(j, &mut col);
                t.binv_times(&col, &mut alpha);
                t.pivot(r, j, &alpha);
            }
            None => redundant.push(t.basis[r] - n),
        }
    }
    t.refactor()?;

    let cost = |j: usize| if j < n { lp.c[j] } else { 0.0 };
    t.optimize(&cost, &|j| j < n, opts)?;
    t.refactor()?;

    let mut x = vec![0.0; n];
    for (&j, &v) in t.basis.iter().zip(&t.xb) {
        if j < n {
            x[j] = v.max(0.0);
        }
    }
    let y = t.duals(&cost);
    redundant.sort_unstable();
    Ok(LpResult {
        value: kahan_dot(&lp.c, &x),
        residual_inf: lp.residual_inf(&x),
        duals: y.iter().zip(&sign).map(|(y, s)| y * s).collect(),
        basis: t.basis.clone(),
        iterations: t.iterations,
        redundant_rows: redundant,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_textbook_problem() {
        // min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let lp = LinearProgram::new(
            vec![-1.0, -1.0, 0.0, 0.0],
            vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]],
            vec![4.0, 6.0],
        )
        .unwrap();
        let r = solve_lp(&lp, &LpOptions::default()).unwrap();
        assert!((r.value + 2.8).abs() < 1e-12);
        assert!((r.x[0] - 1.6).abs() < 1e-12 && (r.x[1] - 1.2).abs() < 1e-12);
        // complementary slackness: c - Aᵀy >= 0
        for j in 0..4 {
            let d = lp.c[j] - (0..2).map(|i| lp.a[i][j] * r.duals[i]).sum::<f64>();
            assert!(d >= -1e-12);
        }
    }

    #[test]
    fn infeasible_detected() {
        let lp = LinearProgram::new(vec![1.0, 1.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            solve_lp(&lp, &LpOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn unbounded_detected() {
        let lp = LinearProgram::new(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![0.0]).unwrap();
        assert!(matches!(solve_lp(&lp, &LpOptions::default()), Err(Error::Unbounded)));
    }

    #[test]
    fn duplicate_rows_are_redundant() {
        let lp = LinearProgram::new(
            vec![3.0, 1.0, 2.0],
            vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![1.0, -1.0, 0.0]],
            vec![1.0, 2.0, 0.0],
        )
        .unwrap();
        let r = solve_lp(&lp, &LpOptions::default()).unwrap();
        assert_eq!(r.redundant_rows.len(), 1);
        // x0 = x1, minimize 4 x0 + 2 x2 with 2 x0 + x2 = 1: both give 2
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.residual_inf < 1e-12);
    }

    #[test]
    fn negative_rhs_handled() {
        let lp = LinearProgram::new(vec![1.0, 2.0], vec![vec![-1.0, -1.0]], vec![-3.0]).unwrap();
        let r = solve_lp(&lp, &LpOptions::default()).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        assert!((r.duals[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bland_agrees_with_dantzig() {
        let lp = LinearProgram::new(
            vec![2.0, 3.0, 1.0, 4.0],
            vec![vec![1.0, 1.0, 1.0, 1.0], vec![1.0, -1.0, 2.0, 0.0]],
            vec![1.0, 0.5],
        )
        .unwrap();
        let a = solve_lp(&lp, &LpOptions::default()).unwrap();
        let b = solve_lp(
            &lp,
            &LpOptions {
                pricing: Pricing::Bland,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn dump_lists_every_row() {
        let lp = LinearProgram::new(vec![1.0, 0.1], vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        let s = lp.to_standard_form_text();
        assert!(s.contains("variables 2"));
        assert!(s.contains("1 0.10000000000000001"));
        assert!(s.contains("1 1 = 1"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(LinearProgram::new(vec![1.0], vec![vec![1.0, 2.0]], vec![1.0]).is_err());
    }
}
