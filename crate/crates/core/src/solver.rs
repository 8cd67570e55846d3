//! Monotone explicit solver for `λu - Iu + H(x, Du) = 0` on the torus.
//!
//! The state is kept as `u = c + w` with a scalar level `c`: the jump and
//! difference terms only see `w`, so small discounts (where `u ~ 1/λ`) do not
//! lose the residual to cancellation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::hamiltonian::Hamiltonian;
use crate::levy::{build_quadrature_plan, JumpFunction, LevyMeasure, PlanParams, QuadraturePlan};
use crate::numerics::golden_min;

/// A discounted problem on an `n`-point grid.
#[derive(Clone)]
pub struct ProblemSpec {
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub plan: Arc<QuadraturePlan>,
    pub lambda: f64,
    /// Grid index of the anchor point `z`.
    pub anchor: usize,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n", &self.n())
            .field("lambda", &self.lambda)
            .field("anchor", &self.anchor)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn new(
        hamiltonian: Arc<dyn Hamiltonian>,
        plan: Arc<QuadraturePlan>,
        lambda: f64,
        anchor: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in [0, 1), got {lambda}"
            )));
        }
        if anchor >= plan.n() {
            return Err(Error::InvalidParameter(format!(
                "anchor {anchor} outside grid of {}",
                plan.n()
            )));
        }
        Ok(ProblemSpec {
            hamiltonian,
            plan,
            lambda,
            anchor,
        })
    }

    /// Builds the quadrature plan with default parameters.
    pub fn with_measure(
        hamiltonian: Arc<dyn Hamiltonian>,
        measure: &LevyMeasure,
        jump: &JumpFunction,
        n: usize,
        lambda: f64,
    ) -> Result<Self> {
        let plan = build_quadrature_plan(measure, jump, n, &PlanParams::defaults_for(n))?;
        Self::new(hamiltonian, Arc::new(plan), lambda, 0)
    }

    /// No jumps.
    pub fn local(hamiltonian: Arc<dyn Hamiltonian>, n: usize, lambda: f64) -> Result<Self> {
        Self::with_measure(hamiltonian, &LevyMeasure::none(), &JumpFunction::identity(), n, lambda)
    }

    pub fn n(&self) -> usize {
        self.plan.n()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.n() as f64
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.hamiltonian.clone(), self.plan.clone(), lambda, self.anchor)
    }

    pub fn with_anchor(&self, anchor: usize) -> Result<Self> {
        Self::new(self.hamiltonian.clone(), self.plan.clone(), self.lambda, anchor)
    }

    pub fn with_hamiltonian(&self, hamiltonian: Arc<dyn Hamiltonian>) -> Self {
        ProblemSpec {
            hamiltonian,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalFlux {
    /// Exact Riemann flux for convex `H`: min over `[a, b]` if `a <= b`, else `max(H(a), H(b))`.
    #[default]
    Godunov,
    /// `H((a+b)/2) - θ (b - a)/2`.
    LaxFriedrichs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeOptions {
    pub flux: NumericalFlux,
    /// Overrides `1.1 max |H_p|` over the working gradient range.
    pub theta: Option<f64>,
    /// Fraction of the monotonicity limit used as time step.
    pub safety: f64,
    /// Stop when `max |F(u)| < tol`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Initial half-width of the gradient range; doubled whenever exceeded.
    pub gradient_range: Option<f64>,
    /// Period of the constant-mode correction (0 disables it).
    pub accelerate_every: usize,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions {
            flux: NumericalFlux::Godunov,
            theta: None,
            safety: 0.9,
            tol: 1e-10,
            max_iterations: 2_000_000,
            gradient_range: None,
            accelerate_every: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub u: GridFunction,
    pub residual_inf: f64,
    pub lipschitz_estimate: f64,
    pub iterations: usize,
    pub cfl_dt: f64,
    pub lambda: f64,
    pub lambda_u_at_z: f64,
    pub theta: f64,
    pub gradient_range: f64,
}

/// Frozen per-solve coefficients.
struct Scheme<'a> {
    problem: &'a ProblemSpec,
    flux: NumericalFlux,
    xs: Vec<f64>,
    inv_h: f64,
    core: Vec<f64>,
    p_star: Vec<f64>,
    theta: f64,
    range: f64,
    dt: f64,
}

impl<'a> Scheme<'a> {
    fn new(problem: &'a ProblemSpec, opts: &SchemeOptions, range: f64) -> Self {
        let n = problem.n();
        let h = problem.h();
        let plan = &problem.plan;
        let ham = problem.hamiltonian.as_ref();
        let xs: Vec<f64> = (0..n).map(|i| problem.x(i)).collect();
        let core = (0..n).map(|i| 0.5 * plan.m2(i) / (h * h)).collect();
        let p_star = xs
            .iter()
            .map(|&x| golden_min(|p| ham.value(x, p), -range, range, 1e-12).0)
            .collect();
        let theta = opts.theta.unwrap_or_else(|| 1.1 * max_slope(ham, &xs, range));
        let rate = problem.lambda
            + 2.0 * theta / h
            + plan.max_jump_weight()
            + plan.max_abs_drift() / h
            + plan.max_m2() / (h * h);
        Scheme {
            problem,
            flux: opts.flux,
            xs,
            inv_h: 1.0 / h,
            core,
            p_star,
            theta,
            range,
            dt: opts.safety / rate,
        }
    }

    #[inline]
    fn numerical_h(&self, i: usize, a: f64, b: f64) -> f64 {
        let ham = self.problem.hamiltonian.as_ref();
        let x = self.xs[i];
        match self.flux {
            NumericalFlux::Godunov => {
                if a <= b {
                    ham.value(x, self.p_star[i].clamp(a, b))
                } else {
                    ham.value(x, a).max(ham.value(x, b))
                }
            }
            NumericalFlux::LaxFriedrichs => ham.value(x, 0.5 * (a + b)) - 0.5 * self.theta * (b - a),
        }
    }

    /// `F_i` for `u = c + w`, together with `max(|D⁻w|, |D⁺w|)` at `i`.
    #[inline]
    fn point(&self, i: usize, c: f64, w: &[f64]) -> (f64, f64) {
        let n = w.len();
        let plan = &self.problem.plan;
        let wi = w[i];
        let wl = w[if i == 0 { n - 1 } else { i - 1 }];
        let wr = w[if i + 1 == n { 0 } else { i + 1 }];
        let a = (wi - wl) * self.inv_h;
        let b = (wr - wi) * self.inv_h;
        let drift = plan.drift(i);
        let transport = if drift > 0.0 { drift * a } else { drift * b };
        let f = self.problem.lambda * (c + wi) - plan.jump_sum(i, w) + transport - self.core[i] * (wr - 2.0 * wi + wl)
            + self.numerical_h(i, a, b);
        (f, a.abs().max(b.abs()))
    }

    fn eval(&self, c: f64, w: &[f64], out: &mut [f64]) -> (f64, f64, f64) {
        let n = w.len();
        let work = n * (1 + self.problem.plan.stencil(0).len());
        let fold = |(lo, hi, g): (f64, f64, f64), (f, gi): (f64, f64)| (lo.min(f), hi.max(f), g.max(gi));
        let init = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        if work < 1 << 17 {
            out.iter_mut().enumerate().fold(init, |acc, (i, o)| {
                let (f, g) = self.point(i, c, w);
                *o = f;
                fold(acc, (f, g))
            })
        } else {
            out.par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .map(|(i, o)| {
                    let (f, g) = self.point(i, c, w);
                    *o = f;
                    (f, g)
                })
                .fold(|| init, fold)
                .reduce(|| init, |x, y| (x.0.min(y.0), x.1.max(y.1), x.2.max(y.2)))
        }
    }
}

fn max_slope(h: &dyn Hamiltonian, xs: &[f64], range: f64) -> f64 {
    const M: usize = 201;
    let stride = (xs.len() / 64).max(1);
    let mut best: f64 = 0.0;
    for x in xs.iter().step_by(stride) {
        for j in 0..M {
            let p = -range + 2.0 * range * j as f64 / (M - 1) as f64;
            best = best.max(h.dp(*x, p).abs());
        }
    }
    best.max(1e-12)
}

/// Discrete residual `λu - I_h u + Ĥ(x, D⁻u, D⁺u)` with the scheme's own operators.
pub fn residual(problem: &ProblemSpec, u: &GridFunction, flux: NumericalFlux) -> Result<GridFunction> {
    if u.n() != problem.n() {
        return Err(Error::GridMismatch {
            expected: problem.n(),
            got: u.n(),
        });
    }
    let range = 2.0 * lipschitz_estimate(u) + 1.0;
    let opts = SchemeOptions {
        flux,
        ..Default::default()
    };
    let scheme = Scheme::new(problem, &opts, range);
    let mut out = vec![0.0; u.n()];
    scheme.eval(0.0, u.values(), &mut out);
    Ok(GridFunction::new(out))
}

/// `max_i |u_{i+1} - u_i| / h`.
pub fn lipschitz_estimate(u: &GridFunction) -> f64 {
    (0..u.n()).map(|i| u.forward_diff(i).abs()).fold(0.0, f64::max)
}

/// Pseudo-time marching `u <- u - Δt F(u)` to a fixed point.
pub fn solve_discounted(
    problem: &ProblemSpec,
    opts: &SchemeOptions,
    init: Option<&GridFunction>,
) -> Result<SolveReport> {
    let lambda = problem.lambda;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(
            "the discounted solver needs lambda > 0; critical objects come from a sweep".into(),
        ));
    }
    if !(opts.safety > 0.0 && opts.safety <= 1.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("need 0 < safety <= 1 and tol > 0".into()));
    }
    let n = problem.n();
    let (mut c, mut w) = match init {
        Some(u0) => {
            if u0.n() != n {
                return Err(Error::GridMismatch {
                    expected: n,
                    got: u0.n(),
                });
            }
            let c = u0.mean();
            (c, u0.values().iter().map(|v| v - c).collect::<Vec<_>>())
        }
        None => (0.0, vec![0.0; n]),
    };
    let lip0 = lipschitz_estimate(&GridFunction::new(w.clone()));
    let mut range = opts.gradient_range.unwrap_or(1.0).max(1.5 * lip0).max(1e-3);
    let mut scheme = Scheme::new(problem, opts, range);
    let mut f = vec![0.0; n];
    let mut first_norm = None;
    let mut iterations = 0;
    loop {
        let (lo, hi, grad) = scheme.eval(c, &w, &mut f);
        if grad > range {
            while range < grad {
                range *= 2.0;
            }
            scheme = Scheme::new(problem, opts, range);
            continue;
        }
        let norm = lo.abs().max(hi.abs());
        if !norm.is_finite() || norm > 1e8 * (1.0 + *first_norm.get_or_insert(norm)) {
            return Err(Error::CflViolation {
                iteration: iterations,
                dt: scheme.dt,
            });
        }
        if norm < opts.tol {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NotConverged {
                iterations,
                residual: norm,
            });
        }
        if opts.accelerate_every > 0 && iterations % opts.accelerate_every == 0 {
            // F(u + s) = F(u) + λs, so this centres the residual range on zero
            c -= 0.5 * (hi + lo) / lambda;
            let shift = 0.5 * (hi + lo);
            for v in f.iter_mut() {
                *v -= shift;
            }
        }
        let dt = scheme.dt;
        for (wi, fi) in w.iter_mut().zip(&f) {
            *wi -= dt * fi;
        }
        // keep w mean-free so its magnitude stays O(1)
        let m = crate::numerics::kahan_sum(w.iter().copied()) / n as f64;
        if m != 0.0 {
            c += m;
            for wi in w.iter_mut() {
                *wi -= m;
            }
        }
        iterations += 1;
    }
    let (lo, hi, _) = scheme.eval(c, &w, &mut f);
    let u = GridFunction::new(w.iter().map(|v| c + v).collect());
    let lambda_u_at_z = lambda * (c + w[problem.anchor]);
    Ok(SolveReport {
        lipschitz_estimate: lipschitz_estimate(&u),
        u,
        residual_inf: lo.abs().max(hi.abs()),
        iterations,
        cfl_dt: scheme.dt,
        lambda,
        lambda_u_at_z,
        theta: scheme.theta,
        gradient_range: scheme.range,
    })
}

/// One explicit update from `u`, exposed for monotonicity and contraction checks.
pub fn scheme_step(problem: &ProblemSpec, opts: &SchemeOptions, u: &GridFunction, range: f64) -> Result<GridFunction> {
    if u.n() != problem.n() {
        return Err(Error::GridMismatch {
            expected: problem.n(),
            got: u.n(),
        });
    }
    let scheme = Scheme::new(problem, opts, range);
    let mut f = vec![0.0; u.n()];
    scheme.eval(0.0, u.values(), &mut f);
    Ok(GridFunction::new(
        u.values().iter().zip(&f).map(|(v, fi)| v - scheme.dt * fi).collect(),
    ))
}

/// Warm start for discount `lambda` from a solution at `prev_lambda`: keeps the
/// shape and rescales the level so that `λ u(z)` is preserved.
pub fn warm_start(prev: &GridFunction, prev_lambda: f64, lambda: f64, anchor: usize) -> GridFunction {
    let uz = prev[anchor];
    prev.shifted(-uz + prev_lambda * uz / lambda)
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::InvalidParameter("empty discount ladder".into()));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "discount ladder must be strictly decreasing".into(),
        ));
    }
    if ladder.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::InvalidParameter("ladder entries must lie in (0, 1)".into()));
    }
    Ok(())
}

fn run_ladder(problem: &ProblemSpec, ladder: &[f64], opts: &SchemeOptions) -> Result<Vec<SolveReport>> {
    check_ladder(ladder)?;
    let mut reports: Vec<SolveReport> = Vec::with_capacity(ladder.len());
    for &lambda in ladder {
        let p = problem.with_lambda(lambda)?;
        let init = reports
            .last()
            .map(|r| warm_start(&r.u, r.lambda, lambda, problem.anchor));
        reports.push(solve_discounted(&p, opts, init.as_ref())?);
    }
    Ok(reports)
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalReport {
    pub c_estimate: f64,
    pub lambdas: Vec<f64>,
    pub lambda_u_z: Vec<f64>,
    /// `min_x H(x, 0)` over the grid.
    pub lower_bound: f64,
    pub lower_bound_holds: bool,
    pub iterations: Vec<usize>,
}

/// `c = -λ u_λ(z)` extrapolated linearly to `λ = 0` from the two smallest discounts.
pub fn critical_constant(problem: &ProblemSpec, ladder: &[f64], opts: &SchemeOptions) -> Result<CriticalReport> {
    let reports = run_ladder(problem, ladder, opts)?;
    let lambdas: Vec<f64> = reports.iter().map(|r| r.lambda).collect();
    let vals: Vec<f64> = reports.iter().map(|r| r.lambda_u_at_z).collect();
    let k = vals.len();
    let limit = if k >= 2 {
        let (l1, v1, l2, v2) = (lambdas[k - 2], vals[k - 2], lambdas[k - 1], vals[k - 1]);
        v2 - l2 * (v1 - v2) / (l1 - l2)
    } else {
        vals[0]
    };
    let c_estimate = -limit;
    let ham = problem.hamiltonian.as_ref();
    let lower_bound = (0..problem.n())
        .map(|i| ham.value(problem.x(i), 0.0))
        .fold(f64::INFINITY, f64::min);
    Ok(CriticalReport {
        c_estimate,
        lower_bound_holds: c_estimate >= lower_bound - 10.0 * opts.tol.max(1e-9),
        lower_bound,
        lambdas,
        lambda_u_z: vals,
        iterations: reports.iter().map(|r| r.iterations).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub reports: Vec<SolveReport>,
    /// `‖u_{λ_k} - u_{λ_{k+1}}‖∞`.
    pub gaps: Vec<f64>,
    pub gaps_decreasing: bool,
    /// `λ ‖u_λ‖∞` along the ladder.
    pub lambda_sup: Vec<f64>,
}

impl SweepReport {
    pub fn lambdas(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.lambda).collect()
    }

    /// Solution at the smallest discount.
    pub fn u_limit(&self) -> &GridFunction {
        &self.reports.last().expect("nonempty sweep").u
    }

    /// Gaps decrease and the last one is below `tol`.
    pub fn is_cauchy(&self, tol: f64) -> bool {
        self.gaps_decreasing && self.gaps.last().is_some_and(|g| *g < tol)
    }
}

/// Solves along the ladder with warm starts. The problem's Hamiltonian is
/// expected to be shifted so that its critical value is zero.
pub fn vanishing_discount_sweep(problem: &ProblemSpec, ladder: &[f64], opts: &SchemeOptions) -> Result<SweepReport> {
    let reports = run_ladder(problem, ladder, opts)?;
    let mut gaps = Vec::with_capacity(reports.len().saturating_sub(1));
    for pair in reports.windows(2) {
        gaps.push(pair[0].u.sup_dist(&pair[1].u)?);
    }
    let gaps_decreasing = gaps.windows(2).all(|g| g[1] <= g[0]);
    let lambda_sup = reports.iter().map(|r| r.lambda * r.u.sup_norm()).collect();
    Ok(SweepReport {
        reports,
        gaps,
        gaps_decreasing,
        lambda_sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{FourierPotential, HamiltonianModel};

    fn model(n: usize, lambda: f64) -> ProblemSpec {
        ProblemSpec::local(Arc::new(HamiltonianModel::model_problem()), n, lambda).unwrap()
    }

    #[test]
    fn constant_potential_gives_constant_solution() {
        let h = Arc::new(HamiltonianModel::quadratic(FourierPotential::constant(0.7)));
        let m = LevyMeasure::power(1.5, 1.0).unwrap();
        let p = ProblemSpec::with_measure(h, &m, &JumpFunction::identity(), 64, 0.5).unwrap();
        let r = solve_discounted(&p, &SchemeOptions::default(), None).unwrap();
        for v in r.u.values() {
            assert!((v + 1.4).abs() < 1e-9);
        }
        let res = residual(&p, &GridFunction::constant(64, -1.4), NumericalFlux::Godunov).unwrap();
        assert!(res.sup_norm() < 1e-12);
    }

    #[test]
    fn zero_discount_rejected() {
        let p = model(32, 0.0);
        assert!(matches!(
            solve_discounted(&p, &SchemeOptions::default(), None),
            Err(Error::InvalidParameter(_))
        ));
        assert!(ProblemSpec::local(Arc::new(HamiltonianModel::model_problem()), 32, 1.0).is_err());
    }

    #[test]
    fn converged_residual_below_tolerance() {
        let p = model(100, 0.5);
        let r = solve_discounted(&p, &SchemeOptions::default(), None).unwrap();
        assert!(r.residual_inf < 1e-10);
        let res = residual(&p, &r.u, NumericalFlux::Godunov).unwrap();
        assert!(res.sup_norm() < 1e-9);
    }

    #[test]
    fn model_problem_anchor_value_is_exact() {
        // at x = 0 the solution has a smooth minimum and H(0, 0) = 1
        let p = model(100, 0.2);
        let r = solve_discounted(&p, &SchemeOptions::default(), None).unwrap();
        assert!((r.lambda_u_at_z + 1.0).abs() < 1e-9, "{}", r.lambda_u_at_z);
    }

    #[test]
    fn single_node_perturbation_raises_residual() {
        let p = model(100, 0.5);
        let r = solve_discounted(&p, &SchemeOptions::default(), None).unwrap();
        let eps = 1e-3;
        let mut u = r.u.clone();
        u.values_mut()[37] += eps;
        let res = residual(&p, &u, NumericalFlux::Godunov).unwrap();
        assert!(res[37] >= 0.5 * eps - 1e-9);
    }

    #[test]
    fn lipschitz_of_sine() {
        let u = GridFunction::from_fn(400, |x| (2.0 * std::f64::consts::PI * x).sin());
        let k = lipschitz_estimate(&u);
        assert!((k - 2.0 * std::f64::consts::PI).abs() < 0.01);
        assert_eq!(lipschitz_estimate(&GridFunction::constant(10, 3.0)), 0.0);
    }

    #[test]
    fn ladder_validation() {
        let p = model(32, 0.5);
        let o = SchemeOptions::default();
        assert!(critical_constant(&p, &[0.1, 0.2], &o).is_err());
        assert!(critical_constant(&p, &[], &o).is_err());
    }

    #[test]
    fn constant_potential_critical_value() {
        let h = Arc::new(HamiltonianModel::quadratic(FourierPotential::constant(-0.3)));
        let p = ProblemSpec::local(h, 32, 0.5).unwrap();
        let r = critical_constant(&p, &[0.1, 0.05, 0.01], &SchemeOptions::default()).unwrap();
        assert!((r.c_estimate + 0.3).abs() < 1e-9);
        assert!(r.lower_bound_holds);
    }

    #[test]
    fn lax_friedrichs_converges_too() {
        let p = model(64, 0.5);
        let opts = SchemeOptions {
            flux: NumericalFlux::LaxFriedrichs,
            ..Default::default()
        };
        let r = solve_discounted(&p, &opts, None).unwrap();
        assert!(r.residual_inf < 1e-10);
    }
}
