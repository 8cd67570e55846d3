//! Subsolution approximation: sup-convolution, mollification and the
//! smoothing pipelines built from them.
//!
//! All defects are measured with the Godunov residual of the solver, so a
//! function with defect `d` satisfies `λu - I_h u + Ĥ(x, D⁻u, D⁺u) ≤ d` at
//! every node. At convex kinks Godunov takes the minimum of `H` over the
//! one-sided gradient interval, which is the subdifferential rule for
//! semiconvex functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::solver::{lipschitz_estimate, residual, NumericalFlux, ProblemSpec};

/// Discrete sup-convolution `v^ε(x_i) = max_j v(x_i + jh) - (jh)²/2ε`.
#[derive(Clone, Debug)]
pub struct SupConvolutionResult {
    pub epsilon: f64,
    pub v_eps: GridFunction,
    /// Lifted maximizer indices: `y(x_i) = x_i + (argmax[i] - i) h` on the real line.
    pub argmax: Vec<isize>,
    /// Search half-width in cells.
    pub window: usize,
    /// Residual defect, filled in by [`sup_convolution_defect`].
    pub defect: Option<f64>,
}

impl SupConvolutionResult {
    /// Largest displacement `|x - y(x)|` over the grid.
    pub fn max_displacement(&self) -> f64 {
        let h = self.v_eps.h();
        self.argmax
            .iter()
            .enumerate()
            .map(|(i, &y)| (y - i as isize).unsigned_abs() as f64 * h)
            .fold(0.0, f64::max)
    }

    /// Smallest second difference `v^ε_{i+1} - 2v^ε_i + v^ε_{i-1}`; never below `-h²/ε`.
    pub fn min_second_difference(&self) -> f64 {
        let v = &self.v_eps;
        (0..v.n())
            .map(|i| v.at(i as isize + 1) - 2.0 * v[i] + v.at(i as isize - 1))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Exact maximization over the periodic grid, lifted to the line.
///
/// The window is `2√(ε·‖v - mid‖∞) + h` with `mid` the mid-range of `v`.
/// Beyond it the penalty exceeds the oscillation of `v`, so it never loses the
/// global maximum, and it does not grow when `v` carries a large constant.
pub fn sup_convolution(v: &GridFunction, epsilon: f64) -> Result<SupConvolutionResult> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sup-convolution needs epsilon > 0, got {epsilon}"
        )));
    }
    let n = v.n();
    let h = v.h();
    let half_osc = 0.5 * (v.max() - v.min());
    let radius = 2.0 * (epsilon * half_osc).sqrt() + h;
    let window = (radius / h).ceil() as usize;
    let vals = v.values();
    let penalty: Vec<f64> = (0..=window)
        .map(|j| {
            let d = j as f64 * h;
            d * d / (2.0 * epsilon)
        })
        .collect();
    let (out, argmax): (Vec<f64>, Vec<isize>) = (0..n)
        .into_par_iter()
        .with_min_len(32)
        .map(|i| {
            let mut best = vals[i];
            let mut arg = i as isize;
            // Increasing |j| with strict improvement keeps the nearest maximizer.
            for j in 1..=window {
                for s in [-(j as isize), j as isize] {
                    let y = i as isize + s;
                    let cand = vals[crate::grid::wrap(y, n)] - penalty[j];
                    if cand > best {
                        best = cand;
                        arg = y;
                    }
                }
            }
            (best, arg)
        })
        .unzip();
    Ok(SupConvolutionResult {
        epsilon,
        v_eps: GridFunction::new(out),
        argmax,
        window,
        defect: None,
    })
}

/// `max(0, max_i F_i(u))` for the Godunov residual with discount `λ`.
pub fn subsolution_defect(problem: &ProblemSpec, lambda: f64, u: &GridFunction) -> Result<f64> {
    let p = if lambda == problem.lambda {
        problem.clone()
    } else {
        problem.with_lambda(lambda)?
    };
    let r = residual(&p, u, NumericalFlux::Godunov)?;
    Ok(r.max().max(0.0))
}

/// Sup-convolution with its defect measured against `problem`.
pub fn sup_convolution_defect(problem: &ProblemSpec, v: &GridFunction, epsilon: f64) -> Result<SupConvolutionResult> {
    let mut res = sup_convolution(v, epsilon)?;
    res.defect = Some(subsolution_defect(problem, problem.lambda, &res.v_eps)?);
    Ok(res)
}

/// Whether the theorem behind a smoothing step has its hypotheses met.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypotheses {
    Met,
    /// No integrated Lipschitz constant for the jumps was declared: the output is heuristic.
    Unmet,
}

#[derive(Clone, Debug)]
pub struct MollifiedSubsolution {
    pub epsilon: f64,
    /// Kernel half-width in cells; zero means the identity was applied.
    pub half_width: usize,
    pub u_eps: GridFunction,
    /// Measured `‖u_eps - v‖∞`.
    pub sup_change: f64,
    /// A priori bound `Lip(v)·ε` on `sup_change`.
    pub bound: f64,
    /// Nonlocal defect surcharge `2 C₀ Lip(v) ε`, when `C₀` is known.
    pub surcharge: Option<f64>,
    pub hypotheses: Hypotheses,
    /// Residual defect, when measured against a problem.
    pub defect: Option<f64>,
}

/// Normalized samples of `exp(-1/(1-t²))` at `t = j/(m+1)`, `|j| ≤ m`.
fn bump_weights(m: usize) -> Vec<f64> {
    let scale = (m + 1) as f64;
    let raw: Vec<f64> = (-(m as isize)..=m as isize)
        .map(|j| {
            let t = j as f64 / scale;
            (-1.0 / (1.0 - t * t)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn convolve(v: &GridFunction, weights: &[f64]) -> GridFunction {
    let n = v.n();
    let m = (weights.len() / 2) as isize;
    let vals = v.values();
    let (lo, hi) = (v.min(), v.max());
    let out: Vec<f64> = (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            // Summing differences keeps constants exact.
            let vi = vals[i];
            let acc: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * (vals[crate::grid::wrap(i as isize + k as isize - m, n)] - vi))
                .sum();
            (vi + acc).clamp(lo, hi)
        })
        .collect();
    GridFunction::new(out)
}

/// Periodic convolution with a smooth bump of half-width `ε`.
///
/// The kernel support is `|y| < ε`, sampled at the nodes; when `ε` is below
/// two cells there are no interior nodes worth smoothing with and the
/// identity is returned.
pub fn mollify(v: &GridFunction, epsilon: f64, c0: Option<f64>) -> Result<MollifiedSubsolution> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mollifier width must be >= 0, got {epsilon}"
        )));
    }
    let h = v.h();
    let cells = (epsilon / h + 1e-9).floor() as usize;
    let half_width = if cells < 2 { 0 } else { (cells - 1).min(v.n() / 2) };
    let u_eps = if half_width == 0 {
        v.clone()
    } else {
        convolve(v, &bump_weights(half_width))
    };
    let lip = lipschitz_estimate(v);
    let hypotheses = if c0.is_some() {
        Hypotheses::Met
    } else {
        Hypotheses::Unmet
    };
    Ok(MollifiedSubsolution {
        epsilon,
        half_width,
        sup_change: u_eps.sup_dist(v)?,
        u_eps,
        bound: lip * epsilon,
        surcharge: c0.map(|c| 2.0 * c * lip * epsilon),
        hypotheses,
        defect: None,
    })
}

/// [`mollify`] with the jump constant taken from `problem` and the defect measured.
pub fn mollify_for(problem: &ProblemSpec, v: &GridFunction, epsilon: f64) -> Result<MollifiedSubsolution> {
    let mut m = mollify(v, epsilon, declared_c0(problem))?;
    if m.hypotheses == Hypotheses::Unmet {
        log::warn!("mollifying without a declared C0 for the jumps: defect bound is heuristic");
    }
    m.defect = Some(subsolution_defect(problem, problem.lambda, &m.u_eps)?);
    Ok(m)
}

/// `C₀` of the jump spec; a purely local operator satisfies the condition with `C₀ = 0`.
fn declared_c0(problem: &ProblemSpec) -> Option<f64> {
    if problem.plan.is_local() {
        Some(0.0)
    } else {
        problem.plan.jump().c0
    }
}

/// Decreasing smooth approximations `v_k ↓ v`.
///
/// `v_k = ρ_{δ_k} * (v^{ε_k} + 2^{-k})` with `ε_k = 0.1·4^{-k}` and `δ_k` halved
/// from `1/4` until the mollifier moves the function by at most `2^{-k-2}`.
pub fn monotone_smooth_sequence(v: &GridFunction, k_max: usize) -> Result<Vec<GridFunction>> {
    if k_max < 2 {
        return Err(Error::InvalidParameter(
            "monotone_smooth_sequence needs k_max >= 2".into(),
        ));
    }
    let mut out: Vec<GridFunction> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let eps = 0.1 * 0.25f64.powi(k as i32);
        let shift = 0.5f64.powi(k as i32);
        let w = sup_convolution(v, eps)?.v_eps.shifted(shift);
        let tol = 0.25 * shift;
        let mut width = 0.25;
        let smooth = loop {
            let m = mollify(&w, width, None)?;
            if m.sup_change <= tol {
                break m.u_eps;
            }
            width *= 0.5;
        };
        if let Some(prev) = out.last() {
            if smooth.values().iter().zip(prev.values()).any(|(a, b)| a > b) {
                return Err(Error::MonotonicityViolation(k));
            }
        }
        out.push(smooth);
    }
    Ok(out)
}

/// Result of the ε-bisection for a defect target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub target: f64,
    pub epsilon: f64,
    pub defect: f64,
    pub evaluations: usize,
}

/// Largest `ε ≤ eps_max` (to bisection accuracy in `log ε`) whose sup-convolution
/// has defect `≤ target`.
///
/// Proofs only give existence of such an `ε`; here it is measured. Below
/// `ε_floor = h²/(2(osc v + 1))` the discrete sup-convolution is the identity,
/// so failure at the floor means `v` itself misses the target.
pub fn epsilon_for_defect(
    problem: &ProblemSpec,
    v: &GridFunction,
    target: f64,
    eps_max: f64,
) -> Result<EpsilonSchedule> {
    if !(target > 0.0) || !(eps_max > 0.0) {
        return Err(Error::InvalidParameter(
            "defect target and eps_max must be positive".into(),
        ));
    }
    let h = v.h();
    let floor = h * h / (2.0 * (v.max() - v.min() + 1.0));
    let defect_at =
        |eps: f64| -> Result<f64> { subsolution_defect(problem, problem.lambda, &sup_convolution(v, eps)?.v_eps) };
    let mut evaluations = 1;
    let d_hi = defect_at(eps_max)?;
    if d_hi <= target {
        return Ok(EpsilonSchedule {
            target,
            epsilon: eps_max,
            defect: d_hi,
            evaluations,
        });
    }
    let mut lo = floor.min(eps_max);
    let mut d_lo = defect_at(lo)?;
    evaluations += 1;
    if d_lo > target {
        return Err(Error::ScheduleFailure {
            n: 0,
            required: target,
            achieved: d_lo,
            grid_needed: grid_estimate(v.n(), d_lo, target),
        });
    }
    let mut hi = eps_max;
    while hi / lo > 1.0 + 1e-3 && evaluations < 64 {
        let mid = (lo * hi).sqrt();
        let d = defect_at(mid)?;
        evaluations += 1;
        if d <= target {
            lo = mid;
            d_lo = d;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonSchedule {
        target,
        epsilon: lo,
        defect: d_lo,
        evaluations,
    })
}

/// Grid size at which a first-order defect would shrink from `achieved` to `required`.
fn grid_estimate(n: usize, achieved: f64, required: f64) -> usize {
    let ratio = (achieved / required).max(1.0);
    ((n as f64) * ratio).ceil() as usize
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothingOptions {
    /// Cap `ε_n ≤ eps_max / n` on the sup-convolution parameter.
    pub eps_max: f64,
    /// Cap `δ_n ≤ max(width_max / n, 2h)` on the mollifier half-width.
    pub width_max: f64,
    /// Share of the defect budget `1/n` given to the sup-convolution step.
    pub sup_share: f64,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        SmoothingOptions {
            eps_max: 0.02,
            width_max: 0.05,
            sup_share: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SmoothStep {
    pub n: usize,
    pub u: GridFunction,
    pub defect: f64,
    pub epsilon: f64,
    pub width: f64,
    pub sup_dist: f64,
}

#[derive(Clone, Debug)]
pub struct SmoothSequence {
    pub steps: Vec<SmoothStep>,
    pub hypotheses: Hypotheses,
}

/// Smooth subsolutions `u_n` with defect `≤ 1/n`: sup-convolution with a
/// bisected `ε_n`, then mollification with a bisected width.
pub fn smooth_subsolution_sequence(
    problem: &ProblemSpec,
    v: &GridFunction,
    n_max: usize,
    opts: &SmoothingOptions,
) -> Result<SmoothSequence> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if !(opts.sup_share > 0.0 && opts.sup_share < 1.0) {
        return Err(Error::InvalidParameter("sup_share must lie in (0, 1)".into()));
    }
    let hypotheses = if declared_c0(problem).is_some() {
        Hypotheses::Met
    } else {
        log::warn!("jump spec declares no C0: smoothing output is heuristic");
        Hypotheses::Unmet
    };
    let h = problem.h();
    let mut steps = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let target = 1.0 / n as f64;
        let sched =
            epsilon_for_defect(problem, v, opts.sup_share * target, opts.eps_max / n as f64).map_err(|e| match e {
                Error::ScheduleFailure {
                    achieved, grid_needed, ..
                } => Error::ScheduleFailure {
                    n,
                    required: target,
                    achieved,
                    grid_needed,
                },
                other => other,
            })?;
        let w = sup_convolution(v, sched.epsilon)?.v_eps;
        let width_cap = (opts.width_max / n as f64).max(2.0 * h);
        let (u, width, defect) = widest_mollifier(problem, &w, target, width_cap, h)?;
        if defect > target {
            return Err(Error::ScheduleFailure {
                n,
                required: target,
                achieved: defect,
                grid_needed: grid_estimate(problem.n(), defect, target),
            });
        }
        let sup_dist = u.sup_dist(v)?;
        steps.push(SmoothStep {
            n,
            u,
            defect,
            epsilon: sched.epsilon,
            width,
            sup_dist,
        });
    }
    Ok(SmoothSequence { steps, hypotheses })
}

/// Widest mollifier in `[2h, width_max]` keeping the defect under `target`,
/// falling back to the identity.
fn widest_mollifier(
    problem: &ProblemSpec,
    w: &GridFunction,
    target: f64,
    width_max: f64,
    h: f64,
) -> Result<(GridFunction, f64, f64)> {
    let attempt = |width: f64| -> Result<(GridFunction, f64)> {
        let m = mollify(w, width, None)?;
        let d = subsolution_defect(problem, problem.lambda, &m.u_eps)?;
        Ok((m.u_eps, d))
    };
    let min_width = 2.0 * h;
    if width_max >= min_width {
        let (u, d) = attempt(width_max)?;
        if d <= target {
            return Ok((u, width_max, d));
        }
        let mut hi = width_max;
        let mut lo = min_width;
        let (mut best_u, mut best_d) = attempt(lo)?;
        if best_d <= target {
            while hi - lo > h {
                let mid = 0.5 * (lo + hi);
                let (u, d) = attempt(mid)?;
                if d <= target {
                    lo = mid;
                    best_u = u;
                    best_d = d;
                } else {
                    hi = mid;
                }
            }
            return Ok((best_u, lo, best_d));
        }
    }
    let d = subsolution_defect(problem, problem.lambda, w)?;
    Ok((w.clone(), 0.0, d))
}

/// Pointwise maximum of two grid functions.
pub fn pointwise_max(u: &GridFunction, w: &GridFunction) -> Result<GridFunction> {
    u.check_same_size(w)?;
    Ok(GridFunction::new(
        u.values().iter().zip(w.values()).map(|(a, b)| a.max(*b)).collect(),
    ))
}

/// Closed form of the sup-convolution of `-dist(x, 0)` on the line: a parabolic
/// cap of curvature `-1/ε` for `|x| < ε`, then `-|x| + ε/2`.
pub fn sup_convolution_of_cone(x: f64, epsilon: f64) -> f64 {
    let a = x.abs();
    if a < epsilon {
        -a * a / (2.0 * epsilon)
    } else {
        -a + 0.5 * epsilon
    }
}

/// Periodic sawtooth `dist(x, 0)`, a Lipschitz function with two kinks.
pub fn sawtooth(x: f64) -> f64 {
    crate::grid::torus_dist(x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianModel;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn model(n: usize, lambda: f64) -> ProblemSpec {
        ProblemSpec::local(Arc::new(HamiltonianModel::model_problem()), n, lambda).unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let v = GridFunction::constant(64, 0.7);
        let s = sup_convolution(&v, 0.1).unwrap();
        assert_eq!(s.v_eps, v);
        assert!(s.argmax.iter().enumerate().all(|(i, &y)| y == i as isize));
        let m = mollify(&v, 0.2, None).unwrap();
        assert_eq!(m.u_eps, v);
        assert_eq!(m.hypotheses, Hypotheses::Unmet);
    }

    #[test]
    fn cone_matches_closed_form() {
        let n = 512;
        let eps = 0.02;
        let v = GridFunction::from_fn(n, |x| -sawtooth(x));
        let s = sup_convolution(&v, eps).unwrap();
        for i in 0..n {
            let x = v.x(i);
            let xl = if x > 0.5 { x - 1.0 } else { x };
            if xl.abs() > 0.4 {
                continue;
            }
            // Grid maximizers only see y on the grid, which is exact when the
            // continuous maximizer (y = 0 or y = x ∓ ε) is a node.
            let exact = sup_convolution_of_cone(xl, eps);
            assert!((s.v_eps[i] - exact).abs() < v.h() * v.h() / eps, "i={i}");
        }
    }

    #[test]
    fn spike_raises_defect() {
        let p = model(100, 0.5);
        let u = GridFunction::constant(100, -2.0);
        let base = subsolution_defect(&p, 0.5, &u).unwrap();
        let mut spiked = u.clone();
        spiked.values_mut()[10] += 0.1;
        let d = subsolution_defect(&p, 0.5, &spiked).unwrap();
        assert!(d >= base + 0.1 * 0.5);
    }

    #[test]
    fn bump_is_normalized_and_symmetric() {
        let w = bump_weights(5);
        assert_eq!(w.len(), 11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..5 {
            assert_eq!(w[k], w[10 - k]);
        }
    }

    #[test]
    fn narrow_mollifier_is_identity() {
        let v = GridFunction::from_fn(100, |x| (2.0 * PI * x).sin());
        let m = mollify(&v, 0.015, None).unwrap();
        assert_eq!(m.half_width, 0);
        assert_eq!(m.u_eps, v);
    }

    #[test]
    fn sawtooth_mollification_bound() {
        let v = GridFunction::from_fn(400, sawtooth);
        let m = mollify(&v, 0.05, Some(1.0)).unwrap();
        assert!(m.sup_change <= m.bound + 1e-12);
        assert!((m.surcharge.unwrap() - 2.0 * m.bound).abs() < 1e-12);
    }

    #[test]
    fn zero_sequence_is_dyadic() {
        let v = GridFunction::zeros(64);
        let seq = monotone_smooth_sequence(&v, 5).unwrap();
        for (k, vk) in seq.iter().enumerate() {
            let expect = 0.5f64.powi(k as i32 + 1);
            assert!(vk.values().iter().all(|&x| x == expect));
        }
    }
}
