//! Hamiltonians on the torus and the growth class `H(α₀, α₁, γ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::torus_dist;

/// A continuous Hamiltonian `H(x, p)` on `T¹ × R`.
pub trait Hamiltonian: Send + Sync {
    fn value(&self, x: f64, p: f64) -> f64;

    /// `∂H/∂p`, by symmetric difference unless overridden.
    fn dp(&self, x: f64, p: f64) -> f64 {
        let step = 1e-6 * (1.0 + p.abs());
        (self.value(x, p + step) - self.value(x, p - step)) / (2.0 * step)
    }
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> Hamiltonian for F {
    fn value(&self, x: f64, p: f64) -> f64 {
        self(x, p)
    }
}

/// `V(x) = c + Σ a_m cos(2π m x) + Σ b_m sin(2π m x)`, modes counted from 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierPotential {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl FourierPotential {
    pub fn constant(c: f64) -> Self {
        FourierPotential {
            constant: c,
            ..Default::default()
        }
    }

    /// `cos(2πx)`.
    pub fn cosine() -> Self {
        FourierPotential {
            constant: 0.0,
            cos: vec![1.0],
            sin: vec![],
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let mut v = self.constant;
        for (m, a) in self.cos.iter().enumerate() {
            v += a * (2.0 * PI * (m + 1) as f64 * x).cos();
        }
        for (m, b) in self.sin.iter().enumerate() {
            v += b * (2.0 * PI * (m + 1) as f64 * x).sin();
        }
        v
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let mut v = 0.0;
        for (m, a) in self.cos.iter().enumerate() {
            let k = 2.0 * PI * (m + 1) as f64;
            v -= a * k * (k * x).sin();
        }
        for (m, b) in self.sin.iter().enumerate() {
            let k = 2.0 * PI * (m + 1) as f64;
            v += b * k * (k * x).cos();
        }
        v
    }

    /// Upper bound `Σ 2πm (|a_m| + |b_m|)` on the Lipschitz constant.
    pub fn lipschitz_bound(&self) -> f64 {
        let modes = self.cos.len().max(self.sin.len());
        (0..modes)
            .map(|m| {
                let a = self.cos.get(m).copied().unwrap_or(0.0).abs();
                let b = self.sin.get(m).copied().unwrap_or(0.0).abs();
                2.0 * PI * (m + 1) as f64 * (a + b)
            })
            .sum()
    }

    /// Maximum and its location, sampled on `samples` points then polished.
    pub fn max_with_arg(&self, samples: usize) -> (f64, f64) {
        extremum(|x| self.value(x), samples)
    }

    pub fn min_with_arg(&self, samples: usize) -> (f64, f64) {
        let (x, v) = extremum(|x| -self.value(x), samples);
        (x, -v)
    }
}

fn extremum(f: impl Fn(f64) -> f64, samples: usize) -> (f64, f64) {
    let samples = samples.max(8);
    let h = 1.0 / samples as f64;
    let (mut best_x, mut best) = (0.0, f(0.0));
    for i in 1..samples {
        let x = i as f64 * h;
        let v = f(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let (x, v) = crate::numerics::golden_max(&f, best_x - h, best_x + h, 1e-13);
    if v >= best {
        (x.rem_euclid(1.0), v)
    } else {
        (best_x, best)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum HamiltonianFamily {
    /// `p² + V(x)`.
    QuadraticPlusPotential,
    /// `|p|^γ / γ + V(x)`.
    Power { gamma: f64 },
}

/// Declared constants of the class `H(α₀, α₁, γ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassConstants {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma: f64,
}

/// `H(x, p) = kinetic(p) + V(x) - shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianModel {
    pub family: HamiltonianFamily,
    pub potential: FourierPotential,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub class: Option<ClassConstants>,
}

impl HamiltonianModel {
    pub fn quadratic(potential: FourierPotential) -> Self {
        HamiltonianModel {
            family: HamiltonianFamily::QuadraticPlusPotential,
            potential,
            shift: 0.0,
            class: None,
        }
    }

    pub fn power(gamma: f64, potential: FourierPotential) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "power family needs gamma > 1, got {gamma}"
            )));
        }
        Ok(HamiltonianModel {
            family: HamiltonianFamily::Power { gamma },
            potential,
            shift: 0.0,
            class: None,
        })
    }

    /// `p² + cos(2πx)`, the model problem.
    pub fn model_problem() -> Self {
        Self::quadratic(FourierPotential::cosine())
    }

    pub fn with_class(mut self, class: ClassConstants) -> Self {
        self.class = Some(class);
        self
    }

    /// Returns `H - c`, composing with any existing shift.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.shift += c;
        out
    }

    /// Every supported family is convex in `p`.
    pub fn is_convex(&self) -> bool {
        true
    }

    pub fn kinetic(&self, p: f64) -> f64 {
        match self.family {
            HamiltonianFamily::QuadraticPlusPotential => p * p,
            HamiltonianFamily::Power { gamma } => p.abs().powf(gamma) / gamma,
        }
    }
}

impl Hamiltonian for HamiltonianModel {
    fn value(&self, x: f64, p: f64) -> f64 {
        self.kinetic(p) + self.potential.value(x) - self.shift
    }

    fn dp(&self, _x: f64, p: f64) -> f64 {
        match self.family {
            HamiltonianFamily::QuadraticPlusPotential => 2.0 * p,
            HamiltonianFamily::Power { gamma } => p.signum() * p.abs().powf(gamma - 1.0),
        }
    }
}

/// Sample points for the class checks.
#[derive(Clone, Debug)]
pub struct ClassSamples {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
}

impl ClassSamples {
    pub fn uniform(n_x: usize, n_p: usize, p_max: f64) -> Self {
        let xs = (0..n_x).map(|i| i as f64 / n_x as f64).collect();
        let ps = (0..n_p)
            .map(|i| -p_max + 2.0 * p_max * i as f64 / (n_p.max(2) - 1) as f64)
            .collect();
        ClassSamples { xs, ps }
    }
}

impl Default for ClassSamples {
    fn default() -> Self {
        Self::uniform(64, 81, 10.0)
    }
}

/// Worst sampled slack of one inequality; `margin >= -1e-9` passes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionMargin {
    pub name: String,
    pub worst_margin: f64,
    /// Sample attaining the worst margin, as `(x, p)` or `(x, p, q|y)`.
    pub witness: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub constants: ClassConstants,
    pub conditions: Vec<ConditionMargin>,
}

impl ClassReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionMargin> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

const CLASS_SLACK: f64 = 1e-9;

struct Worst {
    margin: f64,
    witness: Vec<f64>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::INFINITY,
            witness: vec![],
        }
    }

    fn offer(&mut self, margin: f64, witness: &[f64]) {
        if margin < self.margin {
            self.margin = margin;
            self.witness = witness.to_vec();
        }
    }

    fn finish(self, name: &str) -> ConditionMargin {
        ConditionMargin {
            name: name.to_string(),
            passed: self.margin >= -CLASS_SLACK,
            worst_margin: self.margin,
            witness: self.witness,
        }
    }
}

/// Checks the growth bounds G1, the `p`-Lipschitz bound G2 and the
/// `x`-Lipschitz bound G3 on the sample set. G3 uses the torus distance.
pub fn check_class_membership(h: &dyn Hamiltonian, c: ClassConstants, samples: &ClassSamples) -> ClassReport {
    let ClassConstants {
        alpha0: a0,
        alpha1: a1,
        gamma,
    } = c;
    let mut g1 = Worst::new();
    let mut g2 = Worst::new();
    let mut g3 = Worst::new();
    for &x in &samples.xs {
        for &p in &samples.ps {
            let v = h.value(x, p);
            let lower = v - (a0 * p.abs().powf(gamma) - 1.0 / a0);
            let upper = a1 * (p.abs().powf(gamma) + 1.0) - v;
            g1.offer(lower.min(upper), &[x, p]);
            for &q in &samples.ps {
                let bound = a1 * (p.abs() + q.abs() + 1.0).powf(gamma - 1.0) * (p - q).abs();
                g2.offer(bound - (v - h.value(x, q)).abs(), &[x, p, q]);
            }
            for &y in &samples.xs {
                let bound = a1 * (p.abs().powf(gamma) + 1.0) * torus_dist(x, y);
                g3.offer(bound - (v - h.value(y, p)).abs(), &[x, p, y]);
            }
        }
    }
    ClassReport {
        constants: c,
        conditions: vec![g1.finish("G1"), g2.finish("G2"), g3.finish("G3")],
    }
}

/// Midpoint convexity `H(x, (p+q)/2) <= (H(x,p) + H(x,q)) / 2 + 1e-12` on samples.
pub fn check_midpoint_convexity(h: &dyn Hamiltonian, samples: &ClassSamples) -> bool {
    samples.xs.iter().all(|&x| {
        samples.ps.iter().all(|&p| {
            samples.ps.iter().all(|&q| {
                h.value(x, 0.5 * (p + q)) <= 0.5 * (h.value(x, p) + h.value(x, q)) + 1e-12 * (1.0 + h.value(x, p).abs())
            })
        })
    })
}

/// Constants of the scaling inequality
/// `μ G(x, p/μ) - G(x, p) >= (1 - μ)(b |p|^γ - K)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BltConstants {
    pub tau: f64,
    pub b: f64,
    pub k: f64,
}

/// `τ = (α₀/(2α₁))^{1/(γ-1)}`, `b = α₀τ / (2(1-τ))`, `K = (τ + α₀α₁) / (α₀(1-τ))`.
pub fn derive_blt_constants(alpha0: f64, alpha1: f64, gamma: f64) -> Result<BltConstants> {
    if !(alpha0 > 0.0) || !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need alpha0 > 0 and gamma > 1, got alpha0 = {alpha0}, gamma = {gamma}"
        )));
    }
    if !(alpha1 >= alpha0) {
        return Err(Error::InvalidParameter(format!(
            "alpha1 = {alpha1} must be at least alpha0 = {alpha0}"
        )));
    }
    let tau = (alpha0 / (2.0 * alpha1)).powf(1.0 / (gamma - 1.0));
    let b = alpha0 * tau / (2.0 * (1.0 - tau));
    let k = (tau + alpha0 * alpha1) / (alpha0 * (1.0 - tau));
    Ok(BltConstants { tau, b, k })
}

/// Random sampling of `(μ, x, p)` for the scaling inequality.
#[derive(Clone, Copy, Debug)]
pub struct BltSamples {
    pub count: usize,
    pub p_max: f64,
    pub seed: u64,
}

impl Default for BltSamples {
    fn default() -> Self {
        BltSamples {
            count: 10_000,
            p_max: 20.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BltReport {
    pub samples: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

pub fn check_blt(h: &dyn Hamiltonian, b: f64, k: f64, gamma: f64, samples: BltSamples) -> BltReport {
    let mut rng = ChaCha8Rng::seed_from_u64(samples.seed);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..samples.count {
        let mu: f64 = rng.gen_range(1e-3..1.0);
        let x: f64 = rng.gen_range(0.0..1.0);
        let p: f64 = rng.gen_range(-samples.p_max..=samples.p_max);
        let lhs = mu * h.value(x, p / mu) - h.value(x, p);
        let rhs = (1.0 - mu) * (b * p.abs().powf(gamma) - k);
        let margin = lhs - rhs;
        // relative slack: the left side is a difference of terms of size |p/μ|^γ
        let scale = 1.0 + (mu * h.value(x, p / mu)).abs();
        if margin < -1e-9 * scale {
            violations += 1;
        }
        worst = worst.min(margin);
    }
    BltReport {
        samples: samples.count,
        violations,
        worst_margin: worst,
    }
}

/// Outcome of the doubling-bound check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingReport {
    /// `b / 2^{γ+1}`.
    pub eta: f64,
    /// Smallest `k` with `D = b δ^γ 2^{k(γ-1)} / 2^{γ+1} - K >= 0`.
    pub k_min: u32,
    /// `D` at `k_min`.
    pub d_at_k_min: f64,
    /// `(k, worst margin of G(x,tp) - tG(x,p) - η t^γ |p|^γ)` for `t = 2^k`.
    pub checked: Vec<(u32, f64)>,
    pub violations: usize,
}

/// Doubling quantity `D(k) = b δ^γ (2^k)^{γ-1} / 2^{γ+1} - K`.
pub fn doubling_d(b: f64, k_const: f64, gamma: f64, delta: f64, k: u32) -> f64 {
    b * delta.powf(gamma) * 2f64.powf(k as f64 * (gamma - 1.0)) / 2f64.powf(gamma + 1.0) - k_const
}

/// Worst margins of `G(x, tp) - t G(x, p) - η t^γ |p|^γ` for `t = 2^k`, `k` in
/// `ks`, over samples with `|p| >= delta`, and the number of violations.
pub fn barles_margins(
    h: &dyn Hamiltonian,
    eta: f64,
    gamma: f64,
    delta: f64,
    ks: std::ops::RangeInclusive<u32>,
    samples: &ClassSamples,
) -> (Vec<(u32, f64)>, usize) {
    let mut checked = Vec::new();
    let mut violations = 0;
    for k in ks {
        let t = 2f64.powi(k as i32);
        let mut worst = f64::INFINITY;
        for &x in &samples.xs {
            for &p in samples.ps.iter().filter(|p| p.abs() >= delta) {
                let lhs = h.value(x, t * p) - t * h.value(x, p);
                let rhs = eta * t.powf(gamma) * p.abs().powf(gamma);
                let margin = lhs - rhs;
                if margin < -1e-9 * (1.0 + h.value(x, t * p).abs()) {
                    violations += 1;
                }
                worst = worst.min(margin);
            }
        }
        checked.push((k, worst));
    }
    (checked, violations)
}

/// Finds `k_min` and verifies `G(x, tp) - t G(x, p) >= η t^γ |p|^γ` for
/// `t = 2^k`, `k_min <= k <= k_min + 5`, on samples with `|p| >= delta`.
pub fn check_doubling_bound(
    h: &dyn Hamiltonian,
    delta: f64,
    gamma: f64,
    b: f64,
    k_const: f64,
    samples: &ClassSamples,
) -> Result<DoublingReport> {
    if !(delta > 0.0 && b > 0.0 && gamma > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need delta > 0, b > 0, gamma > 1; got delta = {delta}, b = {b}, gamma = {gamma}"
        )));
    }
    let eta = b / 2f64.powf(gamma + 1.0);
    let mut k_min = 0u32;
    while doubling_d(b, k_const, gamma, delta, k_min) < 0.0 {
        k_min += 1;
        if k_min > 1000 {
            return Err(Error::InvalidParameter("doubling bound needs k > 1000".into()));
        }
    }
    let (checked, violations) = barles_margins(h, eta, gamma, delta, k_min..=k_min + 5, samples);
    Ok(DoublingReport {
        eta,
        k_min,
        d_at_k_min: doubling_d(b, k_const, gamma, delta, k_min),
        checked,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts(a0: f64, a1: f64, g: f64) -> ClassConstants {
        ClassConstants {
            alpha0: a0,
            alpha1: a1,
            gamma: g,
        }
    }

    #[test]
    fn blt_constants_closed_forms() {
        let c = derive_blt_constants(1.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(c.tau, 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.b, 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.k, 3.0, epsilon = 1e-15);
        let c = derive_blt_constants(1.0, 2.0, 2.0).unwrap();
        assert_relative_eq!(c.tau, 0.25, epsilon = 1e-15);
        assert_relative_eq!(c.b, 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(c.k, 3.0, epsilon = 1e-15);
        assert!(derive_blt_constants(2.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn tau_base_is_half_at_equal_alphas() {
        // (1/2)^{1/(γ-1)}: equals 1/2 at γ = 2 and vanishes as γ decreases to 1
        let at_two = derive_blt_constants(1.5, 1.5, 2.0).unwrap();
        assert_relative_eq!(at_two.tau, 0.5, epsilon = 1e-15);
        let near_one = derive_blt_constants(1.0, 1.0, 1.0 + 1e-2).unwrap();
        assert_relative_eq!(near_one.tau, 0.5f64.powf(100.0), max_relative = 1e-9);
        assert!(near_one.b > 0.0 && near_one.k > 0.0);
    }

    #[test]
    fn quadratic_with_too_large_alpha0_fails_growth() {
        let h = |_x: f64, p: f64| p * p;
        let r = check_class_membership(&h, consts(2.0, 2.0, 2.0), &ClassSamples::default());
        assert!(!r.get("G1").unwrap().passed);
    }

    #[test]
    fn linear_growth_fails_lower_bound() {
        let h = |_x: f64, p: f64| p.abs();
        let r = check_class_membership(&h, consts(0.5, 3.0, 2.0), &ClassSamples::default());
        assert!(!r.get("G1").unwrap().passed);
    }

    #[test]
    fn model_problem_x_lipschitz_needs_two_pi() {
        let h = HamiltonianModel::model_problem();
        let s = ClassSamples::uniform(64, 41, 5.0);
        let r = check_class_membership(&h, consts(0.5, 3.0, 2.0), &s);
        assert!(r.get("G1").unwrap().passed);
        assert!(r.get("G2").unwrap().passed);
        assert!(!r.get("G3").unwrap().passed);
        let r = check_class_membership(&h, consts(0.5, 2.0 * PI, 2.0), &s);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn blt_arithmetic_example() {
        let h = |_x: f64, p: f64| p * p;
        let (mu, p) = (0.5, 2.0);
        let lhs = mu * h(0.0, p / mu) - h(0.0, p);
        assert_eq!(lhs, 4.0);
        assert!(lhs >= (1.0 - mu) * (0.5 * p * p - 3.0));
        let r = check_blt(&h, 0.5, 3.0, 2.0, BltSamples::default());
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn doubling_bound_eta_and_k() {
        let h = |_x: f64, p: f64| p * p;
        let r = check_doubling_bound(&h, 0.5, 2.0, 0.5, 3.0, &ClassSamples::default()).unwrap();
        assert_eq!(r.eta, 1.0 / 16.0);
        // 2^k / 64 >= 3
        assert_eq!(r.k_min, 8);
        assert!(r.d_at_k_min >= 0.0);
        assert!(doubling_d(0.5, 3.0, 2.0, 0.5, 7) < 0.0);
        assert_eq!(r.violations, 0);
        assert_eq!(r.checked.len(), 6);
    }

    #[test]
    fn doubling_arithmetic_example() {
        let g = |p: f64| p * p;
        let (gap, eta) = (g(2.0) - 2.0 * g(1.0), 1.0 / 16.0);
        assert_eq!(gap, 2.0);
        assert!(gap >= eta * 4.0);
    }

    #[test]
    fn potential_derivative_matches_difference() {
        let v = FourierPotential {
            constant: 0.3,
            cos: vec![1.0, -0.5],
            sin: vec![0.25],
        };
        for i in 0..10 {
            let x = i as f64 / 10.0 + 0.013;
            let fd = (v.value(x + 1e-6) - v.value(x - 1e-6)) / 2e-6;
            assert!((fd - v.derivative(x)).abs() < 1e-6);
        }
        let (x, m) = FourierPotential::cosine().max_with_arg(100);
        assert!(x.abs() < 1e-6 || (1.0 - x).abs() < 1e-6);
        assert_relative_eq!(m, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn shift_composes() {
        let h = HamiltonianModel::model_problem().shifted(1.0).shifted(0.5);
        assert_relative_eq!(h.value(0.0, 0.0), -0.5);
    }

    #[test]
    fn power_family_rejects_gamma_one() {
        assert!(HamiltonianModel::power(1.0, FourierPotential::default()).is_err());
        let h = HamiltonianModel::power(3.0, FourierPotential::default()).unwrap();
        assert_relative_eq!(h.value(0.2, -2.0), 8.0 / 3.0);
        assert_relative_eq!(h.dp(0.2, -2.0), -4.0);
    }
}
