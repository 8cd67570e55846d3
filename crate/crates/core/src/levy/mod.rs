//! Lévy measures, jump functions and the nonlocal operator
//!
//! ```text
//! I u(x) = ∫ ( u(x + j(x,z)) - u(x) - 1_B(z) <j(x,z), Du(x)> ) ν(dz)
//! ```
//!
//! on the one-dimensional torus. Measures are atomic, tabulated, or the
//! symmetric power density `scale * |z|^{-(1+s)}` with `s in (0, 2)`.

mod plan;
mod validate;

pub use plan::{
    apply_operator, apply_operator_split, build_quadrature_plan, Node, PlanParams, QuadraturePlan, SplitValue, Tap,
};
pub use validate::{validate_levy_spec, CheckStatus, ConditionCheck, SamplePlan, ValidationReport};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyMeasure {
    /// Finite sum of point masses `(z_i, w_i)`.
    Atoms { atoms: Vec<(f64, f64)> },
    /// Symmetric density `scale * |z|^{-(1+s)}`.
    PowerDensity {
        s: f64,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// User-supplied quadrature nodes and nonnegative weights.
    Tabulated { nodes: Vec<f64>, weights: Vec<f64> },
}

fn unit_scale() -> f64 {
    1.0
}

impl LevyMeasure {
    /// The zero measure (purely local problems).
    pub fn none() -> Self {
        LevyMeasure::Atoms { atoms: Vec::new() }
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let m = LevyMeasure::Atoms { atoms };
        m.check()?;
        Ok(m)
    }

    pub fn power(s: f64, scale: f64) -> Result<Self> {
        let m = LevyMeasure::PowerDensity { s, scale };
        m.check()?;
        Ok(m)
    }

    /// Rejects negative masses, non-finite data and exponents outside `(0, 2)`.
    pub fn check(&self) -> Result<()> {
        match self {
            LevyMeasure::Atoms { atoms } => {
                for &(z, w) in atoms {
                    if !z.is_finite() || !w.is_finite() {
                        return Err(Error::InvalidMeasure(format!("non-finite atom ({z}, {w})")));
                    }
                    if w < 0.0 {
                        return Err(Error::InvalidMeasure(format!("negative atom mass {w} at z = {z}")));
                    }
                }
            }
            LevyMeasure::PowerDensity { s, scale } => {
                if !(*s > 0.0 && *s < 2.0) {
                    return Err(Error::InvalidMeasure(format!("power exponent s = {s} outside (0, 2)")));
                }
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::InvalidMeasure(format!("negative or non-finite scale {scale}")));
                }
            }
            LevyMeasure::Tabulated { nodes, weights } => {
                if nodes.len() != weights.len() {
                    return Err(Error::InvalidMeasure(format!(
                        "{} nodes but {} weights",
                        nodes.len(),
                        weights.len()
                    )));
                }
                for (&z, &w) in nodes.iter().zip(weights) {
                    if !z.is_finite() || !w.is_finite() {
                        return Err(Error::InvalidMeasure(format!("non-finite node ({z}, {w})")));
                    }
                    if w < 0.0 {
                        return Err(Error::InvalidMeasure(format!(
                            "negative tabulated weight {w} at z = {z}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Point masses of the discrete part (atoms or tabulated nodes).
    pub fn discrete_part(&self) -> Vec<(f64, f64)> {
        match self {
            LevyMeasure::Atoms { atoms } => atoms.clone(),
            LevyMeasure::Tabulated { nodes, weights } => nodes.iter().copied().zip(weights.iter().copied()).collect(),
            LevyMeasure::PowerDensity { .. } => Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LevyMeasure::PowerDensity { scale, .. } => *scale == 0.0,
            _ => self.discrete_part().iter().all(|&(_, w)| w == 0.0),
        }
    }

    /// `∫ 1 ∧ |z|^2 ν(dz)`.
    pub fn truncated_second_moment(&self) -> f64 {
        match self {
            LevyMeasure::PowerDensity { s, scale } => 2.0 * scale * (1.0 / (2.0 - s) + 1.0 / s),
            _ => self.discrete_part().iter().map(|&(z, w)| w * (z * z).min(1.0)).sum(),
        }
    }

    /// `ν(|z| >= r)`.
    pub fn mass_outside(&self, r: f64) -> f64 {
        match self {
            LevyMeasure::PowerDensity { s, scale } => {
                if r <= 0.0 {
                    f64::INFINITY
                } else {
                    2.0 * scale * r.powf(-s) / s
                }
            }
            _ => self
                .discrete_part()
                .iter()
                .filter(|(z, _)| z.abs() >= r)
                .map(|&(_, w)| w)
                .sum(),
        }
    }

    /// `∫_{|z| < r} |z|^2 ν(dz)`.
    pub fn second_moment_within(&self, r: f64) -> f64 {
        match self {
            LevyMeasure::PowerDensity { s, scale } => 2.0 * scale * r.powf(2.0 - s) / (2.0 - s),
            _ => self
                .discrete_part()
                .iter()
                .filter(|(z, _)| z.abs() < r)
                .map(|&(z, w)| w * z * z)
                .sum(),
        }
    }

    /// `∫_{a <= |z| < b} |z| ν(dz)`; `b` may be infinite. Returns infinity when divergent.
    pub fn abs_moment(&self, a: f64, b: f64) -> f64 {
        match self {
            LevyMeasure::PowerDensity { s, scale } => {
                if *scale == 0.0 {
                    return 0.0;
                }
                2.0 * power_first_moment(*s, *scale, a, b)
            }
            _ => self
                .discrete_part()
                .iter()
                .filter(|(z, _)| z.abs() >= a && z.abs() < b)
                .map(|&(z, w)| w * z.abs())
                .sum(),
        }
    }
}

/// `∫_a^b scale * z^{-(1+s)} dz` for `0 < a < b <= inf`.
pub(crate) fn power_mass(s: f64, scale: f64, a: f64, b: f64) -> f64 {
    let tail_b = if b.is_infinite() { 0.0 } else { b.powf(-s) };
    scale * (a.powf(-s) - tail_b) / s
}

/// `∫_a^b z * scale * z^{-(1+s)} dz` for `0 <= a < b <= inf`; infinite when divergent.
pub(crate) fn power_first_moment(s: f64, scale: f64, a: f64, b: f64) -> f64 {
    if (s - 1.0).abs() < 1e-14 {
        if a <= 0.0 || b.is_infinite() {
            return f64::INFINITY;
        }
        return scale * (b / a).ln();
    }
    if a <= 0.0 && s > 1.0 {
        return f64::INFINITY;
    }
    if b.is_infinite() && s < 1.0 {
        return f64::INFINITY;
    }
    let pa = if a <= 0.0 { 0.0 } else { a.powf(1.0 - s) };
    let pb = if b.is_infinite() { 0.0 } else { b.powf(1.0 - s) };
    scale * (pb - pa) / (1.0 - s)
}

/// Jump function profiles of the separable form `j(x, z) = g(x) z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpProfile {
    /// `g(x) = 1`.
    Identity,
    /// `g(x) = factor`.
    Scaled { factor: f64 },
    /// `g(x) = 1 + amplitude * sin^2(2 pi x)`.
    Modulated { amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpFunction {
    #[serde(flatten)]
    pub profile: JumpProfile,
    /// Declared constant of the linear growth / Lipschitz bounds.
    pub c_j: f64,
    /// Declared constant of the strengthened integrated Lipschitz bound, when known.
    #[serde(default)]
    pub c0: Option<f64>,
}

impl JumpFunction {
    pub fn identity() -> Self {
        JumpFunction {
            profile: JumpProfile::Identity,
            c_j: 1.0,
            c0: None,
        }
    }

    pub fn new(profile: JumpProfile, c_j: f64, c0: Option<f64>) -> Self {
        JumpFunction { profile, c_j, c0 }
    }

    pub fn with_c0(mut self, c0: f64) -> Self {
        self.c0 = Some(c0);
        self
    }

    #[inline]
    pub fn factor(&self, x: f64) -> f64 {
        match self.profile {
            JumpProfile::Identity => 1.0,
            JumpProfile::Scaled { factor } => factor,
            JumpProfile::Modulated { amplitude } => {
                let s = (2.0 * PI * x).sin();
                1.0 + amplitude * s * s
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, z: f64) -> f64 {
        self.factor(x) * z
    }

    /// True when `j` does not depend on `x`, so plans are shift-invariant.
    pub fn is_translation_invariant(&self) -> bool {
        match self.profile {
            JumpProfile::Identity | JumpProfile::Scaled { .. } => true,
            JumpProfile::Modulated { amplitude } => amplitude == 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_atom_rejected() {
        assert!(LevyMeasure::atoms(vec![(0.5, -1.0)]).is_err());
        assert!(LevyMeasure::atoms(vec![(0.5, 1.0)]).is_ok());
    }

    #[test]
    fn power_exponent_range_enforced() {
        assert!(LevyMeasure::power(0.0, 1.0).is_err());
        assert!(LevyMeasure::power(2.0, 1.0).is_err());
        assert!(LevyMeasure::power(-0.5, 1.0).is_err());
        assert!(LevyMeasure::power(1.0, 1.0).is_ok());
    }

    #[test]
    fn tabulated_weights_checked() {
        let m = LevyMeasure::Tabulated {
            nodes: vec![0.1, 0.2],
            weights: vec![1.0, -0.1],
        };
        assert!(m.check().is_err());
        let m = LevyMeasure::Tabulated {
            nodes: vec![0.1],
            weights: vec![1.0, 1.0],
        };
        assert!(m.check().is_err());
    }

    #[test]
    fn single_atom_truncated_moment_is_one() {
        let m = LevyMeasure::atoms(vec![(2.0, 1.0)]).unwrap();
        assert_eq!(m.truncated_second_moment(), 1.0);
    }

    #[test]
    fn power_truncated_moment_closed_form() {
        // 2 (1/(2-s) + 1/s) at s = 1.5
        let m = LevyMeasure::power(1.5, 1.0).unwrap();
        assert!((m.truncated_second_moment() - 2.0 * (2.0 + 1.0 / 1.5)).abs() < 1e-14);
    }

    #[test]
    fn power_first_moment_divergence() {
        let m = LevyMeasure::power(0.5, 1.0).unwrap();
        assert!(m.abs_moment(1.0, f64::INFINITY).is_infinite());
        assert!(m.abs_moment(0.0, 1.0).is_finite());
        let m = LevyMeasure::power(1.5, 1.0).unwrap();
        assert!(m.abs_moment(0.0, 1.0).is_infinite());
        assert!(m.abs_moment(1.0, f64::INFINITY).is_finite());
    }
}
