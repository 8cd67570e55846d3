use serde::{Deserialize, Serialize};

use super::{JumpFunction, LevyMeasure};
use crate::error::{Error, Result};
use crate::grid::torus_dist;

/// Relative slack before a sampled ratio counts as a violation.
const RATIO_SLACK: f64 = 1e-9;

/// Sample points used to probe the standing assumptions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplePlan {
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    /// Radii `R` at which the tail condition is probed.
    pub radii: Vec<f64>,
}

impl SamplePlan {
    /// `n_x` uniform torus points and `n_z` jump sizes spread over `[-z_max, z_max]`.
    pub fn uniform(n_x: usize, n_z: usize, z_max: f64) -> Self {
        let xs = (0..n_x).map(|i| i as f64 / n_x as f64).collect();
        let zs = (0..n_z)
            .map(|k| -z_max + 2.0 * z_max * (k as f64 + 0.5) / n_z as f64)
            .collect();
        SamplePlan {
            xs,
            zs,
            radii: vec![0.5, 1.0, 2.0, 4.0, 8.0],
        }
    }

    fn is_empty(&self) -> bool {
        self.xs.is_empty() || self.zs.is_empty()
    }
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan::uniform(64, 33, 4.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Violated,
    /// The constant is optional and was not declared.
    NotDeclared,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    /// Worst sampled value of the quantity bounded by the condition.
    pub value: f64,
    pub declared: Option<f64>,
    /// `value / declared`, or 0 when no constant is declared and `value` is finite.
    pub ratio: f64,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// No condition is violated. Undeclared optional constants do not count.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Violated)
    }
}

fn check(name: &str, value: f64, declared: Option<f64>) -> ConditionCheck {
    let (ratio, status) = match declared {
        Some(c) => {
            let ratio = if value == 0.0 { 0.0 } else { value / c };
            let status = if ratio.is_finite() && ratio <= 1.0 + RATIO_SLACK {
                CheckStatus::Pass
            } else {
                CheckStatus::Violated
            };
            (ratio, status)
        }
        None if value.is_finite() => (0.0, CheckStatus::Pass),
        None => (f64::INFINITY, CheckStatus::Violated),
    };
    ConditionCheck {
        name: name.to_string(),
        value,
        declared,
        ratio,
        status,
    }
}

/// Sampled check of the standing assumptions on `(ν, j)`.
///
/// Every reported value is the worst case over the sample plan; a ratio above
/// `1 + 1e-9` against a declared constant is flagged as a violation.
pub fn validate_levy_spec(
    measure: &LevyMeasure,
    jump: &JumpFunction,
    c_nu: Option<f64>,
    samples: &SamplePlan,
) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("empty sample plan".into()));
    }
    measure.check()?;

    let mut checks = Vec::with_capacity(5);
    checks.push(check("N", measure.truncated_second_moment(), c_nu));

    // (J1): growth and Lipschitz-in-x bounds, sampled as multiples of C_j.
    let mut growth = 0.0_f64;
    for &x in &samples.xs {
        for &z in samples.zs.iter().filter(|z| **z != 0.0) {
            growth = growth.max(jump.eval(x, z).abs() / z.abs());
        }
    }
    let lip = factor_lipschitz(jump, &samples.xs);
    let mut lip_z = 0.0_f64;
    for &z in samples.zs.iter().filter(|z| **z != 0.0) {
        for (a, &x) in samples.xs.iter().enumerate() {
            for &y in &samples.xs[a + 1..] {
                let d = torus_dist(x, y);
                if d > 0.0 {
                    lip_z = lip_z.max((jump.eval(x, z) - jump.eval(y, z)).abs() / (d * z.abs()));
                }
            }
        }
    }
    checks.push(check("J1", growth.max(lip_z), Some(jump.c_j)));

    // (J2): ∫_{|z|>=R} |j(x,z) - j(y,z)| ν(dz) <= C_R |x - y| for every R.
    let mut c_r = 0.0_f64;
    if lip > 0.0 {
        for &r in &samples.radii {
            c_r = c_r.max(lip * measure.abs_moment(r, f64::INFINITY));
        }
    }
    checks.push(check("J2", c_r, None));

    // (J3): the same bound over the whole space.
    let c0_est = if lip > 0.0 {
        lip * measure.abs_moment(0.0, f64::INFINITY)
    } else {
        0.0
    };
    let j3 = match jump.c0 {
        Some(c0) => check("J3", c0_est, Some(c0)),
        None => ConditionCheck {
            name: "J3".into(),
            value: c0_est,
            declared: None,
            ratio: 0.0,
            status: CheckStatus::NotDeclared,
        },
    };
    checks.push(j3);

    Ok(ValidationReport { checks })
}

/// Sampled Lipschitz constant of `x -> j(x, z) / z` on the torus.
fn factor_lipschitz(jump: &JumpFunction, xs: &[f64]) -> f64 {
    if jump.is_translation_invariant() {
        return 0.0;
    }
    let mut lip = 0.0_f64;
    for (a, &x) in xs.iter().enumerate() {
        for &y in &xs[a + 1..] {
            let d = torus_dist(x, y);
            if d > 0.0 {
                lip = lip.max((jump.factor(x) - jump.factor(y)).abs() / d);
            }
        }
    }
    lip
}
