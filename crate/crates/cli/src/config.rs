//! Experiment configuration read from a single TOML file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use nlhj_core::hamiltonian::{FourierPotential, HamiltonianModel};
use nlhj_core::levy::{JumpFunction, LevyMeasure};
use nlhj_core::lp::LpOptions;
use nlhj_core::solver::SchemeOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    #[serde(default)]
    pub solver: SchemeOptions,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub duality: DualityBlock,
    #[serde(default)]
    pub approximation: ApproximationBlock,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Thread cap for stage-internal parallelism; 0 means rayon's default.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default = "default_hamiltonian")]
    pub hamiltonian: HamiltonianModel,
    /// Absent means the purely local problem.
    #[serde(default)]
    pub levy: Option<LevyMeasure>,
    #[serde(default = "JumpFunction::identity")]
    pub jump: JumpFunction,
    /// Declared bound on `∫ min(1, |z|²) ν(dz)`.
    #[serde(default)]
    pub c_nu: Option<f64>,
    pub n: usize,
    #[serde(default)]
    pub anchor: usize,
    /// Discount used by `solve`.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub ladder: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            ladder: vec![0.2, 0.1, 0.05, 0.02, 0.01, 0.005],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityBlock {
    pub n_q: usize,
    /// Number of Fourier test modes `M`.
    pub modes: usize,
    /// Momentum cutoff; defaults to `1.2 L + 1` from the sweep's Lipschitz estimate.
    pub kappa: Option<f64>,
    pub gap_tol: f64,
    pub lp: LpOptions,
}

impl Default for DualityBlock {
    fn default() -> Self {
        DualityBlock {
            n_q: 41,
            modes: 8,
            kappa: None,
            gap_tol: 1e-3,
            lp: LpOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproximationBlock {
    pub delta_targets: Vec<f64>,
    pub n_max: usize,
    pub eps_max: f64,
}

impl Default for ApproximationBlock {
    fn default() -> Self {
        ApproximationBlock {
            delta_targets: vec![0.05],
            n_max: 20,
            eps_max: 0.1,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_hamiltonian() -> HamiltonianModel {
    HamiltonianModel::quadratic(FourierPotential::cosine())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn measure(&self) -> LevyMeasure {
        self.problem.levy.clone().unwrap_or_else(LevyMeasure::none)
    }

    /// Structural invariants; numerical admissibility is the job of `validate`.
    pub fn check(&self) -> Result<(), String> {
        let p = &self.problem;
        if p.n < 32 || !p.n.is_multiple_of(8) {
            return Err(format!(
                "problem.n must be a multiple of 8 and at least 32, got {}",
                p.n
            ));
        }
        if p.anchor >= p.n {
            return Err(format!("problem.anchor {} outside the grid of size {}", p.anchor, p.n));
        }
        if let Some(l) = p.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(format!("problem.lambda must be finite and nonnegative, got {l}"));
            }
        }
        let ladder = &self.sweep.ladder;
        if ladder.is_empty() || ladder.iter().any(|l| !(*l > 0.0)) || ladder.windows(2).any(|w| !(w[1] < w[0])) {
            return Err("sweep.ladder must be nonempty, positive and strictly decreasing".into());
        }
        let positive = [
            ("solver.tol", self.solver.tol),
            ("solver.safety", self.solver.safety),
            ("duality.gap_tol", self.duality.gap_tol),
            ("duality.lp.pivot_tol", self.duality.lp.pivot_tol),
            ("duality.lp.cost_tol", self.duality.lp.cost_tol),
            ("duality.lp.feas_tol", self.duality.lp.feas_tol),
            ("approximation.eps_max", self.approximation.eps_max),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(format!("{name} must be positive, got {v}"));
        }
        if self.approximation.delta_targets.iter().any(|d| !(*d > 0.0)) {
            return Err("approximation.delta_targets must be positive".into());
        }
        if self.duality.n_q < 3 || self.duality.n_q.is_multiple_of(2) {
            return Err(format!(
                "duality.n_q must be odd and at least 3, got {}",
                self.duality.n_q
            ));
        }
        if self.duality.modes == 0 {
            return Err("duality.modes must be positive".into());
        }
        if let Some(k) = self.duality.kappa {
            if !(k > 0.0) {
                return Err(format!("duality.kappa must be positive, got {k}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_model_problem() {
        let cfg = ExperimentConfig::from_toml("[problem]\nn = 64\n").unwrap();
        assert_eq!(cfg.problem.hamiltonian, HamiltonianModel::model_problem());
        assert_eq!(cfg.measure(), LevyMeasure::none());
        assert_eq!(cfg.sweep.ladder.len(), 6);
    }

    #[test]
    fn full_blocks_parse() {
        let text = r#"
            seed = 3
            threads = 1
            output = "results"
            [problem]
            n = 128
            anchor = 5
            lambda = 0.25
            c_nu = 1.0
            [problem.hamiltonian]
            family = { name = "power", gamma = 3.0 }
            potential = { constant = 0.0, cos = [0.5], sin = [] }
            [problem.levy]
            kind = "atoms"
            atoms = [[0.25, 0.5], [-0.25, 0.5]]
            [problem.jump]
            kind = "identity"
            c_j = 1.0
            c0 = 1.0
            [solver]
            tol = 1e-9
            [duality]
            modes = 4
            [duality.lp]
            pricing = "dantzig"
            [approximation]
            delta_targets = [0.1, 0.05]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.problem.anchor, 5);
        assert_eq!(cfg.solver.tol, 1e-9);
        assert_eq!(cfg.duality.modes, 4);
        assert_eq!(
            cfg.measure(),
            LevyMeasure::atoms(vec![(0.25, 0.5), (-0.25, 0.5)]).unwrap()
        );
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(ExperimentConfig::from_toml("[problem]\nn = 30\n").is_err());
        assert!(ExperimentConfig::from_toml("[problem]\nn = 64\n[sweep]\nladder = [0.1, 0.2]\n").is_err());
        assert!(ExperimentConfig::from_toml("[problem]\nn = 64\n[solver]\ntol = 0.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[problem]\nn = 64\nbogus = 1\n").is_err());
    }
}
