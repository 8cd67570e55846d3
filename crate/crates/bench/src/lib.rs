//! Shared fixtures for the kernel benchmarks.

use std::sync::Arc;

use nlhj_core::hamiltonian::{Hamiltonian, HamiltonianModel};
use nlhj_core::lagrangian::{fenchel_lagrangian, select_q, truncate_h, LagrangianTable, PGrid};
use nlhj_core::levy::{JumpFunction, LevyMeasure};
use nlhj_core::solver::ProblemSpec;
use nlhj_core::GridFunction;

pub fn model() -> Arc<dyn Hamiltonian> {
    Arc::new(HamiltonianModel::model_problem())
}

/// Model Hamiltonian with the `s`-stable power density on an `n`-grid.
pub fn stable_problem(n: usize, s: f64, lambda: f64) -> ProblemSpec {
    let m = LevyMeasure::power(s, 1.0).expect("valid exponent");
    ProblemSpec::with_measure(model(), &m, &JumpFunction::identity(), n, lambda).expect("valid problem")
}

pub fn local_problem(n: usize, lambda: f64) -> ProblemSpec {
    ProblemSpec::local(model(), n, lambda).expect("valid problem")
}

/// Smooth periodic test function with its first two derivatives.
pub fn smooth_triple(n: usize) -> (GridFunction, GridFunction, GridFunction) {
    use std::f64::consts::TAU;
    (
        GridFunction::from_fn(n, |x| (TAU * x).sin() + 0.3 * (2.0 * TAU * x).cos()),
        GridFunction::from_fn(n, |x| TAU * (TAU * x).cos() - 0.6 * TAU * (2.0 * TAU * x).sin()),
        GridFunction::from_fn(n, |x| -TAU * TAU * ((TAU * x).sin() + 1.2 * (2.0 * TAU * x).cos())),
    )
}

/// Lagrangian of the truncated model Hamiltonian on `n` points with 41 velocities.
pub fn lagrangian(n: usize, kappa: f64) -> LagrangianTable {
    let tr = truncate_h(model(), kappa).expect("positive kappa");
    let q = select_q(&tr, kappa, 41).expect("velocity grid");
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    fenchel_lagrangian(&tr, &xs, &q, PGrid::for_velocities(kappa, &q)).expect("Fenchel transform")
}
