use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{power_first_moment, power_mass, JumpFunction, LevyMeasure};
use crate::error::{Error, Result};
use crate::grid::{grid_position, GridFunction};

/// Quadrature parameters. `delta` is the core radius, `radius` the tail radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub delta: f64,
    pub radius: f64,
    /// Cells per unit of relative width in the graded annulus: near the core a cell
    /// spans `4 |z| / resolution`, further out at most `4 / resolution`.
    pub annulus_resolution: usize,
    /// Tail cells per unit period between `radius` and the far radius.
    pub tail_nodes_per_period: usize,
    /// Beyond `radius * far_radius_factor` the remaining mass is spread uniformly over the torus.
    pub far_radius_factor: f64,
}

impl PlanParams {
    /// `delta = min(0.1, 5/n)`, `R = 8`.
    pub fn defaults_for(n: usize) -> Self {
        PlanParams {
            delta: (5.0 / n as f64).min(0.1),
            radius: 8.0,
            annulus_resolution: 256,
            tail_nodes_per_period: 32,
            far_radius_factor: 32.0,
        }
    }
}

/// One explicit quadrature node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub z: f64,
    pub w: f64,
}

/// Aggregated interpolation weight on the grid node `i + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub offset: usize,
    pub weight: f64,
}

#[derive(Clone, Debug)]
enum Stencils {
    Shared(Vec<Tap>),
    PerPoint(Vec<Vec<Tap>>),
}

/// Discretization of the nonlocal operator on an `n`-point torus grid.
///
/// Three zones: the core `|z| < delta` of the continuous part, replaced by
/// `½ φ''(x) m₂(x)`; explicit nodes (atoms anywhere, graded annulus cells,
/// tail cells), evaluated by periodic linear interpolation at `x + j(x, z)`;
/// and the far field beyond `radius * far_radius_factor`, spread uniformly.
/// The gradient compensator acts on nodes with `|z| < 1`.
#[derive(Clone, Debug)]
pub struct QuadraturePlan {
    n: usize,
    params: PlanParams,
    jump: JumpFunction,
    nodes: Vec<Node>,
    core_moment: f64,
    core_m2: Vec<f64>,
    drift: Vec<f64>,
    stencils: Stencils,
    jump_weight: Vec<f64>,
    far_mass: f64,
    tail_mass: f64,
    total_node_mass: f64,
}

pub fn build_quadrature_plan(
    measure: &LevyMeasure,
    jump: &JumpFunction,
    n: usize,
    params: &PlanParams,
) -> Result<QuadraturePlan> {
    measure.check()?;
    let (delta, radius) = (params.delta, params.radius);
    if matches!(measure, LevyMeasure::PowerDensity { .. }) && delta <= 0.0 {
        return Err(Error::InvalidParameter(
            "power density needs a positive core radius: the core integral is not finite at delta = 0".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0 && radius > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < delta < 1 < R, got delta = {delta}, R = {radius}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("grid size {n} too small")));
    }

    let mut nodes = Vec::new();
    let mut core_moment = 0.0;
    let mut far_mass = 0.0;
    match measure {
        LevyMeasure::PowerDensity { s, scale } => {
            let (s, scale) = (*s, *scale);
            if scale > 0.0 {
                core_moment = measure.second_moment_within(delta);
                let far = radius * params.far_radius_factor.max(1.0);
                let mut cells = graded_cells(delta, radius, params.annulus_resolution.max(1));
                let step = 1.0 / params.tail_nodes_per_period.max(1) as f64;
                let mut a = radius;
                while a < far {
                    let b = (a + step).min(far);
                    cells.push((a, b));
                    a = b;
                }
                for (a, b) in cells {
                    let w = power_mass(s, scale, a, b);
                    let zbar = power_first_moment(s, scale, a, b) / w;
                    nodes.push(Node { z: zbar, w });
                    nodes.push(Node { z: -zbar, w });
                }
                far_mass = 2.0 * power_mass(s, scale, far, f64::INFINITY);
            }
        }
        _ => {
            for (z, w) in measure.discrete_part() {
                if w > 0.0 {
                    nodes.push(Node { z, w });
                }
            }
        }
    }
    nodes.sort_by(|a, b| a.z.abs().total_cmp(&b.z.abs()).then(a.z.total_cmp(&b.z)));

    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let core_m2: Vec<f64> = xs.iter().map(|&x| jump.factor(x).powi(2) * core_moment).collect();
    let drift: Vec<f64> = xs
        .iter()
        .map(|&x| {
            nodes
                .iter()
                .filter(|nd| nd.z.abs() < 1.0)
                .map(|nd| nd.w * jump.eval(x, nd.z))
                .sum()
        })
        .collect();

    let stencils = if jump.is_translation_invariant() {
        Stencils::Shared(assemble_stencil(0, n, &nodes, jump, far_mass))
    } else {
        Stencils::PerPoint(
            (0..n)
                .into_par_iter()
                .map(|i| assemble_stencil(i, n, &nodes, jump, far_mass))
                .collect(),
        )
    };
    let jump_weight = (0..n)
        .map(|i| stencil_of(&stencils, i).iter().map(|t| t.weight).sum())
        .collect();
    let tail_mass = measure.mass_outside(radius);
    let total_node_mass = nodes.iter().map(|nd| nd.w).sum();

    Ok(QuadraturePlan {
        n,
        params: params.clone(),
        jump: jump.clone(),
        nodes,
        core_moment,
        core_m2,
        drift,
        stencils,
        jump_weight,
        far_mass,
        tail_mass,
        total_node_mass,
    })
}

/// Geometrically graded cells on `[delta, radius)`, clustering at `delta`.
fn graded_cells(delta: f64, radius: f64, resolution: usize) -> Vec<(f64, f64)> {
    let beta = 4.0 / resolution as f64;
    let w_max = 4.0 / resolution as f64;
    let mut cells = Vec::new();
    let mut a = delta;
    while a < radius {
        let w = (beta * a).min(w_max);
        let mut b = a + w;
        if radius - b < 0.25 * w {
            b = radius;
        }
        cells.push((a, b));
        a = b;
    }
    cells
}

fn assemble_stencil(i: usize, n: usize, nodes: &[Node], jump: &JumpFunction, far_mass: f64) -> Vec<Tap> {
    let x = i as f64 / n as f64;
    let g = jump.factor(x);
    let mut dense = vec![0.0_f64; n];
    for nd in nodes {
        let (k, f) = grid_position(x + g * nd.z, n);
        let off = (k + n - i) % n;
        dense[off] += (1.0 - f) * nd.w;
        if f > 0.0 {
            dense[(off + 1) % n] += f * nd.w;
        }
    }
    if far_mass > 0.0 {
        let share = far_mass / n as f64;
        for d in dense.iter_mut() {
            *d += share;
        }
    }
    // offset 0 contributes w (u_i - u_i) = 0
    dense
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, w)| *w != 0.0)
        .map(|(offset, weight)| Tap { offset, weight })
        .collect()
}

fn stencil_of(stencils: &Stencils, i: usize) -> &[Tap] {
    match stencils {
        Stencils::Shared(taps) => taps,
        Stencils::PerPoint(all) => &all[i],
    }
}

impl QuadraturePlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.params.delta
    }

    pub fn radius(&self) -> f64 {
        self.params.radius
    }

    pub fn params(&self) -> &PlanParams {
        &self.params
    }

    pub fn jump(&self) -> &JumpFunction {
        &self.jump
    }

    /// Explicit nodes sorted by `|z|`.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Nodes of the graded annulus `delta <= |z| < R`.
    pub fn annulus_nodes(&self) -> impl Iterator<Item = &Node> {
        let (d, r) = (self.params.delta, self.params.radius);
        self.nodes.iter().filter(move |nd| nd.z.abs() >= d && nd.z.abs() < r)
    }

    /// `∫_{|z| < delta} |z|^2 ν(dz)` of the continuous part.
    pub fn core_moment(&self) -> f64 {
        self.core_moment
    }

    /// `m₂(x_i) = ∫_{|z|<delta} |j(x_i, z)|^2 ν(dz)`.
    pub fn m2(&self, i: usize) -> f64 {
        self.core_m2[i]
    }

    /// `Σ_{|z|<1} w j(x_i, z)`, the compensator coefficient of `Dφ(x_i)`.
    pub fn drift(&self, i: usize) -> f64 {
        self.drift[i]
    }

    pub fn stencil(&self, i: usize) -> &[Tap] {
        stencil_of(&self.stencils, i)
    }

    /// True when the operator vanishes identically (no jumps at all).
    pub fn is_local(&self) -> bool {
        self.nodes.is_empty() && self.core_moment == 0.0 && self.far_mass() == 0.0
    }

    /// True when every grid point shares one stencil.
    pub fn is_shift_invariant(&self) -> bool {
        matches!(self.stencils, Stencils::Shared(_))
    }

    /// Total off-diagonal jump weight at `x_i`.
    pub fn jump_weight(&self, i: usize) -> f64 {
        self.jump_weight[i]
    }

    pub fn max_jump_weight(&self) -> f64 {
        self.jump_weight.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_m2(&self) -> f64 {
        self.core_m2.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_abs_drift(&self) -> f64 {
        self.drift.iter().fold(0.0_f64, |m, d| m.max(d.abs()))
    }

    /// Mass beyond the far radius, spread uniformly over the torus.
    pub fn far_mass(&self) -> f64 {
        self.far_mass
    }

    /// `ν(|z| >= R)`.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn total_node_mass(&self) -> f64 {
        self.total_node_mass
    }

    /// `2 ‖φ‖∞ ν(|z| >= R)`: what dropping the tail would cost.
    pub fn tail_bound(&self, phi: &GridFunction) -> f64 {
        2.0 * phi.sup_norm() * self.tail_mass
    }

    /// `Σ_k W_k (u_{i+k} - u_i)`, the explicit-node part without compensator.
    #[inline]
    pub fn jump_sum(&self, i: usize, u: &[f64]) -> f64 {
        let n = self.n;
        let ui = u[i];
        let mut acc = 0.0;
        for t in self.stencil(i) {
            let mut j = i + t.offset;
            if j >= n {
                j -= n;
            }
            acc += t.weight * (u[j] - ui);
        }
        acc
    }

    fn check_grid(&self, u: &GridFunction) -> Result<()> {
        if u.n() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                got: u.n(),
            });
        }
        Ok(())
    }
}

/// `Iφ` at every grid point, given consistent first and second derivatives of `φ`.
pub fn apply_operator(
    plan: &QuadraturePlan,
    phi: &GridFunction,
    dphi: &GridFunction,
    d2phi: &GridFunction,
) -> Result<GridFunction> {
    plan.check_grid(phi)?;
    plan.check_grid(dphi)?;
    plan.check_grid(d2phi)?;
    let u = phi.values();
    let values: Vec<f64> = (0..plan.n)
        .into_par_iter()
        .map(|i| plan.jump_sum(i, u) - plan.drift[i] * dphi[i] + 0.5 * plan.core_m2[i] * d2phi[i])
        .collect();
    Ok(GridFunction::new(values))
}

/// The two pieces of the operator split at radius `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitValue {
    /// Test function over `B_delta` (core surrogate plus inner nodes).
    pub inner: f64,
    /// `u` outside `B_delta`, compensated with `p` for `delta <= |z| < 1`.
    pub outer: f64,
}

impl SplitValue {
    pub fn total(&self) -> f64 {
        self.inner + self.outer
    }
}

/// Evaluates the split operator at `x_index`: the test function `φ` (with derivatives
/// `dphi_x`, `d2phi_x` at that point) on `B_delta`, and `u` with gradient `p` outside.
///
/// `delta` must be at least the plan's core radius and below one.
#[allow(clippy::too_many_arguments)]
pub fn apply_operator_split(
    plan: &QuadraturePlan,
    phi: &GridFunction,
    dphi_x: f64,
    d2phi_x: f64,
    u: &GridFunction,
    p: f64,
    x_index: usize,
    delta: f64,
) -> Result<SplitValue> {
    plan.check_grid(phi)?;
    plan.check_grid(u)?;
    if delta < plan.delta() || delta >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "split radius {delta} must lie in [{}, 1)",
            plan.delta()
        )));
    }
    if x_index >= plan.n {
        return Err(Error::InvalidParameter(format!("x index {x_index} out of range")));
    }
    let i = x_index;
    let x = phi.x(i);
    let g = plan.jump.factor(x);
    let mut inner = 0.5 * plan.core_m2[i] * d2phi_x;
    let mut outer = 0.0;
    for nd in &plan.nodes {
        let jz = g * nd.z;
        if nd.z.abs() < delta {
            inner += nd.w * (phi.interpolate(x + jz) - phi[i] - jz * dphi_x);
        } else {
            let comp = if nd.z.abs() < 1.0 { jz * p } else { 0.0 };
            outer += nd.w * (u.interpolate(x + jz) - u[i] - comp);
        }
    }
    if plan.far_mass > 0.0 {
        let ui = u[i];
        let mean_diff: f64 = u.values().iter().map(|v| v - ui).sum::<f64>() / plan.n as f64;
        outer += plan.far_mass * mean_diff;
    }
    Ok(SplitValue { inner, outer })
}
