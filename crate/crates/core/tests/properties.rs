//! Property tests for the invariants of every module.

use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use nlhj_core::approx::{mollify, monotone_smooth_sequence, pointwise_max, subsolution_defect, sup_convolution};
use nlhj_core::grid::GridFunction;
use nlhj_core::hamiltonian::{
    check_blt, check_class_membership, derive_blt_constants, BltSamples, ClassConstants, ClassSamples,
    FourierPotential, Hamiltonian, HamiltonianModel,
};
use nlhj_core::lagrangian::{fenchel_lagrangian, PGrid, VelocitySet};
use nlhj_core::levy::{apply_operator, build_quadrature_plan, JumpFunction, JumpProfile, LevyMeasure, PlanParams};
use nlhj_core::lp::LpOptions;
use nlhj_core::mather::{closed_measure_constraints, solve_mather_lp};
use nlhj_core::solver::{lipschitz_estimate, residual, scheme_step, NumericalFlux, ProblemSpec, SchemeOptions};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

/// Trigonometric polynomial with its first two derivatives on an `n`-grid.
fn trig(n: usize, coeffs: &[(f64, f64)]) -> (GridFunction, GridFunction, GridFunction) {
    let f = |x: f64, d: u32| -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let w = 2.0 * PI * (k + 1) as f64;
                let (c, s) = ((w * x).cos(), (w * x).sin());
                match d {
                    0 => a * c + b * s,
                    1 => w * (-a * s + b * c),
                    _ => -w * w * (a * c + b * s),
                }
            })
            .sum()
    };
    (
        GridFunction::from_fn(n, |x| f(x, 0)),
        GridFunction::from_fn(n, |x| f(x, 1)),
        GridFunction::from_fn(n, |x| f(x, 2)),
    )
}

fn measure_strategy() -> impl Strategy<Value = LevyMeasure> {
    prop_oneof![
        prop::collection::vec((-3.0f64..3.0, 0.01f64..2.0), 1..5)
            .prop_map(|atoms| LevyMeasure::atoms(atoms.into_iter().filter(|a| a.0 != 0.0).collect()).unwrap()),
        (0.2f64..1.9, 0.1f64..2.0).prop_map(|(s, scale)| LevyMeasure::power(s, scale).unwrap()),
    ]
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..4)
}

fn random_grid(n: usize) -> impl Strategy<Value = GridFunction> {
    prop::collection::vec(-1.0f64..1.0, n).prop_map(GridFunction::new)
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn operator_is_linear(m in measure_strategy(), a in coeffs(), b in coeffs(), s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let n = 64;
        let plan = build_quadrature_plan(&m, &JumpFunction::identity(), n, &PlanParams::defaults_for(n)).unwrap();
        let (fa, da, d2a) = trig(n, &a);
        let (fb, db, d2b) = trig(n, &b);
        let comb = |x: &GridFunction, y: &GridFunction| x.combine(s, y, t).unwrap();
        let lhs = apply_operator(&plan, &comb(&fa, &fb), &comb(&da, &db), &comb(&d2a, &d2b)).unwrap();
        let ia = apply_operator(&plan, &fa, &da, &d2a).unwrap();
        let ib = apply_operator(&plan, &fb, &db, &d2b).unwrap();
        let rhs = comb(&ia, &ib);
        let scale = 1.0 + ia.sup_norm() + ib.sup_norm();
        prop_assert!(lhs.sup_dist(&rhs).unwrap() <= 1e-11 * scale * (1.0 + s.abs() + t.abs()));
    }

    #[test]
    fn operator_commutes_with_grid_translations(m in measure_strategy(), a in coeffs(), k in 1isize..63) {
        let n = 64;
        let plan = build_quadrature_plan(&m, &JumpFunction::identity(), n, &PlanParams::defaults_for(n)).unwrap();
        let (f, d, d2) = trig(n, &a);
        let moved = apply_operator(&plan, &f.rotated(k), &d.rotated(k), &d2.rotated(k)).unwrap();
        let base = apply_operator(&plan, &f, &d, &d2).unwrap().rotated(k);
        prop_assert!(moved.sup_dist(&base).unwrap() <= 1e-10 * (1.0 + base.sup_norm()));
    }

    #[test]
    fn operator_annihilates_constants(m in measure_strategy(), c in -5.0f64..5.0, amp in 0.0f64..2.0) {
        let n = 48;
        let jump = JumpFunction::new(JumpProfile::Modulated { amplitude: amp }, 1.0 + amp, None);
        let plan = build_quadrature_plan(&m, &jump, n, &PlanParams::defaults_for(n)).unwrap();
        let zero = GridFunction::zeros(n);
        let out = apply_operator(&plan, &GridFunction::constant(n, c), &zero, &zero).unwrap();
        prop_assert!(out.sup_norm() == 0.0);
    }

    #[test]
    fn scheme_step_is_monotone_and_contractive(m in measure_strategy(), u in random_grid(40), bump in random_grid(40), lambda in 0.05f64..0.9) {
        let n = 40;
        let h: Arc<dyn Hamiltonian> = Arc::new(HamiltonianModel::model_problem());
        let p = ProblemSpec::with_measure(h, &m, &JumpFunction::identity(), n, lambda).unwrap();
        let v = GridFunction::new(u.values().iter().zip(bump.values()).map(|(a, b)| a + b.abs()).collect());
        let range = 2.0 * lipschitz_estimate(&u).max(lipschitz_estimate(&v)) + 1.0;
        let opts = SchemeOptions::default();
        let su = scheme_step(&p, &opts, &u, range).unwrap();
        let sv = scheme_step(&p, &opts, &v, range).unwrap();
        for i in 0..n {
            prop_assert!(su[i] <= sv[i] + 1e-12);
        }
        prop_assert!(su.sup_dist(&sv).unwrap() <= u.sup_dist(&v).unwrap() + 1e-12);
    }

    #[test]
    fn residual_shifts_by_lambda_times_constant(u in random_grid(32), c in -3.0f64..3.0, lambda in 0.0f64..0.9) {
        let h: Arc<dyn Hamiltonian> = Arc::new(HamiltonianModel::model_problem());
        let p = ProblemSpec::local(h, 32, lambda).unwrap();
        let r0 = residual(&p, &u, NumericalFlux::Godunov).unwrap();
        let r1 = residual(&p, &u.shifted(c), NumericalFlux::Godunov).unwrap();
        for i in 0..32 {
            prop_assert!((r1[i] - r0[i] - lambda * c).abs() <= 1e-9 * (1.0 + r0[i].abs()));
        }
    }

    #[test]
    fn blt_holds_with_derived_constants(a in 1.0f64..2.0, gamma in 1.5f64..3.0, v in 0.0f64..0.5) {
        let g = HamiltonianModel::power(gamma, FourierPotential { constant: 0.0, cos: vec![v], sin: vec![] })
            .unwrap();
        let scaled = move |x: f64, p: f64| a * g.value(x, p);
        // a|p|^γ/γ + a v cos: class constants bracket a/γ from both sides
        let alpha0 = (a / gamma).min(1.0 / (a * v + 1e-12)).min(1.0);
        let alpha1 = (a / gamma).max(a * v).max(alpha0);
        let class = check_class_membership(&scaled, ClassConstants { alpha0, alpha1, gamma }, &ClassSamples::uniform(8, 41, 10.0));
        prop_assert!(class.get("G1").unwrap().passed);
        let c = derive_blt_constants(alpha0, alpha1, gamma).unwrap();
        let r = check_blt(&scaled, c.b, c.k, gamma, BltSamples { count: 2000, p_max: 10.0, seed: 3 });
        prop_assert_eq!(r.violations, 0, "worst margin {}", r.worst_margin);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn fenchel_young_holds(v in 0.0f64..1.0, gamma in 1.5f64..3.0) {
        let h = HamiltonianModel::power(gamma, FourierPotential { constant: 0.0, cos: vec![v], sin: vec![0.3] }).unwrap();
        let q = VelocitySet::uniform(2.0, 9).unwrap();
        let xs: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let table = fenchel_lagrangian(&h, &xs, &q, PGrid::for_velocities(3.0, &q)).unwrap();
        let ps: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.15).collect();
        prop_assert!(table.fenchel_young_gap(&h, &ps) >= -1e-9);
    }

    #[test]
    fn lp_value_shifts_with_lagrangian(c in -2.0f64..2.0, lambda in prop::sample::select(vec![0.0, 0.3])) {
        let n = 16;
        let h = HamiltonianModel::model_problem();
        let p = ProblemSpec::local(Arc::new(h.clone()), n, 0.3).unwrap();
        let q = VelocitySet::uniform(1.5, 5).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let table = fenchel_lagrangian(&h, &xs, &q, PGrid::for_velocities(2.0, &q)).unwrap();
        let sys = closed_measure_constraints(&p, lambda, 3, 3, &q).unwrap();
        let base = solve_mather_lp(&sys, &table, &LpOptions::default()).unwrap();
        let moved = solve_mather_lp(&sys, &table.shifted(c), &LpOptions::default()).unwrap();
        prop_assert!((moved.value - base.value - c).abs() <= 1e-9);
        prop_assert!(base.residual_inf <= 1e-8 && moved.residual_inf <= 1e-8);
        prop_assert!((base.measure.total() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_discount_value_ignores_anchor(z1 in 0usize..16, z2 in 0usize..16) {
        let n = 16;
        let h = HamiltonianModel::model_problem();
        let p = ProblemSpec::local(Arc::new(h.clone()), n, 0.3).unwrap();
        let q = VelocitySet::uniform(1.5, 5).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let table = fenchel_lagrangian(&h, &xs, &q, PGrid::for_velocities(2.0, &q)).unwrap();
        let a = solve_mather_lp(&closed_measure_constraints(&p, 0.0, z1, 3, &q).unwrap(), &table, &LpOptions::default()).unwrap();
        let b = solve_mather_lp(&closed_measure_constraints(&p, 0.0, z2, 3, &q).unwrap(), &table, &LpOptions::default()).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn sup_convolution_invariants(v in random_grid(64), e1 in 1e-4f64..0.2, ratio in 0.05f64..1.0) {
        let e2 = e1 * ratio;
        let big = sup_convolution(&v, e1).unwrap();
        let small = sup_convolution(&v, e2).unwrap();
        let h = v.h();
        for i in 0..64 {
            prop_assert!(small.v_eps[i] >= v[i]);
            prop_assert!(big.v_eps[i] >= small.v_eps[i]);
        }
        prop_assert!(big.min_second_difference() >= -(h * h / e1) * (1.0 + 1e-6));
        prop_assert!(small.min_second_difference() >= -(h * h / e2) * (1.0 + 1e-6));
        let lip_bound = lipschitz_estimate(&v) + 2.0 * (e1 * v.sup_norm()).sqrt() / e1;
        prop_assert!(lipschitz_estimate(&big.v_eps) <= 1.5 * lip_bound);
        for (i, &y) in big.argmax.iter().enumerate() {
            let d = (y - i as isize) as f64 * h;
            let j = nlhj_core::grid::wrap(y, 64);
            prop_assert!((big.v_eps[i] - (v[j] - d * d / (2.0 * e1))).abs() <= 1e-12);
        }
    }

    #[test]
    fn mollifier_respects_bounds(v in random_grid(64), eps in 0.0f64..0.3, c in -4.0f64..4.0) {
        let m = mollify(&v, eps, None).unwrap();
        prop_assert!(m.u_eps.sup_norm() <= v.sup_norm());
        prop_assert!(m.u_eps.max() <= v.max() && m.u_eps.min() >= v.min());
        prop_assert!(m.sup_change <= m.bound + 1e-12);
        let flat = mollify(&GridFunction::constant(64, c), eps, Some(1.0)).unwrap();
        prop_assert!(flat.u_eps.values().iter().all(|&x| x == c));
    }

    #[test]
    fn smooth_sequence_decreases_to_v(v in random_grid(48)) {
        let seq = monotone_smooth_sequence(&v, 5).unwrap();
        for (k, vk) in seq.iter().enumerate() {
            for i in 0..48 {
                prop_assert!(vk[i] >= v[i]);
            }
            if k > 0 {
                for i in 0..48 {
                    prop_assert!(vk[i] <= seq[k - 1][i]);
                }
            }
        }
    }

    #[test]
    fn defect_is_monotone_under_max(u in random_grid(40), w in random_grid(40), lambda in 0.0f64..0.9) {
        let h: Arc<dyn Hamiltonian> = Arc::new(HamiltonianModel::model_problem());
        let m = LevyMeasure::atoms(vec![(0.25, 0.5), (-0.1, 1.0)]).unwrap();
        let p = ProblemSpec::with_measure(h, &m, &JumpFunction::identity(), 40, lambda).unwrap();
        let du = subsolution_defect(&p, lambda, &u).unwrap();
        let dw = subsolution_defect(&p, lambda, &w).unwrap();
        let dm = subsolution_defect(&p, lambda, &pointwise_max(&u, &w).unwrap()).unwrap();
        prop_assert!(dm <= du.max(dw) + 1e-9);
    }
}
