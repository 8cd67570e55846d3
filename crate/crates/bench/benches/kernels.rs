use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use nlhj_bench::{lagrangian, local_problem, model, smooth_triple, stable_problem};
use nlhj_core::approx::sup_convolution;
use nlhj_core::levy::{apply_operator, build_quadrature_plan, JumpFunction, LevyMeasure, PlanParams};
use nlhj_core::lp::LpOptions;
use nlhj_core::mather::{closed_measure_constraints, solve_mather_lp};
use nlhj_core::solver::{residual, solve_discounted, NumericalFlux, SchemeOptions};
use nlhj_core::GridFunction;

fn levy(c: &mut Criterion) {
    let mut g = c.benchmark_group("levy");
    let m = LevyMeasure::power(1.5, 1.0).unwrap();
    for n in [128usize, 512] {
        let params = PlanParams::defaults_for(n);
        g.bench_with_input(BenchmarkId::new("build_plan", n), &n, |b, &n| {
            b.iter(|| build_quadrature_plan(&m, &JumpFunction::identity(), n, &params).unwrap())
        });
        let plan = build_quadrature_plan(&m, &JumpFunction::identity(), n, &params).unwrap();
        let (f, d, d2) = smooth_triple(n);
        g.bench_with_input(BenchmarkId::new("apply", n), &n, |b, _| {
            b.iter(|| apply_operator(&plan, black_box(&f), &d, &d2).unwrap())
        });
    }
    g.finish();
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("solver");
    g.sample_size(10);
    let p = stable_problem(256, 1.5, 0.1);
    let u = smooth_triple(256).0;
    g.bench_function("residual_stable_256", |b| {
        b.iter(|| residual(&p, black_box(&u), NumericalFlux::Godunov).unwrap())
    });
    let local = local_problem(200, 0.1);
    g.bench_function("solve_local_200", |b| {
        b.iter(|| solve_discounted(&local, &SchemeOptions::default(), None).unwrap())
    });
    g.finish();
}

fn duality(c: &mut Criterion) {
    let mut g = c.benchmark_group("duality");
    g.sample_size(10);
    g.bench_function("fenchel_64", |b| b.iter(|| lagrangian(64, 3.0)));
    let table = lagrangian(64, 3.0);
    let p = nlhj_core::solver::ProblemSpec::local(model(), 64, 0.1).unwrap();
    let sys = closed_measure_constraints(&p, 0.1, 0, 4, &table.q).unwrap();
    g.bench_function("mather_lp_64_m4", |b| {
        b.iter(|| solve_mather_lp(&sys, &table, &LpOptions::default()).unwrap())
    });
    g.finish();
}

fn approximation(c: &mut Criterion) {
    let v = GridFunction::from_fn(400, |x| (x - 0.5).abs());
    c.bench_function("sup_convolution_400", |b| {
        b.iter(|| sup_convolution(black_box(&v), 1e-3).unwrap())
    });
}

criterion_group!(benches, levy, solver, duality, approximation);
criterion_main!(benches);
