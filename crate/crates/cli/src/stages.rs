//! Pipeline stages. Each stage writes its files through the emitter; later
//! stages read their inputs back from files listed in the manifest.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use nlhj_core::approx::{
    epsilon_for_defect, smooth_subsolution_sequence, subsolution_defect, sup_convolution, Hypotheses, SmoothingOptions,
};
use nlhj_core::hamiltonian::{
    check_blt, check_class_membership, check_doubling_bound, check_midpoint_convexity, derive_blt_constants,
    BltConstants, BltReport, BltSamples, ClassReport, ClassSamples, DoublingReport, Hamiltonian, HamiltonianModel,
};
use nlhj_core::lagrangian::{fenchel_lagrangian, select_q, truncate_h, PGrid, VelocitySet};
use nlhj_core::levy::{validate_levy_spec, SamplePlan, ValidationReport};
use nlhj_core::mather::{
    closed_measure_constraints, compute_u0, mather_limit_measures, solve_mather_lp, DiscreteMeasure, KGrid,
};
use nlhj_core::solver::{
    critical_constant, residual, solve_discounted, vanishing_discount_sweep, NumericalFlux, ProblemSpec,
};
use nlhj_core::GridFunction;

use crate::config::ExperimentConfig;
use crate::output::{gap_csv, measure_csv, parse_csv, solution_csv, Emitter};
use crate::{CliError, Command};

const VALIDATE: &str = "validate";
const HAMILTONIAN: &str = "hamiltonian-check";
const SOLVE: &str = "solve";
const SWEEP: &str = "sweep";
const MATHER: &str = "mather";
const U0: &str = "compute_u0";
const APPROX: &str = "approx-demo";

const SOLUTION_HEADER: &str = "x,u,residual";
const GAP_HEADER: &str = "lambda,sup_gap,lambda_u_z";
const MEASURE_HEADER: &str = "x,xi,weight";

/// Tolerance on `‖u₀ - u_limit‖∞` for the normalization flag.
const U0_LIMIT_TOL: f64 = 5e-3;

pub fn run_command(cmd: Command, cfg: &ExperimentConfig, hash: String, threads: usize) -> Result<(), CliError> {
    let mut ctx = Context {
        cfg,
        out: Emitter::open(&cfg.output, hash, cfg.seed, threads)?,
    };
    let result = match cmd {
        Command::Validate => ctx.stage(VALIDATE, validate),
        Command::HamiltonianCheck => ctx.stage(HAMILTONIAN, hamiltonian_check),
        Command::Solve => ctx.stage(SOLVE, solve),
        Command::Sweep => ctx.stage(SWEEP, sweep),
        Command::Mather => ctx.require(SWEEP, sweep).and_then(|_| ctx.stage(MATHER, mather)),
        Command::ApproxDemo => ctx.require(SWEEP, sweep).and_then(|_| ctx.stage(APPROX, approx_demo)),
        Command::Full => full(&mut ctx),
    };
    // the manifest is written even when a stage fails, so partial output stays accounted for
    ctx.out.save()?;
    result
}

fn full(ctx: &mut Context) -> Result<(), CliError> {
    ctx.stage(VALIDATE, validate)?;
    ctx.stage(HAMILTONIAN, hamiltonian_check)?;
    ctx.stage(SWEEP, sweep)?;
    ctx.stage(MATHER, mather)?;
    ctx.stage(U0, u0_stage)?;
    ctx.stage(APPROX, approx_demo)?;
    let flags: Vec<String> = ctx
        .out
        .manifest
        .acceptance
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!("full: acceptance {}", flags.join(" "));
    Ok(())
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    out: Emitter,
}

type StageFn = fn(&mut Context) -> Result<String, CliError>;

impl Context<'_> {
    /// Runs a stage, prints its one-line summary and records it.
    fn stage(&mut self, name: &str, f: StageFn) -> Result<(), CliError> {
        let start = Instant::now();
        let result = f(self);
        let elapsed = start.elapsed().as_secs_f64();
        let summary = match &result {
            Ok(s) => s.clone(),
            Err(e) => format!("failed: {e}"),
        };
        println!("{name}: {summary} ({elapsed:.2} s)");
        self.out.record_stage(name, elapsed, summary);
        result.map(|_| ())
    }

    /// Runs `name` unless the manifest already holds its outputs.
    fn require(&mut self, name: &str, f: StageFn) -> Result<(), CliError> {
        if self.out.has_stage(name) && !self.out.files_of(name).is_empty() {
            return Ok(());
        }
        self.stage(name, f)
    }

    fn hamiltonian(&self) -> HamiltonianModel {
        self.cfg.problem.hamiltonian.clone()
    }

    fn problem(&self, h: Arc<dyn Hamiltonian>, lambda: f64) -> Result<ProblemSpec, CliError> {
        let p = &self.cfg.problem;
        Ok(ProblemSpec::with_measure(h, &self.cfg.measure(), &p.jump, p.n, lambda)?.with_anchor(p.anchor)?)
    }

    fn read_table(&self, name: &str, header: &str) -> Result<Vec<[f64; 3]>, CliError> {
        parse_csv(&self.out.read(name)?, header)
    }

    fn read_solution(&self, name: &str) -> Result<GridFunction, CliError> {
        let rows = self.read_table(name, SOLUTION_HEADER)?;
        if rows.len() != self.cfg.problem.n {
            return Err(CliError::Manifest(format!(
                "{name} has {} rows, expected {}",
                rows.len(),
                self.cfg.problem.n
            )));
        }
        Ok(GridFunction::new(rows.iter().map(|r| r[1]).collect()))
    }

    fn read_sweep_summary(&self) -> Result<SweepSummary, CliError> {
        serde_json::from_str(&self.out.read("sweep.json")?).map_err(|e| CliError::Manifest(format!("sweep.json: {e}")))
    }

    /// Solution at the smallest discount of the recorded sweep.
    fn read_u_limit(&self) -> Result<GridFunction, CliError> {
        let name = solution_files(&self.out.files_of(SWEEP))
            .last()
            .cloned()
            .ok_or_else(|| CliError::Manifest("no sweep solutions in the manifest".into()))?;
        self.read_solution(&name)
    }

    fn read_measure(&self, name: &str, q: &VelocitySet) -> Result<DiscreteMeasure, CliError> {
        let rows = self.read_table(name, MEASURE_HEADER)?;
        let grid = KGrid::new(self.cfg.problem.n, q.clone());
        if rows.len() != grid.len() {
            return Err(CliError::Manifest(format!(
                "{name} has {} rows, expected {}",
                rows.len(),
                grid.len()
            )));
        }
        Ok(DiscreteMeasure::new(grid, rows.iter().map(|r| r[2]).collect())?)
    }
}

fn solution_files(files: &[String]) -> Vec<String> {
    files
        .iter()
        .filter(|f| f.starts_with("sweep_lambda_"))
        .cloned()
        .collect()
}

fn csv_residual(problem: &ProblemSpec, u: &GridFunction) -> Result<GridFunction, CliError> {
    Ok(residual(problem, u, NumericalFlux::Godunov)?)
}

fn validate(ctx: &mut Context) -> Result<String, CliError> {
    let p = &ctx.cfg.problem;
    let report: ValidationReport = validate_levy_spec(&ctx.cfg.measure(), &p.jump, p.c_nu, &SamplePlan::default())?;
    ctx.out.write_json(VALIDATE, "validation.json", &report)?;
    ctx.out.flag("levy_spec_valid", report.passed());
    let summary: Vec<String> = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "({}) {}",
                c.name,
                serde_json::to_value(c.status)
                    .unwrap_or_default()
                    .as_str()
                    .unwrap_or("?")
            )
        })
        .collect();
    let summary = summary.join(", ");
    if report.passed() {
        Ok(summary)
    } else {
        Err(CliError::Validation(summary))
    }
}

#[derive(Serialize)]
struct HamiltonianCheck {
    convex: bool,
    class: Option<ClassReport>,
    blt_constants: Option<BltConstants>,
    blt: Option<BltReport>,
    doubling: Option<DoublingReport>,
}

fn hamiltonian_check(ctx: &mut Context) -> Result<String, CliError> {
    let h = ctx.hamiltonian();
    let samples = ClassSamples::default();
    let convex = check_midpoint_convexity(&h, &samples);
    let mut report = HamiltonianCheck {
        convex,
        class: None,
        blt_constants: None,
        blt: None,
        doubling: None,
    };
    if let Some(c) = h.class {
        let class = check_class_membership(&h, c, &samples);
        let blt_c = derive_blt_constants(c.alpha0, c.alpha1, c.gamma)?;
        let blt = check_blt(
            &h,
            blt_c.b,
            blt_c.k,
            c.gamma,
            BltSamples {
                seed: ctx.cfg.seed,
                ..BltSamples::default()
            },
        );
        report.doubling = Some(check_doubling_bound(&h, 0.5, c.gamma, blt_c.b, blt_c.k, &samples)?);
        report.class = Some(class);
        report.blt_constants = Some(blt_c);
        report.blt = Some(blt);
    }
    ctx.out.write_json(HAMILTONIAN, "hamiltonian.json", &report)?;
    let class_ok = report.class.as_ref().is_none_or(|c| c.passed());
    let blt_ok = report.blt.as_ref().is_none_or(|b| b.violations == 0);
    let ok = convex && class_ok && blt_ok;
    ctx.out.flag("hamiltonian_admissible", ok);
    let summary = match (&report.class, &report.blt) {
        (Some(c), Some(b)) => format!(
            "convex {convex}, class {}, BLT violations {}/{}",
            c.passed(),
            b.violations,
            b.samples
        ),
        _ => format!("convex {convex}, no class constants declared"),
    };
    if ok {
        Ok(summary)
    } else {
        Err(CliError::Validation(summary))
    }
}

#[derive(Serialize)]
struct SolveSummary {
    lambda: f64,
    anchor: usize,
    residual_inf: f64,
    lipschitz_estimate: f64,
    iterations: usize,
    cfl_dt: f64,
    lambda_u_at_z: f64,
    theta: f64,
}

fn solve(ctx: &mut Context) -> Result<String, CliError> {
    let lambda = match ctx.cfg.problem.lambda {
        Some(l) if l > 0.0 => l,
        _ => {
            return Err(CliError::Config(
                "problem.lambda must be positive for `solve`; λ = 0 is reached through `sweep`".into(),
            ))
        }
    };
    let p = ctx.problem(Arc::new(ctx.hamiltonian()), lambda)?;
    let r = solve_discounted(&p, &ctx.cfg.solver, None)?;
    let res = csv_residual(&p, &r.u)?;
    ctx.out.write(SOLVE, "solution.csv", &solution_csv(&r.u, &res))?;
    ctx.out.write_json(
        SOLVE,
        "solve.json",
        &SolveSummary {
            lambda,
            anchor: p.anchor,
            residual_inf: r.residual_inf,
            lipschitz_estimate: r.lipschitz_estimate,
            iterations: r.iterations,
            cfl_dt: r.cfl_dt,
            lambda_u_at_z: r.lambda_u_at_z,
            theta: r.theta,
        },
    )?;
    Ok(format!(
        "λ = {lambda}, residual {:.1e}, {} iterations, λu(z) = {:.10}",
        r.residual_inf, r.iterations, r.lambda_u_at_z
    ))
}

#[derive(Serialize, serde::Deserialize)]
struct SweepSummary {
    critical_value: f64,
    lower_bound: f64,
    lambdas: Vec<f64>,
    gaps: Vec<f64>,
    gaps_decreasing: bool,
    lambda_sup: Vec<f64>,
    lipschitz_estimates: Vec<f64>,
    residuals: Vec<f64>,
    iterations: Vec<usize>,
}

/// Estimates the critical value, then sweeps the ladder for `H - c`.
fn sweep(ctx: &mut Context) -> Result<String, CliError> {
    let ladder = &ctx.cfg.sweep.ladder;
    let p0 = ctx.problem(Arc::new(ctx.hamiltonian()), ladder[0])?;
    let crit = critical_constant(&p0, ladder, &ctx.cfg.solver)?;
    let p = p0.with_hamiltonian(Arc::new(ctx.hamiltonian().shifted(crit.c_estimate)));
    let s = vanishing_discount_sweep(&p, ladder, &ctx.cfg.solver)?;

    let mut rows = Vec::with_capacity(ladder.len());
    for (k, r) in s.reports.iter().enumerate() {
        let res = csv_residual(&p.with_lambda(r.lambda)?, &r.u)?;
        ctx.out
            .write(SWEEP, &format!("sweep_lambda_{k:02}.csv"), &solution_csv(&r.u, &res))?;
        let gap = if k == 0 { f64::NAN } else { s.gaps[k - 1] };
        rows.push([r.lambda, gap, r.lambda_u_at_z]);
    }
    ctx.out.write(SWEEP, "sweep_gaps.csv", &gap_csv(&rows))?;
    ctx.out.write_json(
        SWEEP,
        "sweep.json",
        &SweepSummary {
            critical_value: crit.c_estimate,
            lower_bound: crit.lower_bound,
            lambdas: s.lambdas(),
            gaps: s.gaps.clone(),
            gaps_decreasing: s.gaps_decreasing,
            lambda_sup: s.lambda_sup.clone(),
            lipschitz_estimates: s.reports.iter().map(|r| r.lipschitz_estimate).collect(),
            residuals: s.reports.iter().map(|r| r.residual_inf).collect(),
            iterations: s.reports.iter().map(|r| r.iterations).collect(),
        },
    )?;
    ctx.out.flag("sweep_gaps_decreasing", s.gaps_decreasing);
    Ok(format!(
        "c = {:.10}, {} solutions, last gap {:.2e}, gaps decreasing {}",
        crit.c_estimate,
        s.reports.len(),
        s.gaps.last().copied().unwrap_or(f64::NAN),
        s.gaps_decreasing
    ))
}

#[derive(Serialize)]
struct MatherSummary {
    kappa: f64,
    n_q: usize,
    xi_max: f64,
    modes: usize,
    anchor: usize,
    critical_value: f64,
    critical_mass: f64,
    lambdas: Vec<f64>,
    values: Vec<f64>,
    lambda_u_z: Vec<f64>,
    duality_gaps: Vec<f64>,
    bl_distances: Vec<f64>,
    final_critical_residual: f64,
}

/// Velocity grid shared by `mather` and `compute_u0`, rebuilt from the sweep.
fn lagrangian_setup(
    ctx: &Context,
    h: Arc<dyn Hamiltonian>,
) -> Result<(f64, Arc<dyn Hamiltonian>, VelocitySet), CliError> {
    let summary = ctx.read_sweep_summary()?;
    let kappa = ctx
        .cfg
        .duality
        .kappa
        .unwrap_or(1.2 * summary.lipschitz_estimates[0] + 1.0);
    let truncated: Arc<dyn Hamiltonian> = Arc::new(truncate_h(h, kappa)?);
    let q = select_q(truncated.as_ref(), kappa, ctx.cfg.duality.n_q)?;
    Ok((kappa, truncated, q))
}

fn mather(ctx: &mut Context) -> Result<String, CliError> {
    let summary = ctx.read_sweep_summary()?;
    let gaps = ctx.read_table("sweep_gaps.csv", GAP_HEADER)?;
    let h: Arc<dyn Hamiltonian> = Arc::new(ctx.hamiltonian().shifted(summary.critical_value));
    let (kappa, truncated, q) = lagrangian_setup(ctx, h.clone())?;
    let n = ctx.cfg.problem.n;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let table = fenchel_lagrangian(truncated.as_ref(), &xs, &q, PGrid::for_velocities(kappa, &q))?;

    let d = &ctx.cfg.duality;
    let p = ctx.problem(h, summary.lambdas[0])?;
    let critical = solve_mather_lp(
        &closed_measure_constraints(&p, 0.0, p.anchor, d.modes, &q)?,
        &table,
        &d.lp,
    )?;
    let limits = mather_limit_measures(&p, &table, &summary.lambdas, p.anchor, d.modes, &d.lp)?;

    ctx.out
        .write(MATHER, "mather_critical.csv", &measure_csv(&critical.measure))?;
    for (k, s) in limits.solutions.iter().enumerate() {
        ctx.out
            .write(MATHER, &format!("mather_lambda_{k:02}.csv"), &measure_csv(&s.measure))?;
    }
    let values: Vec<f64> = limits.solutions.iter().map(|s| s.value).collect();
    let lambda_u_z: Vec<f64> = gaps.iter().map(|r| r[2]).collect();
    let duality_gaps: Vec<f64> = values.iter().zip(&lambda_u_z).map(|(v, l)| (v - l).abs()).collect();
    let worst_gap = duality_gaps.iter().copied().fold(0.0, f64::max);
    let masses_ok = std::iter::once(&critical)
        .chain(&limits.solutions)
        .all(|s| (s.measure.total() - 1.0).abs() <= 1e-12);
    ctx.out.write_json(
        MATHER,
        "mather.json",
        &MatherSummary {
            kappa,
            n_q: q.len(),
            xi_max: q.xi_max,
            modes: d.modes,
            anchor: p.anchor,
            critical_value: critical.value,
            critical_mass: critical.measure.total(),
            lambdas: summary.lambdas.clone(),
            values,
            lambda_u_z,
            duality_gaps,
            bl_distances: limits.distances.clone(),
            final_critical_residual: limits.final_critical_residual,
        },
    )?;
    ctx.out.flag("duality_gap", worst_gap <= d.gap_tol);
    ctx.out.flag("measure_mass", masses_ok);
    Ok(format!(
        "critical LP value {:.2e}, worst duality gap {worst_gap:.2e} (tol {:.0e}), {} measures",
        critical.value,
        d.gap_tol,
        limits.solutions.len() + 1
    ))
}

#[derive(Serialize)]
struct U0Summary {
    shift: f64,
    attaining: usize,
    integrals: Vec<f64>,
    max_integral_u0: f64,
    max_integral_limit: f64,
    sup_dist_to_limit: f64,
}

/// `u₀` from the mean-free limit solution and the Mather measures on file.
fn u0_stage(ctx: &mut Context) -> Result<String, CliError> {
    let summary = ctx.read_sweep_summary()?;
    let h: Arc<dyn Hamiltonian> = Arc::new(ctx.hamiltonian().shifted(summary.critical_value));
    let (_, _, q) = lagrangian_setup(ctx, h.clone())?;
    let u_limit = ctx.read_u_limit()?;
    let set = ["mather_critical.csv".to_string()]
        .into_iter()
        .chain(
            ctx.out
                .files_of(MATHER)
                .into_iter()
                .rfind(|f| f.starts_with("mather_lambda_")),
        )
        .map(|name| ctx.read_measure(&name, &q))
        .collect::<Result<Vec<_>, _>>()?;

    let u_ref = u_limit.shifted(-u_limit.mean());
    let u0 = compute_u0(&u_ref, &set)?;
    let max_of = |u: &GridFunction| -> Result<f64, CliError> {
        let mut best = f64::NEG_INFINITY;
        for mu in &set {
            best = best.max(mu.integrate_x(u)?);
        }
        Ok(best)
    };
    let out = U0Summary {
        shift: u0.shift,
        attaining: u0.attaining,
        integrals: u0.integrals.clone(),
        max_integral_u0: max_of(&u0.u0)?,
        max_integral_limit: max_of(&u_limit)?,
        sup_dist_to_limit: u0.u0.sup_dist(&u_limit)?,
    };
    let crit = ctx.problem(h, 0.0)?;
    ctx.out
        .write(U0, "u0.csv", &solution_csv(&u0.u0, &csv_residual(&crit, &u0.u0)?))?;
    ctx.out.write_json(U0, "u0.json", &out)?;
    let ok = out.max_integral_u0.abs() <= 1e-3
        && out.max_integral_limit.abs() <= 1e-3
        && out.sup_dist_to_limit <= U0_LIMIT_TOL;
    ctx.out.flag("u0_identity", ok);
    Ok(format!(
        "max ∫u0 dμ = {:.1e}, max ∫u_limit dμ = {:.1e}, ‖u0 - u_limit‖ = {:.2e}",
        out.max_integral_u0, out.max_integral_limit, out.sup_dist_to_limit
    ))
}

#[derive(Serialize)]
struct ApproxSummary {
    limit_defect: f64,
    schedules: Vec<nlhj_core::approx::EpsilonSchedule>,
    hypotheses: Hypotheses,
    steps: Vec<StepSummary>,
}

#[derive(Serialize)]
struct StepSummary {
    n: usize,
    defect: f64,
    epsilon: f64,
    width: f64,
    sup_dist: f64,
}

/// Sup-convolution schedules and the smooth subsolution sequence for the limit solution.
fn approx_demo(ctx: &mut Context) -> Result<String, CliError> {
    let summary = ctx.read_sweep_summary()?;
    let v = ctx.read_u_limit()?;
    let crit = ctx.problem(Arc::new(ctx.hamiltonian().shifted(summary.critical_value)), 0.0)?;
    let a = &ctx.cfg.approximation;

    let mut schedules = Vec::with_capacity(a.delta_targets.len());
    for (k, &target) in a.delta_targets.iter().enumerate() {
        let sched = epsilon_for_defect(&crit, &v, target, a.eps_max)?;
        let sc = sup_convolution(&v, sched.epsilon)?;
        ctx.out.write(
            APPROX,
            &format!("approx_supconv_{k:02}.csv"),
            &solution_csv(&sc.v_eps, &csv_residual(&crit, &sc.v_eps)?),
        )?;
        schedules.push(sched);
    }
    let seq = smooth_subsolution_sequence(&crit, &v, a.n_max, &SmoothingOptions::default())?;
    if let Some(last) = seq.steps.last() {
        ctx.out.write(
            APPROX,
            "approx_smooth.csv",
            &solution_csv(&last.u, &csv_residual(&crit, &last.u)?),
        )?;
    }
    let steps: Vec<StepSummary> = seq
        .steps
        .iter()
        .map(|s| StepSummary {
            n: s.n,
            defect: s.defect,
            epsilon: s.epsilon,
            width: s.width,
            sup_dist: s.sup_dist,
        })
        .collect();
    let worst = steps.iter().map(|s| s.n as f64 * s.defect).fold(0.0, f64::max);
    let schedules_ok = schedules.iter().all(|s| s.defect <= s.target);
    ctx.out.flag("sup_convolution_defect", schedules_ok);
    ctx.out.flag("smooth_sequence_defect", worst <= 1.0);
    ctx.out.write_json(
        APPROX,
        "approx.json",
        &ApproxSummary {
            limit_defect: subsolution_defect(&crit, 0.0, &v)?,
            schedules,
            hypotheses: seq.hypotheses,
            steps,
        },
    )?;
    Ok(format!(
        "{} schedules met {schedules_ok}, {} smooth steps, max n·defect {worst:.3}, hypotheses {:?}",
        a.delta_targets.len(),
        seq.steps.len(),
        seq.hypotheses
    ))
}
