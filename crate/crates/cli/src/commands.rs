//! Command implementations. Every file-producing command is turned into a
//! [`RunManifest`] first and then executed from it, so `replay` follows the
//! same path as the original run.

use std::path::{Path, PathBuf};

use dnpsolve::diagnostics::report;
use dnpsolve::mms::{self, Family, Study};
use dnpsolve::oracle::{oracle_compare, OracleError};
use dnpsolve::solver::{solve_transient, sweep_eps, PenaltySchedule, SolveError, SolverConfig, Trajectory};
use dnpsolve::validate::validate_on;
use dnpsolve::{Discretization, ProblemSpec};

use crate::manifest::{ProblemRecord, RunCommand, RunManifest, MANIFEST_FILE};
use crate::output::{self, num, opt, table, write_atomic};
use crate::{load_problem, Cli, CliError, Command, Console, FamilyArg, ScheduleArgs, StudyArg, TimeArgs, DEFAULT_OUT};

const DEFAULT_SEED: u64 = 42;

pub fn dispatch(cli: &Cli, console: &mut Console<'_>) -> Result<(), CliError> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let manifest = match &cli.command {
        Command::Validate { problem } => return validate(cli, problem, console),
        Command::Replay { manifest } => {
            let mut m = RunManifest::read(manifest)?;
            if let Some(o) = &cli.out {
                m.output_dir = o.display().to_string();
            }
            m
        }
        Command::Solve { problem, eps, time } => {
            let spec = prepare(problem, cli.seed, time, None)?;
            let eps = spec.constrained().then(|| eps.unwrap_or(spec.solver.eps));
            RunManifest::new(
                RunCommand::Solve {
                    problem: ProblemRecord::of(&spec),
                    eps,
                },
                spec.solver.seed,
                &out,
            )
        }
        Command::Sweep {
            problem,
            schedule,
            cold,
            time,
        } => {
            let spec = prepare(problem, cli.seed, time, Some(schedule))?;
            let eps = schedule_of(&spec)?.eps;
            RunManifest::new(
                RunCommand::Sweep {
                    problem: ProblemRecord::of(&spec),
                    eps,
                    warm_start: !cold,
                },
                spec.solver.seed,
                &out,
            )
        }
        Command::OracleCompare { problem, schedule, time } => {
            let spec = prepare(problem, cli.seed, time, Some(schedule))?;
            let eps = schedule_of(&spec)?.eps;
            RunManifest::new(
                RunCommand::OracleCompare {
                    problem: ProblemRecord::of(&spec),
                    eps,
                },
                spec.solver.seed,
                &out,
            )
        }
        Command::Convergence { family, levels, study } => RunManifest::new(
            RunCommand::Convergence {
                family: match family {
                    FamilyArg::Heat => Family::Heat.to_string(),
                    FamilyArg::Affine => Family::Affine.to_string(),
                },
                study: match study {
                    StudyArg::Space => "space".into(),
                    StudyArg::Time => "time".into(),
                },
                levels: *levels as usize,
            },
            cli.seed.unwrap_or(DEFAULT_SEED),
            &out,
        ),
    };
    execute(&manifest, console)
}

fn prepare(problem: &str, seed: Option<u64>, time: &TimeArgs, schedule: Option<&ScheduleArgs>) -> Result<ProblemSpec, CliError> {
    let mut spec = load_problem(problem)?;
    let s = &mut spec.solver;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(dt) = time.dt {
        s.dt = dt;
    }
    if let Some(t) = time.t_end {
        s.t_end = t;
    }
    if let Some(sch) = schedule {
        if let Some(n) = sch.eps_stages {
            s.eps_stages = n as usize;
        }
        if let Some(e) = sch.eps0 {
            s.eps0 = e;
        }
    }
    Ok(spec)
}

fn schedule_of(spec: &ProblemSpec) -> Result<PenaltySchedule, CliError> {
    PenaltySchedule::from_spec(spec).map_err(|e| CliError::Usage(e.to_string()))
}

fn validate(cli: &Cli, problem: &str, console: &mut Console<'_>) -> Result<(), CliError> {
    let mut spec = load_problem(problem)?;
    if let Some(seed) = cli.seed {
        spec.solver.seed = seed;
    }
    let mesh = spec.build_mesh().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = validate_on(&spec, &mesh);
    console.say(format!("problem {}", spec.name));
    console.say(report.to_string().trim_end());
    if report.passed() {
        console.say("all conditions hold");
        Ok(())
    } else {
        let failed: Vec<&str> = report.failures().map(|e| e.condition.as_str()).collect();
        console.say(format!("failed: {}", failed.join(", ")));
        Err(CliError::Validation)
    }
}

/// Runs the command recorded in `m`, writing into `m.output_dir`.
pub fn execute(m: &RunManifest, console: &mut Console<'_>) -> Result<(), CliError> {
    let dir = PathBuf::from(&m.output_dir);
    write_atomic(&dir.join(MANIFEST_FILE), m.to_json().as_bytes())?;
    match &m.command {
        RunCommand::Solve { problem, eps } => run_solve(problem, *eps, &dir, console),
        RunCommand::Sweep {
            problem,
            eps,
            warm_start,
        } => run_sweep(problem, eps, *warm_start, &dir, console),
        RunCommand::OracleCompare { problem, eps } => run_oracle(problem, eps, &dir, console),
        RunCommand::Convergence { family, study, levels } => run_convergence(family, study, *levels, &dir, console),
    }
}

fn setup(problem: &ProblemRecord, console: &mut Console<'_>) -> Result<(Discretization, SolverConfig), CliError> {
    let spec = problem.resolve()?;
    let mesh = spec.build_mesh().map_err(|e| CliError::Usage(e.to_string()))?;
    let config = SolverConfig::from_spec(&spec);
    config.check().map_err(|e| CliError::Usage(e.to_string()))?;
    if config.dt > config.t_end {
        console.warn(format!(
            "dt = {} exceeds t_end = {}; taking a single step to t_end",
            config.dt, config.t_end
        ));
    }
    Ok((Discretization::new(&spec, &mesh), config))
}

fn write_trajectory(disc: &Discretization, traj: &Trajectory, dir: &Path) -> Result<(), CliError> {
    write_atomic(&dir.join(output::TRAJECTORY_FILE), &output::trajectory_table(disc, &traj.states)?)?;
    write_atomic(&dir.join(output::DIAGNOSTICS_FILE), &output::diagnostics_table(disc, traj)?)
}

fn summarize(disc: &Discretization, traj: &Trajectory, console: &mut Console<'_>) -> Result<(), CliError> {
    let r = report(disc, traj).map_err(|e| CliError::Solver(e.to_string()))?;
    let iters: Vec<usize> = traj.stats.iter().map(|s| s.iterations).collect();
    let (first, last) = (r.energy.first(), r.energy.last());
    console.say(format!(
        "{} levels to t = {}; newton iterations total {}, max {}",
        traj.states.len(),
        traj.last().t,
        iters.iter().sum::<usize>(),
        iters.iter().max().copied().unwrap_or(0)
    ));
    if let (Some(a), Some(b)) = (first, last) {
        console.say(format!("psi energy {:e} -> {:e}", a.psi_energy, b.psi_energy));
    }
    if !disc.constrained_dofs().is_empty() {
        let c = r.complementarity;
        console.say(format!(
            "penalty residual {:e}; max u on gamma3 {:e}; max |u*flux| {:e}; max flux+ {:e}",
            r.penalty_residual, r.max_excursion, c.max_product, c.max_positive_flux
        ));
    }
    if let Some(g) = r.gronwall {
        console.say(format!("gronwall fit A = {:e}, C = {:e}", g.a, g.c));
    }
    Ok(())
}

fn run_solve(problem: &ProblemRecord, eps: Option<f64>, dir: &Path, console: &mut Console<'_>) -> Result<(), CliError> {
    let (disc, config) = setup(problem, console)?;
    console.say(format!(
        "solving {} with eps = {}",
        problem.name,
        eps.map(|e| format!("{e:e}")).unwrap_or_else(|| "none".into())
    ));
    let (traj, failure) = match solve_transient(&disc, eps, &config) {
        Ok(t) => (t, None),
        Err(SolveError::Step { t, dt, source, partial }) => {
            let msg = format!("step to t = {t} (dt = {dt}) failed after retry: {source}");
            (*partial, Some(msg))
        }
        Err(e) => return Err(CliError::Solver(e.to_string())),
    };
    write_trajectory(&disc, &traj, dir)?;
    summarize(&disc, &traj, console)?;
    console.say(format!("wrote {}", dir.display()));
    match failure {
        Some(msg) => Err(CliError::Solver(msg)),
        None => Ok(()),
    }
}

fn run_sweep(problem: &ProblemRecord, eps: &[f64], warm: bool, dir: &Path, console: &mut Console<'_>) -> Result<(), CliError> {
    let (disc, config) = setup(problem, console)?;
    let schedule = PenaltySchedule::new(eps.to_vec(), warm).map_err(|e| CliError::Usage(e.to_string()))?;
    let stages = sweep_eps(&disc, &schedule, &config);
    let mut rows = Vec::with_capacity(stages.len());
    let mut failed = Vec::new();
    for (k, s) in stages.iter().enumerate() {
        if let Some(traj) = &s.trajectory {
            write_trajectory(&disc, traj, &dir.join(format!("stage_{k:02}")))?;
        }
        if let Some(f) = &s.failure {
            failed.push(format!("eps = {:e}: {f}", s.eps));
        }
        let r = s.report.as_ref();
        let pr = s.penalty_residual();
        let iters: Option<usize> = s.trajectory.as_ref().map(|t| t.stats.iter().map(|x| x.iterations).sum());
        rows.push(vec![
            num(s.eps),
            opt(pr),
            opt(pr.map(|p| p / s.eps)),
            opt(s.distance_to_previous),
            opt(r.map(|r| r.max_excursion)),
            opt(r.map(|r| r.complementarity.max_product)),
            iters.map(|i| i.to_string()).unwrap_or_default(),
            s.warm_started.to_string(),
            if s.failure.is_some() { "failed" } else { "ok" }.to_string(),
        ]);
        console.say(format!(
            "eps {:e}: penalty residual {}, distance to previous {}",
            s.eps,
            opt(pr),
            opt(s.distance_to_previous)
        ));
    }
    let header = [
        "eps",
        "penalty_residual",
        "residual_over_eps",
        "consecutive_distance",
        "max_excursion",
        "max_product",
        "newton_iters",
        "warm_started",
        "status",
    ];
    write_atomic(&dir.join(output::SWEEP_FILE), &table(&header, rows)?)?;
    console.say(format!("wrote {}", dir.display()));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(failed.join("; ")))
    }
}

fn run_oracle(problem: &ProblemRecord, eps: &[f64], dir: &Path, console: &mut Console<'_>) -> Result<(), CliError> {
    let (disc, config) = setup(problem, console)?;
    let schedule = PenaltySchedule::new(eps.to_vec(), true).map_err(|e| CliError::Usage(e.to_string()))?;
    let (rows, oracle) = oracle_compare(&disc, &schedule, &config).map_err(|e| match e {
        OracleError::TooLarge { .. } => CliError::Usage(e.to_string()),
        other => CliError::Solver(other.to_string()),
    })?;
    let comparison = rows.iter().map(|r| vec![num(r.eps), opt(r.distance)]);
    write_atomic(&dir.join(output::COMPARISON_FILE), &table(&["eps", "distance"], comparison)?)?;
    write_atomic(
        &dir.join(output::ORACLE_TRAJECTORY_FILE),
        &output::trajectory_table(&disc, &oracle.states)?,
    )?;
    let mut contact = Vec::new();
    for s in &oracle.steps {
        for (k, &d) in disc.constrained_dofs().iter().enumerate() {
            let m = disc.m();
            contact.push(vec![
                num(s.state.t),
                (d / m).to_string(),
                (d % m + 1).to_string(),
                num(s.state.values[d]),
                num(s.multiplier[d]),
                s.active.active[k].to_string(),
            ]);
        }
    }
    let header = ["t", "node", "component", "u", "multiplier", "active"];
    write_atomic(&dir.join(output::CONTACT_FILE), &table(&header, contact)?)?;
    for r in &rows {
        console.say(format!("eps {:e}: distance to reference {}", r.eps, opt(r.distance)));
    }
    let c = oracle.complementarity(&disc);
    console.say(format!(
        "reference: max u {:e}, max flux+ {:e}, max |u*flux| {:e}",
        c.max_u, c.max_positive_flux, c.max_product
    ));
    console.say(format!("wrote {}", dir.display()));
    if rows.iter().any(|r| r.distance.is_none()) {
        return Err(CliError::Solver("some penalty stages failed".into()));
    }
    Ok(())
}

fn run_convergence(family: &str, study: &str, levels: usize, dir: &Path, console: &mut Console<'_>) -> Result<(), CliError> {
    let fam: Family = family.parse().map_err(CliError::Usage)?;
    let st = match study {
        "space" => Study::Space,
        "time" => Study::Time,
        other => return Err(CliError::Usage(format!("unknown study `{other}`"))),
    };
    let (rows, fit) = mms::study(fam, st, levels).map_err(|e| CliError::Solver(e.to_string()))?;
    let res = |r: &mms::ErrorRow| match st {
        Study::Space => r.h,
        Study::Time => r.dt,
    };
    let local: Vec<Option<f64>> = (0..rows.len())
        .map(|k| {
            (k > 0 && rows[k].l2_final > 0.0 && rows[k - 1].l2_final > 0.0).then(|| {
                (rows[k].l2_final / rows[k - 1].l2_final).ln() / (res(&rows[k]) / res(&rows[k - 1])).ln()
            })
        })
        .collect();
    let body = rows.iter().zip(&local).map(|(r, l)| {
        vec![
            r.n.to_string(),
            num(r.h),
            num(r.dt),
            num(r.t_end),
            num(r.l2_final),
            num(r.l2_qt),
            opt(*l),
        ]
    });
    let header = ["n", "h", "dt", "t_end", "l2_final", "l2_qt", "local_order"];
    write_atomic(&dir.join(output::ORDERS_FILE), &table(&header, body)?)?;
    let fit_row = vec![
        family.to_string(),
        study.to_string(),
        levels.to_string(),
        opt(fit.order),
        fit.exact.to_string(),
    ];
    write_atomic(
        &dir.join(output::FIT_FILE),
        &table(&["family", "study", "levels", "observed_order", "exact"], [fit_row])?,
    )?;
    for r in &rows {
        console.say(format!("n = {:4}  dt = {:e}  L2 error {:e}", r.n, r.dt, r.l2_final));
    }
    match (fit.exact, fit.order) {
        (true, _) => console.say("errors at round-off level: discretization is exact"),
        (false, Some(p)) => console.say(format!("observed {study} order {p:.3}")),
        (false, None) => console.say("too few levels for an order"),
    }
    console.say(format!("wrote {}", dir.display()));
    Ok(())
}
