//! Acceptance criteria, each a self-contained check with pinned tolerances.
//!
//! The `acceptance` test target runs all of them and prints one line per
//! criterion; the process fails if any criterion fails.

use std::fmt;
use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dnpsolve::diagnostics::{energy_increase, energy_trajectory};
use dnpsolve::fem::{feasible_bank, jacobian_mismatch, vi_residual, StepData};
use dnpsolve::mms::{self, Family, Study};
use dnpsolve::oracle::{active_set_transient, oracle_compare};
use dnpsolve::solver::{solve_transient, sweep_eps, uniqueness_probe, PenaltySchedule, SolverConfig, SweepStage};
use dnpsolve::validate::{legendre_psi, validate, Verdict};
use dnpsolve::{bundled, Discretization, ProblemSpec};

const SEED: u64 = 20240917;

pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {:<38} {:>7.2}s  {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

type Check = fn() -> Result<(bool, String), String>;

/// `(id, name, runtime budget, check)`; a run over budget fails.
pub const CRITERIA: [(usize, &str, Option<u64>, Check); 10] = [
    (1, "penalty residual proportional to eps", Some(30), penalty_residual_scaling),
    (2, "penalty solutions approach reference", Some(60), oracle_convergence),
    (3, "complementarity on the contact set", None, complementarity),
    (4, "discrete energy dissipation", Some(10), energy_dissipation),
    (5, "manufactured-solution orders", Some(60), convergence_orders),
    (6, "Legendre transform and validator", Some(5), legendre_and_validator),
    (7, "uniqueness under perturbed guesses", Some(60), uniqueness),
    (8, "variational inequality residual", Some(30), variational_inequality),
    (9, "manifest replay is byte-identical", None, determinism),
    (10, "Jacobian matches finite differences", None, jacobian_consistency),
];

pub fn run(id: usize) -> Outcome {
    let (id, name, budget, check) = CRITERIA[id - 1];
    let start = Instant::now();
    let result = check();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    if let Some(limit) = budget {
        if elapsed > Duration::from_secs(limit) {
            passed = false;
            detail.push_str(&format!("; over the {limit} s budget"));
        }
    }
    Outcome {
        id,
        name,
        passed,
        detail,
        elapsed,
    }
}

fn setup(spec: ProblemSpec) -> Result<(Discretization, SolverConfig), String> {
    let mesh = spec.build_mesh().map_err(|e| e.to_string())?;
    let config = SolverConfig::from_spec(&spec);
    Ok((Discretization::new(&spec, &mesh), config))
}

/// The bundled 1D obstacle problem: 32 elements, `dt = 0.01`, `T = 0.5`.
fn obstacle() -> Result<(Discretization, SolverConfig), String> {
    setup(bundled::load("obstacle1d").map_err(|e| e.to_string())?)
}

fn obstacle_sweep(disc: &Discretization, config: &SolverConfig) -> Result<Vec<SweepStage>, String> {
    let schedule = PenaltySchedule::geometric(1e-2, 5).map_err(|e| e.to_string())?;
    let stages = sweep_eps(disc, &schedule, config);
    match stages.iter().find_map(|s| s.failure.clone()) {
        Some(f) => Err(f),
        None => Ok(stages),
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// `∫₀ᵀ|⟨β(u_ε), u_ε⟩| dt / ε` varies by at most a factor 10 over
/// `ε = 1e-2, ..., 1e-6`.
fn penalty_residual_scaling() -> Result<(bool, String), String> {
    let (disc, config) = obstacle()?;
    let stages = obstacle_sweep(&disc, &config)?;
    let ratios: Vec<f64> = stages
        .iter()
        .map(|s| s.penalty_residual().unwrap_or(f64::NAN) / s.eps)
        .collect();
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    Ok((
        lo > 0.0 && spread <= 10.0,
        format!("residual/eps {} spread {spread:.3e} (limit 10)", sci(&ratios)),
    ))
}

/// `‖u_ε − u_ref‖_{L²(Q_T)}` strictly decreasing and `<= 1e-3` at `ε = 1e-6`.
fn oracle_convergence() -> Result<(bool, String), String> {
    let (disc, config) = obstacle()?;
    let schedule = PenaltySchedule::geometric(1e-2, 5).map_err(|e| e.to_string())?;
    let (rows, _) = oracle_compare(&disc, &schedule, &config).map_err(|e| e.to_string())?;
    let d: Vec<f64> = rows.iter().map(|r| r.distance.unwrap_or(f64::NAN)).collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let last = *d.last().unwrap_or(&f64::NAN);
    let at_target = (rows.last().map_or(0.0, |r| r.eps) - 1e-6).abs() < 1e-18;
    Ok((
        decreasing && at_target && last <= 1e-3,
        format!("distances {} (final limit 1e-3)", sci(&d)),
    ))
}

/// At `ε = 1e-6`: `max u|Γ₃ <= 1e-4`, `max |u·flux| <= 1e-4`; the reference
/// satisfies all three sign conditions to 1e-12.
fn complementarity() -> Result<(bool, String), String> {
    let (disc, mut config) = obstacle()?;
    let traj = solve_transient(&disc, Some(1e-6), &config).map_err(|e| e.to_string())?;
    let r = dnpsolve::diagnostics::report(&disc, &traj).map_err(|e| e.to_string())?;
    config.newton = dnpsolve::oracle::oracle_newton(&config);
    let oracle = active_set_transient(&disc, &config).map_err(|e| e.to_string())?;
    let c = oracle.complementarity(&disc);
    let penalty_ok = r.max_excursion <= 1e-4 && r.complementarity.max_product <= 1e-4;
    let oracle_ok = c.max_u <= 1e-12 && c.max_positive_flux <= 1e-12 && c.max_product <= 1e-12;
    Ok((
        penalty_ok && oracle_ok,
        format!(
            "penalty max u {:.3e}, max |u*flux| {:.3e}; reference max u {:.1e}, max flux+ {:.1e}, max |u*flux| {:.1e}",
            r.max_excursion, r.complementarity.max_product, c.max_u, c.max_positive_flux, c.max_product
        ),
    ))
}

/// Lumped Ψ-energy non-increasing with slack `1e-10·(1 + E₀)` for linear
/// and cubic storage with zero data.
fn energy_dissipation() -> Result<(bool, String), String> {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["heat", "cubic_decay"] {
        let spec = bundled::load(name).map_err(|e| e.to_string())?;
        if !spec.is_dissipative() {
            return Err(format!("{name} has nonzero data"));
        }
        let (disc, config) = setup(spec)?;
        let traj = solve_transient(&disc, None, &config).map_err(|e| e.to_string())?;
        let rows = energy_trajectory(&disc, &traj.states).map_err(|e| e.to_string())?;
        match energy_increase(&rows, 1e-10) {
            None => parts.push(format!(
                "{name}: {:.3e} -> {:.3e} over {} steps",
                rows[0].psi_energy,
                rows.last().unwrap().psi_energy,
                rows.len() - 1
            )),
            Some((k, rise)) => {
                ok = false;
                parts.push(format!("{name}: rise {rise:.3e} at step {k}"));
            }
        }
    }
    Ok((ok, parts.join("; ")))
}

/// Heat equation: spatial order `>= 1.8` (`h = 1/8..1/64`, `dt = h²`),
/// temporal order `>= 0.9`.
fn convergence_orders() -> Result<(bool, String), String> {
    let (_, space) = mms::study(Family::Heat, Study::Space, 4).map_err(|e| e.to_string())?;
    let (_, time) = mms::study(Family::Heat, Study::Time, 3).map_err(|e| e.to_string())?;
    let (ps, pt) = (space.order.unwrap_or(f64::NAN), time.order.unwrap_or(f64::NAN));
    Ok((
        ps >= 1.8 && pt >= 0.9,
        format!("space {ps:.3} (min 1.8), time {pt:.3} (min 0.9)"),
    ))
}

fn scalar_1d(coefficients: &str, exponents: &str) -> Result<ProblemSpec, String> {
    ProblemSpec::parse(&format!(
        "[problem]\nm = {}\ndim = 1\n{exponents}\n[coefficients]\n{coefficients}\n[boundary]\ngamma1 = left, right\n[domain]\nmesh = interval\nn = 4\n",
        if coefficients.contains("u2") { 2 } else { 1 }
    ))
    .map_err(|e| e.to_string())
}

/// `Ψ(z) = |z|²/2` for identity storage on 100 random `z`; the validator
/// accepts the bundled problems and rejects the three known-bad ones with
/// the right condition.
fn legendre_and_validator() -> Result<(bool, String), String> {
    let identity = scalar_1d("B1 = u1\nB2 = u2\nK11 = 1\nK22 = 1", "nu = 1\np = 1\nalpha = 1")?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let psi = legendre_psi(&identity, &z, 16).map_err(|e| e.to_string())?;
        let exact = 0.5 * (z[0] * z[0] + z[1] * z[1]);
        worst = worst.max((psi - exact).abs() / exact.max(1.0));
    }
    let mut notes = vec![format!("psi error {worst:.1e}")];
    let mut ok = worst <= 1e-12;

    for name in bundled::ADMISSIBLE {
        let report = validate(&bundled::load(name).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if !report.passed() {
            ok = false;
            notes.push(format!("{name} rejected"));
        }
    }
    let rejected = |spec: ProblemSpec, condition: &str, needle: &str| -> Result<bool, String> {
        let report = validate(&spec).map_err(|e| e.to_string())?;
        let Some(e) = report.entry(condition) else { return Ok(false) };
        Ok(e.verdict == Verdict::Fail && e.witness.as_ref().is_some_and(|w| w.detail.contains(needle)))
    };
    let cases = [
        ("B=-u1", rejected(scalar_1d("B1 = -u1\nK11 = 1", "nu = 1\np = 1\nalpha = 1")?, "A1-monotone-gradient", "")?),
        (
            "K=[[1,3],[0,1]]",
            rejected(
                scalar_1d("B1 = u1\nB2 = u2\nK11 = 1\nK12 = 3\nK22 = 1", "nu = 1\np = 1\nalpha = 1")?,
                "A2-elliptic-bounded",
                "",
            )?,
        ),
        (
            "nu=1,p=2",
            rejected(scalar_1d("B1 = u1\nK11 = 1", "nu = 1\np = 2\nalpha = 1")?, "A4-exponents", "exceeds")?,
        ),
    ];
    for (label, hit) in cases {
        ok &= hit;
        notes.push(format!("{label} {}", if hit { "rejected" } else { "NOT rejected" }));
    }
    notes.insert(1, format!("{} bundled accepted", bundled::ADMISSIBLE.len()));
    Ok((ok, notes.join(", ")))
}

/// Five runs from randomized Newton starts agree within 1e-8 in `L²(Q_T)`.
fn uniqueness() -> Result<(bool, String), String> {
    let (disc, config) = obstacle()?;
    let eps = disc.spec.solver.eps;
    let r = uniqueness_probe(&disc, Some(eps), &config, 5, SEED).map_err(|e| e.to_string())?;
    Ok((
        r.replicas == 5 && r.max_distance <= 1e-8,
        format!("max pairwise distance {:.3e} over {} runs (limit 1e-8)", r.max_distance, r.replicas),
    ))
}

/// The `ε = 1e-6` solution has bank minimum `>= −1e-6` over 50 feasible
/// fields; a corrupted copy goes strictly negative.
fn variational_inequality() -> Result<(bool, String), String> {
    let (disc, config) = obstacle()?;
    let stages = obstacle_sweep(&disc, &config)?;
    let states = &stages.last().unwrap().trajectory.as_ref().unwrap().states;
    let bank = feasible_bank(&disc, states, 50, SEED);
    let good = vi_residual(&disc, states, &bank).map_err(|e| e.to_string())?;
    let mut bad = states.clone();
    let d = *disc.constrained_dofs().last().ok_or("no constrained dofs")?;
    bad.iter_mut().skip(1).for_each(|s| s.values[d] += 1.0);
    let corrupted = vi_residual(&disc, &bad, &bank).map_err(|e| e.to_string())?;
    Ok((
        bank.len() == 50 && good >= -1e-6 && corrupted < 0.0,
        format!("solution {good:.3e} (min -1e-6), corrupted {corrupted:.3e} (must be < 0)"),
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut all = vec!["dnpsolve", "--quiet"];
    all.extend_from_slice(args);
    let mut err = Vec::new();
    match dnpsolve_cli::run(all, &mut std::io::sink(), &mut err) {
        0 => Ok(()),
        code => Err(format!("exit {code}: {}", String::from_utf8_lossy(&err).trim())),
    }
}

/// Solve and sweep, then replay each manifest twice; every CSV matches.
fn determinism() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| dir.path().join(s).display().to_string();
    cli(&["solve", "twocomp2d", "--eps", "1e-4", "--seed", "5", "--out", &p("solve")])?;
    cli(&["sweep", "obstacle1d", "--eps-stages", "3", "--out", &p("sweep")])?;
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for run in ["solve", "sweep"] {
        let manifest = format!("{}/manifest.json", p(run));
        for copy in ["r1", "r2"] {
            let target = p(&format!("{run}_{copy}"));
            cli(&["replay", &manifest, "--out", &target])?;
            for file in csv_files(&p(run))? {
                let a = fs::read(format!("{}/{file}", p(run))).map_err(|e| e.to_string())?;
                let b = fs::read(format!("{target}/{file}")).map_err(|e| e.to_string())?;
                compared += 1;
                if a != b {
                    mismatched.push(format!("{run}/{file}"));
                }
            }
        }
    }
    Ok((
        compared > 0 && mismatched.is_empty(),
        format!("{compared} CSV comparisons, {} mismatched {mismatched:?}", mismatched.len()),
    ))
}

/// Relative paths of every CSV under `root`.
fn csv_files(root: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut stack = vec![String::new()];
    while let Some(rel) = stack.pop() {
        let entries = fs::read_dir(format!("{root}/{rel}")).map_err(|e| e.to_string())?;
        for e in entries {
            let e = e.map_err(|e| e.to_string())?;
            let name = format!("{rel}{}", e.file_name().to_string_lossy());
            if e.path().is_dir() {
                stack.push(format!("{name}/"));
            } else if name.ends_with(".csv") {
                out.push(name);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Directional finite differences of the assembled residual agree with the
/// Jacobian to relative 1e-5 on 20 random states per bundled problem.
fn jacobian_consistency() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, _) in bundled::PROBLEMS {
        let (disc, config) = setup(bundled::load(name).map_err(|e| e.to_string())?)?;
        let eps = (!disc.constrained_dofs().is_empty()).then_some(1e-2);
        let mut local: f64 = 0.0;
        for _ in 0..20 {
            let mut u: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut u_old: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            disc.apply_dirichlet(&mut u, config.dt).map_err(|e| e.to_string())?;
            disc.apply_dirichlet(&mut u_old, 0.0).map_err(|e| e.to_string())?;
            let v: Vec<f64> = disc.free_dofs().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let step = StepData {
                u_old: &u_old,
                t: config.dt,
                dt: config.dt,
                eps,
            };
            local = local.max(jacobian_mismatch(&disc, &u, &step, &v).map_err(|e| e.to_string())?);
        }
        parts.push(format!("{name} {local:.1e}"));
        worst = worst.max(local);
    }
    Ok((worst <= 1e-5, format!("worst {worst:.1e} (limit 1e-5): {}", parts.join(", "))))
}
