//! Implicit-Euler time stepping of the penalized problem, the ε-continuation
//! sweep and the randomized uniqueness probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use nalgebra_sparse::CsrMatrix;
use thiserror::Error;

use crate::diagnostics::{self, DiagnosticsReport};
use crate::expr::Bindings;
use crate::fem::{l2_qt_distance, Discretization, FemError, StateField, StepData};
use crate::newton::{self, NewtonError, NewtonSettings, NonlinearSystem};
use crate::quadrature::GaussLegendre;
use crate::spec::ProblemSpec;
use crate::validate::legendre_psi_with;

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial data: {0}")]
    Initial(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("step to t = {t} (dt = {dt}) failed after retry: {source}")]
    Step {
        t: f64,
        dt: f64,
        #[source]
        source: NewtonError,
        /// Levels accepted before the failure.
        partial: Box<Trajectory>,
    },
}

/// Decreasing penalty parameters for the continuation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySchedule {
    pub eps: Vec<f64>,
    /// Start each stage's Newton iterations from the previous stage's states.
    pub warm_start: bool,
}

impl PenaltySchedule {
    /// `ε_k = ε₀·10^{-k}`, `k = 0..stages`.
    pub fn geometric(eps0: f64, stages: usize) -> Result<PenaltySchedule, SolveError> {
        PenaltySchedule::new((0..stages).map(|k| eps0 / 10f64.powi(k as i32)).collect(), true)
    }

    pub fn new(eps: Vec<f64>, warm_start: bool) -> Result<PenaltySchedule, SolveError> {
        if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(SolveError::Config(format!(
                "penalty schedule must be positive and strictly decreasing: {eps:?}"
            )));
        }
        Ok(PenaltySchedule { eps, warm_start })
    }

    pub fn from_spec(spec: &ProblemSpec) -> Result<PenaltySchedule, SolveError> {
        PenaltySchedule::geometric(spec.solver.eps0, spec.solver.eps_stages)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub newton: NewtonSettings,
    /// Retry a failed step once as two half steps.
    pub retry: bool,
}

impl SolverConfig {
    pub fn from_spec(spec: &ProblemSpec) -> SolverConfig {
        let s = &spec.solver;
        SolverConfig {
            dt: s.dt,
            t_end: s.t_end,
            newton: NewtonSettings {
                rtol: s.newton_rtol,
                atol: s.newton_atol,
                max_iter: s.max_newton,
                ..NewtonSettings::default()
            },
            retry: true,
        }
    }

    pub fn check(&self) -> Result<(), SolveError> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || !self.dt.is_finite() || !self.t_end.is_finite() {
            return Err(SolveError::Config(format!(
                "dt = {} and t_end = {} must be positive",
                self.dt, self.t_end
            )));
        }
        Ok(())
    }

    /// Time levels `0, dt, 2dt, ...`, the last one clipped to `t_end`.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (0..=n).map(|k| (k as f64 * self.dt).min(self.t_end)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub residual_norm: f64,
    /// 1 normally, 2 after a half-step retry.
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `None` for solves without penalty.
    pub eps: Option<f64>,
    pub states: Vec<StateField>,
    /// One entry per accepted step (`states.len() - 1`).
    pub stats: Vec<StepStats>,
    /// `⟨β(uⁿ), uⁿ⟩` at every level.
    pub pairing: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &StateField {
        self.states.last().expect("trajectory holds the initial state")
    }

    fn push(&mut self, disc: &Discretization, state: StateField, stats: StepStats) {
        self.pairing.push(disc.penalty_form(&state.values).1);
        self.states.push(state);
        self.stats.push(stats);
    }
}

/// `∫_Ω Ψ(u₀)` and `∫_Ω u₀·B(u₀)` by lumped quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialReport {
    pub psi_integral: f64,
    pub ub_integral: f64,
}

/// Nodal interpolation of `u₀` with Dirichlet nodes overwritten.
pub fn project_initial(disc: &Discretization) -> Result<(StateField, InitialReport), SolveError> {
    let spec = &disc.spec;
    let m = disc.m();
    let mut u = StateField::zeros(disc.mesh.num_nodes(), m, 0.0);
    for (n, p) in disc.mesh.nodes().iter().enumerate() {
        for j in 0..m {
            u.values[n * m + j] = spec.initial[j]
                .eval(&Bindings::at(&[], *p, 0.0))
                .map_err(|e| SolveError::Initial(format!("u0{} at node {n} (x = {:?}): {e}", j + 1, &p[..spec.dim])))?;
        }
    }
    disc.apply_dirichlet(&mut u.values, 0.0)?;
    let rule = GaussLegendre::new(spec.solver.quad_n);
    let mut report = InitialReport {
        psi_integral: 0.0,
        ub_integral: 0.0,
    };
    let mut b = vec![0.0; m];
    for (n, w) in disc.lumped_weights().iter().enumerate() {
        let z = u.at(n);
        let psi = legendre_psi_with(spec, z, &rule).map_err(|e| SolveError::Initial(format!("Psi(u0) at node {n}: {e}")))?;
        spec.eval_storage(z, &mut b)
            .map_err(|e| SolveError::Initial(format!("B(u0) at node {n}: {e}")))?;
        report.psi_integral += w * psi;
        report.ub_integral += w * z.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>();
    }
    if !report.psi_integral.is_finite() || !report.ub_integral.is_finite() {
        return Err(SolveError::Initial("Psi(u0) is not integrable".into()));
    }
    Ok((u, report))
}

/// The implicit-Euler equations of one step over a subset of the dofs;
/// all other dofs keep the values in `base`.
pub struct StepSystem<'a> {
    disc: &'a Discretization,
    data: StepData<'a>,
    base: Vec<f64>,
    unknowns: Vec<usize>,
}

impl<'a> StepSystem<'a> {
    /// `base` must already carry the Dirichlet data and pinned values.
    pub fn new(disc: &'a Discretization, data: StepData<'a>, base: Vec<f64>, pinned: &[usize]) -> StepSystem<'a> {
        let unknowns = disc.free_dofs().iter().copied().filter(|d| !pinned.contains(d)).collect();
        StepSystem {
            disc,
            data,
            base,
            unknowns,
        }
    }

    pub fn initial_guess(&self) -> Vec<f64> {
        self.unknowns.iter().map(|&d| self.base[d]).collect()
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (&d, &v) in self.unknowns.iter().zip(x) {
            full[d] = v;
        }
        full
    }

    fn pick(&self, terms: &crate::fem::WeakFormTerms) -> Vec<f64> {
        self.unknowns
            .iter()
            .map(|&d| {
                terms.parabolic[d]
                    + terms.stiffness[d]
                    + terms.convection[d]
                    + terms.load[d]
                    + terms.boundary[d]
                    + terms.penalty[d]
            })
            .collect()
    }
}

impl NonlinearSystem for StepSystem<'_> {
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, FemError> {
        let terms = self.disc.assemble_residual(&self.expand(x), &self.data)?;
        Ok(self.pick(&terms))
    }

    fn residual_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, CsrMatrix<f64>), FemError> {
        let (terms, trip) = self.disc.assemble_with_jacobian(&self.expand(x), &self.data)?;
        Ok((self.pick(&terms), self.disc.restrict(&trip, &self.unknowns)))
    }
}

/// One implicit-Euler step from `u_old` to `t_new`. `guess` (full dofs)
/// replaces `u_old` as the Newton starting point.
pub fn step(
    disc: &Discretization,
    u_old: &StateField,
    t_new: f64,
    eps: Option<f64>,
    config: &SolverConfig,
    guess: Option<&[f64]>,
) -> Result<(StateField, StepStats), NewtonError> {
    let mut base = guess.unwrap_or(&u_old.values).to_vec();
    disc.apply_dirichlet(&mut base, t_new)?;
    let data = StepData {
        u_old: &u_old.values,
        t: t_new,
        dt: t_new - u_old.t,
        eps,
    };
    let system = StepSystem::new(disc, data, base, &[]);
    let (x, report) = newton::solve(&system, system.initial_guess(), &config.newton)?;
    let state = StateField {
        m: disc.m(),
        t: t_new,
        values: system.expand(&x),
    };
    Ok((
        state,
        StepStats {
            iterations: report.iterations,
            residual_norm: report.final_residual(),
            substeps: 1,
        },
    ))
}

fn step_with_retry(
    disc: &Discretization,
    u_old: &StateField,
    t_new: f64,
    eps: Option<f64>,
    config: &SolverConfig,
    guess: Option<&[f64]>,
) -> Result<(StateField, StepStats), NewtonError> {
    match step(disc, u_old, t_new, eps, config, guess) {
        Ok(out) => Ok(out),
        Err(first) if config.retry => {
            let t_mid = 0.5 * (u_old.t + t_new);
            let retry = step(disc, u_old, t_mid, eps, config, None)
                .and_then(|(mid, a)| step(disc, &mid, t_new, eps, config, None).map(|(end, b)| (end, a, b)));
            match retry {
                Ok((end, a, b)) => Ok((
                    end,
                    StepStats {
                        iterations: a.iterations + b.iterations,
                        residual_norm: b.residual_norm,
                        substeps: 2,
                    },
                )),
                Err(_) => Err(first),
            }
        }
        Err(e) => Err(e),
    }
}

/// Solves from `u₀` to `t_end`; `guess(k, u_old)` may supply the Newton start
/// for the step ending at level `k`.
pub fn solve_transient_with(
    disc: &Discretization,
    eps: Option<f64>,
    config: &SolverConfig,
    guess: &mut dyn FnMut(usize, &StateField) -> Option<Vec<f64>>,
) -> Result<Trajectory, SolveError> {
    config.check()?;
    let (u0, _) = project_initial(disc)?;
    let grid = config.time_grid();
    let mut traj = Trajectory {
        eps,
        pairing: vec![disc.penalty_form(&u0.values).1],
        states: vec![u0],
        stats: Vec::new(),
    };
    for (k, &t) in grid.iter().enumerate().skip(1) {
        let u_old = traj.last().clone();
        let g = guess(k, &u_old);
        match step_with_retry(disc, &u_old, t, eps, config, g.as_deref()) {
            Ok((state, stats)) => traj.push(disc, state, stats),
            Err(source) => {
                return Err(SolveError::Step {
                    t,
                    dt: t - u_old.t,
                    source,
                    partial: Box::new(traj),
                })
            }
        }
    }
    Ok(traj)
}

pub fn solve_transient(disc: &Discretization, eps: Option<f64>, config: &SolverConfig) -> Result<Trajectory, SolveError> {
    solve_transient_with(disc, eps, config, &mut |_, _| None)
}

#[derive(Clone, Debug)]
pub struct SweepStage {
    pub eps: f64,
    pub trajectory: Option<Trajectory>,
    pub report: Option<DiagnosticsReport>,
    /// Failure message of a stage that could not be solved at all.
    pub failure: Option<String>,
    pub warm_started: bool,
    /// `‖u_ε − u_{ε_prev}‖_{L²(Q_T)}` against the previous solved stage.
    pub distance_to_previous: Option<f64>,
}

impl SweepStage {
    pub fn penalty_residual(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.penalty_residual)
    }
}

/// Runs every stage of `schedule`, warm-starting from the previous stage
/// when asked; a failed stage is retried cold and the sweep continues.
pub fn sweep_eps(disc: &Discretization, schedule: &PenaltySchedule, config: &SolverConfig) -> Vec<SweepStage> {
    let mut stages: Vec<SweepStage> = Vec::new();
    let mut previous: Option<Trajectory> = None;
    for &eps in &schedule.eps {
        let mut warm = false;
        let mut result = Err(SolveError::Config("not run".into()));
        if let (true, Some(prev)) = (schedule.warm_start, previous.as_ref()) {
            warm = true;
            result = solve_transient_with(disc, Some(eps), config, &mut |k, _| prev.states.get(k).map(|s| s.values.clone()));
        }
        if result.is_err() {
            warm = false;
            result = solve_transient(disc, Some(eps), config);
        }
        let stage = match result {
            Ok(traj) => {
                let report = diagnostics::report(disc, &traj).ok();
                let distance = previous
                    .as_ref()
                    .and_then(|p| l2_qt_distance(disc, &p.states, &traj.states).ok());
                previous = Some(traj.clone());
                SweepStage {
                    eps,
                    trajectory: Some(traj),
                    report,
                    failure: None,
                    warm_started: warm,
                    distance_to_previous: distance,
                }
            }
            Err(e) => SweepStage {
                eps,
                trajectory: None,
                report: None,
                failure: Some(e.to_string()),
                warm_started: false,
                distance_to_previous: None,
            },
        };
        stages.push(stage);
    }
    stages
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    pub replicas: usize,
    pub max_distance: f64,
}

/// Perturbation amplitude of the randomized Newton start.
pub fn probe_amplitude(u_old: &StateField) -> f64 {
    0.1 * u_old.max_abs() + 0.01
}

/// Solves `n_guesses` times, each step starting Newton from a random
/// perturbation of the previous state, and reports the largest pairwise
/// `L²(Q_T)` distance.
pub fn uniqueness_probe(
    disc: &Discretization,
    eps: Option<f64>,
    config: &SolverConfig,
    n_guesses: usize,
    seed: u64,
) -> Result<UniquenessReport, SolveError> {
    let runs: Vec<Trajectory> = (0..n_guesses)
        .into_par_iter()
        .map(|replica| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replica as u64);
            solve_transient_with(disc, eps, config, &mut |_, u_old| {
                let a = probe_amplitude(u_old);
                let mut g = u_old.values.clone();
                for &d in disc.free_dofs() {
                    g[d] += a * rng.random_range(-1.0..=1.0);
                }
                Some(g)
            })
        })
        .collect::<Result<_, _>>()?;
    let mut max_distance: f64 = 0.0;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            max_distance = max_distance.max(l2_qt_distance(disc, &runs[i].states, &runs[j].states)?);
        }
    }
    Ok(UniquenessReport {
        replicas: n_guesses,
        max_distance,
    })
}
