//! Primal–dual active-set reference solver for the constrained problem.
//!
//! Each step guesses which Γ₃ dofs bind, pins them to zero, solves the
//! remaining equations without penalty and reads the multiplier
//! `λ = −R_a` off the unpenalized residual at the pinned dofs. Dofs with
//! `u > 0` are activated, dofs with `λ < 0` released, until the set is stable.

use thiserror::Error;

use crate::diagnostics::{complementarity_report, Complementarity};
use crate::fem::{l2_qt_distance, Discretization, FemError, StateField, StepData};
use crate::newton::{self, NewtonError, NewtonSettings};
use crate::solver::{project_initial, sweep_eps, PenaltySchedule, SolveError, SolverConfig, StepSystem};

/// Largest problem the oracle accepts (free dofs).
pub const MAX_DOFS: usize = 500;
pub const MAX_SWEEPS: usize = 50;
/// Sign thresholds for activation and release.
pub const SIGN_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error("{dofs} free dofs exceed the oracle limit of {MAX_DOFS}")]
    TooLarge { dofs: usize },
    #[error("active set still changing after {MAX_SWEEPS} sweeps at t = {t}")]
    Cycling { t: f64 },
    #[error("inner solve at t = {t}: {source}")]
    Newton {
        t: f64,
        #[source]
        source: NewtonError,
    },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Active flags aligned with [`Discretization::constrained_dofs`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    pub active: Vec<bool>,
}

impl ActiveSet {
    pub fn empty(disc: &Discretization) -> ActiveSet {
        ActiveSet {
            active: vec![false; disc.constrained_dofs().len()],
        }
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

#[derive(Clone, Debug)]
pub struct OracleStep {
    pub state: StateField,
    pub active: ActiveSet,
    /// `λ` per dof: `−R_a` at active dofs, exactly zero elsewhere.
    pub multiplier: Vec<f64>,
    pub sweeps: usize,
    pub newton_iterations: usize,
}

impl OracleStep {
    /// Discrete flux `−λ`.
    pub fn flux(&self) -> Vec<f64> {
        self.multiplier.iter().map(|l| -l).collect()
    }

    pub fn complementarity(&self, disc: &Discretization) -> Complementarity {
        complementarity_report(disc, &self.state, &self.flux())
    }
}

/// Tighter than the penalty solves: the oracle is the reference.
pub fn oracle_newton(config: &SolverConfig) -> NewtonSettings {
    NewtonSettings {
        rtol: 1e-13,
        atol: 1e-14,
        max_iter: config.newton.max_iter.max(50),
        ..config.newton
    }
}

pub fn active_set_step(
    disc: &Discretization,
    u_old: &StateField,
    t_new: f64,
    config: &SolverConfig,
    start: Option<&ActiveSet>,
) -> Result<OracleStep, OracleError> {
    let dofs = disc.free_dofs().len();
    if dofs > MAX_DOFS {
        return Err(OracleError::TooLarge { dofs });
    }
    let cons = disc.constrained_dofs();
    let mut set = start.cloned().unwrap_or_else(|| ActiveSet::empty(disc));
    let settings = oracle_newton(config);
    let data = StepData {
        u_old: &u_old.values,
        t: t_new,
        dt: t_new - u_old.t,
        eps: None,
    };
    let mut guess = u_old.values.clone();
    let mut newton_iterations = 0;
    for sweep in 1..=MAX_SWEEPS {
        let pinned: Vec<usize> = cons.iter().zip(&set.active).filter(|(_, &a)| a).map(|(&d, _)| d).collect();
        let mut base = guess.clone();
        disc.apply_dirichlet(&mut base, t_new)?;
        for &d in &pinned {
            base[d] = 0.0;
        }
        let system = StepSystem::new(disc, data, base, &pinned);
        let (x, report) = newton::solve(&system, system.initial_guess(), &settings)
            .map_err(|source| OracleError::Newton { t: t_new, source })?;
        newton_iterations += report.iterations;
        let values = system.expand(&x);
        let residual = disc.recover_flux(&values, &data)?;
        let mut next = set.clone();
        for (k, &d) in cons.iter().enumerate() {
            if set.active[k] {
                if -residual[d] < -SIGN_TOL {
                    next.active[k] = false;
                }
            } else if values[d] > SIGN_TOL {
                next.active[k] = true;
            }
        }
        if next == set {
            let mut multiplier = vec![0.0; disc.num_dofs()];
            for (&d, _) in cons.iter().zip(&set.active).filter(|(_, &a)| a) {
                multiplier[d] = -residual[d];
            }
            return Ok(OracleStep {
                state: StateField {
                    m: disc.m(),
                    t: t_new,
                    values,
                },
                active: set,
                multiplier,
                sweeps: sweep,
                newton_iterations,
            });
        }
        set = next;
        guess = values;
    }
    Err(OracleError::Cycling { t: t_new })
}

#[derive(Clone, Debug)]
pub struct OracleTrajectory {
    pub states: Vec<StateField>,
    /// One entry per step.
    pub steps: Vec<OracleStep>,
}

impl OracleTrajectory {
    /// Worst complementarity over all steps.
    pub fn complementarity(&self, disc: &Discretization) -> Complementarity {
        self.steps.iter().map(|s| s.complementarity(disc)).fold(Complementarity::default(), |a, b| Complementarity {
            max_u: a.max_u.max(b.max_u),
            max_positive_flux: a.max_positive_flux.max(b.max_positive_flux),
            max_product: a.max_product.max(b.max_product),
        })
    }

    pub fn min_multiplier(&self, disc: &Discretization) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| disc.constrained_dofs().iter().map(move |&d| s.multiplier[d]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Active-set solve on the same time grid as the penalty solver.
pub fn active_set_transient(disc: &Discretization, config: &SolverConfig) -> Result<OracleTrajectory, OracleError> {
    config.check()?;
    let (u0, _) = project_initial(disc)?;
    let mut states = vec![u0];
    let mut steps: Vec<OracleStep> = Vec::new();
    for &t in config.time_grid().iter().skip(1) {
        let start = steps.last().map(|s| s.active.clone());
        let s = active_set_step(disc, states.last().unwrap(), t, config, start.as_ref())?;
        states.push(s.state.clone());
        steps.push(s);
    }
    Ok(OracleTrajectory { states, steps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub eps: f64,
    /// `‖u_ε − u_oracle‖_{L²(Q_T)}`; `None` for a failed stage.
    pub distance: Option<f64>,
}

/// Penalty sweep against the active-set reference.
pub fn oracle_compare(
    disc: &Discretization,
    schedule: &PenaltySchedule,
    config: &SolverConfig,
) -> Result<(Vec<CompareRow>, OracleTrajectory), OracleError> {
    let (oracle, stages) = rayon::join(|| active_set_transient(disc, config), || sweep_eps(disc, schedule, config));
    let oracle = oracle?;
    let mut rows = Vec::with_capacity(stages.len());
    for stage in &stages {
        let distance = match &stage.trajectory {
            Some(t) => Some(l2_qt_distance(disc, &t.states, &oracle.states)?),
            None => None,
        };
        rows.push(CompareRow { eps: stage.eps, distance });
    }
    Ok((rows, oracle))
}
