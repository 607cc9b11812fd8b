//! Damped Newton iteration with Armijo backtracking on the residual 2-norm.
//!
//! Jacobians arrive in CSR form and are factored densely (LU with partial
//! pivoting); the systems here have at most a few thousand unknowns.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use thiserror::Error;

use crate::fem::FemError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    /// Converged when `‖R‖∞ <= max(rtol·‖R₀‖∞, atol)`.
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            rtol: 1e-10,
            atol: 1e-12,
            max_iter: 25,
            max_halvings: 8,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    /// `‖R‖∞` before each iteration and after the last.
    pub residual_history: Vec<f64>,
    /// Stopped because the update fell below machine resolution.
    pub stagnated: bool,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Error)]
pub enum NewtonError {
    #[error(transparent)]
    Assembly(#[from] FemError),
    #[error("singular Jacobian at iteration {iteration}")]
    Singular { iteration: usize, last: Vec<f64> },
    #[error("no convergence in {} iterations (residual {:e})", .report.iterations, .report.final_residual())]
    Diverged { report: NewtonReport, last: Vec<f64> },
}

impl NewtonError {
    /// The iterate at which the solve stopped, if one exists.
    pub fn last_iterate(&self) -> Option<&[f64]> {
        match self {
            NewtonError::Assembly(_) => None,
            NewtonError::Singular { last, .. } | NewtonError::Diverged { last, .. } => Some(last),
        }
    }
}

/// A square nonlinear system `R(x) = 0`.
pub trait NonlinearSystem {
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, FemError>;
    fn residual_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, CsrMatrix<f64>), FemError>;
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `J d = -r` by dense LU.
pub fn solve_linear(jac: &CsrMatrix<f64>, r: &[f64]) -> Option<Vec<f64>> {
    if r.is_empty() {
        return Some(Vec::new());
    }
    let lu = DMatrix::from(jac).lu();
    let rhs = -DVector::from_column_slice(r);
    let d = lu.solve(&rhs)?;
    d.iter().all(|v| v.is_finite()).then(|| d.as_slice().to_vec())
}

pub fn solve<S: NonlinearSystem + ?Sized>(
    system: &S,
    x0: Vec<f64>,
    settings: &NewtonSettings,
) -> Result<(Vec<f64>, NewtonReport), NewtonError> {
    let mut x = x0;
    let mut report = NewtonReport::default();
    let (mut r, mut jac) = system.residual_and_jacobian(&x)?;
    let r0 = inf_norm(&r);
    let tol = (settings.rtol * r0).max(settings.atol);
    report.residual_history.push(r0);
    if r.is_empty() || r0 <= tol {
        return Ok((x, report));
    }
    for it in 0..settings.max_iter {
        let d = match solve_linear(&jac, &r) {
            Some(d) => d,
            None => return Err(NewtonError::Singular { iteration: it, last: x }),
        };
        let norm0 = two_norm(&r);
        let mut lambda = 1.0;
        let mut trial = x.clone();
        let mut r_trial;
        let mut halvings = 0;
        loop {
            for ((t, xi), di) in trial.iter_mut().zip(&x).zip(&d) {
                *t = xi + lambda * di;
            }
            r_trial = system.residual(&trial)?;
            let n = two_norm(&r_trial);
            if n.is_finite() && n <= (1.0 - settings.armijo * lambda) * norm0 {
                break;
            }
            if halvings == settings.max_halvings {
                // accept the smallest step; the next Jacobian may do better
                break;
            }
            halvings += 1;
            lambda *= 0.5;
        }
        let step = lambda * inf_norm(&d);
        x = trial;
        report.iterations = it + 1;
        let rn = inf_norm(&r_trial);
        report.residual_history.push(rn);
        if rn <= tol {
            return Ok((x, report));
        }
        if step <= 4.0 * f64::EPSILON * inf_norm(&x).max(1.0) {
            report.stagnated = true;
            return Ok((x, report));
        }
        let next = system.residual_and_jacobian(&x)?;
        r = next.0;
        jac = next.1;
    }
    Err(NewtonError::Diverged { report, last: x })
}
