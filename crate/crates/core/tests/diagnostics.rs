//! Energy, penalty residual, complementarity, convergence orders and the
//! variational-inequality residual.

mod common;

use dnpsolve::diagnostics::{energy_trajectory, penalty_complementarity, penalty_residual, report};
use dnpsolve::fem::{feasible_bank, vi_residual, StateField, StepData};
use dnpsolve::mms::{self, Family, Study};
use dnpsolve::solver::{project_initial, solve_transient, sweep_eps, PenaltySchedule, SweepStage};
use dnpsolve::spec::DomainSpec;

use common::{from_spec, scalar_1d, setup};

fn obstacle_sweep() -> (dnpsolve::Discretization, Vec<SweepStage>) {
    let (disc, config) = setup("obstacle1d");
    let stages = sweep_eps(&disc, &PenaltySchedule::from_spec(&disc.spec).unwrap(), &config);
    assert!(stages.iter().all(|s| s.failure.is_none()));
    (disc, stages)
}

#[test]
fn energy_of_constant_fields() {
    let (disc, _) = setup("heat");
    let n = disc.mesh.num_nodes();
    let zero = StateField::zeros(n, 1, 0.0);
    let mut c = StateField::zeros(n, 1, 0.1);
    c.values.iter_mut().for_each(|v| *v = 0.7);
    let rows = energy_trajectory(&disc, &[zero, c]).unwrap();
    assert_eq!(rows[0].psi_energy, 0.0);
    assert!((rows[1].psi_energy - 0.49 / 2.0).abs() < 1e-12);
    // constants carry no gradient, only the L² part of the H¹ norm
    assert!((rows[1].h1_accum - 0.5 * 0.1 * 0.49).abs() < 1e-12);
}

#[test]
fn heat_energy_follows_the_exact_decay() {
    let mut spec = dnpsolve::bundled::load("heat").unwrap();
    spec.domain = DomainSpec::Interval { n: 64 };
    let (disc, config) = from_spec(spec);
    let traj = solve_transient(&disc, None, &config).unwrap();
    let rows = energy_trajectory(&disc, &traj.states).unwrap();
    let two_pi_sq = 2.0 * std::f64::consts::PI.powi(2);
    for r in &rows {
        let exact = 0.25 * (-two_pi_sq * r.t).exp();
        assert!((r.psi_energy - exact).abs() <= 0.05 * exact, "t = {}: {} vs {exact}", r.t, r.psi_energy);
    }
}

#[test]
fn feasible_trajectory_has_zero_penalty_residual() {
    let (disc, config) = scalar_1d(8, "B1 = u1\nK11 = 1\nF1 = -1", "gamma1 = left\ngamma3 = right");
    let traj = solve_transient(&disc, Some(1e-3), &config).unwrap();
    assert_eq!(penalty_residual(&traj), 0.0);
    let r = report(&disc, &traj).unwrap();
    assert_eq!(r.max_excursion, 0.0);
    assert!(r.complementarity.max_positive_flux <= 1e-10);
}

#[test]
fn sweep_residuals_and_excursions_shrink() {
    let (_, stages) = obstacle_sweep();
    let per_eps: Vec<f64> = stages.iter().map(|s| s.penalty_residual().unwrap() / s.eps).collect();
    let exc: Vec<f64> = stages.iter().map(|s| s.report.as_ref().unwrap().max_excursion).collect();
    for k in 1..stages.len() {
        assert!(per_eps[k] <= per_eps[k - 1] * (1.0 + 1e-9), "{per_eps:?}");
        assert!(exc[k] <= exc[k - 1], "{exc:?}");
    }
    assert!(per_eps[0] > 0.0);
}

/// At a penalty solution the recovered flux on a 1D Γ₃ node is `−u⁺/ε`.
#[test]
fn penalty_flux_identity() {
    let (disc, stages) = obstacle_sweep();
    let stage = &stages[1];
    let traj = stage.trajectory.as_ref().unwrap();
    let d = disc.constrained_dofs()[0];
    for k in 1..traj.states.len() {
        let (old, new) = (&traj.states[k - 1], &traj.states[k]);
        let step = StepData {
            u_old: &old.values,
            t: new.t,
            dt: new.t - old.t,
            eps: None,
        };
        let flux = disc.recover_flux(&new.values, &step).unwrap()[d];
        let expect = -new.values[d].max(0.0) / stage.eps;
        assert!((flux - expect).abs() <= 1e-8 * (1.0 + expect.abs()), "{flux} vs {expect}");
        let c = penalty_complementarity(&disc, traj, k).unwrap();
        assert!(c.max_product <= c.max_u.max(0.0) * flux.abs() * (1.0 + 1e-12) + 1e-300);
        assert_eq!(c.max_positive_flux, 0.0);
    }
}

#[test]
fn heat_convergence_orders() {
    let (_, space) = mms::study(Family::Heat, Study::Space, 4).unwrap();
    assert!(space.order.unwrap() >= 1.8, "{space:?}");
    let (_, time) = mms::study(Family::Heat, Study::Time, 3).unwrap();
    assert!(time.order.unwrap() >= 0.9, "{time:?}");
    let (_, affine) = mms::study(Family::Affine, Study::Space, 3).unwrap();
    assert!(affine.exact && affine.order.is_none());
}

#[test]
fn variational_inequality_residuals() {
    let (disc, stages) = obstacle_sweep();
    let traj = &stages.last().unwrap().trajectory.as_ref().unwrap().states;
    let bank = feasible_bank(&disc, traj, 50, 42);
    assert_eq!(bank.len(), 50);
    assert!(vi_residual(&disc, traj, &bank).unwrap() >= -1e-6);

    let mut bad = traj.clone();
    let d = *disc.constrained_dofs().last().unwrap();
    bad.iter_mut().skip(1).for_each(|s| s.values[d] += 1.0);
    assert!(vi_residual(&disc, &bad, &bank).unwrap() < 0.0);

    // an infeasible comparison field is rejected
    let mut wrong = bank[0].clone();
    wrong[1].values[d] = 1.0;
    assert!(vi_residual(&disc, traj, &[wrong]).is_err());
}

#[test]
fn solution_as_its_own_comparison_gives_zero() {
    let (disc, config) = setup("heat");
    let traj = solve_transient(&disc, None, &config).unwrap();
    assert_eq!(vi_residual(&disc, &traj.states, &[traj.states.clone()]).unwrap(), 0.0);
}

#[test]
fn jacobian_ignores_eps_when_contact_is_inactive() {
    let (disc, _) = setup("obstacle1d");
    let (u0, _) = project_initial(&disc).unwrap();
    let mut u = u0.values.clone();
    u.iter_mut().enumerate().for_each(|(i, v)| *v = -0.1 * i as f64);
    let at = |eps| {
        let step = StepData {
            u_old: &u0.values,
            t: 0.01,
            dt: 0.01,
            eps: Some(eps),
        };
        disc.assemble_jacobian(&u, &step).unwrap()
    };
    let (a, b) = (at(1e-2), at(1e-6));
    assert_eq!(a.values(), b.values());
    assert_eq!(a.col_indices(), b.col_indices());
}
