//! The active-set reference and its comparison with the penalty sweep.

mod common;

use dnpsolve::fem::{l2_qt_distance, StateField};
use dnpsolve::oracle::{active_set_step, active_set_transient, oracle_compare, OracleError, MAX_DOFS};
use dnpsolve::solver::{solve_transient, PenaltySchedule};

use common::{scalar_1d, setup};

/// `(h/dt) u_i + (2u_i − u_{i−1} − u_{i+1})/h = F h` with `u_0 = u_n = 0`.
fn pinned_heat_step(n: usize, dt: f64, f: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let (a, b) = (h / dt + 2.0 / h, -1.0 / h);
    let k = n - 1;
    let mut c = vec![0.0; k];
    let mut d = vec![f * h; k];
    c[0] = b / a;
    d[0] /= a;
    for i in 1..k {
        let den = a - b * c[i - 1];
        c[i] = b / den;
        d[i] = (d[i] - b * d[i - 1]) / den;
    }
    for i in (0..k - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    let mut out = vec![0.0; n + 1];
    out[1..n].copy_from_slice(&d);
    out
}

#[test]
fn active_contact_reduces_to_a_pinned_dirichlet_step() {
    let (n, dt, f) = (16, 0.05, 2.0);
    let (disc, config) = scalar_1d(n, &format!("B1 = u1\nK11 = 1\nF1 = {f}"), "gamma1 = left\ngamma3 = right");
    let out = active_set_step(&disc, &StateField::zeros(n + 1, 1, 0.0), dt, &config, None).unwrap();
    let want = pinned_heat_step(n, dt, f);
    for (got, w) in out.state.values.iter().zip(&want) {
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
    }
    let h = 1.0 / n as f64;
    let lambda = want[n - 1] / h + f * h / 2.0;
    assert!((out.multiplier[n] - lambda).abs() < 1e-10, "{} vs {lambda}", out.multiplier[n]);
    assert_eq!(out.active.count(), 1);
}

#[test]
fn obstacle_reference_is_complementary() {
    let (disc, config) = setup("obstacle1d");
    let oracle = active_set_transient(&disc, &config).unwrap();
    let c = oracle.complementarity(&disc);
    assert!(c.max_u <= 1e-12 && c.max_positive_flux <= 1e-12 && c.max_product <= 1e-12, "{c:?}");
    assert!(oracle.min_multiplier(&disc) > 0.0);
    for s in &oracle.steps {
        for (k, &d) in disc.constrained_dofs().iter().enumerate() {
            if !s.active.active[k] {
                assert_eq!(s.multiplier[d], 0.0);
            } else {
                assert_eq!(s.state.values[d], 0.0);
            }
        }
    }
}

#[test]
fn penalty_sweep_approaches_the_reference() {
    let (disc, config) = setup("obstacle1d");
    let schedule = PenaltySchedule::geometric(1e-2, 5).unwrap();
    let (rows, _) = oracle_compare(&disc, &schedule, &config).unwrap();
    let d: Vec<f64> = rows.iter().map(|r| r.distance.unwrap()).collect();
    for w in d.windows(2) {
        assert!(w[1] < w[0], "{d:?}");
    }
    assert!(rows.last().unwrap().eps <= 1e-6 * (1.0 + 1e-12));
    assert!(*d.last().unwrap() <= 1e-3, "{d:?}");
}

#[test]
fn inactive_reference_matches_unconstrained_solve() {
    let (disc, config) = scalar_1d(16, "B1 = u1 + u1^3\nK11 = 1\nF1 = -2", "gamma1 = left\ngamma3 = right");
    let oracle = active_set_transient(&disc, &config).unwrap();
    assert!(oracle.steps.iter().all(|s| s.active.count() == 0));
    let plain = solve_transient(&disc, None, &config).unwrap();
    let dist = l2_qt_distance(&disc, &oracle.states, &plain.states).unwrap();
    assert!(dist <= 1e-9, "{dist}");
}

#[test]
fn oversized_problems_are_refused() {
    let n = MAX_DOFS + 10;
    let (disc, config) = scalar_1d(n, "B1 = u1\nK11 = 1", "gamma1 = left\ngamma3 = right");
    match active_set_transient(&disc, &config) {
        Err(OracleError::TooLarge { dofs }) => assert!(dofs > MAX_DOFS),
        other => panic!("expected a size error, got {:?}", other.map(|o| o.states.len())),
    }
}
