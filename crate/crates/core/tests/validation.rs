//! Structural checks on problem files.

use dnpsolve::bundled;
use dnpsolve::validate::{check_a4, legendre_psi, validate, Verdict};
use dnpsolve::ProblemSpec;
use proptest::prelude::*;

fn scalar(coefficients: &str) -> ProblemSpec {
    ProblemSpec::parse(&format!(
        "[problem]\nm = 1\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\n{coefficients}\n[boundary]\ngamma1 = left, right\n[domain]\nmesh = interval\nn = 4\n"
    ))
    .unwrap()
}

#[test]
fn bundled_admissible_problems_pass() {
    for name in bundled::ADMISSIBLE {
        let report = validate(&bundled::load(name).unwrap()).unwrap();
        assert!(report.passed(), "{name}:\n{report}");
        assert!(report.entries.iter().all(|e| e.verdict != Verdict::Fail));
    }
}

#[test]
fn decreasing_storage_is_rejected_with_a_witness() {
    let report = validate(&bundled::load("bad_nonmonotone").unwrap()).unwrap();
    assert!(!report.passed());
    let e = report.entry("A1-monotone-gradient").unwrap();
    assert_eq!(e.verdict, Verdict::Fail);
    let w = e.witness.as_ref().unwrap();
    assert_eq!(w.points, vec![vec![1.0], vec![0.0]]);
}

#[test]
fn non_symmetric_diffusion_is_not_elliptic() {
    let spec = ProblemSpec::parse(
        "[problem]\nm = 2\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\nB1 = u1\nB2 = u2\nK11 = 1\nK12 = 3\nK22 = 1\n[boundary]\ngamma1 = left, right\n[domain]\nmesh = interval\nn = 4\n",
    )
    .unwrap();
    let report = validate(&spec).unwrap();
    let e = report.entry("A2-elliptic-bounded").unwrap();
    assert_eq!(e.verdict, Verdict::Fail, "{report}");
    assert_eq!(e.witness.as_ref().unwrap().points.len(), 2);
}

#[test]
fn source_growth_beyond_p_is_rejected() {
    let spec = ProblemSpec::parse(
        "[problem]\nm = 1\ndim = 1\nnu = 1\np = 2\nalpha = 1\n[coefficients]\nB1 = u1\nK11 = 1\n[boundary]\ngamma1 = left, right\n[domain]\nmesh = interval\nn = 4\n",
    )
    .unwrap();
    let report = validate(&spec).unwrap();
    let e = report.entry("A4-exponents").unwrap();
    assert_eq!(e.verdict, Verdict::Fail);
    assert!(e.witness.as_ref().unwrap().detail.contains("exceeds"), "{report}");
    assert!(!check_a4(1.0, 2.0, 1.0, 1).holds);
}

#[test]
fn report_lists_every_condition_once() {
    let report = validate(&bundled::load("obstacle1d").unwrap()).unwrap();
    let mut names: Vec<&str> = report.entries.iter().map(|e| e.condition.as_str()).collect();
    let total = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), total);
    for c in ["A1-monotone-gradient", "A1-psi-growth", "A2-elliptic-bounded", "A4-exponents", "A5-initial-data"] {
        assert!(report.entry(c).is_some(), "missing {c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_storage_sign_decides_monotonicity(a in 0.1f64..5.0, neg in any::<bool>()) {
        let coef = if neg { -a } else { a };
        let report = validate(&scalar(&format!("B1 = {coef}*u1\nK11 = 1"))).unwrap();
        let e = report.entry("A1-monotone-gradient").unwrap();
        prop_assert_eq!(e.passed(), !neg);
    }

    #[test]
    fn psi_of_linear_storage_is_quadratic(a in 0.1f64..5.0, z in -10.0f64..10.0) {
        let spec = scalar(&format!("B1 = {a}*u1\nK11 = 1"));
        let psi = legendre_psi(&spec, &[z], 16).unwrap();
        prop_assert!((psi - 0.5 * a * z * z).abs() <= 1e-12 * (1.0 + psi.abs()));
    }
}
