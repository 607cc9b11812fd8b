#![allow(dead_code)]

use dnpsolve::solver::SolverConfig;
use dnpsolve::{bundled, Discretization, ProblemSpec};

pub fn setup(name: &str) -> (Discretization, SolverConfig) {
    from_spec(bundled::load(name).unwrap())
}

pub fn from_text(text: &str) -> (Discretization, SolverConfig) {
    from_spec(ProblemSpec::parse(text).unwrap())
}

pub fn from_spec(spec: ProblemSpec) -> (Discretization, SolverConfig) {
    let mesh = spec.build_mesh().unwrap();
    let config = SolverConfig::from_spec(&spec);
    (Discretization::new(&spec, &mesh), config)
}

/// Scalar 1D problem on `n` elements with the given coefficient and boundary lines.
pub fn scalar_1d(n: usize, coefficients: &str, boundary: &str) -> (Discretization, SolverConfig) {
    from_text(&format!(
        "[problem]\nm = 1\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\n{coefficients}\n[boundary]\n{boundary}\n[domain]\nmesh = interval\nn = {n}\n"
    ))
}
