//! Convergence studies against problems with known exact solutions.
//!
//! `heat`: `u = e^{−π²t} sin(πx)` with homogeneous Dirichlet data.
//! `affine`: the steady state `u = x`, which P1 elements reproduce exactly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::diagnostics::{convergence_table, ConvergenceTable};
use crate::fem::Discretization;
use crate::solver::{solve_transient, SolveError, SolverConfig};
use crate::spec::{DomainSpec, ProblemSpec};

/// Coarsest spatial resolution of the studies.
pub const COARSE_N: usize = 8;
/// Final time of the spatial study (`dt = h²`).
pub const SPACE_T_END: f64 = 0.1;
/// Final time of the temporal study.
pub const TIME_T_END: f64 = 0.5;
/// Coarsest step of the temporal study.
pub const COARSE_DT: f64 = 0.1;
/// Fixed mesh of the temporal study.
pub const TIME_STUDY_N: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Heat,
    Affine,
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Family, String> {
        match s {
            "heat" => Ok(Family::Heat),
            "affine" => Ok(Family::Affine),
            other => Err(format!("unknown family `{other}` (expected heat or affine)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Heat => "heat",
            Family::Affine => "affine",
        })
    }
}

impl Family {
    pub fn problem(self) -> ProblemSpec {
        let text = match self {
            Family::Heat => crate::bundled::source("heat").expect("bundled heat problem"),
            Family::Affine => AFFINE,
        };
        ProblemSpec::parse(text).expect("family problem parses")
    }

    pub fn exact(self, x: [f64; 2], t: f64) -> f64 {
        match self {
            Family::Heat => (-PI * PI * t).exp() * (PI * x[0]).sin(),
            Family::Affine => x[0],
        }
    }
}

const AFFINE: &str = "[problem]\nname = affine\nm = 1\ndim = 1\nnu = 1\np = 1\nalpha = 1\n\
[coefficients]\nB1 = u1\nK11 = 1\n[initial]\nu01 = x\n[boundary]\ngamma1 = left, right\ndirichlet1 = x\n";

/// Which discretization parameter a study refines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Space,
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    /// `‖u_h(T) − u(T)‖_{L²(Ω)}`.
    pub l2_final: f64,
    /// `‖u_h − u‖_{L²(Q_T)}`, trapezoidal in time.
    pub l2_qt: f64,
}

/// Solves `family` on `n` elements with step `dt` up to `t_end`.
pub fn run(family: Family, n: usize, dt: f64, t_end: f64) -> Result<ErrorRow, SolveError> {
    let mut spec = family.problem();
    spec.domain = DomainSpec::Interval { n };
    spec.solver.dt = dt;
    spec.solver.t_end = t_end;
    let mesh = spec
        .build_mesh()
        .map_err(|e| SolveError::Config(e.to_string()))?;
    let disc = Discretization::new(&spec, &mesh);
    let traj = solve_transient(&disc, None, &SolverConfig::from_spec(&spec))?;
    let err_sq: Vec<f64> = traj
        .states
        .iter()
        .map(|s| disc.l2_error_sq(&s.values, &|_, x| family.exact(x, s.t)))
        .collect();
    let times = traj.times();
    let qt: f64 = (1..times.len())
        .map(|k| 0.5 * (times[k] - times[k - 1]) * (err_sq[k] + err_sq[k - 1]))
        .sum();
    Ok(ErrorRow {
        n,
        h: 1.0 / n as f64,
        dt,
        t_end,
        l2_final: err_sq.last().copied().unwrap_or(0.0).sqrt(),
        l2_qt: qt.sqrt(),
    })
}

/// Resolutions of a study with `levels` refinements.
pub fn resolutions(study: Study, levels: usize) -> Vec<(usize, f64, f64)> {
    (0..levels)
        .map(|k| match study {
            Study::Space => {
                let n = COARSE_N << k;
                let h = 1.0 / n as f64;
                (n, h * h, SPACE_T_END)
            }
            Study::Time => (TIME_STUDY_N, COARSE_DT / (1u64 << k) as f64, TIME_T_END),
        })
        .collect()
}

/// Runs a study and fits the observed order of the final-time error against
/// `h` (space) or `dt` (time).
pub fn study(family: Family, study: Study, levels: usize) -> Result<(Vec<ErrorRow>, ConvergenceTable), SolveError> {
    let rows = resolutions(study, levels)
        .into_iter()
        .map(|(n, dt, t_end)| run(family, n, dt, t_end))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let res = match study {
                Study::Space => r.h,
                Study::Time => r.dt,
            };
            (res, r.l2_final)
        })
        .collect();
    Ok((rows, convergence_table(&pairs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_parse() {
        assert_eq!("heat".parse::<Family>(), Ok(Family::Heat));
        assert!("wave".parse::<Family>().is_err());
        assert_eq!(Family::Affine.problem().m, 1);
    }

    #[test]
    fn affine_steady_state_is_exact() {
        let row = run(Family::Affine, 8, 0.1, 0.3).unwrap();
        assert!(row.l2_final < 1e-14 && row.l2_qt < 1e-14, "{row:?}");
    }

    #[test]
    fn spatial_resolutions_use_dt_h_squared() {
        let r = resolutions(Study::Space, 4);
        assert_eq!(r[3].0, 64);
        assert_eq!(r[3].1, 1.0 / 4096.0);
    }
}
