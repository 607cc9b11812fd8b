//! CSV tables and atomic file output.
//!
//! Every table has a header row, comma separators, `.` decimals and LF line
//! endings. Floats use the shortest representation that round-trips.

use std::fs;
use std::path::Path;

use dnpsolve::diagnostics::energy_trajectory;
use dnpsolve::fem::StateField;
use dnpsolve::solver::Trajectory;
use dnpsolve::Discretization;

use crate::CliError;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const CONTACT_FILE: &str = "oracle_contact.csv";
pub const ORACLE_TRAJECTORY_FILE: &str = "oracle_trajectory.csv";
pub const ORDERS_FILE: &str = "orders.csv";
pub const FIT_FILE: &str = "fit.csv";

pub const DIAGNOSTICS_HEADER: [&str; 7] = [
    "t",
    "psi_energy",
    "h1_accum",
    "beta_pairing",
    "newton_iters",
    "residual_norm",
    "max_u_gamma3",
];

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Empty cell for missing values.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn table<I>(header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// One row per time level and node: `t, node, x, y, u1, ..., um`.
pub fn trajectory_table(disc: &Discretization, states: &[StateField]) -> Result<Vec<u8>, CliError> {
    let m = disc.m();
    let mut header = vec!["t".to_string(), "node".into(), "x".into(), "y".into()];
    header.extend((1..=m).map(|j| format!("u{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let nodes = disc.mesh.nodes();
    let rows = states.iter().flat_map(|s| {
        nodes.iter().enumerate().map(move |(n, p)| {
            let mut row = vec![num(s.t), n.to_string(), num(p[0]), num(p[1])];
            row.extend(s.at(n).iter().map(|&v| num(v)));
            row
        })
    });
    table(&header, rows)
}

/// One row per time level with the energy, pairing and Newton statistics.
pub fn diagnostics_table(disc: &Discretization, traj: &Trajectory) -> Result<Vec<u8>, CliError> {
    let energy = energy_trajectory(disc, &traj.states).map_err(|e| CliError::Solver(e.to_string()))?;
    let rows = energy.iter().enumerate().map(|(k, e)| {
        let (iters, res) = match k {
            0 => (0, 0.0),
            _ => (traj.stats[k - 1].iterations, traj.stats[k - 1].residual_norm),
        };
        let g3 = disc.max_on_gamma3(&traj.states[k].values);
        vec![
            num(e.t),
            num(e.psi_energy),
            num(e.h1_accum),
            num(traj.pairing[k]),
            iters.to_string(),
            num(res),
            opt(g3.is_finite().then_some(g3)),
        ]
    });
    table(&DIAGNOSTICS_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_use_lf_and_round_trip_floats() {
        let bytes = table(&["a", "b"], vec![vec![num(0.1), opt(None)], vec![num(1e-300), num(-2.5)]]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text, "a,b\n0.1,\n1e-300,-2.5\n");
        assert_eq!("1e-300".parse::<f64>().unwrap(), 1e-300);
    }

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("x.csv");
        write_atomic(&path, b"a\n").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"a\n");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
