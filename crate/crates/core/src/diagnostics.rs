//! Post-processing of trajectories: Ψ-energy, accumulated H¹ norm, penalty
//! residual, complementarity, a Gronwall shape fit and observed orders.

use serde::Serialize;

use crate::fem::{Discretization, FemError, StateField, StepData};
use crate::quadrature::GaussLegendre;
use crate::solver::Trajectory;
use crate::validate::legendre_psi_with;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    /// `Σ_i w_i Ψ(u_i)` with lumped weights.
    pub psi_energy: f64,
    /// Trapezoidal `∫₀ᵗ ‖u‖²_{H¹}`.
    pub h1_accum: f64,
}

pub fn energy_trajectory(disc: &Discretization, states: &[StateField]) -> Result<Vec<EnergyRow>, FemError> {
    let rule = GaussLegendre::new(disc.spec.solver.quad_n);
    let mut rows: Vec<EnergyRow> = Vec::with_capacity(states.len());
    let mut prev_h1 = 0.0;
    for (k, s) in states.iter().enumerate() {
        let psi_energy = psi_energy(disc, s, &rule)?;
        let h1 = disc.h1_norm_sq(&s.values);
        let h1_accum = match k {
            0 => 0.0,
            _ => rows[k - 1].h1_accum + 0.5 * (s.t - states[k - 1].t) * (h1 + prev_h1),
        };
        prev_h1 = h1;
        rows.push(EnergyRow {
            t: s.t,
            psi_energy,
            h1_accum,
        });
    }
    Ok(rows)
}

fn psi_energy(disc: &Discretization, s: &StateField, rule: &GaussLegendre) -> Result<f64, FemError> {
    let mut acc = 0.0;
    for (n, w) in disc.lumped_weights().iter().enumerate() {
        let psi = legendre_psi_with(&disc.spec, s.at(n), rule).map_err(|source| FemError::Eval {
            what: "Psi".into(),
            location: format!("node {n}"),
            point: disc.mesh.nodes()[n],
            source,
        })?;
        acc += w * psi;
    }
    Ok(acc)
}

/// First level at which the Ψ-energy rises by more than
/// `slack·(1 + E₀)`, with the size of the rise.
pub fn energy_increase(rows: &[EnergyRow], slack: f64) -> Option<(usize, f64)> {
    let e0 = rows.first()?.psi_energy;
    rows.windows(2)
        .enumerate()
        .map(|(k, w)| (k + 1, w[1].psi_energy - w[0].psi_energy))
        .find(|&(_, rise)| rise > slack * (1.0 + e0))
}

/// Trapezoidal `∫₀ᵀ |⟨β(u), u⟩| dt` of the recorded pairings.
pub fn penalty_residual(traj: &Trajectory) -> f64 {
    let t = traj.times();
    (1..t.len())
        .map(|k| 0.5 * (t[k] - t[k - 1]) * (traj.pairing[k].abs() + traj.pairing[k - 1].abs()))
        .sum()
}

/// Nodal complementarity on Γ₃: `(max u, max flux⁺, max |u·flux|)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Complementarity {
    pub max_u: f64,
    pub max_positive_flux: f64,
    pub max_product: f64,
}

impl Complementarity {
    fn merge(self, o: Complementarity) -> Complementarity {
        Complementarity {
            max_u: self.max_u.max(o.max_u),
            max_positive_flux: self.max_positive_flux.max(o.max_positive_flux),
            max_product: self.max_product.max(o.max_product),
        }
    }
}

/// `flux` holds one value per dof (only the constrained dofs are read).
/// With no constrained dofs every entry is zero.
pub fn complementarity_report(disc: &Discretization, u: &StateField, flux: &[f64]) -> Complementarity {
    let mut out = Complementarity {
        max_u: if disc.constrained_dofs().is_empty() { 0.0 } else { f64::NEG_INFINITY },
        ..Complementarity::default()
    };
    for &d in disc.constrained_dofs() {
        let (v, f) = (u.values[d], flux[d]);
        out.max_u = out.max_u.max(v);
        out.max_positive_flux = out.max_positive_flux.max(f.max(0.0));
        out.max_product = out.max_product.max((v * f).abs());
    }
    out
}

/// Complementarity of a penalty solution at level `k >= 1`, with the flux
/// recovered from the unpenalized residual.
pub fn penalty_complementarity(disc: &Discretization, traj: &Trajectory, k: usize) -> Result<Complementarity, FemError> {
    let (old, new) = (&traj.states[k - 1], &traj.states[k]);
    let step = StepData {
        u_old: &old.values,
        t: new.t,
        dt: new.t - old.t,
        eps: None,
    };
    let flux = disc.recover_flux(&new.values, &step)?;
    Ok(complementarity_report(disc, new, &flux))
}

/// Smallest `C` with `A(1 + C t e^{Ct}) >= E(t)` at every level, `A = E(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GronwallFit {
    pub a: f64,
    pub c: f64,
    /// `min_t A(1 + C t e^{Ct}) − E(t)`; nonnegative when the fit holds.
    pub min_margin: f64,
}

pub fn gronwall_fit(rows: &[EnergyRow]) -> Option<GronwallFit> {
    let a = rows.first()?.psi_energy;
    let margin = |c: f64| {
        rows.iter()
            .map(|r| a * (1.0 + c * r.t * (c * r.t).exp()) - r.psi_energy)
            .fold(f64::INFINITY, f64::min)
    };
    let tol = 1e-12 * (1.0 + a.abs());
    if margin(0.0) >= -tol {
        return Some(GronwallFit {
            a,
            c: 0.0,
            min_margin: margin(0.0),
        });
    }
    if !(a > 0.0) {
        return None;
    }
    let mut hi = 1.0;
    while margin(hi) < -tol {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) >= -tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(GronwallFit {
        a,
        c: hi,
        min_margin: margin(hi),
    })
}

/// Everything the sweep and the CLI report about one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub energy: Vec<EnergyRow>,
    pub penalty_residual: f64,
    /// Largest positive value of a constrained component on Γ₃.
    pub max_excursion: f64,
    /// Worst complementarity over all steps.
    pub complementarity: Complementarity,
    pub gronwall: Option<GronwallFit>,
}

pub fn report(disc: &Discretization, traj: &Trajectory) -> Result<DiagnosticsReport, FemError> {
    let energy = energy_trajectory(disc, &traj.states)?;
    let max_excursion = traj
        .states
        .iter()
        .map(|s| disc.max_on_gamma3(&s.values).max(0.0))
        .fold(0.0, f64::max);
    let mut complementarity = Complementarity::default();
    for k in 1..traj.states.len() {
        complementarity = complementarity.merge(penalty_complementarity(disc, traj, k)?);
    }
    Ok(DiagnosticsReport {
        gronwall: gronwall_fit(&energy),
        energy,
        penalty_residual: penalty_residual(traj),
        max_excursion,
        complementarity,
    })
}

/// Errors below this count as exactly reproduced.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    /// `(resolution, error)` sorted by decreasing resolution parameter.
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope of `log error` against `log resolution`.
    pub order: Option<f64>,
    pub exact: bool,
}

pub fn convergence_table(rows: &[(f64, f64)]) -> ConvergenceTable {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let exact = !sorted.is_empty() && sorted.iter().all(|r| r.1.abs() <= EXACT_TOL);
    let usable = sorted.len() >= 3 && !exact && sorted.iter().all(|r| r.0 > 0.0 && r.1 > 0.0);
    let order = usable.then(|| {
        let pts: Vec<(f64, f64)> = sorted.iter().map(|r| (r.0.ln(), r.1.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    });
    ConvergenceTable {
        rows: sorted,
        order,
        exact,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_of_exact_power_law() {
        let rows: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&h| (h, 3.0 * h * h)).collect();
        let t = convergence_table(&rows);
        assert!((t.order.unwrap() - 2.0).abs() < 1e-12);
        assert!(!t.exact);
    }

    #[test]
    fn too_few_rows_give_no_order() {
        assert_eq!(convergence_table(&[(0.1, 1.0), (0.05, 0.25)]).order, None);
    }

    #[test]
    fn tiny_errors_are_flagged_exact() {
        let t = convergence_table(&[(0.1, 1e-16), (0.05, 0.0), (0.025, 3e-16)]);
        assert!(t.exact);
        assert_eq!(t.order, None);
    }

    #[test]
    fn gronwall_fit_is_tight() {
        let rows: Vec<EnergyRow> = (0..=10)
            .map(|k| {
                let t = k as f64 * 0.1;
                EnergyRow {
                    t,
                    psi_energy: 1.0 + t,
                    h1_accum: 0.0,
                }
            })
            .collect();
        let fit = gronwall_fit(&rows).unwrap();
        assert!(fit.min_margin >= -2e-12);
        assert!(fit.c > 0.0 && fit.c < 1.0);
        // decreasing energy needs no growth
        let flat: Vec<EnergyRow> = rows.iter().map(|r| EnergyRow { psi_energy: 1.0 - 0.5 * r.t, ..*r }).collect();
        assert_eq!(gronwall_fit(&flat).unwrap().c, 0.0);
    }

    #[test]
    fn energy_increase_respects_slack() {
        let mk = |e: f64| EnergyRow {
            t: 0.0,
            psi_energy: e,
            h1_accum: 0.0,
        };
        assert_eq!(energy_increase(&[mk(1.0), mk(1.0 + 1e-11), mk(0.5)], 1e-10), None);
        assert_eq!(energy_increase(&[mk(1.0), mk(0.9), mk(0.95)], 1e-10).map(|r| r.0), Some(2));
    }
}
