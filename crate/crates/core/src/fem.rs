//! P1 assembly of the implicit-Euler residual, its Jacobian and the
//! boundary penalty.
//!
//! Unknowns are stored node-major: dof `n*m + j` is component `j` at node
//! `n`. Nodes on Γ₁ carry Dirichlet data and are eliminated; everything else
//! is a free dof. The `B` term uses lumped mass, all other volume terms the
//! 3-point element rule, boundary terms 3-point Gauss per edge (a single
//! point of weight 1 in 1D).

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

use crate::expr::{Bindings, Expr, ExprError};
use crate::mesh::{BoundaryTag, Mesh};
use crate::quadrature::element_rule;
use crate::spec::ProblemSpec;

/// Relative step for coefficient derivatives, scaled by `max(1, |u|)`.
pub const COEFF_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum FemError {
    #[error("evaluating {what} at {location} (x = {point:?}): {source}")]
    Eval {
        what: String,
        location: String,
        point: [f64; 2],
        #[source]
        source: ExprError,
    },
    #[error("test field {index} violates the constraint: {reason}")]
    Infeasible { index: usize, reason: String },
    #[error("trajectories have mismatched time grids")]
    GridMismatch,
}

/// Nodal values of all components at time `t`, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub m: usize,
    pub t: f64,
    pub values: Vec<f64>,
}

impl StateField {
    pub fn zeros(num_nodes: usize, m: usize, t: f64) -> StateField {
        StateField {
            m,
            t,
            values: vec![0.0; num_nodes * m],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.m..(node + 1) * self.m]
    }

    pub fn get(&self, node: usize, j: usize) -> f64 {
        self.values[node * self.m + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Residual contributions, each over all dofs and carrying the sign with
/// which it enters the residual (`load` is `-∫F·φ`, `boundary` is `-∫g·φ`).
#[derive(Clone, Debug)]
pub struct WeakFormTerms {
    pub parabolic: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub convection: Vec<f64>,
    pub load: Vec<f64>,
    pub boundary: Vec<f64>,
    /// `(1/ε)∫_{Γ₃} u⁺·φ`; zero when no penalty is applied.
    pub penalty: Vec<f64>,
    /// Sum of all terms restricted to the free dofs.
    pub residual: Vec<f64>,
    /// `⟨β(u), u⟩` for the assembled state.
    pub pairing: f64,
}

impl WeakFormTerms {
    /// Full-dof residual without the penalty term.
    pub fn unpenalized(&self) -> Vec<f64> {
        (0..self.parabolic.len())
            .map(|i| self.parabolic[i] + self.stiffness[i] + self.convection[i] + self.load[i] + self.boundary[i])
            .collect()
    }
}

/// Inputs of one implicit-Euler residual evaluation.
#[derive(Clone, Copy, Debug)]
pub struct StepData<'a> {
    pub u_old: &'a [f64],
    /// Time at the new level; `F`, `g` and Dirichlet data are taken here.
    pub t: f64,
    pub dt: f64,
    /// `None` assembles without the penalty term.
    pub eps: Option<f64>,
}

/// Mesh, problem data and the derived dof bookkeeping.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub spec: ProblemSpec,
    pub mesh: Mesh,
    m: usize,
    free: Vec<usize>,
    is_free: Vec<bool>,
    dirichlet_nodes: Vec<usize>,
    /// Free dofs subject to `u ≤ 0`, ascending.
    constrained: Vec<usize>,
    lumped: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    neumann: Vec<usize>,
    unilateral: Vec<usize>,
}

impl Discretization {
    pub fn new(spec: &ProblemSpec, mesh: &Mesh) -> Discretization {
        let m = spec.m;
        let nn = mesh.num_nodes();
        let dirichlet_nodes = mesh.tagged_nodes(BoundaryTag::Dirichlet);
        let mut node_free = vec![true; nn];
        for &n in &dirichlet_nodes {
            node_free[n] = false;
        }
        let is_free: Vec<bool> = (0..nn * m).map(|d| node_free[d / m]).collect();
        let free: Vec<usize> = (0..nn * m).filter(|&d| is_free[d]).collect();
        let constrained = mesh
            .tagged_nodes(BoundaryTag::Unilateral)
            .into_iter()
            .filter(|&n| node_free[n])
            .flat_map(|n| (0..m).filter(|&j| spec.constraint_mask[j]).map(move |j| n * m + j))
            .collect();
        let dim = mesh.dim();
        let mut lumped = vec![0.0; nn];
        let mut grads = Vec::with_capacity(mesh.num_elements());
        for e in 0..mesh.num_elements() {
            let nodes = mesh.element(e);
            let vol = mesh.volume(e);
            for &n in nodes {
                lumped[n] += vol / (dim as f64 + 1.0);
            }
            grads.push(shape_gradients(mesh, e));
        }
        let by_tag = |tag| (0..mesh.facets().len()).filter(|&f| mesh.facets()[f].tag == tag).collect();
        Discretization {
            spec: spec.clone(),
            mesh: mesh.clone(),
            m,
            free,
            is_free,
            dirichlet_nodes,
            constrained,
            lumped,
            grads,
            neumann: by_tag(BoundaryTag::Neumann),
            unilateral: by_tag(BoundaryTag::Unilateral),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_nodes() * self.m
    }

    /// Full-dof indices of the unknowns.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn is_free(&self, dof: usize) -> bool {
        self.is_free[dof]
    }

    /// Free dofs on Γ₃ whose component is constrained.
    pub fn constrained_dofs(&self) -> &[usize] {
        &self.constrained
    }

    pub fn lumped_weights(&self) -> &[f64] {
        &self.lumped
    }

    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet_nodes
    }

    /// Overwrites Dirichlet dofs with the boundary data at time `t`.
    pub fn apply_dirichlet(&self, values: &mut [f64], t: f64) -> Result<(), FemError> {
        for &n in &self.dirichlet_nodes {
            let p = self.mesh.nodes()[n];
            for j in 0..self.m {
                values[n * self.m + j] = self.spec.dirichlet_value(j, p, t).map_err(|source| FemError::Eval {
                    what: format!("dirichlet{}", j + 1),
                    location: format!("node {n}"),
                    point: p,
                    source,
                })?;
            }
        }
        Ok(())
    }

    /// Facet quadrature: (nodes, barycentric weights per point, weight × measure).
    fn facet_points(&self, f: usize) -> Vec<([usize; 2], [f64; 2], f64)> {
        let nodes = self.mesh.facets()[f].nodes;
        if self.mesh.dim() == 1 {
            return vec![([nodes[0], nodes[0]], [1.0, 0.0], 1.0)];
        }
        let len = self.mesh.facet_measure(f);
        element_rule(1)
            .iter()
            .map(|(l, w)| (nodes, [l[0], l[1]], w * len))
            .collect()
    }

    fn point_of(&self, nodes: &[usize], l: &[f64]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (&n, &li) in nodes.iter().zip(l) {
            let x = self.mesh.nodes()[n];
            p[0] += li * x[0];
            p[1] += li * x[1];
        }
        p
    }

    fn interp(&self, values: &[f64], nodes: &[usize], l: &[f64], out: &mut [f64]) {
        let m = self.m;
        out.fill(0.0);
        for (&n, &li) in nodes.iter().zip(l) {
            for j in 0..m {
                out[j] += li * values[n * m + j];
            }
        }
    }

    /// `b_i = ∫_{Γ₃} u⁺·φ_i` over all dofs and the pairing `⟨β(u), u⟩`.
    pub fn penalty_form(&self, values: &[f64]) -> (Vec<f64>, f64) {
        let m = self.m;
        let mut b = vec![0.0; self.num_dofs()];
        let mut pairing = 0.0;
        let mut uq = vec![0.0; m];
        for &f in &self.unilateral {
            for (nodes, l, w) in self.facet_points(f) {
                self.interp(values, &nodes, &l, &mut uq);
                for j in (0..m).filter(|&j| self.spec.constraint_mask[j]) {
                    let pos = uq[j].max(0.0);
                    pairing += w * pos * uq[j];
                    for (&n, &li) in nodes.iter().zip(&l) {
                        b[n * m + j] += w * pos * li;
                    }
                }
            }
        }
        (b, pairing)
    }

    /// Residual terms for `u_new`.
    pub fn assemble_residual(&self, u_new: &[f64], step: &StepData<'_>) -> Result<WeakFormTerms, FemError> {
        Ok(self.assemble(u_new, step, false)?.0)
    }

    /// Jacobian of the free-dof residual with respect to the free dofs.
    pub fn assemble_jacobian(&self, u_new: &[f64], step: &StepData<'_>) -> Result<CsrMatrix<f64>, FemError> {
        let (_, trip) = self.assemble(u_new, step, true)?;
        Ok(self.restrict(&trip, &self.free))
    }

    /// Residual terms and the full-dof Jacobian triplets.
    pub fn assemble_with_jacobian(
        &self,
        u_new: &[f64],
        step: &StepData<'_>,
    ) -> Result<(WeakFormTerms, Vec<(usize, usize, f64)>), FemError> {
        self.assemble(u_new, step, true)
    }

    /// Restricts full-dof triplets to the rows and columns listed in `dofs`.
    pub fn restrict(&self, trip: &[(usize, usize, f64)], dofs: &[usize]) -> CsrMatrix<f64> {
        let mut index = vec![usize::MAX; self.num_dofs()];
        for (k, &d) in dofs.iter().enumerate() {
            index[d] = k;
        }
        let mut coo = CooMatrix::new(dofs.len(), dofs.len());
        for &(r, c, v) in trip {
            let (ri, ci) = (index[r], index[c]);
            if ri != usize::MAX && ci != usize::MAX {
                coo.push(ri, ci, v);
            }
        }
        CsrMatrix::from(&coo)
    }

    fn assemble(
        &self,
        u_new: &[f64],
        step: &StepData<'_>,
        want_jac: bool,
    ) -> Result<(WeakFormTerms, Vec<(usize, usize, f64)>), FemError> {
        let m = self.m;
        let dim = self.mesh.dim();
        let nd = self.num_dofs();
        let spec = &self.spec;
        let mut parabolic = vec![0.0; nd];
        let mut stiffness = vec![0.0; nd];
        let mut convection = vec![0.0; nd];
        let mut load = vec![0.0; nd];
        let mut boundary = vec![0.0; nd];
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();

        // lumped storage term
        let mut b_new = vec![0.0; m];
        let mut b_old = vec![0.0; m];
        for n in 0..self.mesh.num_nodes() {
            let un = &u_new[n * m..(n + 1) * m];
            let uo = &step.u_old[n * m..(n + 1) * m];
            let p = self.mesh.nodes()[n];
            let err = |source| FemError::Eval {
                what: "B".into(),
                location: format!("node {n}"),
                point: p,
                source,
            };
            spec.eval_storage(un, &mut b_new).map_err(err)?;
            spec.eval_storage(uo, &mut b_old).map_err(err)?;
            let w = self.lumped[n] / step.dt;
            for j in 0..m {
                parabolic[n * m + j] = w * (b_new[j] - b_old[j]);
            }
            if want_jac {
                let d = fd_columns(un, |z, out| spec.eval_storage(z, out), m).map_err(err)?;
                for k in 0..m {
                    for j in 0..m {
                        trip.push((n * m + j, n * m + k, w * d[k][j]));
                    }
                }
            }
        }

        // volume terms
        let rule = element_rule(dim);
        let mut uq = vec![0.0; m];
        for e in 0..self.mesh.num_elements() {
            let nodes = self.mesh.element(e);
            let g = &self.grads[e];
            let vol = self.mesh.volume(e);
            let mut grad_u = vec![[0.0; 2]; m];
            for (a, &n) in nodes.iter().enumerate() {
                for j in 0..m {
                    for d in 0..dim {
                        grad_u[j][d] += g[a][d] * u_new[n * m + j];
                    }
                }
            }
            for (l, w) in rule {
                let l = &l[..=dim];
                let wq = w * vol;
                let x = self.point_of(nodes, l);
                self.interp(u_new, nodes, l, &mut uq);
                let at = |what: &str, source| FemError::Eval {
                    what: what.into(),
                    location: format!("element {e}"),
                    point: x,
                    source,
                };
                let coeffs = |z: &[f64], out: &mut [f64]| self.volume_coefficients(z, x, step.t, out);
                let ncoef = m * m + m * dim + m;
                let mut c = vec![0.0; ncoef];
                coeffs(&uq, &mut c).map_err(|s| at("K, e or F", s))?;
                let (kk, rest) = c.split_at(m * m);
                let (ee, ff) = rest.split_at(m * dim);
                for j in 0..m {
                    let mut flux = [0.0; 2];
                    for i in 0..m {
                        for d in 0..dim {
                            flux[d] += kk[j * m + i] * grad_u[i][d];
                        }
                    }
                    for (a, &n) in nodes.iter().enumerate() {
                        let mut s = 0.0;
                        let mut cv = 0.0;
                        for d in 0..dim {
                            s += flux[d] * g[a][d];
                            cv += ee[j * dim + d] * g[a][d];
                        }
                        stiffness[n * m + j] += wq * s;
                        convection[n * m + j] += wq * cv;
                        load[n * m + j] -= wq * ff[j] * l[a];
                    }
                }
                if want_jac {
                    let dc = fd_columns(&uq, coeffs, ncoef).map_err(|s| at("K, e or F", s))?;
                    for j in 0..m {
                        for (a, &na) in nodes.iter().enumerate() {
                            let row = na * m + j;
                            for k in 0..m {
                                let dk = &dc[k];
                                // value derivatives: dK/du_k ∇u, de/du_k, dF/du_k, times φ_b
                                let mut coef_val = 0.0;
                                for d in 0..dim {
                                    let mut dflux = dk[m * m + j * dim + d];
                                    for i in 0..m {
                                        dflux += dk[j * m + i] * grad_u[i][d];
                                    }
                                    coef_val += dflux * g[a][d];
                                }
                                let df = dk[m * m + m * dim + j];
                                let kjk = kk[j * m + k];
                                for (b, &nb) in nodes.iter().enumerate() {
                                    let mut grad_dot = 0.0;
                                    for d in 0..dim {
                                        grad_dot += g[b][d] * g[a][d];
                                    }
                                    let v = wq * (coef_val * l[b] + kjk * grad_dot - df * l[b] * l[a]);
                                    trip.push((row, nb * m + k, v));
                                }
                            }
                        }
                    }
                }
            }
        }

        // flux condition on Γ₂
        for &f in &self.neumann {
            for (fnodes, l, w) in self.facet_points(f) {
                let nodes = &fnodes[..dim];
                let l = &l[..dim];
                let x = self.point_of(nodes, l);
                self.interp(u_new, nodes, l, &mut uq);
                let gval = |z: &[f64], out: &mut [f64]| eval_all(&spec.boundary_flux, &Bindings::at(z, x, step.t), out);
                let at = |source| FemError::Eval {
                    what: "g".into(),
                    location: format!("facet {f}"),
                    point: x,
                    source,
                };
                let mut gv = vec![0.0; m];
                gval(&uq, &mut gv).map_err(at)?;
                for j in 0..m {
                    for (a, &n) in nodes.iter().enumerate() {
                        boundary[n * m + j] -= w * gv[j] * l[a];
                    }
                }
                if want_jac {
                    let dg = fd_columns(&uq, gval, m).map_err(at)?;
                    for j in 0..m {
                        for (a, &na) in nodes.iter().enumerate() {
                            for k in 0..m {
                                for (b, &nb) in nodes.iter().enumerate() {
                                    trip.push((na * m + j, nb * m + k, -w * dg[k][j] * l[a] * l[b]));
                                }
                            }
                        }
                    }
                }
            }
        }

        // penalty on Γ₃
        let (mut penalty, pairing) = self.penalty_form(u_new);
        match step.eps {
            Some(eps) => {
                for v in &mut penalty {
                    *v /= eps;
                }
                if want_jac {
                    for &f in &self.unilateral {
                        for (fnodes, l, w) in self.facet_points(f) {
                            let nodes = &fnodes[..dim];
                            let l = &l[..dim];
                            self.interp(u_new, nodes, l, &mut uq);
                            for j in (0..m).filter(|&j| spec.constraint_mask[j] && uq[j] > 0.0) {
                                for (a, &na) in nodes.iter().enumerate() {
                                    for (b, &nb) in nodes.iter().enumerate() {
                                        trip.push((na * m + j, nb * m + j, w * l[a] * l[b] / eps));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            None => penalty.fill(0.0),
        }

        let residual = self
            .free
            .iter()
            .map(|&d| parabolic[d] + stiffness[d] + convection[d] + load[d] + boundary[d] + penalty[d])
            .collect();
        Ok((
            WeakFormTerms {
                parabolic,
                stiffness,
                convection,
                load,
                boundary,
                penalty,
                residual,
                pairing,
            },
            trip,
        ))
    }

    /// Packs `K` (row-major), `e` (component-major) and `F` at one point.
    fn volume_coefficients(&self, z: &[f64], x: [f64; 2], t: f64, out: &mut [f64]) -> Result<(), ExprError> {
        let m = self.m;
        let dim = self.mesh.dim();
        let bu = Bindings::new(z);
        let bx = Bindings::at(z, x, t);
        for j in 0..m {
            for i in 0..m {
                out[j * m + i] = self.spec.diffusion[j][i].eval(&bu)?;
            }
            for d in 0..dim {
                out[m * m + j * dim + d] = self.spec.drift[j][d].eval(&bu)?;
            }
            out[m * m + m * dim + j] = self.spec.source[j].eval(&bx)?;
        }
        Ok(())
    }

    /// Discrete boundary flux `(K∇u + e)·n` tested against each basis
    /// function: the unpenalized residual at every dof (meaningful on Γ₃).
    pub fn recover_flux(&self, u_new: &[f64], step: &StepData<'_>) -> Result<Vec<f64>, FemError> {
        let unpen = StepData { eps: None, ..*step };
        Ok(self.assemble_residual(u_new, &unpen)?.unpenalized())
    }

    /// `‖u‖²_{L²(Ω)}` of a nodal field, all components.
    pub fn l2_norm_sq(&self, values: &[f64]) -> f64 {
        self.integrate_sq(values, false)
    }

    /// `‖u_h − u‖²_{L²(Ω)}` against `exact(j, x)`, by the element rule.
    pub fn l2_error_sq(&self, values: &[f64], exact: &dyn Fn(usize, [f64; 2]) -> f64) -> f64 {
        let m = self.m;
        let dim = self.mesh.dim();
        let mut uq = vec![0.0; m];
        let mut acc = 0.0;
        for e in 0..self.mesh.num_elements() {
            let nodes = self.mesh.element(e);
            let vol = self.mesh.volume(e);
            for (l, w) in element_rule(dim) {
                let l = &l[..=dim];
                self.interp(values, nodes, l, &mut uq);
                let x = self.point_of(nodes, l);
                acc += w * vol * (0..m).map(|j| (uq[j] - exact(j, x)).powi(2)).sum::<f64>();
            }
        }
        acc
    }

    /// `‖u‖²_{H¹(Ω)} = ‖u‖² + ‖∇u‖²`.
    pub fn h1_norm_sq(&self, values: &[f64]) -> f64 {
        self.integrate_sq(values, true)
    }

    fn integrate_sq(&self, values: &[f64], with_grad: bool) -> f64 {
        let m = self.m;
        let dim = self.mesh.dim();
        let mut uq = vec![0.0; m];
        let mut acc = 0.0;
        for e in 0..self.mesh.num_elements() {
            let nodes = self.mesh.element(e);
            let vol = self.mesh.volume(e);
            for (l, w) in element_rule(dim) {
                self.interp(values, nodes, &l[..=dim], &mut uq);
                acc += w * vol * uq.iter().map(|v| v * v).sum::<f64>();
            }
            if with_grad {
                let g = &self.grads[e];
                for j in 0..m {
                    for d in 0..dim {
                        let gd: f64 = nodes.iter().enumerate().map(|(a, &n)| g[a][d] * values[n * m + j]).sum();
                        acc += vol * gd * gd;
                    }
                }
            }
        }
        acc
    }

    /// Maximum of the constrained components over Γ₃ nodes (`-inf` if none).
    pub fn max_on_gamma3(&self, values: &[f64]) -> f64 {
        self.constrained.iter().map(|&d| values[d]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// P1 shape-function gradients of element `e`.
fn shape_gradients(mesh: &Mesh, e: usize) -> [[f64; 2]; 3] {
    let n = mesh.element(e);
    let p = |i: usize| mesh.nodes()[n[i]];
    if mesh.dim() == 1 {
        let h = p(1)[0] - p(0)[0];
        return [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]];
    }
    let (a, b, c) = (p(0), p(1), p(2));
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ]
}

fn eval_all(exprs: &[Expr], b: &Bindings<'_>, out: &mut [f64]) -> Result<(), ExprError> {
    for (o, e) in out.iter_mut().zip(exprs) {
        *o = e.eval(b)?;
    }
    Ok(())
}

/// Central differences of a vector-valued `f` with respect to each `z_k`;
/// `result[k]` is the column `∂f/∂z_k`.
fn fd_columns(
    z: &[f64],
    f: impl Fn(&[f64], &mut [f64]) -> Result<(), ExprError>,
    len: usize,
) -> Result<Vec<Vec<f64>>, ExprError> {
    let mut zp = z.to_vec();
    let mut fp = vec![0.0; len];
    let mut fm = vec![0.0; len];
    let mut cols = Vec::with_capacity(z.len());
    for k in 0..z.len() {
        let h = COEFF_FD_STEP * z[k].abs().max(1.0);
        zp[k] = z[k] + h;
        f(&zp, &mut fp)?;
        zp[k] = z[k] - h;
        f(&zp, &mut fm)?;
        zp[k] = z[k];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect());
    }
    Ok(cols)
}

/// Relative mismatch `‖J v − (R(u+δv) − R(u−δv))/2δ‖ / ‖J v‖` over the
/// free dofs, with `v` a direction on the free dofs.
pub fn jacobian_mismatch(disc: &Discretization, u: &[f64], step: &StepData<'_>, v: &[f64]) -> Result<f64, FemError> {
    let jac = disc.assemble_jacobian(u, step)?;
    let mut jv = vec![0.0; v.len()];
    for (row, out) in jac.row_iter().zip(jv.iter_mut()) {
        *out = row.col_indices().iter().zip(row.values()).map(|(&c, &a)| a * v[c]).sum();
    }
    let scale = u.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let delta = 1e-6 * scale;
    let shifted = |s: f64| {
        let mut w = u.to_vec();
        for (&d, &vi) in disc.free_dofs().iter().zip(v) {
            w[d] += s * vi;
        }
        w
    };
    let rp = disc.assemble_residual(&shifted(delta), step)?.residual;
    let rm = disc.assemble_residual(&shifted(-delta), step)?.residual;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for k in 0..v.len() {
        let fd = (rp[k] - rm[k]) / (2.0 * delta);
        diff += (jv[k] - fd).powi(2);
        norm += jv[k].powi(2);
    }
    Ok(if norm > 0.0 { (diff / norm).sqrt() } else { diff.sqrt() })
}

/// Space–time `L²(Q_T)` distance between two trajectories on the same grid,
/// trapezoidal in time.
pub fn l2_qt_distance(disc: &Discretization, a: &[StateField], b: &[StateField]) -> Result<f64, FemError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x.t - y.t).abs() > 1e-12 * (1.0 + x.t.abs())) {
        return Err(FemError::GridMismatch);
    }
    let sq: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d: Vec<f64> = x.values.iter().zip(&y.values).map(|(p, q)| p - q).collect();
            disc.l2_norm_sq(&d)
        })
        .collect();
    let mut acc = 0.0;
    for k in 1..a.len() {
        acc += 0.5 * (a[k].t - a[k - 1].t) * (sq[k] + sq[k - 1]);
    }
    Ok(acc.sqrt())
}

/// A trajectory of feasible comparison fields (one per time level).
pub type TestField = Vec<StateField>;

/// `min` over the bank of `Σₙ Δtₙ Σ_a R_a(uⁿ)(φⁿ_a − uⁿ_a)` with `R` the
/// unpenalized residual over the free dofs. Nonnegative values certify the
/// discrete variational inequality on the bank.
pub fn vi_residual(disc: &Discretization, traj: &[StateField], bank: &[TestField]) -> Result<f64, FemError> {
    for (index, phi) in bank.iter().enumerate() {
        check_feasible(disc, traj, phi, index)?;
    }
    // residuals do not depend on φ; compute them once
    let mut residuals = Vec::with_capacity(traj.len());
    for k in 1..traj.len() {
        let step = StepData {
            u_old: &traj[k - 1].values,
            t: traj[k].t,
            dt: traj[k].t - traj[k - 1].t,
            eps: None,
        };
        residuals.push(disc.recover_flux(&traj[k].values, &step)?);
    }
    let mut best = f64::INFINITY;
    for phi in bank {
        let mut acc = 0.0;
        for k in 1..traj.len() {
            let dt = traj[k].t - traj[k - 1].t;
            let r = &residuals[k - 1];
            acc += dt * disc
                .free_dofs()
                .iter()
                .map(|&d| r[d] * (phi[k].values[d] - traj[k].values[d]))
                .sum::<f64>();
        }
        best = best.min(acc);
    }
    Ok(best)
}

fn check_feasible(disc: &Discretization, traj: &[StateField], phi: &TestField, index: usize) -> Result<(), FemError> {
    if phi.len() != traj.len() {
        return Err(FemError::GridMismatch);
    }
    for (k, field) in phi.iter().enumerate() {
        if let Some(&d) = disc.constrained_dofs().iter().find(|&&d| field.values[d] > 0.0) {
            return Err(FemError::Infeasible {
                index,
                reason: format!("value {:e} > 0 at constrained dof {d}, level {k}", field.values[d]),
            });
        }
        for d in (0..disc.num_dofs()).filter(|&d| !disc.is_free(d)) {
            if field.values[d] != traj[k].values[d] {
                return Err(FemError::Infeasible {
                    index,
                    reason: format!("Dirichlet dof {d} differs from the boundary data at level {k}"),
                });
            }
        }
    }
    Ok(())
}

/// Test bank around a reference trajectory: its projection onto the
/// constraint set plus `n - 1` random feasible perturbations of it.
pub fn feasible_bank(disc: &Discretization, reference: &[StateField], n: usize, seed: u64) -> Vec<TestField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let project = |values: &mut [f64]| {
        for &d in disc.constrained_dofs() {
            values[d] = values[d].min(0.0);
        }
    };
    let base: TestField = reference
        .iter()
        .map(|s| {
            let mut s = s.clone();
            project(&mut s.values);
            s
        })
        .collect();
    let scale = 0.5 * reference.iter().map(StateField::max_abs).fold(0.0, f64::max) + 0.1;
    let mut bank = vec![base.clone()];
    while bank.len() < n {
        let mut phi = base.clone();
        for s in &mut phi {
            for &d in disc.free_dofs() {
                s.values[d] += scale * rng.random_range(-1.0..=1.0);
            }
            project(&mut s.values);
        }
        bank.push(phi);
    }
    bank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_interval_mesh, unit_square_mesh, BoundaryTag as T};

    fn scalar(coeffs: &str, boundary: &str) -> ProblemSpec {
        ProblemSpec::parse(&format!(
            "[problem]\nm = 1\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\n{coeffs}\n[boundary]\n{boundary}\n"
        ))
        .unwrap()
    }

    fn step(u_old: &[f64], eps: Option<f64>) -> StepData<'_> {
        StepData {
            u_old,
            t: 0.0,
            dt: 1.0,
            eps,
        }
    }

    #[test]
    fn one_d_penalty_pairing_is_point_value() {
        let spec = scalar("B1 = u1\nK11 = 1", "gamma1 = left\ngamma3 = right");
        let mesh = unit_interval_mesh(2, (T::Dirichlet, T::Unilateral)).unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let (b, pairing) = disc.penalty_form(&[0.0, 0.0, 0.5]);
        assert_eq!(pairing, 0.25);
        assert_eq!(b, vec![0.0, 0.0, 0.5]);
        let (b, pairing) = disc.penalty_form(&[0.0, 0.0, -0.5]);
        assert_eq!(pairing, 0.0);
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_d_penalty_pairing_integrates_side() {
        let spec = ProblemSpec::parse(
            "[problem]\nm = 1\ndim = 2\nnu = 1\np = 1\nalpha = 1\n[coefficients]\nB1 = u1\nK11 = 1\n[boundary]\ngamma1 = left, top, bottom\ngamma3 = right\n[domain]\nmesh = square\nnx = 3\nny = 4\n",
        )
        .unwrap();
        let mesh = spec.build_mesh().unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let (_, pairing) = disc.penalty_form(&vec![1.0; mesh.num_nodes()]);
        assert!((pairing - 1.0).abs() < 1e-14);
    }

    #[test]
    fn middle_node_stiffness_is_four() {
        let spec = scalar("B1 = u1\nK11 = 1", "gamma1 = left, right");
        let mesh = unit_interval_mesh(2, (T::Dirichlet, T::Dirichlet)).unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let u = [0.0, 1.0, 0.0];
        let terms = disc.assemble_residual(&u, &step(&u, None)).unwrap();
        assert!((terms.stiffness[1] - 4.0).abs() < 1e-14);
        assert_eq!(terms.residual.len(), 1);
        assert!((terms.residual[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn zero_state_has_zero_residual() {
        let spec = scalar("B1 = u1\nK11 = 1", "gamma1 = left, right");
        let mesh = unit_interval_mesh(4, (T::Dirichlet, T::Dirichlet)).unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let u = vec![0.0; 5];
        let terms = disc.assemble_residual(&u, &step(&u, None)).unwrap();
        assert!(terms.residual.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn heat_jacobian_is_mass_over_dt_plus_stiffness() {
        let spec = scalar("B1 = u1\nK11 = 1", "gamma1 = left, right");
        let mesh = unit_interval_mesh(4, (T::Dirichlet, T::Dirichlet)).unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let u = [0.0, 0.3, -0.2, 0.7, 0.0];
        let dt = 0.1;
        let s = StepData { dt, ..step(&u, None) };
        let jac = nalgebra::DMatrix::from(&disc.assemble_jacobian(&u, &s).unwrap());
        let h = 0.25;
        for i in 0..3 {
            for j in 0..3 {
                let a = match (i as i64 - j as i64).abs() {
                    0 => 2.0 / h + h / dt,
                    1 => -1.0 / h,
                    _ => 0.0,
                };
                assert!((jac[(i, j)] - a).abs() < 1e-8, "({i},{j}) {} vs {a}", jac[(i, j)]);
            }
        }
    }

    #[test]
    fn penalty_is_linear_in_inverse_eps() {
        let spec = scalar("B1 = u1\nK11 = 1\nF1 = 2", "gamma1 = left\ngamma3 = right");
        let mesh = unit_interval_mesh(4, (T::Dirichlet, T::Unilateral)).unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let u = [0.0, 0.1, 0.2, 0.3, 0.4];
        let a = disc.assemble_residual(&u, &step(&u, Some(1e-2))).unwrap();
        let b = disc.assemble_residual(&u, &step(&u, Some(5e-3))).unwrap();
        let last = a.residual.len() - 1;
        let pa = a.residual[last] - a.unpenalized()[4];
        let pb = b.residual[last] - b.unpenalized()[4];
        assert!((pb - 2.0 * pa).abs() < 1e-12 * pb.abs());
    }

    #[test]
    fn two_d_gradients_reproduce_affine_fields() {
        let mesh = unit_square_mesh(3, 2, |_| T::Dirichlet).unwrap();
        for e in 0..mesh.num_elements() {
            let g = shape_gradients(&mesh, e);
            let nodes = mesh.element(e);
            let mut grad = [0.0; 2];
            for (a, &n) in nodes.iter().enumerate() {
                let p = mesh.nodes()[n];
                let f = 2.0 * p[0] - 3.0 * p[1] + 1.0;
                grad[0] += g[a][0] * f;
                grad[1] += g[a][1] * f;
            }
            assert!((grad[0] - 2.0).abs() < 1e-12 && (grad[1] + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_test_field_is_rejected() {
        let spec = scalar("B1 = u1\nK11 = 1", "gamma1 = left\ngamma3 = right");
        let mesh = unit_interval_mesh(2, (T::Dirichlet, T::Unilateral)).unwrap();
        let disc = Discretization::new(&spec, &mesh);
        let traj = vec![StateField::zeros(3, 1, 0.0), StateField::zeros(3, 1, 0.1)];
        assert_eq!(vi_residual(&disc, &traj, std::slice::from_ref(&traj)).unwrap(), 0.0);
        let mut bad = traj.clone();
        bad[1].values[2] = 0.1;
        assert!(matches!(vi_residual(&disc, &traj, &[bad]), Err(FemError::Infeasible { index: 0, .. })));
    }
}
