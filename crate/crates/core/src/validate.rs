//! Sampled admissibility checks for problem data.
//!
//! The structure conditions quantify over all of ℝ^m, so every check here
//! samples a box `|z_i| <= R` plus a handful of growth rays and reports
//! `SampledPass` rather than a proof. A `Fail` always carries a witness.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::expr::{Bindings, Expr, ExprError, Var};
use crate::mesh::Mesh;
use crate::quadrature::GaussLegendre;
use crate::spec::{ProblemSpec, SpecError};

/// Finite-difference step for Jacobians, relative to `max(1, |z_k|)`.
pub const FD_STEP: f64 = 1e-5;
/// Allowed Jacobian asymmetry, relative to `1 + max |J|`.
pub const SYMMETRY_TOL: f64 = 1e-6;
/// A ray "diverges" when the tracked ratio grows by more than this factor...
pub const DIVERGENCE_FACTOR: f64 = 1.5;
/// ...for this many consecutive doublings of `|z|`.
pub const DIVERGENCE_RUN: usize = 5;
const RAY_DOUBLINGS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    SampledPass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::SampledPass => "sampled-pass",
            Verdict::Fail => "fail",
        })
    }
}

/// Concrete point(s) exhibiting a violation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub points: Vec<Vec<f64>>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckEntry {
    pub condition: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// Named sampled constants, e.g. the ellipticity bound.
    pub estimates: Vec<(String, f64)>,
}

impl CheckEntry {
    fn pass(condition: &str, verdict: Verdict) -> CheckEntry {
        CheckEntry {
            condition: condition.to_string(),
            verdict,
            witness: None,
            estimates: Vec::new(),
        }
    }

    fn fail(condition: &str, points: Vec<Vec<f64>>, detail: impl Into<String>) -> CheckEntry {
        CheckEntry {
            condition: condition.to_string(),
            verdict: Verdict::Fail,
            witness: Some(Witness {
                points,
                detail: detail.into(),
            }),
            estimates: Vec::new(),
        }
    }

    fn with(mut self, name: &str, value: f64) -> CheckEntry {
        self.estimates.push((name.to_string(), value));
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<CheckEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }

    pub fn entry(&self, condition: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.condition == condition)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.passed())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            write!(f, "{:<22} {}", e.condition, e.verdict)?;
            for (name, v) in &e.estimates {
                write!(f, "  {name}={v:.6e}")?;
            }
            writeln!(f)?;
            if let Some(w) = &e.witness {
                writeln!(f, "    witness: {}", w.detail)?;
                for p in &w.points {
                    writeln!(f, "      at {p:?}")?;
                }
            }
        }
        Ok(())
    }
}

/// Sampling parameters; defaults come from the problem's `[solver]` section.
#[derive(Clone, Copy, Debug)]
pub struct SampleBox {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl SampleBox {
    pub fn from_spec(spec: &ProblemSpec) -> SampleBox {
        SampleBox {
            samples: spec.solver.samples,
            radius: spec.solver.sample_box,
            seed: spec.solver.seed,
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn point(&self, rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m).map(|_| rng.random_range(-self.radius..=self.radius)).collect()
    }

    /// Box corners and the origin, then random interior points.
    fn points(&self, m: usize, stream: u64) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; m]];
        if m <= 10 {
            for mask in 0..(1usize << m) {
                out.push(
                    (0..m)
                        .map(|k| if mask >> k & 1 == 1 { self.radius } else { -self.radius })
                        .collect(),
                );
            }
        }
        let mut rng = self.rng(stream);
        let target = self.samples.max(out.len() + 1);
        while out.len() < target {
            out.push(self.point(&mut rng, m));
        }
        out
    }

    /// Ray directions: ± coordinate axes and a few random unit vectors.
    fn directions(&self, m: usize, stream: u64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for k in 0..m {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; m];
                d[k] = s;
                out.push(d);
            }
        }
        let mut rng = self.rng(stream);
        for _ in 0..4 {
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let n = norm(&v);
            if n > 1e-3 {
                out.push(v.iter().map(|x| x / n).collect());
            }
        }
        out
    }

    fn ray_radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=RAY_DOUBLINGS).map(move |k| self.radius.max(1.0) * (1u64 << k) as f64)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the step at which `seq` has grown by more than
/// [`DIVERGENCE_FACTOR`] for [`DIVERGENCE_RUN`] consecutive steps.
pub fn diverges(seq: &[f64]) -> Option<usize> {
    let mut run = 0;
    for k in 1..seq.len() {
        if seq[k - 1] > 0.0 && seq[k] > DIVERGENCE_FACTOR * seq[k - 1] {
            run += 1;
            if run >= DIVERGENCE_RUN {
                return Some(k);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Like [`diverges`] but for a sequence decaying toward zero.
fn collapses(seq: &[f64]) -> Option<usize> {
    let inv: Vec<f64> = seq
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v } else { f64::INFINITY })
        .collect();
    if let Some(k) = seq.iter().position(|&v| v <= 0.0) {
        return Some(k);
    }
    diverges(&inv)
}

fn storage(spec: &ProblemSpec, z: &[f64]) -> Result<Vec<f64>, ExprError> {
    let mut out = vec![0.0; spec.m];
    spec.eval_storage(z, &mut out)?;
    Ok(out)
}

fn eval_error_entry(condition: &str, z: &[f64], err: ExprError) -> CheckEntry {
    CheckEntry::fail(condition, vec![z.to_vec()], format!("evaluation failed: {err}"))
}

/// Central-difference Jacobian `∂B_i/∂z_j`.
pub fn storage_jacobian(spec: &ProblemSpec, z: &[f64]) -> Result<DMatrix<f64>, ExprError> {
    let m = spec.m;
    let mut jac = DMatrix::zeros(m, m);
    let mut zp = z.to_vec();
    for j in 0..m {
        let h = FD_STEP * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let bp = storage(spec, &zp)?;
        zp[j] = z[j] - h;
        let bm = storage(spec, &zp)?;
        zp[j] = z[j];
        for i in 0..m {
            jac[(i, j)] = (bp[i] - bm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Strict monotonicity of `B` and symmetry of its Jacobian (`B = ∇Φ`).
pub fn check_monotone_gradient(spec: &ProblemSpec, sb: &SampleBox) -> CheckEntry {
    const NAME: &str = "A1-monotone-gradient";
    let m = spec.m;
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .map(|k| {
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            (e, vec![0.0; m])
        })
        .collect();
    let mut rng = sb.rng(1);
    while pairs.len() < sb.samples.max(m + 1) {
        pairs.push((sb.point(&mut rng, m), sb.point(&mut rng, m)));
    }
    let mut min_ratio = f64::INFINITY;
    for (z1, z2) in &pairs {
        let (b1, b2) = match (storage(spec, z1), storage(spec, z2)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) => return eval_error_entry(NAME, z1, e),
            (_, Err(e)) => return eval_error_entry(NAME, z2, e),
        };
        let dz: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a - b).collect();
        let db: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a - b).collect();
        let prod = dot(&db, &dz);
        let d2 = dot(&dz, &dz);
        if d2 == 0.0 {
            continue;
        }
        if !(prod > 0.0) {
            return CheckEntry::fail(
                NAME,
                vec![z1.clone(), z2.clone()],
                format!("(B(z1) - B(z2)).(z1 - z2) = {prod:e} is not positive"),
            );
        }
        min_ratio = min_ratio.min(prod / d2);
    }
    let mut max_asym: f64 = 0.0;
    for z in sb.points(m, 2).iter().take(200) {
        let jac = match storage_jacobian(spec, z) {
            Ok(j) => j,
            Err(e) => return eval_error_entry(NAME, z, e),
        };
        let scale = 1.0 + jac.amax();
        for i in 0..m {
            for j in 0..i {
                let asym = (jac[(i, j)] - jac[(j, i)]).abs();
                max_asym = max_asym.max(asym / scale);
                if asym > SYMMETRY_TOL * scale {
                    return CheckEntry::fail(
                        NAME,
                        vec![z.clone()],
                        format!(
                            "Jacobian not symmetric: dB{}/du{} = {:e}, dB{}/du{} = {:e}",
                            i + 1,
                            j + 1,
                            jac[(i, j)],
                            j + 1,
                            i + 1,
                            jac[(j, i)]
                        ),
                    );
                }
            }
        }
    }
    CheckEntry::pass(NAME, Verdict::SampledPass)
        .with("min_monotonicity_ratio", min_ratio)
        .with("max_rel_asymmetry", max_asym)
}

/// `Ψ(z) = ∫₀¹ (B(z) − B(sz))·z ds` by `quad_n`-point Gauss–Legendre.
pub fn legendre_psi(spec: &ProblemSpec, z: &[f64], quad_n: usize) -> Result<f64, ExprError> {
    legendre_psi_with(spec, z, &GaussLegendre::new(quad_n))
}

/// [`legendre_psi`] with a prebuilt rule, for hot loops.
pub fn legendre_psi_with(spec: &ProblemSpec, z: &[f64], rule: &GaussLegendre) -> Result<f64, ExprError> {
    if z.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let bz = storage(spec, z)?;
    let bz_dot = dot(&bz, z);
    let mut sz = vec![0.0; z.len()];
    let mut bs = vec![0.0; z.len()];
    rule.integrate(0.0, 1.0, |s| {
        for (o, v) in sz.iter_mut().zip(z) {
            *o = s * v;
        }
        spec.eval_storage(&sz, &mut bs)?;
        Ok(bz_dot - dot(&bs, z))
    })
}

/// Growth of Ψ: `Ψ(z) >= c1 |z|^{ν+1} - c2`.
pub fn check_psi_coercive(spec: &ProblemSpec, sb: &SampleBox) -> CheckEntry {
    const NAME: &str = "A1-psi-growth";
    let rule = GaussLegendre::new(spec.solver.quad_n);
    let q = spec.exponents.nu + 1.0;
    let mut c1 = f64::INFINITY;
    for d in sb.directions(spec.m, 3) {
        let mut ratios = Vec::new();
        for r in sb.ray_radii() {
            let z: Vec<f64> = d.iter().map(|v| v * r).collect();
            match legendre_psi_with(spec, &z, &rule) {
                Ok(psi) => ratios.push(psi / r.powf(q)),
                Err(e) => return eval_error_entry(NAME, &z, e),
            }
        }
        if let Some(k) = collapses(&ratios) {
            let r = sb.ray_radii().nth(k).unwrap_or(sb.radius);
            let z: Vec<f64> = d.iter().map(|v| v * r).collect();
            return CheckEntry::fail(
                NAME,
                vec![z],
                format!("Psi(z)/|z|^(nu+1) = {:e} decays along the ray", ratios[k]),
            );
        }
        c1 = c1.min(*ratios.last().unwrap());
    }
    let mut c2: f64 = 0.0;
    for z in sb.points(spec.m, 4).iter().take(sb.samples) {
        match legendre_psi_with(spec, z, &rule) {
            Ok(psi) => c2 = c2.max(c1 * norm(z).powf(q) - psi),
            Err(e) => return eval_error_entry(NAME, z, e),
        }
    }
    CheckEntry::pass(NAME, Verdict::SampledPass)
        .with("c1", c1)
        .with("c2", c2)
}

fn diffusion_matrix(spec: &ProblemSpec, z: &[f64]) -> Result<DMatrix<f64>, ExprError> {
    let b = Bindings::new(z);
    let m = spec.m;
    let mut k = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..m {
            k[(j, i)] = spec.diffusion[j][i].eval(&b)?;
        }
    }
    Ok(k)
}

fn coefficient_bound(spec: &ProblemSpec, z: &[f64]) -> Result<f64, ExprError> {
    let b = Bindings::new(z);
    let mut bound: f64 = 0.0;
    for j in 0..spec.m {
        let emax = spec.drift[j]
            .iter()
            .map(|e| e.eval(&b).map(f64::abs))
            .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?;
        for i in 0..spec.m {
            bound = bound.max(spec.diffusion[j][i].eval(&b)?.abs() + emax);
        }
    }
    Ok(bound)
}

/// Uniform ellipticity `K ξ·ξ >= c|ξ|²` on the box and boundedness of
/// `|K^{ji}| + |e^j_k|`.
pub fn check_k_pd_bounded(spec: &ProblemSpec, sb: &SampleBox) -> CheckEntry {
    const NAME: &str = "A2-elliptic-bounded";
    let m = spec.m;
    let mut c_ell = f64::INFINITY;
    let mut c_bound: f64 = 0.0;
    for z in sb.points(m, 5) {
        let k = match diffusion_matrix(spec, &z) {
            Ok(k) => k,
            Err(e) => return eval_error_entry(NAME, &z, e),
        };
        let sym = (&k + k.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let (idx, &lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("m >= 1");
        if !(lambda > 0.0) {
            let xi: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            return CheckEntry::fail(
                NAME,
                vec![z.clone(), xi],
                format!("K(z) xi.xi = {lambda:e} <= 0 for unit xi (second point)"),
            );
        }
        c_ell = c_ell.min(lambda);
        match coefficient_bound(spec, &z) {
            Ok(b) => c_bound = c_bound.max(b),
            Err(e) => return eval_error_entry(NAME, &z, e),
        }
    }
    for d in sb.directions(m, 6) {
        let mut seq = Vec::new();
        for r in sb.ray_radii() {
            let z: Vec<f64> = d.iter().map(|v| v * r).collect();
            match coefficient_bound(spec, &z) {
                Ok(b) => seq.push(b),
                Err(e) => return eval_error_entry(NAME, &z, e),
            }
        }
        if let Some(k) = diverges(&seq) {
            let r = sb.ray_radii().nth(k).unwrap();
            return CheckEntry::fail(
                NAME,
                vec![d.iter().map(|v| v * r).collect()],
                format!("|K| + |e| = {:e} grows without bound along the ray", seq[k]),
            );
        }
    }
    CheckEntry::pass(NAME, Verdict::SampledPass)
        .with("c_elliptic", c_ell)
        .with("c_bound", c_bound)
}

/// Which branch of the boundary-growth condition holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum A4Clause {
    /// `0 < α <= min{ν, 1}`
    SmallAlpha,
    /// `1 < α < (N+α+1)/N` and the dimension-dependent bound.
    LargeAlpha,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct A4Outcome {
    pub holds: bool,
    pub clause: Option<A4Clause>,
    pub reason: String,
}

/// Dimension-dependent upper bound for α in the second clause.
pub fn a4_branch(n: usize, nu: f64) -> f64 {
    match n {
        1 => (nu + 1.0) / 2.0,
        2 => (3.0 * nu + 1.0) / (3.0 + nu),
        _ => nu + 2.0 - (nu * nu - nu + 3.0).sqrt(),
    }
}

fn a4_with(nu: f64, p: f64, alpha: f64, n: usize, second_bound: f64) -> A4Outcome {
    if !(p <= nu) {
        return A4Outcome {
            holds: false,
            clause: None,
            reason: format!("p = {p} exceeds nu = {nu}"),
        };
    }
    if alpha > 0.0 && alpha <= nu.min(1.0) {
        return A4Outcome {
            holds: true,
            clause: Some(A4Clause::SmallAlpha),
            reason: format!("0 < alpha = {alpha} <= min(nu, 1) = {}", nu.min(1.0)),
        };
    }
    let n_f = n as f64;
    let branch = a4_branch(n, nu);
    if alpha > 1.0 && alpha < second_bound && alpha < branch {
        return A4Outcome {
            holds: true,
            clause: Some(A4Clause::LargeAlpha),
            reason: format!("1 < alpha = {alpha} < {second_bound} and alpha < {branch} (N = {n_f})"),
        };
    }
    A4Outcome {
        holds: false,
        clause: None,
        reason: format!(
            "alpha = {alpha} satisfies neither alpha <= min(nu, 1) = {} nor 1 < alpha < min({second_bound}, {branch})",
            nu.min(1.0)
        ),
    }
}

/// The boundary-growth condition exactly as stated, with the second clause's
/// bound `(N + α + 1)/N`.
pub fn check_a4(nu: f64, p: f64, alpha: f64, n: usize) -> A4Outcome {
    let n_f = n as f64;
    a4_with(nu, p, alpha, n, (n_f + alpha + 1.0) / n_f)
}

/// Variant reading the second clause as `α < (N + ν + 1)/N`.
pub fn check_a4_nu_bound(nu: f64, p: f64, alpha: f64, n: usize) -> A4Outcome {
    let n_f = n as f64;
    a4_with(nu, p, alpha, n, (n_f + nu + 1.0) / n_f)
}

fn a4_entry(spec: &ProblemSpec) -> CheckEntry {
    const NAME: &str = "A4-exponents";
    let g = spec.exponents;
    let out = check_a4(g.nu, g.p, g.alpha, spec.dim);
    if out.holds {
        CheckEntry::pass(NAME, Verdict::Pass)
    } else {
        CheckEntry::fail(NAME, vec![vec![g.nu, g.p, g.alpha, spec.dim as f64]], out.reason)
    }
}

fn sample_xt(rng: &mut ChaCha8Rng, dim: usize, t_end: f64) -> ([f64; 2], f64) {
    let x = rng.random_range(0.0..=1.0);
    let y = if dim == 2 { rng.random_range(0.0..=1.0) } else { 0.0 };
    ([x, y], rng.random_range(0.0..=t_end))
}

fn growth_entry(
    name: &str,
    exprs: &[Expr],
    exponent: f64,
    spec: &ProblemSpec,
    sb: &SampleBox,
    stream: u64,
) -> CheckEntry {
    let eval_norm = |z: &[f64], xy: [f64; 2], t: f64| -> Result<f64, ExprError> {
        let b = Bindings::at(z, xy, t);
        let mut acc = 0.0;
        for e in exprs {
            let v = e.eval(&b)?;
            acc += v * v;
        }
        Ok(acc.sqrt())
    };
    let mut rng = sb.rng(stream);
    let mut sup: f64 = 0.0;
    for z in sb.points(spec.m, stream + 100) {
        let (xy, t) = sample_xt(&mut rng, spec.dim, spec.solver.t_end);
        match eval_norm(&z, xy, t) {
            Ok(v) => sup = sup.max(v / (norm(&z).powf(exponent) + 1.0)),
            Err(e) => return eval_error_entry(name, &z, e),
        }
    }
    for d in sb.directions(spec.m, stream + 200) {
        let (xy, t) = sample_xt(&mut rng, spec.dim, spec.solver.t_end);
        let mut seq = Vec::new();
        for r in sb.ray_radii() {
            let z: Vec<f64> = d.iter().map(|v| v * r).collect();
            match eval_norm(&z, xy, t) {
                Ok(v) => seq.push(v / (r.powf(exponent) + 1.0)),
                Err(_) => {
                    return CheckEntry::fail(
                        name,
                        vec![z],
                        "value overflows along the growth ray".to_string(),
                    )
                }
            }
        }
        if let Some(k) = diverges(&seq) {
            let r = sb.ray_radii().nth(k).unwrap();
            return CheckEntry::fail(
                name,
                vec![d.iter().map(|v| v * r).collect()],
                format!("|value|/(|z|^{exponent} + 1) = {:e} diverges along the ray", seq[k]),
            );
        }
    }
    CheckEntry::pass(name, Verdict::SampledPass).with("sup_ratio", sup)
}

/// Growth bounds `|F| <= c(|z|^p + 1)` and `|g| <= c(|z|^α + 1)`.
pub fn check_growth(spec: &ProblemSpec, sb: &SampleBox) -> Vec<CheckEntry> {
    vec![
        growth_entry("A3-source-growth", &spec.source, spec.exponents.p, spec, sb, 7),
        growth_entry("A3-flux-growth", &spec.boundary_flux, spec.exponents.alpha, spec, sb, 8),
    ]
}

/// Initial data: finite nodal values, finite Ψ(u₀) and `u₀·B(u₀)`.
pub fn check_initial(spec: &ProblemSpec, mesh: &Mesh) -> CheckEntry {
    const NAME: &str = "A5-initial-data";
    let rule = GaussLegendre::new(spec.solver.quad_n);
    let mut psi_max: f64 = 0.0;
    let mut ub_max: f64 = 0.0;
    for (n, p) in mesh.nodes().iter().enumerate() {
        let b = Bindings::at(&[], *p, 0.0);
        let mut z = vec![0.0; spec.m];
        for (j, e) in spec.initial.iter().enumerate() {
            match e.eval(&b) {
                Ok(v) => z[j] = v,
                Err(err) => {
                    return CheckEntry::fail(
                        NAME,
                        vec![p[..spec.dim].to_vec()],
                        format!("u0{} fails at node {n}: {err}", j + 1),
                    )
                }
            }
        }
        let psi = legendre_psi_with(spec, &z, &rule);
        let bz = storage(spec, &z);
        match (psi, bz) {
            (Ok(psi), Ok(bz)) if psi.is_finite() => {
                psi_max = psi_max.max(psi);
                ub_max = ub_max.max(dot(&z, &bz).abs());
            }
            _ => {
                return CheckEntry::fail(
                    NAME,
                    vec![p[..spec.dim].to_vec()],
                    format!("Psi(u0) or u0.B(u0) not finite at node {n}"),
                )
            }
        }
    }
    CheckEntry::pass(NAME, Verdict::SampledPass)
        .with("max_psi_u0", psi_max)
        .with("max_u0_dot_b", ub_max)
}

/// `h = ∫₀^u K^{jj}(ξ) dξ` for one component; requires diagonal `K^{jj}(u_j)`.
pub fn kirchhoff_transform(spec: &ProblemSpec, j: usize, u: f64, quad_n: usize) -> Result<f64, ExprError> {
    let rule = GaussLegendre::new(quad_n);
    let mut z = vec![0.0; spec.m];
    let k = &spec.diffusion[j][j];
    rule.integrate(0.0, u, |xi| {
        z[j] = xi;
        k.eval(&Bindings::new(&z))
    })
}

/// Sampled Lipschitz constant plus a divergence test of local slopes along rays.
fn lipschitz(
    name: &str,
    f: &dyn Fn(&[f64]) -> Result<f64, ExprError>,
    m: usize,
    sb: &SampleBox,
    stream: u64,
) -> Result<f64, CheckEntry> {
    let mut rng = sb.rng(stream);
    let mut cl: f64 = 0.0;
    for _ in 0..sb.samples {
        let z1 = sb.point(&mut rng, m);
        let z2 = sb.point(&mut rng, m);
        let d = norm(&z1.iter().zip(&z2).map(|(a, b)| a - b).collect::<Vec<_>>());
        if d == 0.0 {
            continue;
        }
        let (a, b) = match (f(&z1), f(&z2)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) => return Err(eval_error_entry(name, &z1, e)),
            (_, Err(e)) => return Err(eval_error_entry(name, &z2, e)),
        };
        cl = cl.max((a - b).abs() / d);
    }
    for d in sb.directions(m, stream + 1) {
        let mut seq = Vec::new();
        for r in sb.ray_radii() {
            let z1: Vec<f64> = d.iter().map(|v| v * r).collect();
            let z2: Vec<f64> = d.iter().map(|v| v * (r + 1e-3 * r)).collect();
            match (f(&z1), f(&z2)) {
                (Ok(a), Ok(b)) => seq.push((a - b).abs() / (1e-3 * r)),
                _ => {
                    return Err(CheckEntry::fail(
                        name,
                        vec![z1],
                        "evaluation overflows along the ray".to_string(),
                    ))
                }
            }
        }
        if let Some(k) = diverges(&seq) {
            let r = sb.ray_radii().nth(k).unwrap();
            return Err(CheckEntry::fail(
                name,
                vec![d.iter().map(|v| v * r).collect()],
                format!("local slope {:e} grows without bound", seq[k]),
            ));
        }
    }
    Ok(cl)
}

/// Uniqueness hypotheses: diagonal `K`, `K^{jj}` depending on `u_j` only with
/// `c1 <= K^j <= c2`, and Lipschitz `K^j`, `e`, `F`, `g`.
pub fn check_uniqueness_structure(spec: &ProblemSpec, sb: &SampleBox) -> Vec<CheckEntry> {
    let m = spec.m;
    let mut out = Vec::new();

    const DIAG: &str = "U-diagonal-K";
    let mut diag = CheckEntry::pass(DIAG, Verdict::Pass);
    'outer: for j in 0..m {
        for i in 0..m {
            let k = &spec.diffusion[j][i];
            if i != j && !k.is_literal_zero() {
                let mut nonzero = None;
                for z in sb.points(m, 9) {
                    if k.eval(&Bindings::new(&z)).map_or(true, |v| v != 0.0) {
                        nonzero = Some(z);
                        break;
                    }
                }
                diag.verdict = Verdict::SampledPass;
                if let Some(z) = nonzero {
                    diag = CheckEntry::fail(DIAG, vec![z], format!("K{}{} is not identically zero", j + 1, i + 1));
                    break 'outer;
                }
            }
            if i == j {
                if let Some(v) = k.variables().into_iter().find(|v| *v != Var::U(j)) {
                    let mut z = vec![0.0; m];
                    z[j] = 1.0;
                    diag = CheckEntry::fail(DIAG, vec![z], format!("K{}{} depends on {v}", j + 1, j + 1));
                    break 'outer;
                }
            }
        }
    }
    let diagonal_ok = diag.passed();
    out.push(diag);
    if !diagonal_ok {
        return out;
    }

    const BOUNDS: &str = "U-K-bounds";
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    let mut bounds = None;
    for j in 0..m {
        let eval_k = |xi: f64| {
            let mut z = vec![0.0; m];
            z[j] = xi;
            spec.diffusion[j][j].eval(&Bindings::new(&z))
        };
        let mut rng = sb.rng(10 + j as u64);
        let mut xs: Vec<f64> = vec![0.0, -sb.radius, sb.radius];
        xs.extend((0..sb.samples).map(|_| rng.random_range(-sb.radius..=sb.radius)));
        for xi in xs {
            match eval_k(xi) {
                Ok(v) => {
                    c1 = c1.min(v);
                    c2 = c2.max(v);
                }
                Err(e) => {
                    let mut z = vec![0.0; m];
                    z[j] = xi;
                    bounds = Some(eval_error_entry(BOUNDS, &z, e));
                }
            }
        }
        for s in [1.0, -1.0] {
            let seq: Vec<f64> = sb.ray_radii().map(|r| eval_k(s * r).unwrap_or(f64::INFINITY)).collect();
            let bad = diverges(&seq).or_else(|| collapses(&seq)).or_else(|| seq.iter().position(|v| !v.is_finite()));
            if let Some(k) = bad {
                let mut z = vec![0.0; m];
                z[j] = s * sb.ray_radii().nth(k).unwrap();
                bounds = Some(CheckEntry::fail(
                    BOUNDS,
                    vec![z],
                    format!("K{0}{0} = {1:e} leaves every band [c1, c2] along the ray", j + 1, seq[k]),
                ));
            }
        }
        if !(c1 > 0.0) && bounds.is_none() {
            let mut z = vec![0.0; m];
            z[j] = 0.0;
            bounds = Some(CheckEntry::fail(BOUNDS, vec![z], format!("K{0}{0} reaches {c1:e} <= 0", j + 1)));
        }
    }
    out.push(bounds.unwrap_or_else(|| {
        CheckEntry::pass(BOUNDS, Verdict::SampledPass)
            .with("c1", c1)
            .with("c2", c2)
    }));

    const LIP: &str = "U-lipschitz";
    let mut cl: f64 = 0.0;
    let mut lip_fail = None;
    let mut rng = sb.rng(20);
    let (xy, t) = sample_xt(&mut rng, spec.dim, spec.solver.t_end);
    let mut funcs: Vec<Box<dyn Fn(&[f64]) -> Result<f64, ExprError> + '_>> = Vec::new();
    for j in 0..m {
        funcs.push(Box::new(move |z: &[f64]| {
            let mut w = vec![0.0; z.len()];
            w[j] = z[j];
            spec.diffusion[j][j].eval(&Bindings::new(&w))
        }));
        for e in &spec.drift[j] {
            funcs.push(Box::new(move |z: &[f64]| e.eval(&Bindings::new(z))));
        }
        let f = &spec.source[j];
        funcs.push(Box::new(move |z: &[f64]| f.eval(&Bindings::at(z, xy, t))));
        let g = &spec.boundary_flux[j];
        funcs.push(Box::new(move |z: &[f64]| g.eval(&Bindings::at(z, xy, t))));
    }
    for (k, f) in funcs.iter().enumerate() {
        match lipschitz(LIP, f.as_ref(), m, sb, 30 + 2 * k as u64) {
            Ok(c) => cl = cl.max(c),
            Err(entry) => {
                lip_fail = Some(entry);
                break;
            }
        }
    }
    out.push(lip_fail.unwrap_or_else(|| CheckEntry::pass(LIP, Verdict::SampledPass).with("c_lipschitz", cl)));

    if out.iter().all(CheckEntry::passed) {
        let mut entry = CheckEntry::pass("U-kirchhoff", Verdict::SampledPass);
        for j in 0..m {
            if let Ok(h) = kirchhoff_transform(spec, j, 1.0, spec.solver.quad_n) {
                entry = entry.with(&format!("h{}(1)", j + 1), h);
            }
        }
        out.push(entry);
    }
    out
}

/// Runs every check against `spec` on the mesh it describes.
pub fn validate(spec: &ProblemSpec) -> Result<ValidationReport, SpecError> {
    let mesh = spec.build_mesh()?;
    Ok(validate_on(spec, &mesh))
}

pub fn validate_on(spec: &ProblemSpec, mesh: &Mesh) -> ValidationReport {
    let sb = SampleBox::from_spec(spec);
    let mut entries = vec![
        check_monotone_gradient(spec, &sb),
        check_psi_coercive(spec, &sb),
        check_k_pd_bounded(spec, &sb),
    ];
    entries.extend(check_growth(spec, &sb));
    entries.push(a4_entry(spec));
    entries.push(check_initial(spec, mesh));
    if spec.uniqueness_mode {
        entries.extend(check_uniqueness_structure(spec, &sb));
    }
    ValidationReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(b: &str, k: &str, extra: &str) -> ProblemSpec {
        let text = format!(
            "[problem]\nm = 1\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\nB1 = {b}\nK11 = {k}\n{extra}\n[boundary]\ngamma1 = left\ngamma2 = right\n[solver]\nsamples = 200\n"
        );
        ProblemSpec::parse(&text).unwrap()
    }

    fn two(b1: &str, b2: &str, k: [&str; 4]) -> ProblemSpec {
        let text = format!(
            "[problem]\nm = 2\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\nB1 = {b1}\nB2 = {b2}\nK11 = {}\nK12 = {}\nK21 = {}\nK22 = {}\n[boundary]\ngamma1 = left, right\n[solver]\nsamples = 200\n",
            k[0], k[1], k[2], k[3]
        );
        ProblemSpec::parse(&text).unwrap()
    }

    #[test]
    fn monotone_gradient_examples() {
        let sb = SampleBox::from_spec(&scalar("u1", "1", ""));
        assert_eq!(check_monotone_gradient(&scalar("u1", "1", ""), &sb).verdict, Verdict::SampledPass);

        let bad = check_monotone_gradient(&scalar("-u1", "1", ""), &sb);
        assert_eq!(bad.verdict, Verdict::Fail);
        let w = bad.witness.unwrap();
        assert_eq!(w.points, vec![vec![1.0], vec![0.0]]);

        let coupled = two("u1 + u2", "u1 + 2*u2", ["1", "0", "0", "1"]);
        assert_eq!(check_monotone_gradient(&coupled, &sb).verdict, Verdict::SampledPass);
        let jac = storage_jacobian(&coupled, &[0.3, -0.7]).unwrap();
        for (got, want) in jac.iter().zip([1.0, 1.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-9);
        }

        // monotone but not a gradient: rotation plus identity
        let skew = two("u1 - u2", "u1 + u2", ["1", "0", "0", "1"]);
        let out = check_monotone_gradient(&skew, &sb);
        assert_eq!(out.verdict, Verdict::Fail);
        assert!(out.witness.unwrap().detail.contains("symmetric"));
    }

    #[test]
    fn legendre_psi_examples() {
        let id = scalar("u1", "1", "");
        assert!((legendre_psi(&id, &[2.0], 16).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(legendre_psi(&id, &[0.0], 16).unwrap(), 0.0);
        let cubic = scalar("u1^3", "1", "");
        assert!((legendre_psi(&cubic, &[1.0], 16).unwrap() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn ellipticity_examples() {
        let sb = SampleBox::from_spec(&scalar("u1", "1", ""));
        let unit = check_k_pd_bounded(&scalar("u1", "1", ""), &sb);
        assert_eq!(unit.verdict, Verdict::SampledPass);
        assert_eq!(unit.estimate("c_elliptic"), Some(1.0));

        let bad = check_k_pd_bounded(&two("u1", "u2", ["1", "3", "0", "1"]), &sb);
        assert_eq!(bad.verdict, Verdict::Fail);
        let w = bad.witness.unwrap();
        let xi = &w.points[1];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((xi[0].abs() - s).abs() < 1e-12 && (xi[0] + xi[1]).abs() < 1e-12);
        // (2 - 3)/2 for that direction
        let q = xi[0] * xi[0] + 3.0 * xi[0] * xi[1] + xi[1] * xi[1];
        assert!((q + 0.5).abs() < 1e-12);

        let decaying = check_k_pd_bounded(&scalar("u1", "1/(1+u1^2)", ""), &sb);
        assert_eq!(decaying.verdict, Verdict::SampledPass);
        assert!((decaying.estimate("c_elliptic").unwrap() - 1.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn a4_examples() {
        let r = check_a4(1.0, 1.0, 1.0, 2);
        assert!(r.holds);
        assert_eq!(r.clause, Some(A4Clause::SmallAlpha));
        let r = check_a4(3.0, 3.0, 1.5, 1);
        assert!(r.holds);
        assert_eq!(r.clause, Some(A4Clause::LargeAlpha));
        let r = check_a4(1.0, 2.0, 0.5, 2);
        assert!(!r.holds);
        assert!(r.reason.contains("exceeds"));
        // branch bounds
        assert_eq!(a4_branch(1, 3.0), 2.0);
        assert_eq!(a4_branch(2, 1.0), 1.0);
        assert!((a4_branch(3, 1.0) - (3.0 - 3f64.sqrt())).abs() < 1e-15);
        // the two readings differ once alpha exceeds (N + nu + 1)/N
        assert!(check_a4(10.0, 1.0, 4.2, 1).holds);
        assert!(!check_a4_nu_bound(10.0, 1.0, 12.5, 1).holds);
    }

    #[test]
    fn growth_examples() {
        let sb = SampleBox::from_spec(&scalar("u1", "1", ""));
        let lin = check_growth(&scalar("u1", "1", "F1 = u1"), &sb);
        assert!(lin[0].passed());
        assert!(lin[0].estimate("sup_ratio").unwrap() <= 1.0);
        let cubic = check_growth(&scalar("u1", "1", "F1 = u1^3"), &sb);
        assert_eq!(cubic[0].verdict, Verdict::Fail);
        assert!(cubic[0].witness.is_some());
        let tanh = check_growth(&scalar("u1", "1", "g1 = tanh(u1)"), &sb);
        assert!(tanh[1].passed());
        assert!(tanh[1].estimate("sup_ratio").unwrap() <= 1.0);
    }

    #[test]
    fn kirchhoff_matches_closed_form() {
        let spec = scalar("u1", "1 + 1/(1+u1^2)", "");
        for u in [-3.0, -0.5, 0.0, 0.25, 2.0] {
            let h = kirchhoff_transform(&spec, 0, u, 16).unwrap();
            assert!((h - (u + f64::atan(u))).abs() < 1e-6, "u={u} h={h}");
        }
    }

    #[test]
    fn uniqueness_structure_checks() {
        let sb = SampleBox::from_spec(&scalar("u1", "1", ""));
        let good = check_uniqueness_structure(&two("u1", "u2", ["2 - 1/(1+u1^2)", "0", "0", "1"]), &sb);
        assert!(good.iter().all(CheckEntry::passed), "{good:?}");
        let coupled = check_uniqueness_structure(&two("u1", "u2", ["1", "0.5", "0", "1"]), &sb);
        assert_eq!(coupled[0].verdict, Verdict::Fail);
        let cross = check_uniqueness_structure(&two("u1", "u2", ["1 + 0*u2", "0", "0", "1"]), &sb);
        assert_eq!(cross[0].verdict, Verdict::Fail);
        let decay = check_uniqueness_structure(&two("u1", "u2", ["1/(1+u1^2)", "0", "0", "1"]), &sb);
        assert_eq!(decay[1].verdict, Verdict::Fail);
    }

    #[test]
    fn divergence_helper() {
        assert_eq!(diverges(&[1.0, 2.0, 4.0, 8.0, 16.0, 32.0]), Some(5));
        assert_eq!(diverges(&[1.0, 2.0, 4.0, 4.0, 8.0, 16.0]), None);
        assert_eq!(diverges(&[1.0; 8]), None);
    }
}
