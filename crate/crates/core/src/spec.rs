//! Problem definitions: the sectioned problem file and the parsed
//! [`ProblemSpec`].
//!
//! ```text
//! [problem]       m, dim, nu, p, alpha, uniqueness, name
//! [coefficients]  B1..Bm, K11..Kmm, e1x..emy, F1..Fm, g1..gm
//! [initial]       u01..u0m
//! [boundary]      gamma1, gamma2, gamma3 (side/label lists), constraint, dirichlet1..m
//! [domain]        mesh = interval | square | file, n, nx, ny, path
//! [solver]        dt, t_end, eps, eps0, eps_stages, newton_rtol, newton_atol,
//!                 max_newton, seed, samples, box, quad_n
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, Bindings, Expr, ExprError, Var};
use crate::mesh::{parse_mesh_file, unit_interval_mesh, unit_square_mesh, BoundaryTag, Mesh, MeshError, Side};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}`: {source}")]
    Expr {
        key: String,
        #[source]
        source: ExprError,
    },
    #[error("missing required entry `{0}`")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// ν, p, α: growth of Ψ, of the source `F` and of the boundary flux `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthExponents {
    pub nu: f64,
    pub p: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DomainSpec {
    Interval { n: usize },
    Square { nx: usize, ny: usize },
    File { path: String },
}

/// Solver and sampling settings a problem file may override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Penalty parameter for single solves.
    pub eps: f64,
    /// First stage of the penalty sweep.
    pub eps0: f64,
    pub eps_stages: usize,
    pub newton_rtol: f64,
    pub newton_atol: f64,
    pub max_newton: usize,
    pub seed: u64,
    pub samples: usize,
    /// Half-width of the sampling box `|z_i| <= box`.
    pub sample_box: f64,
    pub quad_n: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            dt: 0.01,
            t_end: 0.5,
            eps: 1e-6,
            eps0: 1e-2,
            eps_stages: 5,
            newton_rtol: 1e-10,
            newton_atol: 1e-12,
            max_newton: 25,
            seed: 42,
            samples: 1000,
            sample_box: 10.0,
            quad_n: 16,
        }
    }
}

/// Side or label lists selecting each boundary part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySelectors {
    pub gamma1: Vec<String>,
    pub gamma2: Vec<String>,
    pub gamma3: Vec<String>,
}

impl BoundarySelectors {
    pub fn resolve(&self, label: &str) -> Option<BoundaryTag> {
        let hit = |list: &[String]| list.iter().any(|s| s.eq_ignore_ascii_case(label));
        if hit(&self.gamma1) {
            Some(BoundaryTag::Dirichlet)
        } else if hit(&self.gamma2) {
            Some(BoundaryTag::Neumann)
        } else if hit(&self.gamma3) {
            Some(BoundaryTag::Unilateral)
        } else {
            BoundaryTag::from_name(label)
        }
    }
}

/// A parsed problem: coefficient functions, exponents, boundary partition,
/// constraint mask and solver settings. Immutable once built.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub m: usize,
    pub dim: usize,
    pub exponents: GrowthExponents,
    /// `B(u)`, the gradient of the convex potential Φ.
    pub storage: Vec<Expr>,
    /// `diffusion[j][i]` is `K^{ji}(u)`.
    pub diffusion: Vec<Vec<Expr>>,
    /// `drift[j][k]` is `e^j_k(u)`.
    pub drift: Vec<Vec<Expr>>,
    /// `F(x, t, u)`.
    pub source: Vec<Expr>,
    /// `g(x, t, u)` on Γ₂.
    pub boundary_flux: Vec<Expr>,
    /// Whether any `g` entry was given explicitly.
    pub has_boundary_flux: bool,
    /// `u₀(x)`.
    pub initial: Vec<Expr>,
    /// Values on Γ₁; zero when absent.
    pub dirichlet: Option<Vec<Expr>>,
    pub boundary: BoundarySelectors,
    /// Which components carry the sign constraint on Γ₃.
    pub constraint_mask: Vec<bool>,
    /// Requires diagonal `K` with `K^{jj}` depending on `u_j` only.
    pub uniqueness_mode: bool,
    pub domain: DomainSpec,
    pub solver: SolverSettings,
    /// Original problem text, kept for run manifests.
    pub source_text: String,
    /// Directory used to resolve relative mesh paths.
    pub base_dir: Option<String>,
}

fn spatial_vars(dim: usize) -> Vec<Var> {
    if dim == 1 {
        vec![Var::X]
    } else {
        vec![Var::X, Var::Y]
    }
}

impl ProblemSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<ProblemSpec, SpecError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = ProblemSpec::parse(&text)?;
        spec.base_dir = path.parent().map(|p| p.display().to_string());
        Ok(spec)
    }

    /// Parses problem-file text.
    pub fn parse(text: &str) -> Result<ProblemSpec, SpecError> {
        let sections = split_sections(text)?;
        let mut take = Entries { sections };

        let m: usize = take.number("problem", "m")?;
        let dim: usize = take.number("problem", "dim")?;
        if m == 0 || m > 9 {
            return Err(SpecError::Invalid(format!("m must be in 1..=9, got {m}")));
        }
        if dim != 1 && dim != 2 {
            return Err(SpecError::Invalid(format!("dim must be 1 or 2, got {dim}")));
        }
        let exponents = GrowthExponents {
            nu: take.number("problem", "nu")?,
            p: take.number("problem", "p")?,
            alpha: take.number("problem", "alpha")?,
        };
        if !(exponents.nu > 0.0) || !(exponents.p >= 0.0) || !(exponents.alpha > 0.0) {
            return Err(SpecError::Invalid(
                "exponents need nu > 0, p >= 0, alpha > 0".into(),
            ));
        }
        let uniqueness_mode = take.flag("problem", "uniqueness")?.unwrap_or(false);
        let name = take.raw("problem", "name").unwrap_or_else(|| "problem".into());

        let us: Vec<Var> = (0..m).map(Var::U).collect();
        let mut xtu = spatial_vars(dim);
        xtu.push(Var::T);
        let xt = xtu.clone();
        xtu.extend(&us);
        let xs = spatial_vars(dim);

        let mut storage = Vec::with_capacity(m);
        let mut diffusion = vec![Vec::with_capacity(m); m];
        let mut drift = vec![Vec::with_capacity(dim); m];
        let mut source = Vec::with_capacity(m);
        let mut boundary_flux = Vec::with_capacity(m);
        let mut has_boundary_flux = false;
        let axes = ["x", "y"];
        for j in 1..=m {
            storage.push(take.expr_required("coefficients", &format!("B{j}"), &us)?);
            for i in 1..=m {
                let key = format!("K{j}{i}");
                let k = if i == j {
                    take.expr_required("coefficients", &key, &us)?
                } else {
                    take.expr_or_zero("coefficients", &key, &us)?
                };
                diffusion[j - 1].push(k);
            }
            for axis in axes.iter().take(dim) {
                drift[j - 1].push(take.expr_or_zero("coefficients", &format!("e{j}{axis}"), &us)?);
            }
            source.push(take.expr_or_zero("coefficients", &format!("F{j}"), &xtu)?);
            let gkey = format!("g{j}");
            if let Some(g) = take.expr("coefficients", &gkey, &xtu)? {
                has_boundary_flux |= !g.is_literal_zero();
                boundary_flux.push(g);
            } else {
                boundary_flux.push(Expr::constant(0.0));
            }
        }
        if dim == 1 {
            if let Some(key) = take.first_key_matching("coefficients", |k| k.ends_with('y')) {
                return Err(SpecError::Invalid(format!(
                    "`{key}`: y components are not allowed in one dimension"
                )));
            }
        }

        let mut initial = Vec::with_capacity(m);
        for j in 1..=m {
            initial.push(take.expr_or_zero("initial", &format!("u0{j}"), &xs)?);
        }

        let boundary = BoundarySelectors {
            gamma1: take.list("boundary", "gamma1"),
            gamma2: take.list("boundary", "gamma2"),
            gamma3: take.list("boundary", "gamma3"),
        };
        let constraint_mask = match take.raw("boundary", "constraint") {
            None => vec![!boundary.gamma3.is_empty(); m],
            Some(v) => parse_mask(&v, m)?,
        };
        let mut dirichlet_any = false;
        let mut dirichlet = Vec::with_capacity(m);
        for j in 1..=m {
            match take.expr("boundary", &format!("dirichlet{j}"), &xt)? {
                Some(e) => {
                    dirichlet_any = true;
                    dirichlet.push(e);
                }
                None => dirichlet.push(Expr::constant(0.0)),
            }
        }
        let dirichlet = dirichlet_any.then_some(dirichlet);

        let kind = take.raw("domain", "mesh").unwrap_or_else(|| {
            if dim == 1 { "interval" } else { "square" }.to_string()
        });
        let domain = match kind.as_str() {
            "interval" => DomainSpec::Interval {
                n: take.number_or("domain", "n", 32)?,
            },
            "square" => DomainSpec::Square {
                nx: take.number_or("domain", "nx", 8)?,
                ny: take.number_or("domain", "ny", 8)?,
            },
            "file" => DomainSpec::File {
                path: take
                    .raw("domain", "path")
                    .ok_or_else(|| SpecError::Missing("domain.path".into()))?,
            },
            other => return Err(SpecError::Invalid(format!("unknown mesh kind `{other}`"))),
        };

        let d = SolverSettings::default();
        let solver = SolverSettings {
            dt: take.number_or("solver", "dt", d.dt)?,
            t_end: take.number_or("solver", "t_end", d.t_end)?,
            eps: take.number_or("solver", "eps", d.eps)?,
            eps0: take.number_or("solver", "eps0", d.eps0)?,
            eps_stages: take.number_or("solver", "eps_stages", d.eps_stages)?,
            newton_rtol: take.number_or("solver", "newton_rtol", d.newton_rtol)?,
            newton_atol: take.number_or("solver", "newton_atol", d.newton_atol)?,
            max_newton: take.number_or("solver", "max_newton", d.max_newton)?,
            seed: take.number_or("solver", "seed", d.seed)?,
            samples: take.number_or("solver", "samples", d.samples)?,
            sample_box: take.number_or("solver", "box", d.sample_box)?,
            quad_n: take.number_or("solver", "quad_n", d.quad_n)?,
        };
        if !(solver.dt > 0.0) || !(solver.t_end > 0.0) || !(solver.eps > 0.0) {
            return Err(SpecError::Invalid("dt, t_end and eps must be positive".into()));
        }

        take.finish()?;
        Ok(ProblemSpec {
            name,
            m,
            dim,
            exponents,
            storage,
            diffusion,
            drift,
            source,
            boundary_flux,
            has_boundary_flux,
            initial,
            dirichlet,
            boundary,
            constraint_mask,
            uniqueness_mode,
            domain,
            solver,
            source_text: text.to_string(),
            base_dir: None,
        })
    }

    /// Builds the mesh described in `[domain]` and tags its boundary.
    pub fn build_mesh(&self) -> Result<Mesh, SpecError> {
        let side_tag = |side: &str| -> Result<BoundaryTag, SpecError> {
            self.boundary.resolve(side).ok_or_else(|| {
                SpecError::Invalid(format!("boundary side `{side}` is not assigned to gamma1/2/3"))
            })
        };
        let mesh = match &self.domain {
            DomainSpec::Interval { n } => {
                if self.dim != 1 {
                    return Err(SpecError::Invalid("interval mesh needs dim = 1".into()));
                }
                unit_interval_mesh(*n, (side_tag("left")?, side_tag("right")?))?
            }
            DomainSpec::Square { nx, ny } => {
                if self.dim != 2 {
                    return Err(SpecError::Invalid("square mesh needs dim = 2".into()));
                }
                let mut tags = std::collections::HashMap::new();
                for side in ["left", "right", "bottom", "top"] {
                    tags.insert(Side::from_name(side).unwrap(), side_tag(side)?);
                }
                unit_square_mesh(*nx, *ny, |s| tags[&s])?
            }
            DomainSpec::File { path } => {
                let full = match &self.base_dir {
                    Some(dir) if Path::new(path).is_relative() => Path::new(dir).join(path),
                    _ => Path::new(path).to_path_buf(),
                };
                let text = std::fs::read_to_string(&full).map_err(|source| SpecError::Io {
                    path: full.display().to_string(),
                    source,
                })?;
                parse_mesh_file(&text, self.dim, |l| self.boundary.resolve(l))?
            }
        };
        self.check_mesh(&mesh)?;
        Ok(mesh)
    }

    /// Rejects meshes lacking a boundary part the problem needs.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<(), SpecError> {
        if mesh.dim() != self.dim {
            return Err(SpecError::Invalid(format!(
                "mesh dimension {} does not match problem dimension {}",
                mesh.dim(),
                self.dim
            )));
        }
        if self.has_boundary_flux && mesh.boundary_measure(BoundaryTag::Neumann) <= 0.0 {
            return Err(SpecError::Invalid(
                "g is given but the mesh has no gamma2 facets".into(),
            ));
        }
        if self.constraint_mask.iter().any(|&c| c) && mesh.boundary_measure(BoundaryTag::Unilateral) <= 0.0 {
            return Err(SpecError::Invalid(
                "constrained components need gamma3 facets".into(),
            ));
        }
        Ok(())
    }

    /// `B(z)`.
    pub fn eval_storage(&self, z: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let b = Bindings::new(z);
        for (o, e) in out.iter_mut().zip(&self.storage) {
            *o = e.eval(&b)?;
        }
        Ok(())
    }

    /// Dirichlet value of component `j` at `point`, time `t`.
    pub fn dirichlet_value(&self, j: usize, point: [f64; 2], t: f64) -> Result<f64, ExprError> {
        match &self.dirichlet {
            Some(d) => d[j].eval(&Bindings::at(&[], point, t)),
            None => Ok(0.0),
        }
    }

    pub fn constrained(&self) -> bool {
        self.constraint_mask.iter().any(|&c| c)
    }

    /// True if `F`, `g`, `e` and the Dirichlet data are all literal zeros.
    pub fn is_dissipative(&self) -> bool {
        self.source.iter().all(Expr::is_literal_zero)
            && self.boundary_flux.iter().all(Expr::is_literal_zero)
            && self.drift.iter().flatten().all(Expr::is_literal_zero)
            && self
                .dirichlet
                .as_ref()
                .is_none_or(|d| d.iter().all(Expr::is_literal_zero))
    }
}

fn parse_mask(value: &str, m: usize) -> Result<Vec<bool>, SpecError> {
    match value.trim() {
        "all" => return Ok(vec![true; m]),
        "none" => return Ok(vec![false; m]),
        _ => {}
    }
    let mut mask = vec![false; m];
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: usize = part
            .trim_start_matches('u')
            .parse()
            .map_err(|_| SpecError::Invalid(format!("bad constraint component `{part}`")))?;
        if k == 0 || k > m {
            return Err(SpecError::Invalid(format!("constraint component {k} out of range 1..={m}")));
        }
        mask[k - 1] = true;
    }
    Ok(mask)
}

type Section = BTreeMap<String, (usize, String)>;

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, SpecError> {
    const KNOWN: [&str; 6] = ["problem", "coefficients", "initial", "boundary", "domain", "solver"];
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            if !KNOWN.contains(&name.as_str()) {
                return Err(SpecError::Syntax {
                    line,
                    message: format!("unknown section [{name}]"),
                });
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some(section) = current.as_ref() else {
            return Err(SpecError::Syntax {
                line,
                message: "entry before any [section] header".into(),
            });
        };
        let Some((key, value)) = content.split_once('=') else {
            return Err(SpecError::Syntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        };
        let key = key.trim().to_string();
        let entry = sections.get_mut(section).expect("section registered");
        if entry.insert(key.clone(), (line, value.trim().to_string())).is_some() {
            return Err(SpecError::Syntax {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(sections)
}

/// Consumes entries so unknown leftovers can be reported.
struct Entries {
    sections: BTreeMap<String, Section>,
}

impl Entries {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.sections.get_mut(section)?.remove(key)
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<String> {
        self.take(section, key).map(|(_, v)| v)
    }

    fn number<T: std::str::FromStr>(&mut self, section: &str, key: &str) -> Result<T, SpecError> {
        let (line, v) = self
            .take(section, key)
            .ok_or_else(|| SpecError::Missing(format!("{section}.{key}")))?;
        v.parse().map_err(|_| SpecError::Syntax {
            line,
            message: format!("`{key}`: cannot parse `{v}` as a number"),
        })
    }

    fn number_or<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T, SpecError> {
        match self.sections.get(section).and_then(|s| s.get(key)) {
            Some(_) => self.number(section, key),
            None => Ok(default),
        }
    }

    fn flag(&mut self, section: &str, key: &str) -> Result<Option<bool>, SpecError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(Some(true)),
                "false" | "no" | "0" => Ok(Some(false)),
                _ => Err(SpecError::Syntax {
                    line,
                    message: format!("`{key}`: expected true/false, found `{v}`"),
                }),
            },
        }
    }

    fn list(&mut self, section: &str, key: &str) -> Vec<String> {
        self.raw(section, key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn expr(&mut self, section: &str, key: &str, allowed: &[Var]) -> Result<Option<Expr>, SpecError> {
        let Some((_, v)) = self.take(section, key) else {
            return Ok(None);
        };
        let wrap = |source| SpecError::Expr {
            key: key.to_string(),
            source,
        };
        let e = parse_expr(&v).map_err(wrap)?;
        e.check_vars(allowed).map_err(wrap)?;
        Ok(Some(e))
    }

    fn expr_required(&mut self, section: &str, key: &str, allowed: &[Var]) -> Result<Expr, SpecError> {
        self.expr(section, key, allowed)?
            .ok_or_else(|| SpecError::Missing(format!("{section}.{key}")))
    }

    fn expr_or_zero(&mut self, section: &str, key: &str, allowed: &[Var]) -> Result<Expr, SpecError> {
        Ok(self
            .expr(section, key, allowed)?
            .unwrap_or_else(|| Expr::constant(0.0)))
    }

    fn first_key_matching(&self, section: &str, pred: impl Fn(&str) -> bool) -> Option<String> {
        self.sections
            .get(section)?
            .keys()
            .find(|k| pred(k))
            .cloned()
    }

    fn finish(self) -> Result<(), SpecError> {
        for (name, entries) in self.sections {
            if let Some((key, (line, _))) = entries.into_iter().min_by_key(|(_, (l, _))| *l) {
                return Err(SpecError::Syntax {
                    line,
                    message: format!("unknown key `{key}` in [{name}]"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[problem]
m = 1
dim = 1
nu = 1
p = 1
alpha = 1
[coefficients]
B1 = u1
K11 = 1
[boundary]
gamma1 = left, right
";

    #[test]
    fn parses_minimal_problem_with_defaults() {
        let spec = ProblemSpec::parse(MINIMAL).unwrap();
        assert_eq!((spec.m, spec.dim), (1, 1));
        assert!(spec.source[0].is_literal_zero());
        assert!(spec.initial[0].is_literal_zero());
        assert_eq!(spec.constraint_mask, vec![false]);
        assert_eq!(spec.domain, DomainSpec::Interval { n: 32 });
        assert!(spec.is_dissipative());
        let mesh = spec.build_mesh().unwrap();
        assert_eq!(mesh.num_nodes(), 33);
        assert_eq!(mesh.boundary_measure(BoundaryTag::Dirichlet), 2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let with = |extra: &str| ProblemSpec::parse(&format!("{MINIMAL}{extra}"));
        assert!(matches!(
            with("[coefficients]\nF1 = u1 + * 2"),
            Err(SpecError::Syntax { .. }) | Err(SpecError::Expr { .. })
        ));
        assert!(matches!(with("[initial]\nu01 = y"), Err(SpecError::Expr { .. })));
        assert!(matches!(with("[initial]\nu01 = u1"), Err(SpecError::Expr { .. })));
        assert!(matches!(with("[solver]\nwhat = 3"), Err(SpecError::Syntax { .. })));
        assert!(matches!(with("[solver]\ndt = -1"), Err(SpecError::Invalid(_))));
        assert!(matches!(with("[mystery]"), Err(SpecError::Syntax { .. })));
        assert!(matches!(
            ProblemSpec::parse(&MINIMAL.replace("B1 = u1", "")),
            Err(SpecError::Missing(_))
        ));
    }

    #[test]
    fn loader_rejects_flux_without_gamma2() {
        let text = MINIMAL.replace("K11 = 1", "K11 = 1\ng1 = 1");
        let spec = ProblemSpec::parse(&text).unwrap();
        assert!(matches!(spec.build_mesh(), Err(SpecError::Invalid(_))));
    }

    #[test]
    fn constraint_mask_forms() {
        assert_eq!(parse_mask("all", 2).unwrap(), vec![true, true]);
        assert_eq!(parse_mask("2", 2).unwrap(), vec![false, true]);
        assert_eq!(parse_mask("u1, u2", 2).unwrap(), vec![true, true]);
        assert!(parse_mask("3", 2).is_err());
    }
}
