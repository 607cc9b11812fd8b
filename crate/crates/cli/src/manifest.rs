//! Run manifests: everything needed to repeat a run without the original
//! problem file or command line.

use std::path::Path;

use dnpsolve::spec::{DomainSpec, SolverSettings};
use dnpsolve::ProblemSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A problem as it was solved: source text plus the resolved settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub name: String,
    pub source: String,
    /// Directory that relative mesh paths resolve against.
    pub base_dir: Option<String>,
    pub domain: DomainSpec,
    /// Settings after command-line overrides.
    pub settings: SolverSettings,
}

impl ProblemRecord {
    pub fn of(spec: &ProblemSpec) -> ProblemRecord {
        ProblemRecord {
            name: spec.name.clone(),
            source: spec.source_text.clone(),
            base_dir: spec.base_dir.clone(),
            domain: spec.domain.clone(),
            settings: spec.solver.clone(),
        }
    }

    pub fn resolve(&self) -> Result<ProblemSpec, CliError> {
        let mut spec = ProblemSpec::parse(&self.source).map_err(|e| CliError::Usage(format!("manifest problem: {e}")))?;
        spec.base_dir = self.base_dir.clone();
        spec.domain = self.domain.clone();
        spec.solver = self.settings.clone();
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunCommand {
    Solve {
        problem: ProblemRecord,
        /// `None` when the problem has no constrained boundary dofs.
        eps: Option<f64>,
    },
    Sweep {
        problem: ProblemRecord,
        eps: Vec<f64>,
        warm_start: bool,
    },
    OracleCompare {
        problem: ProblemRecord,
        eps: Vec<f64>,
    },
    Convergence {
        family: String,
        study: String,
        levels: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub output_dir: String,
    pub command: RunCommand,
}

impl RunManifest {
    pub fn new(command: RunCommand, seed: u64, out: &Path) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            output_dir: out.display().to_string(),
            command,
        }
    }

    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
