//! Problem files shipped with the library.

use crate::spec::{ProblemSpec, SpecError};

/// `(name, file contents)` of every bundled problem.
pub const PROBLEMS: &[(&str, &str)] = &[
    ("obstacle1d", include_str!("../problems/obstacle1d.prb")),
    ("heat", include_str!("../problems/heat.prb")),
    ("cubic_decay", include_str!("../problems/cubic_decay.prb")),
    ("twocomp2d", include_str!("../problems/twocomp2d.prb")),
    ("bad_nonmonotone", include_str!("../problems/bad_nonmonotone.prb")),
];

/// Problems expected to pass validation.
pub const ADMISSIBLE: &[&str] = &["obstacle1d", "heat", "cubic_decay", "twocomp2d"];

pub fn source(name: &str) -> Option<&'static str> {
    PROBLEMS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled problem; panics on unknown names.
pub fn load(name: &str) -> Result<ProblemSpec, SpecError> {
    let text = source(name).unwrap_or_else(|| panic!("no bundled problem named `{name}`"));
    ProblemSpec::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_problem_parses_and_meshes() {
        for (name, _) in PROBLEMS {
            let spec = load(name).unwrap();
            assert_eq!(&spec.name, name);
            spec.build_mesh().unwrap();
        }
    }
}
