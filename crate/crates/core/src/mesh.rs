//! Interval and triangle meshes with tagged boundary facets.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least one subdivision")]
    NoSubdivisions,
    #[error("unsupported spatial dimension {0}")]
    Dimension(usize),
    #[error("element {element} references node {node}, but the mesh has {count} nodes")]
    NodeOutOfRange {
        element: usize,
        node: usize,
        count: usize,
    },
    #[error("element {0} has non-positive volume {1}")]
    Degenerate(usize, f64),
    #[error("boundary facet {0} belongs to {1} elements")]
    FacetOwnership(usize, usize),
    #[error("mesh file line {line}: {message}")]
    File { line: usize, message: String },
}

/// Boundary part a facet belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Γ₁: prescribed values.
    Dirichlet,
    /// Γ₂: prescribed flux `g`.
    Neumann,
    /// Γ₃: sign constraint with complementary flux.
    Unilateral,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 3] = [
        BoundaryTag::Dirichlet,
        BoundaryTag::Neumann,
        BoundaryTag::Unilateral,
    ];

    /// Accepts `gamma1|dirichlet`, `gamma2|neumann`, `gamma3|unilateral`.
    pub fn from_name(name: &str) -> Option<BoundaryTag> {
        match name.to_ascii_lowercase().as_str() {
            "gamma1" | "dirichlet" => Some(BoundaryTag::Dirichlet),
            "gamma2" | "neumann" => Some(BoundaryTag::Neumann),
            "gamma3" | "unilateral" => Some(BoundaryTag::Unilateral),
            _ => None,
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryTag::Dirichlet => "gamma1",
            BoundaryTag::Neumann => "gamma2",
            BoundaryTag::Unilateral => "gamma3",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Facet {
    /// Interval meshes use only `nodes[0]`.
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// Sides of the structured generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub fn from_name(name: &str) -> Option<Side> {
        match name.to_ascii_lowercase().as_str() {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "bottom" => Some(Side::Bottom),
            "top" => Some(Side::Top),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<[f64; 2]>,
    /// Interval meshes use the first two entries.
    cells: Vec<[usize; 3]>,
    facets: Vec<Facet>,
}

impl Mesh {
    /// Builds a mesh and checks its structural invariants.
    pub fn new(
        dim: usize,
        nodes: Vec<[f64; 2]>,
        cells: Vec<[usize; 3]>,
        facets: Vec<Facet>,
    ) -> Result<Mesh, MeshError> {
        if dim != 1 && dim != 2 {
            return Err(MeshError::Dimension(dim));
        }
        let mesh = Mesh {
            dim,
            nodes,
            cells,
            facets,
        };
        mesh.check()?;
        Ok(mesh)
    }

    fn check(&self) -> Result<(), MeshError> {
        let count = self.nodes.len();
        for e in 0..self.cells.len() {
            for &node in self.element(e) {
                if node >= count {
                    return Err(MeshError::NodeOutOfRange {
                        element: e,
                        node,
                        count,
                    });
                }
            }
            let vol = self.signed_volume(e);
            if !(vol > 0.0) {
                return Err(MeshError::Degenerate(e, vol));
            }
        }
        for f in 0..self.facets.len() {
            let nodes = self.facet_nodes(f);
            if let Some(&node) = nodes.iter().find(|&&n| n >= count) {
                return Err(MeshError::NodeOutOfRange {
                    element: f,
                    node,
                    count,
                });
            }
            let owners = self
                .cells
                .iter()
                .enumerate()
                .filter(|(e, _)| nodes.iter().all(|n| self.element(*e).contains(n)))
                .count();
            if owners != 1 {
                return Err(MeshError::FacetOwnership(f, owners));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len()
    }

    /// Node indices of element `e` (2 for intervals, 3 for triangles).
    pub fn element(&self, e: usize) -> &[usize] {
        &self.cells[e][..self.dim + 1]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn facet_nodes(&self, f: usize) -> &[usize] {
        &self.facets[f].nodes[..self.dim]
    }

    fn signed_volume(&self, e: usize) -> f64 {
        let n = self.element(e);
        let p = |i: usize| self.nodes[n[i]];
        match self.dim {
            1 => p(1)[0] - p(0)[0],
            _ => {
                let (a, b, c) = (p(0), p(1), p(2));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            }
        }
    }

    /// Length (1D) or area (2D) of element `e`.
    pub fn volume(&self, e: usize) -> f64 {
        self.signed_volume(e)
    }

    /// Facet length in 2D; every endpoint facet in 1D has measure 1.
    pub fn facet_measure(&self, f: usize) -> f64 {
        match self.dim {
            1 => 1.0,
            _ => {
                let [a, b] = self.facets[f].nodes;
                let (pa, pb) = (self.nodes[a], self.nodes[b]);
                (pb[0] - pa[0]).hypot(pb[1] - pa[1])
            }
        }
    }

    /// Total measure of the facets carrying `tag`; zero when none do.
    pub fn boundary_measure(&self, tag: BoundaryTag) -> f64 {
        (0..self.facets.len())
            .filter(|&f| self.facets[f].tag == tag)
            .map(|f| self.facet_measure(f))
            .sum()
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.facets.iter().any(|f| f.tag == tag)
    }

    /// Nodes lying on at least one facet with `tag`, ascending.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.facets.len())
            .filter(|&f| self.facets[f].tag == tag)
            .flat_map(|f| self.facet_nodes(f).to_vec())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.cells.len()).map(|e| self.volume(e)).sum()
    }
}

/// Uniform mesh of `(0, 1)` with `n` elements.
pub fn unit_interval_mesh(n: usize, tags: (BoundaryTag, BoundaryTag)) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::NoSubdivisions);
    }
    let nodes = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
    let cells = (0..n).map(|i| [i, i + 1, 0]).collect();
    let facets = vec![
        Facet {
            nodes: [0, 0],
            tag: tags.0,
        },
        Facet {
            nodes: [n, 0],
            tag: tags.1,
        },
    ];
    Mesh::new(1, nodes, cells, facets)
}

/// Diagonal triangulation of `[0, 1]²`: each cell is split along its
/// lower-left to upper-right diagonal. Nodes are numbered row by row.
pub fn unit_square_mesh(
    nx: usize,
    ny: usize,
    tag_of: impl Fn(Side) -> BoundaryTag,
) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::NoSubdivisions);
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([i as f64 / nx as f64, j as f64 / ny as f64]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
    }
    let mut facets = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        facets.push(Facet {
            nodes: [id(i, 0), id(i + 1, 0)],
            tag: tag_of(Side::Bottom),
        });
    }
    for j in 0..ny {
        facets.push(Facet {
            nodes: [id(nx, j), id(nx, j + 1)],
            tag: tag_of(Side::Right),
        });
    }
    for i in 0..nx {
        facets.push(Facet {
            nodes: [id(i + 1, ny), id(i, ny)],
            tag: tag_of(Side::Top),
        });
    }
    for j in 0..ny {
        facets.push(Facet {
            nodes: [id(0, j + 1), id(0, j)],
            tag: tag_of(Side::Left),
        });
    }
    Mesh::new(2, nodes, cells, facets)
}

#[derive(PartialEq)]
enum Section {
    None,
    Nodes,
    Elements,
    Facets,
}

/// Reads the text mesh format:
///
/// ```text
/// NODES
/// 0 0.0 0.0
/// ...
/// ELEMENTS
/// 0 1 2
/// FACETS
/// 0 1 left
/// ```
///
/// Facet labels are mapped through `resolve`; `#` starts a comment.
pub fn parse_mesh_file(
    text: &str,
    dim: usize,
    resolve: impl Fn(&str) -> Option<BoundaryTag>,
) -> Result<Mesh, MeshError> {
    if dim != 1 && dim != 2 {
        return Err(MeshError::Dimension(dim));
    }
    let mut section = Section::None;
    let mut indexed: HashMap<usize, [f64; 2]> = HashMap::new();
    let mut cells = Vec::new();
    let mut facets = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let err = |message: String| MeshError::File { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match content.to_ascii_uppercase().as_str() {
            "NODES" => {
                section = Section::Nodes;
                continue;
            }
            "ELEMENTS" => {
                section = Section::Elements;
                continue;
            }
            "FACETS" => {
                section = Section::Facets;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let index = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| err(format!("expected a node index, found `{s}`")))
        };
        match section {
            Section::None => return Err(err("data before any section header".into())),
            Section::Nodes => {
                if fields.len() != dim + 1 {
                    return Err(err(format!("node needs an index and {dim} coordinate(s)")));
                }
                let i = index(fields[0])?;
                let mut p = [0.0; 2];
                for d in 0..dim {
                    p[d] = fields[1 + d]
                        .parse()
                        .map_err(|_| err(format!("bad coordinate `{}`", fields[1 + d])))?;
                }
                if indexed.insert(i, p).is_some() {
                    return Err(err(format!("duplicate node {i}")));
                }
            }
            Section::Elements => {
                if fields.len() != dim + 1 {
                    return Err(err(format!("element needs {} node indices", dim + 1)));
                }
                let mut cell = [0; 3];
                for (k, f) in fields.iter().enumerate() {
                    cell[k] = index(f)?;
                }
                cells.push(cell);
            }
            Section::Facets => {
                if fields.len() != dim + 1 {
                    return Err(err(format!("facet needs {dim} node indices and a tag")));
                }
                let mut nodes = [0; 2];
                for k in 0..dim {
                    nodes[k] = index(fields[k])?;
                }
                let label = fields[dim];
                let tag = resolve(label)
                    .ok_or_else(|| err(format!("facet label `{label}` maps to no boundary part")))?;
                facets.push(Facet { nodes, tag });
            }
        }
    }
    let count = indexed.len();
    let mut nodes = vec![[0.0; 2]; count];
    for (i, p) in indexed {
        if i >= count {
            return Err(MeshError::File {
                line: 0,
                message: format!("node indices must be 0..{count}, found {i}"),
            });
        }
        nodes[i] = p;
    }
    Mesh::new(dim, nodes, cells, facets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use BoundaryTag::*;

    #[test]
    fn interval_mesh() {
        let m = unit_interval_mesh(4, (Dirichlet, Unilateral)).unwrap();
        assert_eq!(m.num_nodes(), 5);
        let els: Vec<Vec<usize>> = (0..4).map(|e| m.element(e).to_vec()).collect();
        assert_eq!(els, vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 4]]);
        assert_eq!(m.facets()[0].tag, Dirichlet);
        assert_eq!(m.facets()[1].tag, Unilateral);
        assert_eq!(m.facet_nodes(1), &[4]);

        let one = unit_interval_mesh(1, (Dirichlet, Dirichlet)).unwrap();
        assert_eq!((one.num_nodes(), one.num_elements()), (2, 1));
        assert_eq!(
            unit_interval_mesh(0, (Dirichlet, Dirichlet)).unwrap_err(),
            MeshError::NoSubdivisions
        );
    }

    #[test]
    fn square_mesh_counts_and_areas() {
        let m = unit_square_mesh(1, 1, |_| Neumann).unwrap();
        assert_eq!((m.num_nodes(), m.num_elements()), (4, 2));
        assert!((m.volume(0) - 0.5).abs() < 1e-15 && (m.volume(1) - 0.5).abs() < 1e-15);

        let m = unit_square_mesh(2, 2, |_| Neumann).unwrap();
        assert_eq!((m.num_nodes(), m.num_elements(), m.facets().len()), (9, 8, 8));
        assert!(unit_square_mesh(0, 3, |_| Neumann).is_err());
    }

    #[test]
    fn boundary_measures() {
        let m = unit_square_mesh(3, 5, |s| if s == Side::Right { Unilateral } else { Dirichlet })
            .unwrap();
        assert!((m.boundary_measure(Unilateral) - 1.0).abs() < 1e-14);
        assert!((m.boundary_measure(Dirichlet) - 3.0).abs() < 1e-14);
        assert_eq!(m.boundary_measure(Neumann), 0.0);

        let m = unit_interval_mesh(8, (Dirichlet, Unilateral)).unwrap();
        assert_eq!(m.boundary_measure(Unilateral), 1.0);
        assert_eq!(m.boundary_measure(Neumann), 0.0);
    }

    #[test]
    fn rejects_bad_meshes() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let cw = Mesh::new(2, nodes.clone(), vec![[0, 2, 1]], vec![]);
        assert!(matches!(cw, Err(MeshError::Degenerate(0, _))));
        let oob = Mesh::new(2, nodes.clone(), vec![[0, 1, 7]], vec![]);
        assert!(matches!(oob, Err(MeshError::NodeOutOfRange { .. })));
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let interior = Mesh::new(
            2,
            square,
            vec![[0, 1, 2], [0, 2, 3]],
            vec![Facet {
                nodes: [0, 2],
                tag: Neumann,
            }],
        );
        assert!(matches!(interior, Err(MeshError::FacetOwnership(0, 2))));
    }

    #[test]
    fn mesh_file_round_trip() {
        let text = "# two triangles\nNODES\n0 0 0\n1 1 0\n2 1 1\n3 0 1\nELEMENTS\n0 1 2\n0 2 3\nFACETS\n0 1 bottom\n1 2 gamma3\n2 3 top\n3 0 gamma1\n";
        let m = parse_mesh_file(text, 2, |l| {
            BoundaryTag::from_name(l).or(match l {
                "bottom" | "top" => Some(Neumann),
                _ => None,
            })
        })
        .unwrap();
        assert_eq!(m.num_elements(), 2);
        assert!((m.total_volume() - 1.0).abs() < 1e-15);
        assert!((m.boundary_measure(Neumann) - 2.0).abs() < 1e-15);

        let bad = parse_mesh_file("NODES\n0 0 0\nFACETS\n0 1 nowhere\n", 2, BoundaryTag::from_name);
        assert!(matches!(bad, Err(MeshError::File { line: 4, .. })));
    }
}
