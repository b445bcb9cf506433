//! Energy-level coupling graphs. Nodes are levels, edges are experimentally
//! addressable transitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a coupling graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Nearest-neighbour chain `(k, k+1)`.
    Linear,
    /// Every pair of levels coupled.
    Complete,
    /// `√d × √d` grid with couplings along rows and columns; levels are
    /// labelled row-major as `(i1, i2) -> i1·√d + i2`.
    Grid,
    /// Caller-provided edge list.
    Custom,
}

impl GraphKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphKind::Linear => "linear",
            GraphKind::Complete => "complete",
            GraphKind::Grid => "grid",
            GraphKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(GraphKind::Linear),
            "complete" => Ok(GraphKind::Complete),
            "grid" => Ok(GraphKind::Grid),
            "custom" => Ok(GraphKind::Custom),
            other => Err(format!("unknown graph kind '{other}'")),
        }
    }
}

/// A validated, connected coupling graph on `d` levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingGraph {
    d: usize,
    edges: Vec<(usize, usize)>,
    include_sigma_z: bool,
}

impl CouplingGraph {
    /// Validate and normalize an explicit edge list.
    pub fn new(d: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if d < 2 {
            return Err(Error::DimensionTooSmall(d));
        }
        let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b || a >= d || b >= d {
                return Err(Error::InvalidEdge(a, b, d));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        for w in normalized.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        let graph = Self {
            d,
            edges: normalized,
            include_sigma_z: false,
        };
        if let Some(unreached) = graph.first_unreachable(None) {
            return Err(Error::DisconnectedGraph(unreached));
        }
        Ok(graph)
    }

    /// Toggle the optional per-level z controls.
    pub fn with_sigma_z(mut self, flag: bool) -> Self {
        self.include_sigma_z = flag;
        self
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn include_sigma_z(&self) -> bool {
        self.include_sigma_z
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).is_ok()
    }

    pub fn neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == v {
                Some(b)
            } else if b == v {
                Some(a)
            } else {
                None
            }
        })
    }

    /// BFS reachability over an optional subset of active vertices; returns
    /// the first vertex that cannot be reached.
    fn first_unreachable(&self, active: Option<&[usize]>) -> Option<usize> {
        let vertices: Vec<usize> = match active {
            Some(set) => set.to_vec(),
            None => (0..self.d).collect(),
        };
        if vertices.is_empty() {
            return None;
        }
        let in_set = {
            let mut mask = vec![false; self.d];
            for &v in &vertices {
                mask[v] = true;
            }
            mask
        };
        let mut seen = vec![false; self.d];
        let mut queue = std::collections::VecDeque::new();
        seen[vertices[0]] = true;
        queue.push_back(vertices[0]);
        while let Some(v) = queue.pop_front() {
            for w in self.neighbours(v) {
                if in_set[w] && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        vertices.into_iter().find(|&v| !seen[v])
    }

    /// Whether the induced subgraph on `active` is connected.
    pub(crate) fn is_connected_on(&self, active: &[usize]) -> bool {
        self.first_unreachable(Some(active)).is_none()
    }
}

/// Build one of the canonical graph families.
///
/// `custom_edges` is consulted only for [`GraphKind::Custom`].
pub fn build_graph(
    kind: GraphKind,
    d: usize,
    custom_edges: Option<&[(usize, usize)]>,
) -> Result<CouplingGraph> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let edges = match kind {
        GraphKind::Linear => (0..d - 1).map(|k| (k, k + 1)).collect(),
        GraphKind::Complete => {
            let mut e = Vec::with_capacity(d * (d - 1) / 2);
            for i in 0..d {
                for j in i + 1..d {
                    e.push((i, j));
                }
            }
            e
        }
        GraphKind::Grid => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side != d {
                return Err(Error::NotPerfectSquare(d));
            }
            let idx = |i1: usize, i2: usize| i1 * side + i2;
            let mut e = Vec::new();
            for i1 in 0..side {
                for i2 in 0..side {
                    if i1 + 1 < side {
                        e.push((idx(i1, i2), idx(i1 + 1, i2)));
                    }
                    if i2 + 1 < side {
                        e.push((idx(i1, i2), idx(i1, i2 + 1)));
                    }
                }
            }
            e
        }
        GraphKind::Custom => custom_edges
            .ok_or_else(|| Error::InvalidEdge(0, 0, d))?
            .to_vec(),
    };
    CouplingGraph::new(d, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_four_levels() {
        let g = build_graph(GraphKind::Linear, 4, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn complete_two_levels_equals_linear() {
        let g = build_graph(GraphKind::Complete, 2, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn grid_sixteen_levels_has_24_edges() {
        let g = build_graph(GraphKind::Grid, 16, None).unwrap();
        // Oracle: enumerate pairs that differ by one in exactly one grid
        // coordinate.
        let mut expected = 0;
        for a in 0..16usize {
            for b in (a + 1)..16usize {
                let (a1, a2) = (a / 4, a % 4);
                let (b1, b2) = (b / 4, b % 4);
                let d1 = a1.abs_diff(b1);
                let d2 = a2.abs_diff(b2);
                if (d1 == 1 && d2 == 0) || (d1 == 0 && d2 == 1) {
                    expected += 1;
                    assert!(g.has_edge(a, b), "missing edge ({a},{b})");
                }
            }
        }
        assert_eq!(expected, 24);
        assert_eq!(g.edges().len(), 24);
    }

    #[test]
    fn grid_rejects_non_square() {
        assert!(matches!(
            build_graph(GraphKind::Grid, 12, None),
            Err(Error::NotPerfectSquare(12))
        ));
    }

    #[test]
    fn rejects_small_dimension() {
        assert!(build_graph(GraphKind::Linear, 1, None).is_err());
    }

    #[test]
    fn rejects_disconnected_custom_graph() {
        let err = build_graph(GraphKind::Custom, 4, Some(&[(0, 1), (2, 3)]));
        assert!(matches!(err, Err(Error::DisconnectedGraph(_))));
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(build_graph(GraphKind::Custom, 3, Some(&[(0, 0), (1, 2)])).is_err());
        assert!(build_graph(GraphKind::Custom, 3, Some(&[(0, 1), (1, 0), (1, 2)])).is_err());
    }

    #[test]
    fn star_graph_is_connected() {
        let g = build_graph(GraphKind::Custom, 5, Some(&[(0, 1), (0, 2), (0, 3), (0, 4)])).unwrap();
        assert!(g.is_connected_on(&[0, 1, 2, 3, 4]));
        assert!(!g.is_connected_on(&[1, 2, 3]));
    }
}
