//! Road network topology: directed adjacency, spatial edge enumeration,
//! per-node incidence sets, and subnetwork extraction.
//!
//! Spatial edges are enumerated by a row-major scan of the adjacency matrix,
//! so their order is a pure function of the matrix and two parses of the same
//! file produce identical graphs. The temporal edge set is implicit: one
//! self-relation per node.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable road network graph. Node `u` is the segment at position `u` of
/// `segment_ids`; a spatial edge (u, v) means traffic flows from u to v.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    segment_ids: Vec<String>,
    adjacency: Vec<bool>,
    spatial_edges: Vec<(usize, usize)>,
    incidence: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

impl RoadGraph {
    /// Build from segment ids and a square 0/1 adjacency matrix.
    ///
    /// Diagonal entries are ignored with a warning: the self-relation is the
    /// temporal edge, not a spatial one.
    pub fn build(segment_ids: Vec<String>, adjacency: Vec<Vec<u8>>) -> Result<RoadGraph> {
        let n = segment_ids.len();
        let mut seen = HashSet::new();
        for id in &segment_ids {
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!("duplicate segment id '{}'", id)));
            }
        }
        if adjacency.len() != n {
            return Err(Error::Parse(format!(
                "adjacency has {} rows for {} segment ids",
                adjacency.len(),
                n
            )));
        }
        let mut flat = vec![false; n * n];
        let mut warnings = Vec::new();
        for (r, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "adjacency row {} has {} columns, expected {}",
                    r,
                    row.len(),
                    n
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Parse(format!(
                        "adjacency entry ({}, {}) is {}, expected 0 or 1",
                        r, c, v
                    )));
                }
                if r == c && v == 1 {
                    warnings.push(format!(
                        "self-loop on segment '{}' ignored (self-relation is temporal)",
                        segment_ids[r]
                    ));
                    continue;
                }
                flat[r * n + c] = v == 1;
            }
        }

        // Canonical enumeration: row-major, so edges come out sorted by (u, v).
        let mut spatial_edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if flat[u * n + v] {
                    spatial_edges.push((u, v));
                }
            }
        }
        let mut incidence = vec![Vec::new(); n];
        for (e, &(u, v)) in spatial_edges.iter().enumerate() {
            incidence[u].push(e);
            incidence[v].push(e);
        }

        Ok(RoadGraph {
            segment_ids,
            adjacency: flat,
            spatial_edges,
            incidence,
            warnings,
        })
    }

    pub fn node_count(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    /// Spatial edge list, ascending by (u, v).
    pub fn spatial_edges(&self) -> &[(usize, usize)] {
        &self.spatial_edges
    }

    /// One temporal edge (u, u) per node.
    pub fn temporal_edge_count(&self) -> usize {
        self.node_count()
    }

    /// C(u): indices of spatial edges incident to node u, ascending.
    pub fn incidence(&self, u: usize) -> &[usize] {
        &self.incidence[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u * self.node_count() + v]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.segment_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::Validation(format!("unknown segment id '{}'", id)))
    }

    /// Induced subgraph on `keep` (in the given order). Edges between removed
    /// nodes disappear; edges survive only when both endpoints are kept.
    pub fn extract_subnetwork(&self, keep: &[String]) -> Result<RoadGraph> {
        let positions: Vec<usize> = keep
            .iter()
            .map(|id| self.index_of(id))
            .collect::<Result<_>>()?;
        let n = self.node_count();
        let adjacency: Vec<Vec<u8>> = positions
            .iter()
            .map(|&r| {
                positions
                    .iter()
                    .map(|&c| u8::from(self.adjacency[r * n + c]))
                    .collect()
            })
            .collect();
        RoadGraph::build(keep.to_vec(), adjacency)
    }

    /// Disjoint union: block-diagonal adjacency, no cross-graph edges.
    pub fn union(graphs: &[RoadGraph]) -> Result<RoadGraph> {
        let mut ids = Vec::new();
        for g in graphs {
            ids.extend(g.segment_ids.iter().cloned());
        }
        let total = ids.len();
        {
            let mut seen = HashSet::new();
            for id in &ids {
                if !seen.insert(id) {
                    return Err(Error::Validation(format!(
                        "segment id '{}' appears in more than one graph",
                        id
                    )));
                }
            }
        }
        let mut adjacency = vec![vec![0u8; total]; total];
        let mut offset = 0;
        for g in graphs {
            let n = g.node_count();
            for u in 0..n {
                for v in 0..n {
                    adjacency[offset + u][offset + v] = u8::from(g.adjacency[u * n + v]);
                }
            }
            offset += n;
        }
        RoadGraph::build(ids, adjacency)
    }
}

/// Parse an adjacency CSV: header `,id1,id2,...`, one row per segment with
/// the segment id first, body entries 0/1. Row ids must match the header.
pub fn load_adjacency_csv(path: impl AsRef<Path>) -> Result<RoadGraph> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_adjacency_csv(&text)
}

pub fn parse_adjacency_csv(text: &str) -> Result<RoadGraph> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("adjacency file is empty".into()))?;
    let ids: Vec<String> = header
        .split(',')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if ids.is_empty() {
        return Err(Error::Parse("adjacency header lists no segment ids".into()));
    }
    let mut adjacency = Vec::with_capacity(ids.len());
    let mut row_ids = Vec::with_capacity(ids.len());
    for (lineno, line) in lines {
        let mut fields = line.split(',');
        let row_id = fields.next().unwrap_or("").trim().to_string();
        let entries: Vec<u8> = fields
            .enumerate()
            .map(|(col, f)| match f.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Parse(format!(
                    "adjacency line {}, column {}: '{}' is not 0 or 1",
                    lineno + 1,
                    col + 2,
                    other
                ))),
            })
            .collect::<Result<_>>()?;
        row_ids.push(row_id);
        adjacency.push(entries);
    }
    if row_ids != ids {
        return Err(Error::Parse(
            "adjacency row ids do not match header column ids".into(),
        ));
    }
    RoadGraph::build(ids, adjacency)
}

/// Write the adjacency CSV format accepted by [`load_adjacency_csv`].
pub fn save_adjacency_csv(g: &RoadGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for id in g.segment_ids() {
        let _ = write!(out, ",{}", id);
    }
    out.push('\n');
    for (u, id) in g.segment_ids().iter().enumerate() {
        out.push_str(id);
        for v in 0..g.node_count() {
            let _ = write!(out, ",{}", u8::from(g.has_edge(u, v)));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_node_graph_edges_and_incidence() {
        let g = RoadGraph::build(ids(&["a", "b"]), vec![vec![0, 1], vec![0, 0]]).unwrap();
        assert_eq!(g.spatial_edges(), &[(0, 1)]);
        assert_eq!(g.incidence(0), &[0]);
        assert_eq!(g.incidence(1), &[0]);
        assert_eq!(g.temporal_edge_count(), 2);
    }

    #[test]
    fn zero_matrix_is_a_legal_disconnected_graph() {
        let g = RoadGraph::build(ids(&["a", "b", "c"]), vec![vec![0; 3]; 3]).unwrap();
        assert!(g.spatial_edges().is_empty());
        for u in 0..3 {
            assert!(g.incidence(u).is_empty());
        }
    }

    #[test]
    fn bidirectional_pair_gives_two_distinct_edges() {
        let g = RoadGraph::build(ids(&["a", "b"]), vec![vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(g.spatial_edges(), &[(0, 1), (1, 0)]);
        assert_eq!(g.incidence(0), &[0, 1]);
    }

    #[test]
    fn self_loop_is_ignored_with_warning() {
        let g = RoadGraph::build(ids(&["a", "b"]), vec![vec![1, 1], vec![0, 0]]).unwrap();
        assert_eq!(g.spatial_edges(), &[(0, 1)]);
        assert_eq!(g.warnings().len(), 1);
        assert!(g.warnings()[0].contains("'a'"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = RoadGraph::build(ids(&["a", "a"]), vec![vec![0, 0], vec![0, 0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn non_square_and_non_binary_rejected() {
        assert!(RoadGraph::build(ids(&["a", "b"]), vec![vec![0, 1]]).is_err());
        assert!(RoadGraph::build(ids(&["a"]), vec![vec![2]]).is_err());
    }

    #[test]
    fn incidence_counts_twice_the_edges() {
        let g = RoadGraph::build(
            ids(&["a", "b", "c"]),
            vec![vec![0, 1, 1], vec![0, 0, 1], vec![0, 0, 0]],
        )
        .unwrap();
        let total: usize = (0..3).map(|u| g.incidence(u).len()).sum();
        assert_eq!(total, 2 * g.spatial_edges().len());
    }

    #[test]
    fn extract_full_set_is_identity() {
        let g = RoadGraph::build(
            ids(&["a", "b", "c"]),
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]],
        )
        .unwrap();
        let sub = g.extract_subnetwork(&g.segment_ids().to_vec()).unwrap();
        assert_eq!(sub, g);
    }

    #[test]
    fn extract_severs_paths_through_removed_nodes() {
        // chain a -> b -> c; removing b leaves no edges
        let g = RoadGraph::build(
            ids(&["a", "b", "c"]),
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]],
        )
        .unwrap();
        let sub = g.extract_subnetwork(&ids(&["a", "c"])).unwrap();
        assert!(sub.spatial_edges().is_empty());
        assert_eq!(sub.node_count(), 2);
    }

    #[test]
    fn extract_unknown_id_errors() {
        let g = RoadGraph::build(ids(&["a"]), vec![vec![0]]).unwrap();
        let err = g.extract_subnetwork(&ids(&["zzz"])).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn union_is_block_diagonal() {
        let r1 = RoadGraph::build(ids(&["a", "b"]), vec![vec![0, 1], vec![0, 0]]).unwrap();
        let r2 = RoadGraph::build(ids(&["c"]), vec![vec![0]]).unwrap();
        let u = RoadGraph::union(&[r1.clone(), r2]).unwrap();
        assert_eq!(u.node_count(), 3);
        assert_eq!(u.spatial_edges(), &[(0, 1)]);
        assert_eq!(RoadGraph::union(&[r1.clone()]).unwrap(), r1);
    }

    #[test]
    fn union_edge_count_is_additive() {
        let mk = |names: &[&str], adj: Vec<Vec<u8>>| RoadGraph::build(ids(names), adj).unwrap();
        let r1 = mk(&["a", "b"], vec![vec![0, 1], vec![1, 0]]);
        let r2 = mk(&["c", "d"], vec![vec![0, 1], vec![0, 0]]);
        let r3 = mk(&["e"], vec![vec![0]]);
        let u = RoadGraph::union(&[r1.clone(), r2.clone(), r3.clone()]).unwrap();
        assert_eq!(
            u.spatial_edges().len(),
            r1.spatial_edges().len() + r2.spatial_edges().len() + r3.spatial_edges().len()
        );
    }

    #[test]
    fn union_rejects_overlapping_ids() {
        let r1 = RoadGraph::build(ids(&["a"]), vec![vec![0]]).unwrap();
        let r2 = RoadGraph::build(ids(&["a"]), vec![vec![0]]).unwrap();
        assert!(RoadGraph::union(&[r1, r2]).is_err());
    }

    #[test]
    fn csv_round_trip_is_canonical() {
        let text = ",a,b,c\na,0,1,1\nb,0,0,0\nc,1,0,0\n";
        let g1 = parse_adjacency_csv(text).unwrap();
        let g2 = parse_adjacency_csv(text).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.spatial_edges(), &[(0, 1), (0, 2), (2, 0)]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.csv");
        save_adjacency_csv(&g1, &path).unwrap();
        let g3 = load_adjacency_csv(&path).unwrap();
        assert_eq!(g1, g3);
    }

    #[test]
    fn csv_rejects_bad_entries() {
        assert!(parse_adjacency_csv(",a\na,7\n").is_err());
        assert!(parse_adjacency_csv(",a,b\nb,0,0\na,0,0\n").is_err());
    }
}
