//! Voxel-grid morphologies and their typed neighbor graphs.
//!
//! A robot is a small 2D matrix of voxel codes. Non-empty voxels become graph
//! nodes in row-major order ("left to right, top to bottom"), and every pair
//! of voxels sharing an edge is connected in both directions. Node and edge
//! types depend on the chosen [`EdgeScheme`].

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMPTY: u8 = 0;
pub const RIGID: u8 = 1;
pub const SOFT: u8 = 2;
pub const H_ACTUATOR: u8 = 3;
pub const V_ACTUATOR: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MorphologyError {
    #[error("malformed morphology document: {0}")]
    Malformed(String),
    #[error("morphology `{name}`: invalid voxel code {code} at row {row}, col {col} (allowed 0..=4)")]
    InvalidCode { name: String, row: usize, col: usize, code: i64 },
    #[error("morphology `{name}`: row {row} has {len} cells, expected {expected} (ragged grid)")]
    Ragged { name: String, row: usize, len: usize, expected: usize },
    #[error("morphology `{name}`: grid is empty")]
    EmptyGrid { name: String },
    #[error("morphology `{name}`: needs at least 2 non-empty voxels, found {count}")]
    TooFewVoxels { name: String, count: usize },
    #[error("morphology `{name}`: non-empty voxels are not 4-connected ({components} components)")]
    Disconnected { name: String, components: usize },
    #[error("morphology `{name}`: no actuator voxel (code 3 or 4)")]
    NoActuator { name: String },
    #[error("duplicate morphology name `{0}` in set")]
    DuplicateName(String),
    #[error("invalid edge-type query: {0}")]
    InvalidEdgeQuery(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, MorphologyError>;

/// A validated voxel morphology. Row 0 is the top row of the robot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    name: String,
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

#[derive(Deserialize)]
struct GridDocument {
    name: Option<String>,
    grid: Vec<Vec<i64>>,
}

#[derive(Serialize)]
struct GridDocumentOut<'a> {
    name: &'a str,
    grid: Vec<Vec<u8>>,
}

impl VoxelGrid {
    /// Validates raw cell codes into a grid.
    pub fn new(name: impl Into<String>, cells: &[Vec<i64>]) -> Result<Self> {
        let name = name.into();
        let rows = cells.len();
        let cols = cells.first().map(Vec::len).unwrap_or(0);
        if rows == 0 || cols == 0 {
            return Err(MorphologyError::EmptyGrid { name });
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (r, row) in cells.iter().enumerate() {
            if row.len() != cols {
                return Err(MorphologyError::Ragged {
                    name,
                    row: r,
                    len: row.len(),
                    expected: cols,
                });
            }
            for (c, &code) in row.iter().enumerate() {
                if !(0..=4).contains(&code) {
                    return Err(MorphologyError::InvalidCode { name, row: r, col: c, code });
                }
                flat.push(code as u8);
            }
        }
        let grid = Self {
            name,
            rows,
            cols,
            cells: flat,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        let count = self.voxel_count();
        if count < 2 {
            return Err(MorphologyError::TooFewVoxels {
                name: self.name.clone(),
                count,
            });
        }
        let components = self.component_count();
        if components != 1 {
            return Err(MorphologyError::Disconnected {
                name: self.name.clone(),
                components,
            });
        }
        if !self.cells.iter().any(|&c| c == H_ACTUATOR || c == V_ACTUATOR) {
            return Err(MorphologyError::NoActuator { name: self.name.clone() });
        }
        Ok(())
    }

    fn component_count(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut components = 0;
        for start in 0..self.cells.len() {
            if seen[start] || self.cells[start] == EMPTY {
                continue;
            }
            components += 1;
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                let (r, c) = (i / self.cols, i % self.cols);
                for (nr, nc, _) in self.neighbors(r, c) {
                    let j = nr * self.cols + nc;
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        components
    }

    /// Non-empty 4-neighbors of `(r, c)`, tagged by where the neighbor sits
    /// relative to `(r, c)`.
    fn neighbors(&self, r: usize, c: usize) -> impl Iterator<Item = (usize, usize, Direction)> + '_ {
        Direction::ALL.into_iter().filter_map(move |d| {
            let (dr, dc) = d.offset();
            let nr = r as isize + dr;
            let nc = c as isize + dc;
            if nr < 0 || nc < 0 || nr as usize >= self.rows || nc as usize >= self.cols {
                return None;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            (self.get(nr, nc) != EMPTY).then_some((nr, nc, d))
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.cols + col]
    }

    pub fn voxel_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != EMPTY).count()
    }

    pub fn cells(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.cols).map(<[u8]>::to_vec).collect()
    }

    /// Returns a copy with a different name.
    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GridDocumentOut {
            name: &self.name,
            grid: self.cells(),
        })
        .expect("grid serializes")
    }
}

/// Parses one morphology document: `{"name": ..., "grid": [[...], ...]}`.
pub fn parse_grid(document: &str) -> Result<VoxelGrid> {
    let doc: GridDocument = serde_json::from_str(document).map_err(|e| MorphologyError::Malformed(e.to_string()))?;
    from_document(doc)
}

fn from_document(doc: GridDocument) -> Result<VoxelGrid> {
    VoxelGrid::new(doc.name.unwrap_or_else(|| "unnamed".to_string()), &doc.grid)
}

/// Parses a morphology-set document: a JSON array of morphology objects.
/// Names must be unique within the set.
pub fn parse_morphology_set(document: &str) -> Result<Vec<VoxelGrid>> {
    let docs: Vec<GridDocument> =
        serde_json::from_str(document).map_err(|e| MorphologyError::Malformed(e.to_string()))?;
    if docs.is_empty() {
        return Err(MorphologyError::Malformed("morphology set is empty".into()));
    }
    let grids = docs.into_iter().map(from_document).collect::<Result<Vec<_>>>()?;
    let mut names = HashSet::new();
    for g in &grids {
        if !names.insert(g.name().to_string()) {
            return Err(MorphologyError::DuplicateName(g.name().to_string()));
        }
    }
    Ok(grids)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| MorphologyError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid> {
    parse_grid(&read(path)?)
}

pub fn load_morphology_set(path: &Path) -> Result<Vec<VoxelGrid>> {
    parse_morphology_set(&read(path)?)
}

/// Position of a source voxel relative to its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Grid offset from a target to a source lying in this direction.
    fn offset(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

impl FromStr for Direction {
    type Err = MorphologyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            other => Err(MorphologyError::InvalidEdgeQuery(format!("unknown direction `{other}`"))),
        }
    }
}

/// How node and edge types are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeScheme {
    /// Edge type from the (source voxel code, target voxel code) pair: 5×4 slots.
    #[serde(rename = "n", alias = "node_pair")]
    NodePair,
    /// Edge type from the source's direction relative to the target: 4 slots.
    #[serde(rename = "d", alias = "direction")]
    Direction,
    /// One node type and one edge type.
    #[serde(rename = "homo", alias = "homogeneous")]
    Homogeneous,
}

impl EdgeScheme {
    pub fn node_type_count(self) -> usize {
        match self {
            EdgeScheme::Homogeneous => 1,
            _ => 4,
        }
    }

    pub fn edge_type_count(self) -> usize {
        match self {
            EdgeScheme::NodePair => 20,
            EdgeScheme::Direction => 4,
            EdgeScheme::Homogeneous => 1,
        }
    }

    /// Node type index for a non-empty voxel code.
    pub fn node_type(self, code: u8) -> usize {
        match self {
            EdgeScheme::Homogeneous => 0,
            _ => code as usize - 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeScheme::NodePair => "n",
            EdgeScheme::Direction => "d",
            EdgeScheme::Homogeneous => "homo",
        }
    }
}

impl fmt::Display for EdgeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeScheme {
    type Err = MorphologyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "node_pair" => Ok(EdgeScheme::NodePair),
            "d" | "direction" => Ok(EdgeScheme::Direction),
            "homo" | "homogeneous" => Ok(EdgeScheme::Homogeneous),
            other => Err(MorphologyError::InvalidEdgeQuery(format!("unknown edge scheme `{other}`"))),
        }
    }
}

/// Edge-type index in `[0, P)`.
///
/// The node-pair table keeps a row for empty sources (code 0) so that it has
/// 5×4 slots; graphs never produce ids in that band.
pub fn edge_type_id(scheme: EdgeScheme, source_code: u8, target_code: u8, direction: Direction) -> Result<usize> {
    if source_code > 4 {
        return Err(MorphologyError::InvalidEdgeQuery(format!("source code {source_code} outside 0..=4")));
    }
    if !(1..=4).contains(&target_code) {
        return Err(MorphologyError::InvalidEdgeQuery(format!("target code {target_code} outside 1..=4")));
    }
    Ok(match scheme {
        EdgeScheme::NodePair => source_code as usize * 4 + (target_code as usize - 1),
        EdgeScheme::Direction => direction.index(),
        EdgeScheme::Homogeneous => 0,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphNode {
    pub row: usize,
    pub col: usize,
    pub code: u8,
    pub node_type: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub edge_type: usize,
    pub direction: Direction,
}

/// Typed directed graph over the non-empty voxels of one morphology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    incoming: Vec<Vec<usize>>,
    scheme: EdgeScheme,
    fully_connected: bool,
}

/// Builds the 4-neighborhood graph: one directed edge per ordered pair of
/// edge-adjacent voxels, no self-loops.
pub fn build_graph(grid: &VoxelGrid, scheme: EdgeScheme) -> HeteroGraph {
    let nodes = collect_nodes(grid, scheme);
    let mut index = vec![usize::MAX; grid.rows * grid.cols];
    for (i, n) in nodes.iter().enumerate() {
        index[n.row * grid.cols + n.col] = i;
    }
    let mut edges = Vec::new();
    for (t, node) in nodes.iter().enumerate() {
        for (sr, sc, direction) in grid.neighbors(node.row, node.col) {
            let source_code = grid.get(sr, sc);
            let edge_type = edge_type_id(scheme, source_code, node.code, direction).expect("codes validated by grid");
            edges.push(GraphEdge {
                source: index[sr * grid.cols + sc],
                target: t,
                edge_type,
                direction,
            });
        }
    }
    HeteroGraph::assemble(nodes, edges, scheme, false)
}

/// Test-oriented variant where every node attends to every other node.
///
/// Non-adjacent pairs are tagged with the dominant axis of their offset.
pub fn build_fully_connected_graph(grid: &VoxelGrid, scheme: EdgeScheme) -> HeteroGraph {
    let nodes = collect_nodes(grid, scheme);
    let mut edges = Vec::new();
    for (t, target) in nodes.iter().enumerate() {
        for (s, source) in nodes.iter().enumerate() {
            if s == t {
                continue;
            }
            let dr = source.row as isize - target.row as isize;
            let dc = source.col as isize - target.col as isize;
            let direction = if dr.abs() >= dc.abs() {
                if dr < 0 { Direction::Up } else { Direction::Down }
            } else if dc < 0 {
                Direction::Left
            } else {
                Direction::Right
            };
            let edge_type = edge_type_id(scheme, source.code, target.code, direction).expect("codes validated by grid");
            edges.push(GraphEdge {
                source: s,
                target: t,
                edge_type,
                direction,
            });
        }
    }
    HeteroGraph::assemble(nodes, edges, scheme, true)
}

fn collect_nodes(grid: &VoxelGrid, scheme: EdgeScheme) -> Vec<GraphNode> {
    let mut nodes = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let code = grid.get(row, col);
            if code != EMPTY {
                nodes.push(GraphNode {
                    row,
                    col,
                    code,
                    node_type: scheme.node_type(code),
                });
            }
        }
    }
    nodes
}

impl HeteroGraph {
    fn assemble(nodes: Vec<GraphNode>, edges: Vec<GraphEdge>, scheme: EdgeScheme, fully_connected: bool) -> Self {
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (e, edge) in edges.iter().enumerate() {
            incoming[edge.target].push(e);
        }
        Self {
            nodes,
            edges,
            incoming,
            scheme,
            fully_connected,
        }
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn scheme(&self) -> EdgeScheme {
        self.scheme
    }

    pub fn is_fully_connected(&self) -> bool {
        self.fully_connected
    }

    pub fn node_type_count(&self) -> usize {
        self.scheme.node_type_count()
    }

    pub fn edge_type_count(&self) -> usize {
        self.scheme.edge_type_count()
    }

    /// Edge indices whose target is `t`, in neighbor-slot order.
    pub fn incoming(&self, t: usize) -> &[usize] {
        &self.incoming[t]
    }

    /// Largest in-degree; the width of the per-target neighbor slot table.
    pub fn max_in_degree(&self) -> usize {
        self.incoming.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// The same graph with node `i` of the result being node `order[i]` of
    /// `self`. Grid coordinates travel with the nodes; edges are listed in
    /// reverse so that neighbor slot order changes too. Returns `None` if
    /// `order` is not a permutation.
    pub fn relabeled(&self, order: &[usize]) -> Option<HeteroGraph> {
        let n = self.nodes.len();
        if order.len() != n {
            return None;
        }
        let mut new_of_old = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || new_of_old[old] != usize::MAX {
                return None;
            }
            new_of_old[old] = new;
        }
        let nodes = order.iter().map(|&old| self.nodes[old].clone()).collect();
        let edges = self
            .edges
            .iter()
            .rev()
            .map(|e| GraphEdge {
                source: new_of_old[e.source],
                target: new_of_old[e.target],
                ..e.clone()
            })
            .collect();
        Some(Self::assemble(nodes, edges, self.scheme, self.fully_connected))
    }

    /// Breadth-first hop distances from `from` (usize::MAX if unreachable).
    pub fn hop_distances(&self, from: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[from] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            // Adjacency is symmetric, so outgoing neighbors are the incoming sources.
            for &e in &self.incoming[v] {
                let s = self.edges[e].source;
                if dist[s] == usize::MAX {
                    dist[s] = dist[v] + 1;
                    queue.push_back(s);
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cells: &[&[i64]]) -> VoxelGrid {
        let rows: Vec<Vec<i64>> = cells.iter().map(|r| r.to_vec()).collect();
        VoxelGrid::new("t", &rows).unwrap()
    }

    #[test]
    fn parses_simple_document() {
        let g = parse_grid(r#"{"grid": [[3,4],[1,0]]}"#).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 2));
        assert_eq!(g.voxel_count(), 3);
        assert_eq!(g.name(), "unnamed");
    }

    #[test]
    fn rejects_diagonal_only_contact() {
        let err = parse_grid(r#"{"name":"diag","grid": [[1,0],[0,1]]}"#).unwrap_err();
        assert!(matches!(err, MorphologyError::Disconnected { components: 2, .. }));
    }

    #[test]
    fn rejects_invalid_code() {
        let err = parse_grid(r#"{"grid": [[7]]}"#).unwrap_err();
        assert!(matches!(err, MorphologyError::InvalidCode { code: 7, .. }));
    }

    #[test]
    fn rejects_ragged_missing_actuator_and_garbage() {
        assert!(matches!(
            parse_grid(r#"{"grid": [[3,4],[1]]}"#),
            Err(MorphologyError::Ragged { row: 1, .. })
        ));
        assert!(matches!(
            parse_grid(r#"{"grid": [[1,2]]}"#),
            Err(MorphologyError::NoActuator { .. })
        ));
        assert!(matches!(parse_grid(r#"{"grid": [[3]]}"#), Err(MorphologyError::TooFewVoxels { .. })));
        assert!(matches!(parse_grid("[1,2"), Err(MorphologyError::Malformed(_))));
    }

    #[test]
    fn set_rejects_duplicate_names() {
        let doc = r#"[{"name":"a","grid":[[3,3]]},{"name":"a","grid":[[4,4]]}]"#;
        assert_eq!(parse_morphology_set(doc).unwrap_err(), MorphologyError::DuplicateName("a".into()));
    }

    #[test]
    fn small_graph_edges() {
        let g = build_graph(&grid(&[&[3, 4], &[1, 0]]), EdgeScheme::Direction);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges().len(), 4);
        let pairs: HashSet<(usize, usize)> = g.edges().iter().map(|e| (e.source, e.target)).collect();
        assert_eq!(pairs, HashSet::from([(0, 1), (1, 0), (0, 2), (2, 0)]));
        // Node 1 is right of node 0, so from node 0's point of view the source is on the right.
        let e = g.edges().iter().find(|e| e.source == 1 && e.target == 0).unwrap();
        assert_eq!(e.direction, Direction::Right);
        assert_eq!(e.edge_type, 3);
        let e = g.edges().iter().find(|e| e.source == 0 && e.target == 2).unwrap();
        assert_eq!(e.direction, Direction::Up);
    }

    #[test]
    fn chain_graph() {
        let g = build_graph(&grid(&[&[3, 1, 4]]), EdgeScheme::NodePair);
        assert_eq!(g.edges().len(), 4);
        assert_eq!(g.incoming(1).len(), 2);
        assert_eq!(g.max_in_degree(), 2);
        assert_eq!(g.hop_distances(0), vec![0, 1, 2]);
    }

    #[test]
    fn edge_type_ids() {
        assert_eq!(edge_type_id(EdgeScheme::NodePair, 3, 4, Direction::Up).unwrap(), 15);
        assert_eq!(edge_type_id(EdgeScheme::Direction, 2, 2, Direction::Left).unwrap(), 2);
        assert_eq!(edge_type_id(EdgeScheme::Homogeneous, 4, 1, Direction::Down).unwrap(), 0);
        assert!(edge_type_id(EdgeScheme::NodePair, 5, 1, Direction::Up).is_err());
        assert!(edge_type_id(EdgeScheme::NodePair, 1, 0, Direction::Up).is_err());
        assert!("sideways".parse::<Direction>().is_err());
    }

    #[test]
    fn scheme_counts() {
        assert_eq!(EdgeScheme::NodePair.edge_type_count(), 20);
        assert_eq!(EdgeScheme::Direction.edge_type_count(), 4);
        assert_eq!(EdgeScheme::Homogeneous.edge_type_count(), 1);
        assert_eq!(EdgeScheme::Homogeneous.node_type_count(), 1);
        assert_eq!("homo".parse::<EdgeScheme>().unwrap(), EdgeScheme::Homogeneous);
    }

    #[test]
    fn homogeneous_collapses_types() {
        let g = build_graph(&grid(&[&[3, 1, 4]]), EdgeScheme::Homogeneous);
        assert!(g.nodes().iter().all(|n| n.node_type == 0));
        assert!(g.edges().iter().all(|e| e.edge_type == 0));
    }

    #[test]
    fn fully_connected_graph_has_all_pairs() {
        let g = build_fully_connected_graph(&grid(&[&[3, 1], &[4, 2]]), EdgeScheme::Homogeneous);
        assert_eq!(g.edges().len(), 12);
        assert_eq!(g.max_in_degree(), 3);
        assert!(g.is_fully_connected());
    }

    #[test]
    fn json_round_trip() {
        let g = grid(&[&[3, 0], &[4, 2]]);
        assert_eq!(parse_grid(&g.to_json()).unwrap(), g);
    }
}
