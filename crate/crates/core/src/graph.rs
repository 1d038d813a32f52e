//! Patrol graph: nodes with coordinates, beat and group partitions, and
//! precomputed all-pairs shortest paths.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Index of a node in its graph.
pub type NodeId = usize;
/// Index of a beat (one patroller per beat).
pub type BeatId = usize;
/// Index of an equity group.
pub type GroupId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub x: f64,
    pub y: f64,
    pub beat: BeatId,
    pub group: Option<GroupId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub inter_beat: bool,
}

/// Hop distances and deterministic next hops for every ordered node pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortestPaths {
    n: usize,
    dist: Vec<u32>,
    next: Vec<NodeId>,
}

impl ShortestPaths {
    pub fn dist(&self, u: NodeId, v: NodeId) -> u32 {
        self.dist[u * self.n + v]
    }

    /// First node after `u` on a shortest `u -> v` path (`u` itself when `u == v`).
    pub fn next_hop(&self, u: NodeId, v: NodeId) -> NodeId {
        self.next[u * self.n + v]
    }
}

/// Breadth-first search from every node over the full edge set.
///
/// Next hops are chosen as the smallest-id neighbour of `u` lying on a
/// shortest path, which makes routes reproducible.
pub fn all_pairs_shortest_paths(adjacency: &[Vec<NodeId>]) -> Result<ShortestPaths> {
    let n = adjacency.len();
    let mut dist = vec![u32::MAX; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for src in 0..n {
        let row = &mut dist[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            for &w in &adjacency[u] {
                if row[w] == u32::MAX {
                    row[w] = du + 1;
                    queue.push_back(w);
                }
            }
        }
        if let Some(v) = row.iter().position(|&d| d == u32::MAX) {
            return Err(Error::Validation(format!(
                "graph is disconnected: node {v} unreachable from node {src}"
            )));
        }
    }
    let mut next = vec![0; n * n];
    for u in 0..n {
        for v in 0..n {
            next[u * n + v] = if u == v {
                u
            } else {
                let target = dist[u * n + v] - 1;
                // adjacency lists are sorted, so the first match is the smallest id
                *adjacency[u]
                    .iter()
                    .find(|&&w| dist[w * n + v] == target)
                    .expect("BFS distances are consistent")
            };
        }
    }
    Ok(ShortestPaths { n, dist, next })
}

/// An undirected, connected patrol graph. Every node is implicitly adjacent
/// to itself; explicit edges never include self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct PatrolGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<NodeId>>,
    beat_adjacency: Vec<Vec<NodeId>>,
    beats: Vec<Vec<NodeId>>,
    n_groups: usize,
    paths: ShortestPaths,
    /// For every node and beat: the nearest node of that beat (ties to the smallest id).
    nearest_in_beat: Vec<Vec<NodeId>>,
    bbox: (f64, f64, f64, f64),
}

impl PatrolGraph {
    /// Builds and validates a graph. Edges are deduplicated and normalised
    /// so that `u < v`.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Validation("graph has no nodes".into()));
        }
        for (id, node) in nodes.iter().enumerate() {
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(Error::Validation(format!("node {id} has non-finite coordinates")));
            }
        }
        let n_beats = nodes.iter().map(|n| n.beat).max().unwrap() + 1;
        let mut beats = vec![Vec::new(); n_beats];
        for (id, node) in nodes.iter().enumerate() {
            beats[node.beat].push(id);
        }
        if let Some(b) = beats.iter().position(|b| b.is_empty()) {
            return Err(Error::Validation(format!("beat {b} has no nodes (beat ids must be contiguous)")));
        }
        let grouped = nodes.iter().filter(|n| n.group.is_some()).count();
        let n_groups = if grouped == 0 {
            0
        } else if grouped != n {
            return Err(Error::Validation(
                "groups must partition the node set: some nodes have no group".into(),
            ));
        } else {
            let g = nodes.iter().filter_map(|n| n.group).max().unwrap() + 1;
            for gid in 0..g {
                if !nodes.iter().any(|n| n.group == Some(gid)) {
                    return Err(Error::Validation(format!("group {gid} has no nodes (group ids must be contiguous)")));
                }
            }
            g
        };

        let mut normalised = Vec::with_capacity(edges.len());
        for e in edges {
            if e.u >= n || e.v >= n {
                return Err(Error::Validation(format!("edge ({}, {}) references an unknown node", e.u, e.v)));
            }
            if e.u == e.v {
                return Err(Error::Validation(format!(
                    "explicit self-loop on node {} (self-loops are implicit)",
                    e.u
                )));
            }
            let crosses = nodes[e.u].beat != nodes[e.v].beat;
            if crosses != e.inter_beat {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) has inter_beat = {} but joins beats {} and {}",
                    e.u, e.v, e.inter_beat, nodes[e.u].beat, nodes[e.v].beat
                )));
            }
            normalised.push(Edge { u: e.u.min(e.v), v: e.u.max(e.v), inter_beat: e.inter_beat });
        }
        normalised.sort();
        normalised.dedup();

        let mut adjacency = vec![Vec::new(); n];
        let mut beat_adjacency = vec![Vec::new(); n];
        for e in &normalised {
            adjacency[e.u].push(e.v);
            adjacency[e.v].push(e.u);
            if !e.inter_beat {
                beat_adjacency[e.u].push(e.v);
                beat_adjacency[e.v].push(e.u);
            }
        }
        for list in adjacency.iter_mut().chain(beat_adjacency.iter_mut()) {
            list.sort_unstable();
        }
        let paths = all_pairs_shortest_paths(&adjacency)?;

        let nearest_in_beat = (0..n)
            .map(|v| {
                beats
                    .iter()
                    .map(|members| {
                        *members
                            .iter()
                            .min_by_key(|&&w| (paths.dist(v, w), w))
                            .expect("beats are non-empty")
                    })
                    .collect()
            })
            .collect();

        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for node in &nodes {
            x0 = x0.min(node.x);
            x1 = x1.max(node.x);
            y0 = y0.min(node.y);
            y1 = y1.max(node.y);
        }

        Ok(Self {
            nodes,
            edges: normalised,
            adjacency,
            beat_adjacency,
            beats,
            n_groups,
            paths,
            nearest_in_beat,
            bbox: (x0, x1, y0, y1),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_beats(&self) -> usize {
        self.beats.len()
    }

    /// Number of equity groups; zero when the graph defines none.
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, v: NodeId) -> &Node {
        &self.nodes[v]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbours over the full edge set, excluding the implicit self-loop.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v]
    }

    /// Neighbours reachable without crossing an inter-beat edge, excluding `v` itself.
    pub fn beat_neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.beat_adjacency[v]
    }

    pub fn beat_nodes(&self, beat: BeatId) -> &[NodeId] {
        &self.beats[beat]
    }

    pub fn beat_of(&self, v: NodeId) -> BeatId {
        self.nodes[v].beat
    }

    /// The group containing `node`, `Ok(None)` when the graph has no groups.
    pub fn group_of(&self, node: NodeId) -> Result<Option<GroupId>> {
        self.nodes
            .get(node)
            .map(|n| n.group)
            .ok_or(Error::UnknownNode(node))
    }

    pub fn dist(&self, u: NodeId, v: NodeId) -> u32 {
        self.paths.dist(u, v)
    }

    pub fn next_hop(&self, u: NodeId, v: NodeId) -> NodeId {
        self.paths.next_hop(u, v)
    }

    pub fn shortest_paths(&self) -> &ShortestPaths {
        &self.paths
    }

    /// Closest node of `beat` to `v` by hop count, ties to the smallest id.
    pub fn nearest_in_beat(&self, v: NodeId, beat: BeatId) -> NodeId {
        self.nearest_in_beat[v][beat]
    }

    /// Coordinates scaled to `[0, 1]` by the bounding box. Degenerate axes map to 0.
    pub fn scaled_coords(&self, v: NodeId) -> (f64, f64) {
        let (x0, x1, y0, y1) = self.bbox;
        let node = &self.nodes[v];
        let sx = if x1 > x0 { (node.x - x0) / (x1 - x0) } else { 0.0 };
        let sy = if y1 > y0 { (node.y - y0) / (y1 - y0) } else { 0.0 };
        (sx, sy)
    }
}

/// Builders for the grid layouts used by the bundled scenarios.
pub mod layouts {
    use super::*;

    /// Rectangular grid with 4-neighbour adjacency. `beat_of(x, y)` and
    /// `group_of(x, y)` assign partitions; every grid edge whose endpoints lie
    /// in different beats becomes an inter-beat edge. Node ids are row-major.
    pub fn grid(
        width: usize,
        height: usize,
        beat_of: impl Fn(usize, usize) -> BeatId,
        group_of: impl Fn(usize, usize) -> Option<GroupId>,
    ) -> (Vec<Node>, Vec<Edge>) {
        let id = |x: usize, y: usize| y * width + x;
        let mut nodes = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                nodes.push(Node { x: x as f64, y: y as f64, beat: beat_of(x, y), group: group_of(x, y) });
            }
        }
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let u = id(x, y);
                let mut link = |v: NodeId| {
                    edges.push(Edge { u, v, inter_beat: nodes[u].beat != nodes[v].beat });
                };
                if x + 1 < width {
                    link(id(x + 1, y));
                }
                if y + 1 < height {
                    link(id(x, y + 1));
                }
            }
        }
        (nodes, edges)
    }

    /// Two `side x side` beats placed side by side. Every pair of facing
    /// boundary nodes is joined, giving `side` inter-beat edges.
    pub fn two_beat_grid(side: usize) -> (Vec<Node>, Vec<Edge>) {
        grid(2 * side, side, |x, _| usize::from(x >= side), |_, _| None)
    }

    /// Like [`two_beat_grid`] but the beats touch through a single edge
    /// halfway down the shared side.
    pub fn single_bridge_two_beat_grid(side: usize) -> (Vec<Node>, Vec<Edge>) {
        let width = 2 * side;
        let (nodes, edges) = two_beat_grid(side);
        let bridge_u = (side / 2) * width + (side - 1);
        let edges = edges
            .into_iter()
            .filter(|e| !e.inter_beat || (e.u == bridge_u && e.v == bridge_u + 1))
            .collect();
        (nodes, edges)
    }
}
