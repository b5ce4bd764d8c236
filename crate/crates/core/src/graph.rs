//! Undirected weighted graphs with a designated source and destination.
//!
//! Edges are stored once, oriented `u < v`, and every edge appears in the
//! adjacency list of both endpoints under the same edge index. Graphs are
//! immutable; removal and relabelling return new values.

use std::collections::HashSet;

use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {node} out of range for a graph with {n_nodes} nodes")]
    NodeOutOfRange { node: NodeId, n_nodes: usize },
    #[error("edge ({u}, {v}) has weight {w}; weights must be finite and > 0")]
    InvalidWeight { u: NodeId, v: NodeId, w: f64 },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({u}, {v})")]
    DuplicateEdge { u: NodeId, v: NodeId },
    #[error("source and destination are both node {0}")]
    SameTerminals(NodeId),
    #[error("no edge between {u} and {v}")]
    MissingEdge { u: NodeId, v: NodeId },
    #[error("node {0} is a terminal (source or destination) and cannot be removed")]
    TerminalRemoval(NodeId),
    #[error("permutation is not a bijection on 0..{0}")]
    NotBijection(usize),
}

/// An undirected edge, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub w: f64,
}

impl Edge {
    pub fn other(&self, node: NodeId) -> NodeId {
        if node == self.u {
            self.v
        } else {
            self.u
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.u == node || self.v == node
    }
}

/// Role of a node in a path query, fed to the model as a one-hot vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Source,
    Destination,
    Other,
}

impl NodeRole {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            NodeRole::Source => [1.0, 0.0, 0.0],
            NodeRole::Destination => [0.0, 1.0, 0.0],
            NodeRole::Other => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(NodeId, usize)>>,
    source: NodeId,
    destination: NodeId,
    connected: bool,
    terminals_connected: bool,
}

impl Graph {
    /// Validates and builds a graph. Edge order is preserved; each edge is
    /// re-oriented so that `u < v`.
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
        source: NodeId,
        destination: NodeId,
    ) -> Result<Self, GraphError> {
        for node in [source, destination] {
            if node >= n_nodes {
                return Err(GraphError::NodeOutOfRange { node, n_nodes });
            }
        }
        if source == destination {
            return Err(GraphError::SameTerminals(source));
        }

        let mut seen = HashSet::new();
        let mut stored = Vec::new();
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (a, b, w) in edges {
            for node in [a, b] {
                if node >= n_nodes {
                    return Err(GraphError::NodeOutOfRange { node, n_nodes });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::InvalidWeight { u: a, v: b, w });
            }
            let (u, v) = (a.min(b), a.max(b));
            if !seen.insert((u, v)) {
                return Err(GraphError::DuplicateEdge { u, v });
            }
            let index = stored.len();
            adjacency[u].push((v, index));
            adjacency[v].push((u, index));
            stored.push(Edge { u, v, w });
        }

        let reach = reachable_from(&adjacency, source);
        Ok(Graph {
            n_nodes,
            connected: reach.iter().all(|&r| r),
            terminals_connected: reach[destination],
            edges: stored,
            adjacency,
            source,
            destination,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> &Edge {
        &self.edges[index]
    }

    /// `(neighbor, edge index)` pairs of `node`.
    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node].len()
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn destination(&self) -> NodeId {
        self.destination
    }

    /// Every node is reachable from the source.
    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn destination_reachable(&self) -> bool {
        self.terminals_connected
    }

    pub fn role(&self, node: NodeId) -> NodeRole {
        if node == self.source {
            NodeRole::Source
        } else if node == self.destination {
            NodeRole::Destination
        } else {
            NodeRole::Other
        }
    }

    pub fn edge_index(&self, a: NodeId, b: NodeId) -> Option<usize> {
        if a >= self.n_nodes || b >= self.n_nodes {
            return None;
        }
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, e)| e)
    }

    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.w).fold(0.0, f64::max)
    }

    fn triples(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.edges.iter().map(|e| (e.u, e.v, e.w))
    }

    /// Same nodes and terminals, different edge weights (in edge order).
    pub fn with_weights(&self, weights: &[f64]) -> Result<Graph, GraphError> {
        assert_eq!(weights.len(), self.edges.len(), "one weight per edge");
        Graph::new(
            self.n_nodes,
            self.edges.iter().zip(weights).map(|(e, &w)| (e.u, e.v, w)),
            self.source,
            self.destination,
        )
    }

    /// Returns a copy with an additional edge appended.
    pub fn with_edge(&self, u: NodeId, v: NodeId, w: f64) -> Result<Graph, GraphError> {
        Graph::new(
            self.n_nodes,
            self.triples().chain(std::iter::once((u, v, w))),
            self.source,
            self.destination,
        )
    }

    /// Returns a copy with one isolated node (role "other") appended.
    pub fn with_isolated_node(&self) -> Graph {
        Graph::new(self.n_nodes + 1, self.triples(), self.source, self.destination)
            .expect("adding an isolated node keeps a valid graph")
    }

    /// Removes the edge between `u` and `v`. The result may leave the
    /// destination unreachable; check [`Graph::destination_reachable`].
    pub fn remove_edge(&self, u: NodeId, v: NodeId) -> Result<Graph, GraphError> {
        let index = self
            .edge_index(u, v)
            .ok_or(GraphError::MissingEdge { u, v })?;
        Graph::new(
            self.n_nodes,
            self.triples()
                .enumerate()
                .filter(|&(i, _)| i != index)
                .map(|(_, t)| t),
            self.source,
            self.destination,
        )
    }

    /// Removes a non-terminal node with its incident edges and compacts the
    /// remaining ids. The returned map sends old ids to new ids.
    pub fn remove_node(&self, x: NodeId) -> Result<(Graph, Vec<Option<NodeId>>), GraphError> {
        if x >= self.n_nodes {
            return Err(GraphError::NodeOutOfRange {
                node: x,
                n_nodes: self.n_nodes,
            });
        }
        if x == self.source || x == self.destination {
            return Err(GraphError::TerminalRemoval(x));
        }
        let map: Vec<Option<NodeId>> = (0..self.n_nodes)
            .map(|i| match i.cmp(&x) {
                std::cmp::Ordering::Less => Some(i),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(i - 1),
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| !e.touches(x))
            .map(|e| (map[e.u].unwrap(), map[e.v].unwrap(), e.w));
        let graph = Graph::new(
            self.n_nodes - 1,
            edges,
            map[self.source].unwrap(),
            map[self.destination].unwrap(),
        )?;
        Ok((graph, map))
    }

    /// Relabels node `i` as `perm[i]`. Edge order is kept, so edge `k` of the
    /// result is the image of edge `k` of `self`.
    pub fn permute(&self, perm: &[NodeId]) -> Result<Graph, GraphError> {
        if !is_bijection(perm, self.n_nodes) {
            return Err(GraphError::NotBijection(self.n_nodes));
        }
        Graph::new(
            self.n_nodes,
            self.triples().map(|(u, v, w)| (perm[u], perm[v], w)),
            perm[self.source],
            perm[self.destination],
        )
    }

    /// Edge list sorted by endpoints, for structural comparison independent
    /// of insertion order.
    pub fn canonical_edges(&self) -> Vec<Edge> {
        let mut edges = self.edges.clone();
        edges.sort_by_key(|e| (e.u, e.v));
        edges
    }
}

pub fn is_bijection(perm: &[NodeId], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut hit = vec![false; n];
    for &p in perm {
        if p >= n || hit[p] {
            return false;
        }
        hit[p] = true;
    }
    true
}

pub fn invert_permutation(perm: &[NodeId]) -> Vec<NodeId> {
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    inverse
}

fn reachable_from(adjacency: &[Vec<(NodeId, usize)>], start: NodeId) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(node) = stack.pop() {
        for &(next, _) in &adjacency[node] {
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn minimal_graph() {
        let g = Graph::new(2, [(0, 1, 1.0)], 0, 1).unwrap();
        assert_eq!(g.neighbors(0), &[(1, 0)]);
        assert_eq!(g.neighbors(1), &[(0, 0)]);
        assert!(g.is_connected());
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            Graph::new(3, [(0, 1, 1.0), (1, 0, 2.0)], 0, 2).unwrap_err(),
            GraphError::DuplicateEdge { u: 0, v: 1 }
        );
        assert!(matches!(
            Graph::new(3, [(0, 3, 1.0)], 0, 2),
            Err(GraphError::NodeOutOfRange { node: 3, .. })
        ));
        assert!(matches!(
            Graph::new(3, [(0, 1, 0.0)], 0, 2),
            Err(GraphError::InvalidWeight { .. })
        ));
        assert!(matches!(
            Graph::new(3, [(0, 1, f64::NAN)], 0, 2),
            Err(GraphError::InvalidWeight { .. })
        ));
        assert_eq!(
            Graph::new(3, [(1, 1, 1.0)], 0, 2).unwrap_err(),
            GraphError::SelfLoop(1)
        );
        assert_eq!(
            Graph::new(3, [(0, 1, 1.0)], 1, 1).unwrap_err(),
            GraphError::SameTerminals(1)
        );
    }

    #[test]
    fn edges_are_canonically_oriented() {
        let g = reroute_example();
        assert_eq!(g.n_edges(), 7);
        assert!(g.edges().iter().all(|e| e.u < e.v));
        assert_eq!(g.edge_index(0, 2), Some(0));
        assert_eq!(g.edge_index(4, 2), Some(5));
    }

    #[test]
    fn adjacency_mirrors_edges() {
        let g = reroute_example();
        for i in 0..g.n_nodes() {
            for &(j, e) in g.neighbors(i) {
                assert!(g.edge(e).touches(i) && g.edge(e).touches(j));
                assert!(g.neighbors(j).contains(&(i, e)));
            }
        }
    }

    #[test]
    fn remove_edge_reports_reachability() {
        let g = Graph::new(2, [(0, 1, 1.0)], 0, 1).unwrap();
        let cut = g.remove_edge(0, 1).unwrap();
        assert!(!cut.destination_reachable());
        assert_eq!(
            cut.remove_edge(0, 1).unwrap_err(),
            GraphError::MissingEdge { u: 0, v: 1 }
        );

        let g = reroute_example().remove_edge(2, 4).unwrap();
        assert!(g.destination_reachable());
        assert_eq!(g.n_edges(), 6);
    }

    #[test]
    fn remove_node_compacts_ids() {
        let (g, map) = triangle().remove_node(1).unwrap();
        assert_eq!(map, vec![Some(0), None, Some(1)]);
        assert_eq!(g.edges(), &[Edge { u: 0, v: 1, w: 3.0 }]);
        assert_eq!((g.source(), g.destination()), (0, 1));

        assert_eq!(
            triangle().remove_node(0).unwrap_err(),
            GraphError::TerminalRemoval(0)
        );

        let (g, map) = reroute_example().remove_node(5).unwrap();
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(map[..5], [Some(0), Some(1), Some(2), Some(3), Some(4)]);
        assert_eq!(map[5], None);
        assert_eq!(g.n_edges(), 5);
    }

    #[test]
    fn permutation_round_trip() {
        let g = reroute_example();
        let identity: Vec<_> = (0..6).collect();
        assert_eq!(g.permute(&identity).unwrap(), g);

        let perm = vec![3, 5, 0, 1, 4, 2];
        let back = g
            .permute(&perm)
            .unwrap()
            .permute(&invert_permutation(&perm))
            .unwrap();
        assert_eq!(back, g);

        assert_eq!(
            g.permute(&[0, 0, 1, 2, 3, 4]).unwrap_err(),
            GraphError::NotBijection(6)
        );
    }

    #[test]
    fn roles_one_hot() {
        let g = triangle();
        assert_eq!(g.role(0).one_hot(), [1.0, 0.0, 0.0]);
        assert_eq!(g.role(2).one_hot(), [0.0, 1.0, 0.0]);
        assert_eq!(g.role(1).one_hot(), [0.0, 0.0, 1.0]);
    }
}
