//! Exact shortest paths for ground-truth labels.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::graph::{Graph, NodeId};

/// Costs closer than this are treated as ties when deciding uniqueness.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Largest graph the exhaustive enumerator accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("destination {destination} is unreachable from source {from}")]
    NoPath { from: NodeId, destination: NodeId },
    #[error("brute-force enumeration is limited to {max} nodes, graph has {n_nodes}")]
    TooLarge { n_nodes: usize, max: usize },
    #[error("path is not realizable in the graph: {0}")]
    InvalidPath(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub path: Vec<NodeId>,
    pub cost: f64,
    /// No other simple path reaches the same cost.
    pub unique: bool,
}

impl PathResult {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

/// Per-node and per-edge membership in the optimal path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathLabels {
    pub nodes: Vec<bool>,
    pub edges: Vec<bool>,
}

impl PathLabels {
    pub fn path_nodes(&self) -> usize {
        self.nodes.iter().filter(|&&b| b).count()
    }

    pub fn path_edges(&self) -> usize {
        self.edges.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: NodeId,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Smaller distance first, then smaller node id.
    fn cmp(&self, other: &Self) -> Ordering {
        Reverse(self.dist)
            .partial_cmp(&Reverse(other.dist))
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the source, stopping once the destination is settled.
///
/// Uniqueness is decided by counting shortest paths: whenever a relaxation
/// ties the current distance (within [`TIE_TOLERANCE`]) the predecessor's
/// count is added. All weights are positive, so a node's count is final when
/// it is popped.
pub fn dijkstra(g: &Graph) -> Result<PathResult, OracleError> {
    let n = g.n_nodes();
    let (source, destination) = (g.source(), g.destination());
    let mut dist = vec![f64::INFINITY; n];
    let mut count = vec![0u64; n];
    let mut pred = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();

    dist[source] = 0.0;
    count[source] = 1;
    heap.push(Entry {
        dist: 0.0,
        node: source,
    });

    while let Some(Entry { dist: d, node }) = heap.pop() {
        if settled[node] || d > dist[node] {
            continue;
        }
        settled[node] = true;
        if node == destination {
            break;
        }
        for &(next, e) in g.neighbors(node) {
            if settled[next] {
                continue;
            }
            let candidate = d + g.edge(e).w;
            if candidate < dist[next] - TIE_TOLERANCE {
                dist[next] = candidate;
                count[next] = count[node];
                pred[next] = node;
                heap.push(Entry {
                    dist: candidate,
                    node: next,
                });
            } else if (candidate - dist[next]).abs() <= TIE_TOLERANCE {
                count[next] = count[next].saturating_add(count[node]);
            }
        }
    }

    if !settled[destination] {
        return Err(OracleError::NoPath {
            from: source,
            destination,
        });
    }
    let mut path = vec![destination];
    while let Some(&last) = path.last() {
        if last == source {
            break;
        }
        path.push(pred[last]);
    }
    path.reverse();
    Ok(PathResult {
        path,
        cost: dist[destination],
        unique: count[destination] == 1,
    })
}

/// Enumerates every simple source→destination path. Test oracle only.
pub fn brute_force_shortest(g: &Graph) -> Result<PathResult, OracleError> {
    if g.n_nodes() > BRUTE_FORCE_MAX_NODES {
        return Err(OracleError::TooLarge {
            n_nodes: g.n_nodes(),
            max: BRUTE_FORCE_MAX_NODES,
        });
    }

    struct Search<'a> {
        g: &'a Graph,
        on_path: Vec<bool>,
        path: Vec<NodeId>,
        best: Option<(f64, Vec<NodeId>)>,
        ties: usize,
    }

    impl Search<'_> {
        fn visit(&mut self, node: NodeId, cost: f64) {
            if node == self.g.destination() {
                match &self.best {
                    Some((best, _)) if (cost - best).abs() <= TIE_TOLERANCE => self.ties += 1,
                    Some((best, _)) if cost > *best => {}
                    _ => {
                        self.best = Some((cost, self.path.clone()));
                        self.ties = 1;
                    }
                }
                return;
            }
            for &(next, e) in self.g.neighbors(node) {
                if self.on_path[next] {
                    continue;
                }
                self.on_path[next] = true;
                self.path.push(next);
                self.visit(next, cost + self.g.edge(e).w);
                self.path.pop();
                self.on_path[next] = false;
            }
        }
    }

    let mut search = Search {
        g,
        on_path: vec![false; g.n_nodes()],
        path: vec![g.source()],
        best: None,
        ties: 0,
    };
    search.on_path[g.source()] = true;
    search.visit(g.source(), 0.0);

    match search.best {
        Some((cost, path)) => Ok(PathResult {
            path,
            cost,
            unique: search.ties == 1,
        }),
        None => Err(OracleError::NoPath {
            from: g.source(),
            destination: g.destination(),
        }),
    }
}

/// Marks the nodes and edges traversed by `result.path`.
pub fn labels_from_path(g: &Graph, result: &PathResult) -> Result<PathLabels, OracleError> {
    let path = &result.path;
    if path.first() != Some(&g.source()) || path.last() != Some(&g.destination()) {
        return Err(OracleError::InvalidPath(format!(
            "path {path:?} does not run from {} to {}",
            g.source(),
            g.destination()
        )));
    }
    let mut nodes = vec![false; g.n_nodes()];
    let mut edges = vec![false; g.n_edges()];
    for &node in path {
        if node >= g.n_nodes() {
            return Err(OracleError::InvalidPath(format!("node {node} out of range")));
        }
        if nodes[node] {
            return Err(OracleError::InvalidPath(format!("node {node} repeats")));
        }
        nodes[node] = true;
    }
    for pair in path.windows(2) {
        let e = g.edge_index(pair[0], pair[1]).ok_or_else(|| {
            OracleError::InvalidPath(format!("no edge between {} and {}", pair[0], pair[1]))
        })?;
        edges[e] = true;
    }
    Ok(PathLabels { nodes, edges })
}

/// Dijkstra followed by [`labels_from_path`].
pub fn label(g: &Graph) -> Result<(PathResult, PathLabels), OracleError> {
    let result = dijkstra(g)?;
    let labels = labels_from_path(g, &result)?;
    Ok((result, labels))
}
