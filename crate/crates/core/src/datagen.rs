//! Synthetic datasets: random connected structures, several weightings per
//! structure, structure-level splits and removal perturbations.
//!
//! Every structure draws from its own ChaCha stream derived from the master
//! seed, so output does not depend on the number of worker threads.

use std::fmt;

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId};
use crate::oracle::{self, OracleError, PathLabels, PathResult};

/// Attempts to find weights with a unique optimal path before giving up.
pub const MAX_WEIGHT_ATTEMPTS: usize = 100;
/// Attempts to find a perturbation that keeps the destination reachable.
pub const MAX_PERTURB_ATTEMPTS: usize = 20;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("no unique optimal path after {0} weight samplings")]
    Ambiguous(usize),
    #[error("perturbation skipped: {0}")]
    PerturbSkipped(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StructureMode {
    /// A fresh topology per structure.
    #[default]
    Varied,
    /// One topology shared by every structure; only weights and terminals vary.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_structures: usize,
    pub weight_samplings_per_structure: usize,
    /// Inclusive node-count range.
    pub node_range: (usize, usize),
    /// Extra non-tree edges per node.
    pub extra_edge_factor: f64,
    /// Edge weights are uniform in `[low, high)`.
    pub weight_range: (f64, f64),
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub structure_mode: StructureMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::desk(0)
    }
}

impl DatasetConfig {
    /// 2,000 structures of 5–15 nodes with 5 weightings each.
    pub fn desk(seed: u64) -> Self {
        DatasetConfig {
            n_structures: 2000,
            weight_samplings_per_structure: 5,
            node_range: (5, 15),
            extra_edge_factor: 1.0,
            weight_range: (1.0, 10.0),
            split: [0.7, 0.15, 0.15],
            seed,
            structure_mode: StructureMode::Varied,
        }
    }

    /// 10,000 structures of up to 30 nodes with 10 weightings each.
    pub fn full_scale(seed: u64) -> Self {
        DatasetConfig {
            n_structures: 10_000,
            weight_samplings_per_structure: 10,
            node_range: (3, 30),
            ..DatasetConfig::desk(seed)
        }
    }

    /// Test-only set spanning 3–50 nodes.
    pub fn testgen(seed: u64) -> Self {
        DatasetConfig {
            n_structures: 300,
            node_range: (3, 50),
            split: [0.0, 0.0, 1.0],
            ..DatasetConfig::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |msg: String| Err(DatagenError::Config(msg));
        let (lo, hi) = self.node_range;
        if lo < 3 || hi < lo {
            return bad(format!("node range {lo}:{hi} must satisfy 3 <= min <= max"));
        }
        let (wl, wh) = self.weight_range;
        if !(wl > 0.0 && wh > wl && wh.is_finite()) {
            return bad(format!("weight range ({wl}, {wh}) must satisfy 0 < low < high"));
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return bad(format!("split fractions {:?} must lie in [0, 1]", self.split));
        }
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("split fractions sum to {sum}, not 1"));
        }
        if !(self.extra_edge_factor >= 0.0 && self.extra_edge_factor.is_finite()) {
            return bad(format!("extra edge factor {} must be >= 0", self.extra_edge_factor));
        }
        if self.weight_samplings_per_structure == 0 {
            return bad("at least one weight sampling per structure is required".into());
        }
        Ok(())
    }
}

/// Unweighted connected topology.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topology {
    pub n_nodes: usize,
    /// Pairs `(u, v)` with `u < v`.
    pub pairs: Vec<(NodeId, NodeId)>,
}

impl Topology {
    /// Sorted edge list, identical for equal topologies.
    pub fn canonical(&self) -> Vec<(NodeId, NodeId)> {
        let mut pairs = self.pairs.clone();
        pairs.sort_unstable();
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    RemoveOptimalEdge,
    RemoveRandomEdge,
    RemoveRandomNonterminalNode,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 3] = [
        PerturbMode::RemoveOptimalEdge,
        PerturbMode::RemoveRandomEdge,
        PerturbMode::RemoveRandomNonterminalNode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::RemoveOptimalEdge => "remove-optimal-edge",
            PerturbMode::RemoveRandomEdge => "remove-random-edge",
            PerturbMode::RemoveRandomNonterminalNode => "remove-random-nonterminal-node",
        }
    }
}

impl fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PerturbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown perturbation mode {s:?}"))
    }
}

/// A labelled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: Graph,
    pub labels: PathLabels,
    /// Optimal path cost.
    pub cost: f64,
    /// Edges on the optimal path.
    pub hops: usize,
    /// Index of the structure the sample was drawn from.
    pub structure: Option<u64>,
    pub perturbation: Option<PerturbMode>,
}

impl Sample {
    /// Labels `graph` with the oracle; fails if the optimum is not unique.
    pub fn from_graph(graph: Graph) -> Result<Sample, DatagenError> {
        let result = oracle::dijkstra(&graph)?;
        if !result.unique {
            return Err(DatagenError::Ambiguous(1));
        }
        Sample::from_result(graph, &result)
    }

    fn from_result(graph: Graph, result: &PathResult) -> Result<Sample, DatagenError> {
        let labels = oracle::labels_from_path(&graph, result)?;
        Ok(Sample {
            graph,
            labels,
            cost: result.cost,
            hops: result.hops(),
            structure: None,
            perturbation: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Structures dropped because no unique optimum was found.
    pub discarded: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits `total` items by `fractions` using the largest-remainder method.
/// Equal remainders favour the later split.
pub fn split_counts(total: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * total as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// A uniform random labelled spanning tree (via a Prüfer sequence) plus
/// `⌊factor · n⌋` distinct extra edges chosen uniformly among the rest.
pub fn gen_structure<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    extra_edge_factor: f64,
) -> Result<Topology, DatagenError> {
    if n < 3 {
        return Err(DatagenError::Config(format!("structures need at least 3 nodes, got {n}")));
    }
    let prufer: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
    let mut pairs = prufer_tree(n, &prufer);

    let mut in_tree = vec![false; n * n];
    for &(u, v) in &pairs {
        in_tree[u * n + v] = true;
    }
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|&(u, v)| !in_tree[u * n + v])
        .collect();
    let wanted = (extra_edge_factor * n as f64).floor() as usize;
    let extra = if wanted > candidates.len() {
        warn!(
            "requested {wanted} extra edges but only {} are available for n = {n}; clamping",
            candidates.len()
        );
        candidates.len()
    } else {
        wanted
    };
    let mut chosen: Vec<usize> = index::sample(rng, candidates.len(), extra).into_vec();
    chosen.sort_unstable();
    pairs.extend(chosen.into_iter().map(|i| candidates[i]));
    Ok(Topology { n_nodes: n, pairs })
}

fn prufer_tree(n: usize, seq: &[usize]) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).expect("a leaf always exists");
        edges.push((leaf.min(s), leaf.max(s)));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Picks distinct source and destination uniformly.
pub fn sample_terminals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (NodeId, NodeId) {
    let s = rng.gen_range(0..n);
    let mut d = rng.gen_range(0..n - 1);
    if d >= s {
        d += 1;
    }
    (s, d)
}

/// A weighted, labelled instance of a topology.
#[derive(Debug, Clone)]
pub struct Weighted {
    pub sample: Sample,
    /// Weight samplings used (1 when the first draw had a unique optimum).
    pub attempts: usize,
}

/// Draws i.i.d. uniform weights until the optimal path is unique.
pub fn assign_weights<R: Rng + ?Sized>(
    rng: &mut R,
    topology: &Topology,
    weight_range: (f64, f64),
    source: NodeId,
    destination: NodeId,
) -> Result<Weighted, DatagenError> {
    let (low, high) = weight_range;
    for attempt in 1..=MAX_WEIGHT_ATTEMPTS {
        let edges = topology
            .pairs
            .iter()
            .map(|&(u, v)| (u, v, rng.gen_range(low..high)));
        let graph = Graph::new(topology.n_nodes, edges, source, destination)?;
        let result = oracle::dijkstra(&graph)?;
        if result.unique {
            return Ok(Weighted {
                sample: Sample::from_result(graph, &result)?,
                attempts: attempt,
            });
        }
    }
    Err(DatagenError::Ambiguous(MAX_WEIGHT_ATTEMPTS))
}

fn structure_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gen_topology(rng: &mut ChaCha8Rng, cfg: &DatasetConfig) -> Result<Topology, DatagenError> {
    let n = rng.gen_range(cfg.node_range.0..=cfg.node_range.1);
    gen_structure(rng, n, cfg.extra_edge_factor)
}

/// Generates the weighted variants of structure `index`.
pub fn gen_structure_samples(
    cfg: &DatasetConfig,
    index: u64,
    shared: Option<&Topology>,
) -> Result<Vec<Sample>, DatagenError> {
    let mut rng = structure_rng(cfg.seed, index);
    let topology = match shared {
        Some(t) => t.clone(),
        None => gen_topology(&mut rng, cfg)?,
    };
    (0..cfg.weight_samplings_per_structure)
        .map(|_| {
            let (s, d) = sample_terminals(&mut rng, topology.n_nodes);
            let mut sample = assign_weights(&mut rng, &topology, cfg.weight_range, s, d)?.sample;
            sample.structure = Some(index);
            Ok(sample)
        })
        .collect()
}

/// Builds a dataset; every weighted variant of a structure lands in the same
/// split. Structures are assigned to train, val and test in index order.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset, DatagenError> {
    cfg.validate()?;
    let shared = match cfg.structure_mode {
        StructureMode::Varied => None,
        StructureMode::Fixed => Some(gen_topology(&mut structure_rng(cfg.seed, u64::MAX), cfg)?),
    };
    let per_structure: Vec<Result<Vec<Sample>, DatagenError>> = (0..cfg.n_structures as u64)
        .into_par_iter()
        .map(|i| gen_structure_samples(cfg, i, shared.as_ref()))
        .collect();

    let [n_train, n_val, _] = split_counts(cfg.n_structures, cfg.split);
    let mut dataset = Dataset {
        config: cfg.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        discarded: 0,
    };
    for (i, result) in per_structure.into_iter().enumerate() {
        let samples = match result {
            Ok(samples) => samples,
            Err(DatagenError::Ambiguous(n)) => {
                warn!("structure {i} discarded: no unique optimum after {n} weightings");
                dataset.discarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let target = if i < n_train {
            &mut dataset.train
        } else if i < n_train + n_val {
            &mut dataset.val
        } else {
            &mut dataset.test
        };
        target.extend(samples);
    }
    Ok(dataset)
}

/// Removes an edge or node and relabels with the oracle.
pub fn perturb<R: Rng + ?Sized>(
    sample: &Sample,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<Sample, DatagenError> {
    let g = &sample.graph;
    let skip = |why: &str| Err(DatagenError::PerturbSkipped(format!("{mode}: {why}")));
    let path_edges: Vec<usize> = (0..g.n_edges()).filter(|&e| sample.labels.edges[e]).collect();
    let others: Vec<NodeId> = (0..g.n_nodes())
        .filter(|&i| i != g.source() && i != g.destination())
        .collect();
    if g.n_edges() == 0 || (mode == PerturbMode::RemoveRandomNonterminalNode && others.is_empty()) {
        return skip("nothing to remove");
    }

    for _ in 0..MAX_PERTURB_ATTEMPTS {
        let mutated = match mode {
            PerturbMode::RemoveOptimalEdge | PerturbMode::RemoveRandomEdge => {
                let e = if mode == PerturbMode::RemoveOptimalEdge && !path_edges.is_empty() {
                    path_edges[rng.gen_range(0..path_edges.len())]
                } else {
                    rng.gen_range(0..g.n_edges())
                };
                let edge = g.edge(e);
                g.remove_edge(edge.u, edge.v)?
            }
            PerturbMode::RemoveRandomNonterminalNode => {
                g.remove_node(others[rng.gen_range(0..others.len())])?.0
            }
        };
        if !mutated.destination_reachable() {
            continue;
        }
        let result = oracle::dijkstra(&mutated)?;
        if !result.unique {
            continue;
        }
        let mut out = Sample::from_result(mutated, &result)?;
        out.structure = sample.structure;
        out.perturbation = Some(mode);
        return Ok(out);
    }
    skip(&format!(
        "destination unreachable or optimum ambiguous after {MAX_PERTURB_ATTEMPTS} attempts"
    ))
}

/// Perturbed variants of `samples`, cycling through the modes. Samples that
/// cannot be perturbed are skipped; the second value counts them.
pub fn perturb_all(samples: &[Sample], modes: &[PerturbMode], seed: u64) -> (Vec<Sample>, usize) {
    let results: Vec<Result<Sample, DatagenError>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = structure_rng(seed, i as u64);
            perturb(s, modes[i % modes.len()], &mut rng)
        })
        .collect();
    let mut skipped = 0;
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(e) => {
                log::debug!("{e}");
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

/// Graphs of exactly `n_nodes` nodes bucketed by optimal hop count, at least
/// `per_bucket` graphs for every hop count in `1..=max_hops`.
pub fn gen_hop_buckets(
    n_nodes: usize,
    extra_edge_factor: f64,
    max_hops: usize,
    per_bucket: usize,
    seed: u64,
    max_draws: usize,
) -> Result<Vec<Vec<Sample>>, DatagenError> {
    let cfg = DatasetConfig {
        node_range: (n_nodes, n_nodes),
        extra_edge_factor,
        weight_samplings_per_structure: 1,
        ..DatasetConfig::desk(seed)
    };
    cfg.validate()?;
    let mut buckets: Vec<Vec<Sample>> = vec![Vec::new(); max_hops];
    for i in 0..max_draws as u64 {
        if buckets.iter().all(|b| b.len() >= per_bucket) {
            return Ok(buckets);
        }
        let sample = match gen_structure_samples(&cfg, i, None) {
            Ok(mut s) => s.remove(0),
            Err(DatagenError::Ambiguous(_)) => continue,
            Err(e) => return Err(e),
        };
        if (1..=max_hops).contains(&sample.hops) && buckets[sample.hops - 1].len() < per_bucket {
            buckets[sample.hops - 1].push(sample);
        }
    }
    Err(DatagenError::Config(format!(
        "could not fill {max_hops} hop buckets with {per_bucket} graphs of {n_nodes} nodes in {max_draws} draws (got {:?})",
        buckets.iter().map(Vec::len).collect::<Vec<_>>()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    fn is_connected(t: &Topology) -> bool {
        let edges = t.pairs.iter().map(|&(u, v)| (u, v, 1.0));
        Graph::new(t.n_nodes, edges, 0, 1).unwrap().is_connected()
    }

    #[test]
    fn tree_only_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = gen_structure(&mut rng, 3, 0.0).unwrap();
        assert_eq!(t.pairs.len(), 2);
        assert!(is_connected(&t));
        assert!(gen_structure(&mut rng, 2, 0.0).is_err());
    }

    #[test]
    fn structure_edge_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = gen_structure(&mut rng, 30, 1.0).unwrap();
        assert_eq!(t.pairs.len(), 59);
        let mut c = t.canonical();
        c.dedup();
        assert_eq!(c.len(), 59);
        assert!(is_connected(&t));
    }

    #[test]
    fn extra_edges_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = gen_structure(&mut rng, 4, 10.0).unwrap();
        assert_eq!(t.pairs.len(), 6);
    }

    #[test]
    fn largest_remainder_split() {
        assert_eq!(split_counts(10, [0.7, 0.15, 0.15]), [7, 1, 2]);
        assert_eq!(split_counts(2000, [0.7, 0.15, 0.15]), [1400, 300, 300]);
        assert_eq!(split_counts(7, [0.0, 0.0, 1.0]), [0, 0, 7]);
        assert_eq!(split_counts(3, [1.0 / 3.0; 3]).iter().sum::<usize>(), 3);
    }

    #[test]
    fn small_dataset_counts() {
        let cfg = DatasetConfig {
            n_structures: 10,
            weight_samplings_per_structure: 10,
            ..DatasetConfig::desk(5)
        };
        let ds = gen_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (70, 10, 20));
        assert_eq!(gen_dataset(&cfg).unwrap(), ds);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DatasetConfig::desk(0);
        cfg.split = [0.7, 0.2, 0.2];
        assert!(cfg.validate().is_err());
        let cfg = DatasetConfig {
            node_range: (2, 5),
            ..DatasetConfig::desk(0)
        };
        assert!(cfg.validate().is_err());
        let cfg = DatasetConfig {
            weight_range: (0.0, 1.0),
            ..DatasetConfig::desk(0)
        };
        assert!(cfg.validate().is_err());
        assert!(DatasetConfig::full_scale(0).validate().is_ok());
        assert!(DatasetConfig::testgen(0).validate().is_ok());
    }

    #[test]
    fn two_node_topology_is_always_unique() {
        let t = Topology {
            n_nodes: 2,
            pairs: vec![(0, 1)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = assign_weights(&mut rng, &t, (1.0, 10.0), 0, 1).unwrap();
        assert_eq!(w.attempts, 1);
        assert_eq!(w.sample.labels.edges, vec![true]);
    }

    #[test]
    fn fixed_structure_mode_shares_topology() {
        let cfg = DatasetConfig {
            n_structures: 6,
            weight_samplings_per_structure: 2,
            structure_mode: StructureMode::Fixed,
            ..DatasetConfig::desk(9)
        };
        let ds = gen_dataset(&cfg).unwrap();
        let first: Vec<_> = ds.train[0].graph.edges().iter().map(|e| (e.u, e.v)).collect();
        for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            let pairs: Vec<_> = s.graph.edges().iter().map(|e| (e.u, e.v)).collect();
            assert_eq!(pairs, first);
        }
    }

    fn labelled(g: Graph) -> Sample {
        Sample::from_graph(g).unwrap()
    }

    #[test]
    fn remove_optimal_edge_reroutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = perturb(&labelled(reroute_example()), PerturbMode::RemoveOptimalEdge, &mut rng)
            .unwrap();
        assert_eq!(s.cost, 7.0);
        assert_eq!(s.hops, 5);
        assert_eq!(s.labels.nodes, vec![true; 6]);
        assert_eq!(s.perturbation, Some(PerturbMode::RemoveOptimalEdge));
    }

    #[test]
    fn unrecoverable_perturbation_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let two = labelled(Graph::new(2, [(0, 1, 1.0)], 0, 1).unwrap());
        for mode in PerturbMode::ALL {
            assert!(matches!(
                perturb(&two, mode, &mut rng),
                Err(DatagenError::PerturbSkipped(_))
            ));
        }
    }

    #[test]
    fn node_removal_on_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = perturb(
            &labelled(triangle()),
            PerturbMode::RemoveRandomNonterminalNode,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.graph.n_nodes(), 2);
        assert_eq!(s.labels.edges, vec![true]);
        assert_eq!(s.cost, 3.0);
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in PerturbMode::ALL {
            assert_eq!(mode.name().parse::<PerturbMode>().unwrap(), mode);
        }
        assert!("remove-everything".parse::<PerturbMode>().is_err());
    }
}
