//! Path Accuracy, generalization sweeps, rerouting and latency benchmarks.
//!
//! A sample counts as correct only when every node and every edge is
//! classified correctly at threshold 0.5. There is no partial credit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{self, DatagenError, DatasetConfig, PerturbMode, Sample};
use crate::graph::{Graph, NodeId};
use crate::model::{Model, ModelError, Predictions};
use crate::oracle;
use crate::trainer::LossMode;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty sample set")]
    Empty,
    #[error("timing bucket for {hops} hops has {got} graphs, need at least {need}")]
    SmallBucket { hops: usize, got: usize, need: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
}

/// How per-node and per-edge decisions are derived from predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    /// Threshold both heads.
    #[default]
    Direct,
    /// Threshold nodes; an edge is on the path iff both endpoints are.
    EdgesFromNodes,
    /// Threshold edges; a node is on the path iff it touches a chosen edge.
    NodesFromEdges,
}

impl From<LossMode> for DecisionRule {
    /// A head trained without loss carries no signal, so its decisions are
    /// derived from the trained head.
    fn from(mode: LossMode) -> Self {
        match mode {
            LossMode::Both => DecisionRule::Direct,
            LossMode::NodesOnly => DecisionRule::EdgesFromNodes,
            LossMode::EdgesOnly => DecisionRule::NodesFromEdges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decisions {
    pub nodes: Vec<bool>,
    pub edges: Vec<bool>,
}

pub fn decide(pred: &Predictions, g: &Graph, rule: DecisionRule) -> Decisions {
    match rule {
        DecisionRule::Direct => Decisions {
            nodes: pred.node_decisions(),
            edges: pred.edge_decisions(),
        },
        DecisionRule::EdgesFromNodes => {
            let nodes = pred.node_decisions();
            let edges = g.edges().iter().map(|e| nodes[e.u] && nodes[e.v]).collect();
            Decisions { nodes, edges }
        }
        DecisionRule::NodesFromEdges => {
            let edges = pred.edge_decisions();
            let mut nodes = vec![false; g.n_nodes()];
            for (e, _) in g.edges().iter().zip(&edges).filter(|(_, &on)| on) {
                nodes[e.u] = true;
                nodes[e.v] = true;
            }
            Decisions { nodes, edges }
        }
    }
}

/// Anything that scores the nodes and edges of a graph.
pub trait Predictor: Sync {
    fn predict(&self, g: &Graph) -> Result<Predictions, ModelError>;

    fn rule(&self) -> DecisionRule {
        DecisionRule::Direct
    }

    fn decisions(&self, g: &Graph) -> Result<Decisions, ModelError> {
        Ok(decide(&self.predict(g)?, g, self.rule()))
    }
}

impl Predictor for Model {
    fn predict(&self, g: &Graph) -> Result<Predictions, ModelError> {
        Model::predict(self, g)
    }
}

/// A model paired with the decision rule matching how it was trained.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: Model,
    pub rule: DecisionRule,
}

impl Predictor for Classifier {
    fn predict(&self, g: &Graph) -> Result<Predictions, ModelError> {
        self.model.predict(g)
    }

    fn rule(&self) -> DecisionRule {
        self.rule
    }
}

/// Answers with the exact oracle labels as 0/1 probabilities.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, g: &Graph) -> Result<Predictions, ModelError> {
        let (_, labels) = oracle::label(g).map_err(|e| ModelError::Config(e.to_string()))?;
        let as_prob = |b: &bool| if *b { 1.0 } else { 0.0 };
        Ok(Predictions {
            node_probs: labels.nodes.iter().map(as_prob).collect(),
            edge_probs: labels.edges.iter().map(as_prob).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub path_accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub by_nodes: BTreeMap<usize, Bucket>,
    pub by_hops: BTreeMap<usize, Bucket>,
    pub by_perturbation: BTreeMap<String, Bucket>,
}

impl EvalReport {
    /// `kind,bucket,correct,total,accuracy` rows, headed by the overall line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,bucket,correct,total,accuracy\n");
        let _ = writeln!(
            out,
            "overall,all,{},{},{:.6}",
            self.correct, self.total, self.path_accuracy
        );
        let mut rows = |kind: &str, key: String, b: &Bucket| {
            let _ = writeln!(out, "{kind},{key},{},{},{:.6}", b.correct, b.total, b.accuracy());
        };
        for (k, b) in &self.by_nodes {
            rows("nodes", k.to_string(), b);
        }
        for (k, b) in &self.by_hops {
            rows("hops", k.to_string(), b);
        }
        for (k, b) in &self.by_perturbation {
            rows("perturbation", k.clone(), b);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "path accuracy {:.4} ({}/{})\n",
            self.path_accuracy, self.correct, self.total
        );
        let _ = writeln!(out, "by node count:");
        for (k, b) in &self.by_nodes {
            let _ = writeln!(out, "  {k:>3}: {:.4} ({}/{})", b.accuracy(), b.correct, b.total);
        }
        let _ = writeln!(out, "by hop count:");
        for (k, b) in &self.by_hops {
            let _ = writeln!(out, "  {k:>3}: {:.4} ({}/{})", b.accuracy(), b.correct, b.total);
        }
        let _ = writeln!(out, "by perturbation:");
        for (k, b) in &self.by_perturbation {
            let _ = writeln!(out, "  {k}: {:.4} ({}/{})", b.accuracy(), b.correct, b.total);
        }
        out
    }
}

/// Whether every node and edge decision matches the labels.
pub fn sample_correct(decisions: &Decisions, sample: &Sample) -> bool {
    decisions.nodes == sample.labels.nodes && decisions.edges == sample.labels.edges
}

/// Per-sample all-or-nothing correctness, in input order.
pub fn correctness<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[Sample],
) -> Result<Vec<bool>, EvalError> {
    samples
        .par_iter()
        .map(|s| Ok(sample_correct(&predictor.decisions(&s.graph)?, s)))
        .collect()
}

pub fn path_accuracy<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[Sample],
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let flags = correctness(predictor, samples)?;
    let mut report = EvalReport {
        path_accuracy: 0.0,
        correct: 0,
        total: samples.len(),
        by_nodes: BTreeMap::new(),
        by_hops: BTreeMap::new(),
        by_perturbation: BTreeMap::new(),
    };
    for (s, &ok) in samples.iter().zip(&flags) {
        report.correct += usize::from(ok);
        report.by_nodes.entry(s.graph.n_nodes()).or_default().add(ok);
        report.by_hops.entry(s.hops).or_default().add(ok);
        let mode = s.perturbation.map_or("none", PerturbMode::name);
        report.by_perturbation.entry(mode.to_string()).or_default().add(ok);
    }
    report.path_accuracy = report.correct as f64 / report.total as f64;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nodes: usize,
    pub samples: usize,
    pub accuracy: f64,
}

/// Fresh samples of exactly `size` nodes for every entry of `sizes`,
/// structured like `base` otherwise.
pub fn sweep_samples(
    base: &DatasetConfig,
    sizes: &[usize],
    samples_per_size: usize,
) -> Result<Vec<(usize, Vec<Sample>)>, EvalError> {
    sizes
        .iter()
        .map(|&size| {
            let per = base.weight_samplings_per_structure.max(1);
            let cfg = DatasetConfig {
                n_structures: samples_per_size.div_ceil(per),
                node_range: (size, size),
                split: [0.0, 0.0, 1.0],
                seed: base.seed.wrapping_add(size as u64),
                ..base.clone()
            };
            let mut samples = datagen::gen_dataset(&cfg)?.test;
            samples.truncate(samples_per_size);
            Ok((size, samples))
        })
        .collect()
}

/// Path Accuracy per node count over freshly generated graphs.
pub fn node_count_sweep<P: Predictor + ?Sized>(
    predictor: &P,
    base: &DatasetConfig,
    sizes: &[usize],
    samples_per_size: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    sweep_samples(base, sizes, samples_per_size)?
        .into_iter()
        .map(|(nodes, samples)| {
            let report = path_accuracy(predictor, &samples)?;
            Ok(SweepRow {
                nodes,
                samples: samples.len(),
                accuracy: report.path_accuracy,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("nodes,samples,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.nodes, r.samples, r.accuracy);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReroutingReport {
    pub report: EvalReport,
    pub perturbed: Vec<Sample>,
    /// Samples that could not be perturbed without disconnecting them.
    pub skipped: usize,
    /// Every perturbed sample's stored labels equal a fresh oracle labelling.
    pub labels_verified: bool,
}

/// Perturbs every sample with `mode`, relabels with the oracle and scores
/// the predictor on the result.
pub fn rerouting_eval<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[Sample],
    mode: PerturbMode,
    seed: u64,
) -> Result<ReroutingReport, EvalError> {
    let (perturbed, skipped) = datagen::perturb_all(samples, &[mode], seed);
    let labels_verified = perturbed.par_iter().all(|s| {
        oracle::label(&s.graph).is_ok_and(|(r, labels)| r.unique && labels == s.labels)
    });
    let report = path_accuracy(predictor, &perturbed)?;
    Ok(ReroutingReport {
        report,
        perturbed,
        skipped,
        labels_verified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeFailure {
    /// The chosen edges do not connect source to destination.
    Disconnected,
    /// A node has more than two chosen edges, or chosen edges lie off the
    /// source→destination chain.
    Branching,
    /// The chain's nodes differ from the nodes predicted on the path.
    NodeEdgeMismatch,
}

/// Reads a source→destination path off thresholded predictions.
pub fn decode_path(pred: &Predictions, g: &Graph) -> Result<Vec<NodeId>, DecodeFailure> {
    let edges = pred.edge_decisions();
    let nodes = pred.node_decisions();
    let mut degree = vec![0usize; g.n_nodes()];
    for (e, _) in g.edges().iter().zip(&edges).filter(|(_, &on)| on) {
        degree[e.u] += 1;
        degree[e.v] += 1;
    }
    if degree.iter().any(|&d| d > 2) {
        return Err(DecodeFailure::Branching);
    }
    if degree[g.source()] == 0 || degree[g.destination()] == 0 {
        return Err(DecodeFailure::Disconnected);
    }
    if degree[g.source()] != 1 || degree[g.destination()] != 1 {
        return Err(DecodeFailure::Branching);
    }

    let mut path = vec![g.source()];
    let mut used = 0;
    let mut prev = usize::MAX;
    let mut current = g.source();
    while current != g.destination() {
        let next = g
            .neighbors(current)
            .iter()
            .find(|&&(j, e)| edges[e] && j != prev)
            .map(|&(j, _)| j);
        match next {
            Some(j) => {
                used += 1;
                prev = current;
                current = j;
                path.push(j);
            }
            None => return Err(DecodeFailure::Disconnected),
        }
    }
    if used != edges.iter().filter(|&&on| on).count() {
        return Err(DecodeFailure::Branching);
    }
    let mut on_path = vec![false; g.n_nodes()];
    for &v in &path {
        on_path[v] = true;
    }
    if on_path != nodes {
        return Err(DecodeFailure::NodeEdgeMismatch);
    }
    Ok(path)
}

/// Smallest population of a timing bucket.
pub const MIN_TIMING_BUCKET: usize = 50;
/// Fewest timed repetitions per graph.
pub const MIN_TIMING_REPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub hops: usize,
    pub graphs: usize,
    pub model_seconds: f64,
    pub oracle_seconds: f64,
    pub model_relative: f64,
    pub oracle_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    /// Largest over smallest normalized model time.
    pub fn model_spread(&self) -> f64 {
        let (lo, hi) = self
            .rows
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
                (lo.min(r.model_relative), hi.max(r.model_relative))
            });
        hi / lo
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "hops,graphs,model_seconds,oracle_seconds,model_relative,oracle_relative\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.9},{:.6},{:.6}",
                r.hops, r.graphs, r.model_seconds, r.oracle_seconds, r.model_relative, r.oracle_relative
            );
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times model inference and Dijkstra on graphs grouped by hop count.
///
/// `buckets[k]` holds graphs whose optimal path has `k + 1` hops. Each graph
/// gets one untimed warmup and `reps` timed repetitions; a repetition runs
/// Dijkstra `oracle_batch` times so it stays well above timer resolution.
/// Repetitions sweep all buckets in turn, so slow drift affects every bucket
/// alike. Per-graph medians are averaged per bucket and both series are
/// divided by their 1-hop value. Runs on the calling thread.
pub fn timing_benchmark(
    model: &Model,
    buckets: &[Vec<Graph>],
    reps: usize,
    oracle_batch: usize,
) -> Result<TimingReport, EvalError> {
    for (k, b) in buckets.iter().enumerate() {
        if b.len() < MIN_TIMING_BUCKET {
            return Err(EvalError::SmallBucket {
                hops: k + 1,
                got: b.len(),
                need: MIN_TIMING_BUCKET,
            });
        }
    }
    let reps = reps.max(MIN_TIMING_REPS);
    let oracle_batch = oracle_batch.max(1);
    let mut model_times: Vec<Vec<Vec<f64>>> =
        buckets.iter().map(|b| vec![Vec::with_capacity(reps); b.len()]).collect();
    let mut oracle_times = model_times.clone();

    for g in buckets.iter().flatten() {
        black_box(model.predict(g)?);
        black_box(oracle::dijkstra(g).ok());
    }
    for _ in 0..reps {
        for (k, bucket) in buckets.iter().enumerate() {
            for (i, g) in bucket.iter().enumerate() {
                let start = Instant::now();
                black_box(model.predict(black_box(g))?);
                model_times[k][i].push(start.elapsed().as_secs_f64());

                let start = Instant::now();
                for _ in 0..oracle_batch {
                    black_box(oracle::dijkstra(black_box(g)).ok());
                }
                oracle_times[k][i].push(start.elapsed().as_secs_f64() / oracle_batch as f64);
            }
        }
    }

    let bucket_mean = |times: &mut Vec<Vec<f64>>| {
        let n = times.len() as f64;
        times.iter_mut().map(|t| median(t)).sum::<f64>() / n
    };
    let mut rows: Vec<TimingRow> = model_times
        .iter_mut()
        .zip(oracle_times.iter_mut())
        .enumerate()
        .map(|(k, (m, o))| TimingRow {
            hops: k + 1,
            graphs: m.len(),
            model_seconds: bucket_mean(m),
            oracle_seconds: bucket_mean(o),
            model_relative: 0.0,
            oracle_relative: 0.0,
        })
        .collect();
    if let Some(first) = rows.first().cloned() {
        for r in &mut rows {
            r.model_relative = r.model_seconds / first.model_seconds;
            r.oracle_relative = r.oracle_seconds / first.oracle_seconds;
        }
    }
    Ok(TimingReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Train and test Path Accuracy for several named predictors on the same
/// sample sets.
pub fn table_report(
    entries: &[(String, &dyn Predictor, &[Sample])],
    test: &[Sample],
) -> Result<Vec<TableRow>, EvalError> {
    entries
        .iter()
        .map(|(name, predictor, train)| {
            Ok(TableRow {
                name: name.clone(),
                train_accuracy: path_accuracy(*predictor, train)?.path_accuracy,
                test_accuracy: path_accuracy(*predictor, test)?.path_accuracy,
            })
        })
        .collect()
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("model,train_path_accuracy,test_path_accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.name, r.train_accuracy, r.test_accuracy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    fn perfect(g: &Graph) -> Predictions {
        OraclePredictor.predict(g).unwrap()
    }

    fn labelled(g: Graph) -> Sample {
        Sample::from_graph(g).unwrap()
    }

    #[test]
    fn oracle_predictor_is_perfect() {
        let samples = vec![labelled(triangle()), labelled(reroute_example())];
        let report = path_accuracy(&OraclePredictor, &samples).unwrap();
        assert_eq!(report.path_accuracy, 1.0);
        assert!(matches!(
            path_accuracy(&OraclePredictor, &[]),
            Err(EvalError::Empty)
        ));
    }

    struct FlipOneEdge;

    impl Predictor for FlipOneEdge {
        fn predict(&self, g: &Graph) -> Result<Predictions, ModelError> {
            let mut p = perfect(g);
            if g.n_nodes() == 6 {
                // (3, 4) is off the optimal path
                let e = g.edge_index(3, 4).unwrap();
                p.edge_probs[e] = 0.9;
            }
            Ok(p)
        }
    }

    #[test]
    fn one_wrong_edge_fails_the_sample() {
        let samples = vec![labelled(triangle()), labelled(reroute_example())];
        let report = path_accuracy(&FlipOneEdge, &samples).unwrap();
        assert_eq!(report.path_accuracy, 0.5);
        assert_eq!(report.by_nodes[&6], Bucket { correct: 0, total: 1 });
        let total: usize = report.by_hops.values().map(|b| b.total).sum();
        assert_eq!(total, report.total);
    }

    #[test]
    fn decode_perfect_triangle() {
        let g = triangle();
        assert_eq!(decode_path(&perfect(&g), &g), Ok(vec![0, 1, 2]));
    }

    #[test]
    fn decode_failures() {
        let g = triangle();
        let none = Predictions {
            node_probs: vec![0.9; 3],
            edge_probs: vec![0.1; 3],
        };
        assert_eq!(decode_path(&none, &g), Err(DecodeFailure::Disconnected));

        let cycle = Predictions {
            node_probs: vec![0.9; 3],
            edge_probs: vec![0.9; 3],
        };
        assert_eq!(decode_path(&cycle, &g), Err(DecodeFailure::Branching));

        let mut mismatch = perfect(&g);
        mismatch.node_probs[1] = 0.2;
        assert_eq!(decode_path(&mismatch, &g), Err(DecodeFailure::NodeEdgeMismatch));
    }

    #[test]
    fn decision_rules() {
        let g = reroute_example();
        let pred = Predictions {
            node_probs: vec![0.1, 0.1, 0.9, 0.9, 0.9, 0.1],
            edge_probs: vec![0.1, 0.1, 0.1, 0.1, 0.1, 0.9, 0.1],
        };
        // nodes 3 and 4 are both chosen, so the derived rule also picks (3, 4)
        let from_nodes = decide(&pred, &g, DecisionRule::EdgesFromNodes);
        assert!(from_nodes.edges[g.edge_index(3, 4).unwrap()]);
        let from_edges = decide(&pred, &g, DecisionRule::NodesFromEdges);
        assert_eq!(from_edges.nodes, vec![false, false, true, false, true, false]);
    }

    #[test]
    fn report_csv_shape() {
        let samples = vec![labelled(triangle())];
        let csv = path_accuracy(&OraclePredictor, &samples).unwrap().to_csv();
        assert!(csv.starts_with("kind,bucket,correct,total,accuracy\noverall,all,1,1,1.000000\n"));
        assert!(csv.contains("perturbation,none,1,1,1.000000"));
    }

    #[test]
    fn small_timing_bucket_is_rejected() {
        let cfg = crate::model::ModelConfig::uniform(1, 2, 2);
        let params = crate::model::ModelParams::init(
            &cfg,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )
        .unwrap();
        let model = Model::new(cfg, params);
        let buckets = vec![vec![triangle(); 3]];
        assert!(matches!(
            timing_benchmark(&model, &buckets, 10, 1),
            Err(EvalError::SmallBucket { hops: 1, got: 3, .. })
        ));
    }
}
