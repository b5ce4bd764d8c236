//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Trained models are cached in `CARGO_TARGET_TMPDIR/acceptance-cache`,
//! keyed by a hash of the library sources and every config involved, so a
//! rerun against unchanged code skips training. Delete the directory to
//! force retraining.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use gatpath_core::autodiff::finite_difference_check;
use gatpath_core::checkpoint::{self, Checkpoint};
use gatpath_core::datagen::{self, Dataset, DatasetConfig, PerturbMode, Sample};
use gatpath_core::evaluator::{self, Classifier, DecisionRule};
use gatpath_core::graph::Graph;
use gatpath_core::io;
use gatpath_core::model::{self, GraphInputs, Model, ModelConfig, ModelParams};
use gatpath_core::oracle::{self, brute_force_shortest, dijkstra};
use gatpath_core::trainer::{self, LossMode, TrainConfig, TrainHistory};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DATA_SEED: u64 = 7;
const TRAIN_SEED: u64 = 7;

const C1_GRAPHS: u64 = 600;
const C1_MAX_SECONDS: f64 = 60.0;
const C2_GRAPHS: usize = 20;
const C2_STEP: f64 = 1e-6;
const C2_MAX_REL_ERR: f64 = 1e-4;
const C2_MAX_SECONDS: f64 = 300.0;
const C3_PAIRS: u64 = 100;
const C3_MAX_ABS_DIFF: f64 = 1e-9;
const C4_GRAPHS: u64 = 50;
const C4_TOLERANCE: f64 = 1e-12;
const C5_MIN_ACCURACY: f64 = 0.85;
const C5_OVERFIT_EPOCHS: usize = 200;
const C5_OVERFIT_MAX_LOSS: f64 = 0.01;
const C5_MAX_TRAIN_SECONDS: f64 = 7200.0;
const C6_SIZES: std::ops::RangeInclusive<usize> = 16..=25;
const C6_SAMPLES_PER_SIZE: usize = 100;
const C6_MAX_DROP: f64 = 0.15;
const C6_FIXED_NODES: usize = 10;
const C7_PERTURBED: usize = 200;
const C7_MAX_GAP: f64 = 0.10;
const C8_NODES: usize = 20;
const C8_MAX_HOPS: usize = 6;
const C8_PER_BUCKET: usize = 50;
const C8_REPS: usize = 10;
const C8_ORACLE_BATCH: usize = 50;
const C8_MAX_SPREAD: f64 = 1.2;
const C9_TIE_ALLOWANCE: f64 = 0.005;
const C10_TRAIN_EPOCHS: usize = 2;

const SOURCES: &[&str] = &[
    include_str!("../src/autodiff.rs"),
    include_str!("../src/checkpoint.rs"),
    include_str!("../src/datagen.rs"),
    include_str!("../src/evaluator.rs"),
    include_str!("../src/graph.rs"),
    include_str!("../src/io.rs"),
    include_str!("../src/model.rs"),
    include_str!("../src/oracle.rs"),
    include_str!("../src/trainer.rs"),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Trained {
    dataset: Dataset,
    classifier: Classifier,
    history: TrainHistory,
    cached: bool,
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache")
}

fn cache_key(dcfg: &DatasetConfig, mcfg: &ModelConfig, tcfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    for s in SOURCES {
        h.update(s.as_bytes());
    }
    h.update(serde_json::to_vec(&(dcfg, mcfg, tcfg)).unwrap());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn train_cached(name: &str, dcfg: &DatasetConfig, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Trained {
    let dataset = datagen::gen_dataset(dcfg).expect("dataset");
    let key = cache_key(dcfg, mcfg, tcfg);
    let dir = cache_dir();
    let ckpt_path = dir.join(format!("{name}-{key}.ckpt"));
    let history_path = dir.join(format!("{name}-{key}.history.json"));
    let rule = DecisionRule::from(tcfg.loss_mode);
    if let (Ok(ckpt), Ok(history)) = (
        checkpoint::load_checkpoint_for(&ckpt_path, mcfg),
        io::read_json::<TrainHistory>(&history_path),
    ) {
        eprintln!("  {name}: loaded cached run {key}");
        return Trained {
            dataset,
            classifier: Classifier {
                model: Model::new(ckpt.config, ckpt.params),
                rule,
            },
            history,
            cached: true,
        };
    }
    eprintln!(
        "  {name}: training on {} samples (validation {})",
        dataset.train.len(),
        dataset.val.len()
    );
    let (params, history) = trainer::train_with(&dataset.train, &dataset.val, mcfg, tcfg, |r| {
        eprintln!(
            "    epoch {:>3} loss {:.5} val {:.4} ({:.1}s)",
            r.epoch, r.train_loss, r.val_path_accuracy, r.seconds
        )
    })
    .expect("training");
    fs::create_dir_all(&dir).unwrap();
    checkpoint::save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            config: mcfg.clone(),
            loss_mode: tcfg.loss_mode,
            params: params.clone(),
        },
    )
    .unwrap();
    io::write_json(&history_path, &history).unwrap();
    Trained {
        dataset,
        classifier: Classifier {
            model: Model::new(mcfg.clone(), params),
            rule,
        },
        history,
        cached: false,
    }
}

fn random_graph(rng: &mut ChaCha8Rng, nodes: std::ops::RangeInclusive<usize>, integer: bool) -> Graph {
    let n = rng.gen_range(nodes);
    let factor = rng.gen_range(0.0..1.5);
    let topo = datagen::gen_structure(rng, n, factor).unwrap();
    let (s, d) = datagen::sample_terminals(rng, n);
    let edges: Vec<_> = topo
        .pairs
        .iter()
        .map(|&(u, v)| {
            let w = if integer {
                f64::from(rng.gen_range(1..4))
            } else {
                rng.gen_range(1.0..10.0)
            };
            (u, v, w)
        })
        .collect();
    Graph::new(n, edges, s, d).unwrap()
}

fn reroute_example() -> Graph {
    Graph::new(
        6,
        [(2, 0, 1.0), (0, 1, 1.0), (1, 3, 2.0), (3, 5, 2.0), (5, 4, 1.0), (2, 4, 1.0), (3, 4, 8.0)],
        2,
        4,
    )
    .unwrap()
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut agree, mut unique) = (0, 0);
    for seed in 0..C1_GRAPHS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 3..=9, seed % 2 == 0);
        let (fast, slow) = (dijkstra(&g).unwrap(), brute_force_shortest(&g).unwrap());
        let same = fast.cost == slow.cost
            && fast.unique == slow.unique
            && (!fast.unique || fast.path == slow.path);
        agree += usize::from(same);
        unique += usize::from(fast.unique);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        agree as u64 == C1_GRAPHS && secs < C1_MAX_SECONDS,
        format!("{agree}/{C1_GRAPHS} graphs agree ({unique} with a unique optimum), {secs:.1}s (limit {C1_MAX_SECONDS}s)"),
    )
}

fn c2_gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::uniform(8, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_norm, mut violations, mut checked) = (0.0f64, 0.0f64, 0, 0);
    let mut largest_violating = 0.0f64;
    for _ in 0..C2_GRAPHS {
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let g = random_graph(&mut rng, 3..=6, false);
        let (_, labels) = oracle::label(&g).unwrap();
        let inputs = GraphInputs::new(&g);
        let loss = |flat: &[f64]| {
            let mut p = params.clone();
            p.assign_flat(flat);
            trainer::loss_and_gradient(&cfg, &p, &inputs, &labels, LossMode::Both, None)
                .unwrap()
                .0
        };
        let (_, grad) =
            trainer::loss_and_gradient(&cfg, &params, &inputs, &labels, LossMode::Both, None).unwrap();
        let flat = params.flatten();
        worst = worst.max(finite_difference_check(loss, &flat, &grad, C2_STEP));

        let mut probe = flat.clone();
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for i in 0..flat.len() {
            probe[i] = flat[i] + C2_STEP;
            let up = loss(&probe);
            probe[i] = flat[i] - C2_STEP;
            let down = loss(&probe);
            probe[i] = flat[i];
            let numeric = (up - down) / (2.0 * C2_STEP);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
            if rel >= C2_MAX_REL_ERR {
                violations += 1;
                largest_violating = largest_violating.max(grad[i].abs());
            }
            diff2 += (grad[i] - numeric).powi(2);
            norm2 += numeric.powi(2);
            checked += 1;
        }
        worst_norm = worst_norm.max((diff2 / norm2).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < C2_MAX_REL_ERR && secs < C2_MAX_SECONDS,
        format!(
            "max per-parameter rel. error {worst:.2e} (limit {C2_MAX_REL_ERR:e}) over {C2_GRAPHS} graphs; \
             {violations}/{checked} entries over the limit, all with |grad| <= {largest_violating:.1e}; \
             vector rel. error {worst_norm:.2e}; config L=8 d=8 m=8; {secs:.1}s"
        ),
    )
}

fn c3_equivariance() -> Outcome {
    let cfg = ModelConfig::default();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    for case in 0..C3_PAIRS {
        if case % 10 == 0 {
            params = ModelParams::init(&cfg, &mut rng).unwrap();
        }
        let g = random_graph(&mut rng, 3..=20, false);
        let mut perm: Vec<usize> = (0..g.n_nodes()).collect();
        perm.shuffle(&mut rng);
        let moved = g.permute(&perm).unwrap();
        let a = model::predict(&g, &params, &cfg).unwrap();
        let b = model::predict(&moved, &params, &cfg).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            worst = worst.max((a.node_probs[i] - b.node_probs[p]).abs());
        }
        for (x, y) in a.edge_probs.iter().zip(&b.edge_probs) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(
        worst < C3_MAX_ABS_DIFF,
        format!("{C3_PAIRS} (graph, permutation) pairs, max abs diff {worst:.2e} (limit {C3_MAX_ABS_DIFF:e})"),
    )
}

fn c4_attention_normalization() -> Outcome {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut rows = 0;
    for _ in 0..C4_GRAPHS {
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let g = random_graph(&mut rng, 3..=30, false);
        let inputs = GraphInputs::new(&g);
        let pass = model::forward(&cfg, &params, &inputs, None).unwrap();
        for &alpha in &pass.attention {
            let mut sums = vec![0.0; g.n_nodes()];
            for ((i, _), a) in inputs.pairs().zip(pass.tape.value(alpha).data()) {
                sums[i] += a;
            }
            rows += sums.len();
            worst = sums.iter().fold(worst, |w, s| w.max((s - 1.0).abs()));
        }
    }
    outcome(
        worst <= C4_TOLERANCE,
        format!("{rows} rows across {} layers, max |sum - 1| {worst:.2e} (limit {C4_TOLERANCE:e})", cfg.layers),
    )
}

fn c5_desk_training(ours: &Trained, test_accuracy: f64) -> Outcome {
    let h = &ours.history;
    let train_secs: f64 = h.epochs.iter().map(|r| r.seconds).sum();
    let early_trend = h.epochs.len() >= 5 && h.epochs[4].train_loss < h.epochs[0].train_loss;

    let s = Sample::from_graph(reroute_example()).unwrap();
    let tcfg = TrainConfig {
        max_epochs: C5_OVERFIT_EPOCHS,
        patience: C5_OVERFIT_EPOCHS,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let (_, overfit) = trainer::train_with(
        std::slice::from_ref(&s),
        std::slice::from_ref(&s),
        &ModelConfig::default(),
        &tcfg,
        |_| {},
    )
    .unwrap();
    let overfit_loss = overfit.epochs.last().unwrap().train_loss;

    outcome(
        test_accuracy >= C5_MIN_ACCURACY
            && overfit_loss < C5_OVERFIT_MAX_LOSS
            && train_secs < C5_MAX_TRAIN_SECONDS,
        format!(
            "test path accuracy {test_accuracy:.4} on {} samples (limit {C5_MIN_ACCURACY}); \
             best val {:.4} at epoch {}/{}{}; training {train_secs:.0}s{}; \
             epoch-5 loss below epoch-1: {early_trend}; \
             single-sample loss after {C5_OVERFIT_EPOCHS} epochs {overfit_loss:.4} (limit {C5_OVERFIT_MAX_LOSS})",
            ours.dataset.test.len(),
            h.best_val_path_accuracy,
            h.best_epoch,
            h.epochs.len(),
            if h.stopped_early { " (early stop)" } else { "" },
            if ours.cached { " (cached)" } else { "" },
        ),
    )
}

fn off_size_samples() -> Vec<Sample> {
    let base = DatasetConfig::desk(DATA_SEED + 1000);
    let sizes: Vec<usize> = C6_SIZES.collect();
    evaluator::sweep_samples(&base, &sizes, C6_SAMPLES_PER_SIZE)
        .unwrap()
        .into_iter()
        .flat_map(|(_, s)| s)
        .collect()
}

fn c6_generalization(ours: &Trained, ours_in: f64, fixed: &Trained, off: &[Sample]) -> Outcome {
    let ours_off = evaluator::path_accuracy(&ours.classifier, off).unwrap().path_accuracy;
    let fixed_in = evaluator::path_accuracy(&fixed.classifier, &fixed.dataset.test)
        .unwrap()
        .path_accuracy;
    let fixed_off = evaluator::path_accuracy(&fixed.classifier, off).unwrap().path_accuracy;
    let (ours_drop, fixed_drop) = (ours_in - ours_off, fixed_in - fixed_off);
    outcome(
        ours_drop < C6_MAX_DROP && fixed_drop > ours_drop,
        format!(
            "5-15 node model: {ours_in:.4} in range, {ours_off:.4} on {} graphs of 16-25 nodes, drop {:.1} points (limit {:.0}); \
             {C6_FIXED_NODES}-node model: {fixed_in:.4} in range, {fixed_off:.4} off size, drop {:.1} points (must exceed the first)",
            off.len(),
            100.0 * ours_drop,
            100.0 * C6_MAX_DROP,
            100.0 * fixed_drop
        ),
    )
}

fn c7_rerouting(ours: &Trained, unperturbed: f64) -> Outcome {
    let g = reroute_example();
    let before = dijkstra(&g).unwrap();
    let after = dijkstra(&g.remove_edge(2, 4).unwrap()).unwrap();
    let example_ok = before.path == vec![2, 4]
        && before.cost == 1.0
        && after.path == vec![2, 0, 1, 3, 5, 4]
        && after.cost == 7.0
        && after.unique;

    let pool = &ours.dataset.test[..ours.dataset.test.len().min(2 * C7_PERTURBED)];
    let (mut perturbed, skipped) = datagen::perturb_all(pool, &PerturbMode::ALL, DATA_SEED);
    perturbed.truncate(C7_PERTURBED);
    let verified = perturbed.iter().all(|s| {
        oracle::label(&s.graph).is_ok_and(|(r, labels)| r.unique && labels == s.labels)
            && s.graph.destination_reachable()
    });
    let acc = evaluator::path_accuracy(&ours.classifier, &perturbed).unwrap();
    let gap = (acc.path_accuracy - unperturbed).abs();
    let modes: Vec<String> = acc
        .by_perturbation
        .iter()
        .map(|(k, b)| format!("{k} {:.3}", b.accuracy()))
        .collect();
    outcome(
        example_ok && verified && perturbed.len() == C7_PERTURBED && gap <= C7_MAX_GAP,
        format!(
            "example reroutes [2,4] cost 1 -> [2,0,1,3,5,4] cost 7: {example_ok}; {} perturbed graphs ({skipped} skipped), labels verified: {verified}; \
             accuracy {:.4} vs unperturbed {unperturbed:.4}, gap {:.1} points (limit {:.0}); by mode: {}",
            perturbed.len(),
            acc.path_accuracy,
            100.0 * gap,
            100.0 * C7_MAX_GAP,
            modes.join(", ")
        ),
    )
}

fn c8_timing(ours: &Trained) -> Outcome {
    let buckets = datagen::gen_hop_buckets(C8_NODES, 1.0, C8_MAX_HOPS, C8_PER_BUCKET, DATA_SEED, 500_000)
        .unwrap();
    let graphs: Vec<Vec<Graph>> = buckets
        .into_iter()
        .map(|b| b.into_iter().map(|s| s.graph).collect())
        .collect();
    let report =
        evaluator::timing_benchmark(&ours.classifier.model, &graphs, C8_REPS, C8_ORACLE_BATCH).unwrap();
    let spread = report.model_spread();
    let last = report.rows.last().unwrap();
    let model: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.model_relative)).collect();
    let dijkstra: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.oracle_relative)).collect();
    outcome(
        spread <= C8_MAX_SPREAD && last.oracle_relative > 1.0,
        format!(
            "{C8_NODES} nodes, hops 1-{C8_MAX_HOPS}, {C8_PER_BUCKET} graphs x {C8_REPS} reps per bucket; \
             model relative [{}] max/min {spread:.3} (limit {C8_MAX_SPREAD}); dijkstra relative [{}]",
            model.join(", "),
            dijkstra.join(", ")
        ),
    )
}

fn c9_loss_ablation(both: &Trained, nodes: &Trained, edges: &Trained) -> Outcome {
    let (b, n, e) = (
        both.history.best_val_path_accuracy,
        nodes.history.best_val_path_accuracy,
        edges.history.best_val_path_accuracy,
    );
    outcome(
        b >= n - C9_TIE_ALLOWANCE && b >= e - C9_TIE_ALLOWANCE,
        format!(
            "best validation path accuracy: both {b:.4}, nodes_only {n:.4}, edges_only {e:.4} (ties within {:.1} points allowed)",
            100.0 * C9_TIE_ALLOWANCE
        ),
    )
}

fn c10_determinism(dcfg: &DatasetConfig) -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        io::write_dataset(d.path(), &datagen::gen_dataset(dcfg).unwrap()).unwrap();
    }
    let mut files_equal = true;
    let mut n_files = 0;
    for entry in fs::read_dir(dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        files_equal &= a == b;
        n_files += 1;
    }

    let ds = io::read_dataset(dirs[0].path()).unwrap();
    let tcfg = TrainConfig {
        max_epochs: C10_TRAIN_EPOCHS,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (_, h) = pool
            .install(|| trainer::train_with(&ds.train, &ds.val, &ModelConfig::default(), &tcfg, |_| {}))
            .unwrap();
        h.epochs
            .iter()
            .map(|r| {
                let row = TrainHistory::csv_row(r);
                row[..row.rfind(',').unwrap()].to_string()
            })
            .collect::<Vec<_>>()
    };
    let (one, many) = (csv(1), csv(3));
    outcome(
        files_equal && n_files == 4 && one == many,
        format!(
            "{n_files} dataset files byte-identical across two generations: {files_equal}; \
             {C10_TRAIN_EPOCHS}-epoch metrics identical on 1 and 3 threads (epoch, loss, accuracy; wall-clock column excluded): {}",
            one == many
        ),
    )
}

fn main() {
    let mut lines: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, title: &'static str, o: Outcome| {
        println!(
            "criterion {id:>2} [{}] {title}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        lines.push((id, title, o));
    };

    report(1, "oracle equivalence", c1_oracle_equivalence());
    report(2, "gradient correctness", c2_gradient_check());
    report(3, "permutation equivariance", c3_equivariance());
    report(4, "attention normalization", c4_attention_normalization());

    let desk = DatasetConfig::desk(DATA_SEED);
    let mcfg = ModelConfig::default();
    let tcfg = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let ours = train_cached("ours", &desk, &mcfg, &tcfg);
    let ours_test = evaluator::path_accuracy(&ours.classifier, &ours.dataset.test)
        .unwrap()
        .path_accuracy;
    report(5, "desk-scale training", c5_desk_training(&ours, ours_test));

    let fixed_cfg = DatasetConfig {
        node_range: (C6_FIXED_NODES, C6_FIXED_NODES),
        ..desk.clone()
    };
    let fixed = train_cached("fixed-nodes", &fixed_cfg, &mcfg, &tcfg);
    let off = off_size_samples();
    report(6, "size generalization", c6_generalization(&ours, ours_test, &fixed, &off));
    report(7, "rerouting", c7_rerouting(&ours, ours_test));
    report(8, "constant-time inference", c8_timing(&ours));

    let nodes = train_cached(
        "nodes-only",
        &desk,
        &mcfg,
        &TrainConfig {
            loss_mode: LossMode::NodesOnly,
            ..tcfg.clone()
        },
    );
    let edges = train_cached(
        "edges-only",
        &desk,
        &mcfg,
        &TrainConfig {
            loss_mode: LossMode::EdgesOnly,
            ..tcfg.clone()
        },
    );
    report(9, "loss ablation", c9_loss_ablation(&ours, &nodes, &edges));
    report(10, "determinism", c10_determinism(&desk));

    let failed: Vec<String> = lines
        .iter()
        .filter(|(_, _, o)| !o.pass)
        .map(|(id, title, _)| format!("{id} ({title})"))
        .collect();
    println!(
        "acceptance: {}/{} criteria pass",
        lines.len() - failed.len(),
        lines.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
