use std::error::Error;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use gatpath_core::checkpoint::{self, Checkpoint};
use gatpath_core::datagen::{self, DatasetConfig, PerturbMode, Split, StructureMode};
use gatpath_core::evaluator::{self, Classifier, DecisionRule};
use gatpath_core::io::{self, GraphRecord};
use gatpath_core::model::{Model, ModelConfig};
use gatpath_core::oracle;
use gatpath_core::trainer::{self, LossMode, TrainConfig, TrainHistory};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Shortest-path prediction with an edge-aware graph attention network.
#[derive(Debug, Parser, Serialize)]
#[command(name = "gatpath", version)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    #[serde(skip)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a dataset directory with train, val and test splits.
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Path Accuracy of a checkpoint, with optional size sweep and rerouting.
    Eval(EvalArgs),
    /// Remove edges or nodes from labelled graphs and relabel them.
    Perturb(PerturbArgs),
    /// Inference time against optimal hop count.
    Bench(BenchArgs),
    /// Predictions and decoded path for every graph in a file.
    Predict(PredictArgs),
    /// Exact shortest path for every graph in a file.
    Oracle(OracleArgs),
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LOW:HIGH, got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_split(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected TRAIN:VAL:TEST, got {s:?}"))
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    structures: usize,
    /// Weighted variants per structure.
    #[arg(long, default_value_t = 5)]
    samplings: usize,
    /// Inclusive node-count range.
    #[arg(long, default_value = "5:15", value_parser = parse_pair::<usize>)]
    nodes: (usize, usize),
    /// Extra non-tree edges per node.
    #[arg(long, default_value_t = 1.0)]
    extra_edge_factor: f64,
    /// Edge weights are uniform in [LOW, HIGH).
    #[arg(long, default_value = "1:10", value_parser = parse_pair::<f64>)]
    weights: (f64, f64),
    #[arg(long, default_value = "0.7:0.15:0.15", value_parser = parse_split)]
    split: [f64; 3],
    /// `varied` or `fixed` (one topology shared by every structure).
    #[arg(long, default_value = "varied", value_parser = parse_structure_mode)]
    structure_mode: StructureMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_structure_mode(s: &str) -> std::result::Result<StructureMode, String> {
    match s {
        "varied" => Ok(StructureMode::Varied),
        "fixed" => Ok(StructureMode::Fixed),
        _ => Err(format!("expected varied or fixed, got {s:?}")),
    }
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Attention layers.
    #[arg(long, default_value_t = 8)]
    layers: usize,
    /// Embedding width of every layer.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Hidden width of the classifier heads.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0.2)]
    leaky_slope: f64,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            dropout_rate: self.dropout,
            leaky_slope: self.leaky_slope,
            ..ModelConfig::uniform(self.layers, self.width, self.hidden)
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory [default: DATA/train-LOSS_MODE-seedSEED].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// both, nodes_only or edges_only.
    #[arg(long, default_value = "both")]
    loss_mode: LossMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory or graph file.
    #[arg(long)]
    data: PathBuf,
    /// Split to score when DATA is a directory: train, val or test.
    #[arg(long, default_value = "test", value_parser = parse_split_name)]
    split: Split,
    #[arg(long)]
    out: PathBuf,
    /// Node counts for a size sweep on freshly generated graphs.
    #[arg(long, value_delimiter = ',')]
    sweep_sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    sweep_samples: usize,
    /// Perturbation modes for rerouting evaluation.
    #[arg(long, value_delimiter = ',')]
    rerouting: Vec<PerturbMode>,
    /// Samples perturbed per rerouting mode.
    #[arg(long, default_value_t = 200)]
    rerouting_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_split_name(s: &str) -> std::result::Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| format!("expected train, val or test, got {s:?}"))
}

#[derive(Debug, Args, Serialize)]
struct PerturbArgs {
    /// Graph file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Modes applied to successive graphs in turn.
    #[arg(long, value_delimiter = ',', default_value = "remove-optimal-edge")]
    modes: Vec<PerturbMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Node count shared by every graph.
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 1.0)]
    extra_edge_factor: f64,
    #[arg(long, default_value_t = 6)]
    max_hops: usize,
    #[arg(long, default_value_t = 50)]
    per_bucket: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Dijkstra runs per timed repetition.
    #[arg(long, default_value_t = 100)]
    oracle_batch: usize,
    /// Graphs drawn before giving up on filling the buckets.
    #[arg(long, default_value_t = 1_000_000)]
    max_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Graph file.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct OracleArgs {
    /// Graph file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Write the graphs back with labels.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    run: &'a Command,
}

fn manifest_json(command: &Command) -> Result<String> {
    let manifest = Manifest {
        tool: "gatpath",
        version: env!("CARGO_PKG_VERSION"),
        run: command,
    };
    Ok(serde_json::to_string_pretty(&manifest)? + "\n")
}

fn config_hash(command: &Command) -> Result<String> {
    let digest = Sha256::digest(manifest_json(command)?.as_bytes());
    Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `manifest.json` into `dir`.
fn write_manifest(dir: &Path, command: &Command) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("manifest.json");
    fs::write(&path, manifest_json(command)?)?;
    Ok(path)
}

/// Writes `<file>.manifest.json` next to an output file.
fn write_manifest_beside(file: &Path, command: &Command) -> Result<PathBuf> {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let path = file.with_file_name(name);
    fs::write(&path, manifest_json(command)?)?;
    Ok(path)
}

fn load_classifier(path: &Path) -> Result<Classifier> {
    let Checkpoint {
        config,
        loss_mode,
        params,
    } = checkpoint::load_checkpoint(path)?;
    Ok(Classifier {
        model: Model::new(config, params),
        rule: DecisionRule::from(loss_mode),
    })
}

fn gen(args: &GenArgs, command: &Command) -> Result<()> {
    let cfg = DatasetConfig {
        n_structures: args.structures,
        weight_samplings_per_structure: args.samplings,
        node_range: args.nodes,
        extra_edge_factor: args.extra_edge_factor,
        weight_range: args.weights,
        split: args.split,
        seed: args.seed,
        structure_mode: args.structure_mode,
    };
    let ds = datagen::gen_dataset(&cfg)?;
    for path in io::write_dataset(&args.out, &ds)? {
        println!("wrote {}", path.display());
    }
    write_manifest(&args.out, command)?;
    println!(
        "train {} val {} test {} samples ({} structures discarded)",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.discarded
    );
    Ok(())
}

fn train(args: &TrainArgs, command: &Command) -> Result<()> {
    let ds = io::read_dataset(&args.data)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.data
            .join(format!("train-{}-seed{}", args.loss_mode.name(), args.seed))
    });
    write_manifest(&out, command)?;
    let mcfg = args.model.config();
    let tcfg = TrainConfig {
        learning_rate: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        epsilon: args.epsilon,
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        patience: args.patience,
        loss_mode: args.loss_mode,
        seed: args.seed,
    };

    let metrics_path = out.join("metrics.csv");
    let mut metrics = File::create(&metrics_path)?;
    writeln!(metrics, "{}", TrainHistory::CSV_HEADER)?;
    let mut write_err = None;
    let result = trainer::train_with(&ds.train, &ds.val, &mcfg, &tcfg, |r| {
        let line = TrainHistory::csv_row(r);
        if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(format!("{}: {e}", metrics_path.display()).into());
    }
    let ckpt_path = out.join("model.ckpt");
    let (params, history) = match result {
        Ok(r) => r,
        Err(trainer::TrainError::Diverged { epoch, last_good }) => {
            checkpoint::save_checkpoint(
                &ckpt_path,
                &Checkpoint {
                    config: mcfg,
                    loss_mode: tcfg.loss_mode,
                    params: *last_good,
                },
            )?;
            return Err(format!(
                "training diverged in epoch {epoch}; last good parameters saved to {}",
                ckpt_path.display()
            )
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    checkpoint::save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            config: mcfg,
            loss_mode: tcfg.loss_mode,
            params,
        },
    )?;
    io::write_json(&out.join("history.json"), &history)?;
    println!(
        "best validation path accuracy {:.4} at epoch {}{}",
        history.best_val_path_accuracy,
        history.best_epoch,
        if history.stopped_early { " (stopped early)" } else { "" }
    );
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn eval(args: &EvalArgs, command: &Command) -> Result<()> {
    let classifier = load_classifier(&args.model)?;
    let (samples, base_cfg) = if args.data.is_dir() {
        let ds = io::read_dataset(&args.data)?;
        (ds.split(args.split).to_vec(), Some(ds.config))
    } else {
        (io::read_samples(&args.data)?, None)
    };
    fs::create_dir_all(&args.out)?;
    let tag = format!("{}-seed{}", config_hash(command)?, args.seed);
    write_manifest(&args.out, command)?;

    let report = evaluator::path_accuracy(&classifier, &samples)?;
    fs::write(args.out.join(format!("eval-{tag}.csv")), report.to_csv())?;
    fs::write(args.out.join(format!("eval-{tag}.txt")), report.summary())?;
    print!("{}", report.summary());

    if !args.sweep_sizes.is_empty() {
        let base = DatasetConfig {
            seed: args.seed,
            ..base_cfg.unwrap_or_else(|| DatasetConfig::desk(args.seed))
        };
        let rows =
            evaluator::node_count_sweep(&classifier, &base, &args.sweep_sizes, args.sweep_samples)?;
        fs::write(args.out.join(format!("sweep-{tag}.csv")), evaluator::sweep_csv(&rows))?;
        println!("size sweep:");
        for r in &rows {
            println!("  {:>3} nodes: {:.4} ({} samples)", r.nodes, r.accuracy, r.samples);
        }
    }

    if !args.rerouting.is_empty() {
        let subset = &samples[..samples.len().min(args.rerouting_samples)];
        let mut csv = String::from("mode,perturbed,skipped,labels_verified,accuracy\n");
        for &mode in &args.rerouting {
            let r = evaluator::rerouting_eval(&classifier, subset, mode, args.seed)?;
            csv += &format!(
                "{},{},{},{},{:.6}\n",
                mode,
                r.perturbed.len(),
                r.skipped,
                r.labels_verified,
                r.report.path_accuracy
            );
            println!(
                "rerouting {mode}: {:.4} on {} graphs ({} skipped, labels verified: {})",
                r.report.path_accuracy,
                r.perturbed.len(),
                r.skipped,
                r.labels_verified
            );
        }
        fs::write(args.out.join(format!("rerouting-{tag}.csv")), csv)?;
    }
    Ok(())
}

fn perturb(args: &PerturbArgs, command: &Command) -> Result<()> {
    if args.modes.is_empty() {
        return Err("at least one perturbation mode is required".into());
    }
    let samples = io::read_samples(&args.input)?;
    let (perturbed, skipped) = datagen::perturb_all(&samples, &args.modes, args.seed);
    io::write_samples(&args.out, &perturbed)?;
    write_manifest_beside(&args.out, command)?;
    println!(
        "wrote {} perturbed graphs to {} ({skipped} skipped)",
        perturbed.len(),
        args.out.display()
    );
    Ok(())
}

fn bench(args: &BenchArgs, command: &Command) -> Result<()> {
    let classifier = load_classifier(&args.model)?;
    let buckets = datagen::gen_hop_buckets(
        args.nodes,
        args.extra_edge_factor,
        args.max_hops,
        args.per_bucket,
        args.seed,
        args.max_draws,
    )?;
    let graphs: Vec<Vec<_>> = buckets
        .into_iter()
        .map(|b| b.into_iter().map(|s| s.graph).collect())
        .collect();
    let report = evaluator::timing_benchmark(&classifier.model, &graphs, args.reps, args.oracle_batch)?;
    fs::create_dir_all(&args.out)?;
    let tag = format!("{}-seed{}", config_hash(command)?, args.seed);
    write_manifest(&args.out, command)?;
    fs::write(args.out.join(format!("timing-{tag}.csv")), report.to_csv())?;
    print!("{}", report.to_csv());
    println!("model max/min relative time {:.3}", report.model_spread());
    Ok(())
}

#[derive(Serialize)]
struct PredictOutput {
    node_probs: Vec<f64>,
    edge_probs: Vec<f64>,
    path: Option<Vec<usize>>,
    failure: Option<evaluator::DecodeFailure>,
}

fn predict(args: &PredictArgs) -> Result<()> {
    let classifier = load_classifier(&args.model)?;
    for (g, _) in io::read_graphs(&args.input)? {
        let pred = classifier.model.predict(&g)?;
        let decoded = evaluator::decode_path(&pred, &g);
        let out = PredictOutput {
            path: decoded.as_ref().ok().cloned(),
            failure: decoded.err(),
            node_probs: pred.node_probs,
            edge_probs: pred.edge_probs,
        };
        println!("{}", serde_json::to_string(&out)?);
    }
    Ok(())
}

fn run_oracle(args: &OracleArgs, command: &Command) -> Result<()> {
    let mut labelled = Vec::new();
    for (g, _) in io::read_graphs(&args.input)? {
        let (result, labels) = oracle::label(&g)?;
        let path: Vec<String> = result.path.iter().map(ToString::to_string).collect();
        println!(
            "path [{}] cost {} hops {} unique {}",
            path.join(","),
            result.cost,
            result.hops(),
            result.unique
        );
        labelled.push(GraphRecord::from_graph(&g, Some(&labels)));
    }
    if let Some(out) = &args.out {
        io::write_records(out, &labelled)?;
        write_manifest_beside(out, command)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    let command = &cli.command;
    match command {
        Command::Gen(a) => gen(a, command),
        Command::Train(a) => train(a, command),
        Command::Eval(a) => eval(a, command),
        Command::Perturb(a) => perturb(a, command),
        Command::Bench(a) => bench(a, command),
        Command::Predict(a) => predict(a),
        Command::Oracle(a) => run_oracle(a, command),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
