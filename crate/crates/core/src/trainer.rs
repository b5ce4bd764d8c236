//! Binary cross-entropy training with Adam and validation-based selection.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{bce_mean, Var};
use crate::datagen::{Dataset, Sample};
use crate::evaluator::{self, Classifier, DecisionRule, EvalError};
use crate::model::{self, GraphInputs, Model, ModelConfig, ModelError, ModelParams, Predictions};
use crate::oracle::PathLabels;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{what} has {got} entries, labels have {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged in epoch {epoch} (non-finite loss); last good parameters kept")]
    Diverged {
        epoch: usize,
        last_good: Box<ModelParams>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which classifier heads contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Both,
    NodesOnly,
    EdgesOnly,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Both => "both",
            LossMode::NodesOnly => "nodes_only",
            LossMode::EdgesOnly => "edges_only",
        }
    }

    fn nodes(self) -> bool {
        self != LossMode::EdgesOnly
    }

    fn edges(self) -> bool {
        self != LossMode::NodesOnly
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [LossMode::Both, LossMode::NodesOnly, LossMode::EdgesOnly]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown loss mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Graphs per parameter update.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            loss_mode: LossMode::Both,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn targets(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Mean node BCE plus mean edge BCE, each included according to `mode`.
pub fn bce_loss(pred: &Predictions, labels: &PathLabels, mode: LossMode) -> Result<f64, TrainError> {
    if pred.node_probs.len() != labels.nodes.len() {
        return Err(TrainError::LengthMismatch {
            what: "node predictions",
            got: pred.node_probs.len(),
            expected: labels.nodes.len(),
        });
    }
    if pred.edge_probs.len() != labels.edges.len() {
        return Err(TrainError::LengthMismatch {
            what: "edge predictions",
            got: pred.edge_probs.len(),
            expected: labels.edges.len(),
        });
    }
    let mut loss = 0.0;
    if mode.nodes() {
        loss += bce_mean(&pred.node_probs, &targets(&labels.nodes));
    }
    if mode.edges() {
        loss += bce_mean(&pred.edge_probs, &targets(&labels.edges));
    }
    Ok(loss)
}

/// Loss of one graph and its gradient in canonical parameter order.
pub fn loss_and_gradient(
    cfg: &ModelConfig,
    params: &ModelParams,
    inputs: &GraphInputs,
    labels: &PathLabels,
    mode: LossMode,
    train_rng: Option<&mut dyn RngCore>,
) -> Result<(f64, Vec<f64>), TrainError> {
    let pass = model::forward(cfg, params, inputs, train_rng)?;
    let mut tape = pass.tape;
    let mut terms: Vec<Var> = Vec::with_capacity(2);
    if mode.nodes() {
        terms.push(
            tape.bce(pass.node_probs, targets(&labels.nodes))
                .map_err(ModelError::from)?,
        );
    }
    if mode.edges() {
        terms.push(
            tape.bce(pass.edge_probs, targets(&labels.edges))
                .map_err(ModelError::from)?,
        );
    }
    let loss = match terms[..] {
        [one] => one,
        [a, b] => tape.add(a, b).map_err(ModelError::from)?,
        _ => unreachable!("every loss mode has at least one term"),
    };
    let grads = tape.backward(loss).map_err(ModelError::from)?;
    let mut flat = Vec::with_capacity(params.n_values());
    for &var in &pass.params {
        flat.extend(grads.get_or_zero(var, tape.value(var).len()));
    }
    Ok((tape.value(loss).item(), flat))
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `values` in place.
pub fn adam_update(values: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(values.len(), grads.len(), "one gradient per value");
    assert_eq!(values.len(), state.m.len(), "optimizer state size");
    state.step += 1;
    let t = state.step as i32;
    let correct1 = 1.0 - cfg.beta1.powi(t);
    let correct2 = 1.0 - cfg.beta2.powi(t);
    for (((x, &g), m), v) in values
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / correct1;
        let v_hat = *v / correct2;
        *x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam update of every model tensor; `grads` is in canonical order.
pub fn adam_step(params: &mut ModelParams, grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    let mut flat = params.flatten();
    adam_update(&mut flat, grads, state, cfg);
    params.assign_flat(&flat);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_path_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (highest validation accuracy, the
    /// earliest on ties).
    pub best_epoch: usize,
    pub best_val_path_accuracy: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_path_accuracy,seconds";

    pub fn csv_row(r: &EpochRecord) -> String {
        format!(
            "{},{:.12e},{:.6},{:.3}",
            r.epoch, r.train_loss, r.val_path_accuracy, r.seconds
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let _ = writeln!(out, "{}", Self::csv_row(r));
        }
        out
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM_BASE: u64 = 2;

pub fn train(
    dataset: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    train_with(&dataset.train, &dataset.val, mcfg, tcfg, |_| {})
}

/// Trains on `train`, selecting the parameters with the best validation Path
/// Accuracy. `on_epoch` sees each record as soon as the epoch ends.
///
/// The per-batch gradient is the mean of per-graph gradients, reduced in
/// batch order so results do not depend on the thread count.
pub fn train_with(
    train: &[Sample],
    val: &[Sample],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory), TrainError> {
    tcfg.validate()?;
    mcfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }

    let inputs: Vec<GraphInputs> = train.par_iter().map(|s| GraphInputs::new(&s.graph)).collect();
    let mut params = ModelParams::init(mcfg, &mut stream_rng(tcfg.seed, INIT_STREAM))?;
    let mut adam = AdamState::new(params.n_values());
    let mut shuffle_rng = stream_rng(tcfg.seed, SHUFFLE_STREAM);
    let rule = DecisionRule::from(tcfg.loss_mode);

    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=tcfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let base = (epoch as u64) << 32 | (b as u64 * tcfg.batch_size as u64);
            let results: Vec<Result<(f64, Vec<f64>), TrainError>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = stream_rng(tcfg.seed, DROPOUT_STREAM_BASE + base + k as u64);
                    loss_and_gradient(
                        mcfg,
                        &params,
                        &inputs[i],
                        &train[i].labels,
                        tcfg.loss_mode,
                        Some(&mut rng),
                    )
                })
                .collect();
            let mut grad = vec![0.0; params.n_values()];
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !loss_sum.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: Box::new(best),
                });
            }
            adam_step(&mut params, &grad, &mut adam, tcfg);
        }

        let classifier = Classifier {
            model: Model::new(mcfg.clone(), params.clone()),
            rule,
        };
        let val_acc = evaluator::path_accuracy(&classifier, val)?.path_accuracy;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_path_accuracy: val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val path accuracy {:.4} ({:.1}s)",
            record.train_loss,
            val_acc,
            record.seconds
        );
        on_epoch(&record);
        history.epochs.push(record);

        if val_acc > best_acc {
            best_acc = val_acc;
            best = classifier.model.params;
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_val_path_accuracy = best_acc;
    Ok((best, history))
}
