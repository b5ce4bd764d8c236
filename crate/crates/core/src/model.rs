//! Edge-aware graph attention network with node and edge classifier heads.
//!
//! Layer `l` maps node embeddings `z` (width `d_{l-1}`) to width `d_l`:
//!
//! ```text
//! s_ij  = a · LeakyReLU([W z_i ‖ W z_j ‖ W_e c_ij])      j ∈ N(i) ∪ {i}
//! α_ij  = softmax_j(s_ij)
//! z'_i  = Dropout(LeakyReLU(Σ_j α_ij W z_j))
//! ```
//!
//! where `c_ij` is the edge cost divided by the largest cost in the graph
//! and `c_ii = 0`. After the last layer each edge is embedded as
//! `z_i + z_j`, and two two-layer MLPs with sigmoid outputs give the
//! probability that a node (edge) lies on the optimal path.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::graph::Graph;

/// Width of the one-hot role encoding fed to the first layer.
pub const INPUT_WIDTH: usize = 3;

/// Probability threshold for every binary decision.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of attention layers.
    pub layers: usize,
    /// Output width of each attention layer.
    pub widths: Vec<usize>,
    /// Hidden width of both classifier heads.
    pub hidden: usize,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 8,
            widths: vec![64; 8],
            hidden: 32,
            dropout_rate: 0.1,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    /// Uniform width across `layers` layers.
    pub fn uniform(layers: usize, width: usize, hidden: usize) -> Self {
        ModelConfig {
            layers,
            widths: vec![width; layers],
            hidden,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 {
            return Err(ModelError::Config("at least one layer is required".into()));
        }
        if self.widths.len() != self.layers {
            return Err(ModelError::Config(format!(
                "{} widths given for {} layers",
                self.widths.len(),
                self.layers
            )));
        }
        if self.widths.contains(&0) || self.hidden == 0 {
            return Err(ModelError::Config("widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(ModelError::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }

    fn input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            INPUT_WIDTH
        } else {
            self.widths[layer - 1]
        }
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated config has layers")
    }

    /// Tensor names and shapes in canonical parameter order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut layout = Vec::new();
        for l in 0..self.layers {
            let (d_in, d) = (self.input_width(l), self.widths[l]);
            layout.push((format!("layer{l}.weight"), vec![d, d_in]));
            layout.push((format!("layer{l}.attention"), vec![3 * d]));
            layout.push((format!("layer{l}.edge_proj"), vec![d]));
        }
        let (m, d) = (self.hidden, self.output_width());
        for head in ["node_head", "edge_head"] {
            layout.push((format!("{head}.hidden_weight"), vec![m, d]));
            layout.push((format!("{head}.hidden_bias"), vec![m]));
            layout.push((format!("{head}.out_weight"), vec![1, m]));
            layout.push((format!("{head}.out_bias"), vec![1]));
        }
        layout
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `[d_l, d_{l-1}]`
    pub weight: Tensor,
    /// `[3 d_l]`
    pub attention: Tensor,
    /// `[d_l]`, projects the scalar edge cost.
    pub edge_proj: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `[m, d_L]`
    pub hidden_weight: Tensor,
    /// `[m]`
    pub hidden_bias: Tensor,
    /// `[1, m]`
    pub out_weight: Tensor,
    /// `[1]`
    pub out_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub node_head: HeadParams,
    pub edge_head: HeadParams,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut glorot = |shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let len = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::new(shape, data).expect("length matches shape")
        };
        let layers = (0..cfg.layers)
            .map(|l| {
                let (d_in, d) = (cfg.input_width(l), cfg.widths[l]);
                LayerParams {
                    weight: glorot(vec![d, d_in], d_in, d),
                    attention: glorot(vec![3 * d], 3 * d, 1),
                    edge_proj: glorot(vec![d], 1, d),
                }
            })
            .collect();
        let (m, d) = (cfg.hidden, cfg.output_width());
        let mut head = || HeadParams {
            hidden_weight: glorot(vec![m, d], d, m),
            hidden_bias: Tensor::zeros(vec![m]),
            out_weight: glorot(vec![1, m], m, 1),
            out_bias: Tensor::zeros(vec![1]),
        };
        let node_head = head();
        let edge_head = head();
        Ok(ModelParams {
            layers,
            node_head,
            edge_head,
        })
    }

    /// Tensors in the order of [`ModelConfig::parameter_layout`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend([&layer.weight, &layer.attention, &layer.edge_proj]);
        }
        for head in [&self.node_head, &self.edge_head] {
            out.extend([
                &head.hidden_weight,
                &head.hidden_bias,
                &head.out_weight,
                &head.out_bias,
            ]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.extend([&mut layer.weight, &mut layer.attention, &mut layer.edge_proj]);
        }
        for head in [&mut self.node_head, &mut self.edge_head] {
            out.extend([
                &mut head.hidden_weight,
                &mut head.hidden_bias,
                &mut head.out_weight,
                &mut head.out_bias,
            ]);
        }
        out
    }

    /// Rebuilds parameters from tensors in canonical order, checking every
    /// shape against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = cfg.parameter_layout();
        if layout.len() != tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape {
                    what: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                weight: next(),
                attention: next(),
                edge_proj: next(),
            })
            .collect();
        let mut head = || HeadParams {
            hidden_weight: next(),
            hidden_bias: next(),
            out_weight: next(),
            out_bias: next(),
        };
        let node_head = head();
        let edge_head = head();
        Ok(ModelParams {
            layers,
            node_head,
            edge_head,
        })
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Overwrites all values from a flat slice in canonical order.
    pub fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n_values(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub node_probs: Vec<f64>,
    pub edge_probs: Vec<f64>,
}

impl Predictions {
    pub fn node_decisions(&self) -> Vec<bool> {
        self.node_probs.iter().map(|&p| p >= THRESHOLD).collect()
    }

    pub fn edge_decisions(&self) -> Vec<bool> {
        self.edge_probs.iter().map(|&p| p >= THRESHOLD).collect()
    }
}

/// Index arrays and constant inputs derived from a graph once per forward.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    n_nodes: usize,
    roles: Tensor,
    /// Attention pairs `(i, j)` for `j ∈ N(i) ∪ {i}`, grouped by `i`.
    pair_target: Arc<[usize]>,
    pair_neighbor: Arc<[usize]>,
    pair_cost: Tensor,
    edge_u: Arc<[usize]>,
    edge_v: Arc<[usize]>,
}

impl GraphInputs {
    pub fn new(g: &Graph) -> Self {
        let n = g.n_nodes();
        let mut roles = Vec::with_capacity(n * INPUT_WIDTH);
        for i in 0..n {
            roles.extend(g.role(i).one_hot());
        }
        let scale = g.max_weight();
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let pairs = n + 2 * g.n_edges();
        let mut target = Vec::with_capacity(pairs);
        let mut neighbor = Vec::with_capacity(pairs);
        let mut cost = Vec::with_capacity(pairs);
        for i in 0..n {
            target.push(i);
            neighbor.push(i);
            cost.push(0.0);
            for &(j, e) in g.neighbors(i) {
                target.push(i);
                neighbor.push(j);
                cost.push(g.edge(e).w / scale);
            }
        }
        GraphInputs {
            n_nodes: n,
            roles: Tensor::matrix(n, INPUT_WIDTH, roles).expect("role matrix"),
            pair_target: target.into(),
            pair_neighbor: neighbor.into(),
            pair_cost: Tensor::vector(cost),
            edge_u: g.edges().iter().map(|e| e.u).collect(),
            edge_v: g.edges().iter().map(|e| e.v).collect(),
        }
    }

    /// `(i, j)` for every attention coefficient, in output order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pair_target
            .iter()
            .copied()
            .zip(self.pair_neighbor.iter().copied())
    }

    pub fn roles(&self) -> &Tensor {
        &self.roles
    }
}

struct LayerVars {
    weight: Var,
    attention: Var,
    edge_proj: Var,
}

struct HeadVars {
    hidden_weight: Var,
    hidden_bias: Var,
    out_weight: Var,
    out_bias: Var,
}

/// Records one attention layer; returns `(z_next, α)`.
fn record_layer(
    tape: &mut Tape,
    vars: &LayerVars,
    z: Var,
    cost: Var,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    rng: Option<&mut dyn RngCore>,
) -> Result<(Var, Var), TensorError> {
    let slope = cfg.leaky_slope;
    let projected = tape.matmul_t(z, vars.weight)?;
    let target_rows = tape.gather_rows(projected, inputs.pair_target.clone())?;
    let neighbor_rows = tape.gather_rows(projected, inputs.pair_neighbor.clone())?;
    let edge_feat = tape.outer(cost, vars.edge_proj)?;
    let joined = tape.concat(&[target_rows, neighbor_rows, edge_feat])?;
    let activated = tape.leaky_relu(joined, slope);
    let scores = tape.matvec(activated, vars.attention)?;
    let alpha = tape.neighbor_softmax(scores, inputs.pair_target.clone(), inputs.n_nodes)?;
    let messages = tape.scale_rows(neighbor_rows, alpha)?;
    let aggregated = tape.scatter_sum(messages, inputs.pair_target.clone(), inputs.n_nodes)?;
    let activated = tape.leaky_relu(aggregated, slope);
    let out = match rng {
        Some(rng) => tape.dropout(activated, cfg.dropout_rate, true, rng),
        None => activated,
    };
    Ok((out, alpha))
}

fn record_head(tape: &mut Tape, vars: &HeadVars, x: Var, slope: f64) -> Result<Var, TensorError> {
    let hidden = tape.matmul_t(x, vars.hidden_weight)?;
    let hidden = tape.add_bias(hidden, vars.hidden_bias)?;
    let hidden = tape.leaky_relu(hidden, slope);
    let logit = tape.matmul_t(hidden, vars.out_weight)?;
    let logit = tape.add_bias(logit, vars.out_bias)?;
    Ok(tape.sigmoid(logit))
}

/// A recorded forward pass. Parameter variables follow canonical order.
pub struct ForwardPass {
    pub tape: Tape,
    pub params: Vec<Var>,
    /// Node embeddings `z^(0) .. z^(L)`.
    pub embeddings: Vec<Var>,
    /// Attention coefficients per layer, ordered as [`GraphInputs::pairs`].
    pub attention: Vec<Var>,
    /// `[n, 1]`
    pub node_probs: Var,
    /// `[|E|, 1]`
    pub edge_probs: Var,
}

impl ForwardPass {
    pub fn predictions(&self) -> Predictions {
        Predictions {
            node_probs: self.tape.value(self.node_probs).data().to_vec(),
            edge_probs: self.tape.value(self.edge_probs).data().to_vec(),
        }
    }
}

/// Runs the network on `g`. Dropout is active only when `train_rng` is given.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    inputs: &GraphInputs,
    mut train_rng: Option<&mut dyn RngCore>,
) -> Result<ForwardPass, ModelError> {
    let mut tape = Tape::new();
    let param_vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.param(t.clone()))
        .collect();
    let per_layer = 3;
    let layer_vars: Vec<LayerVars> = (0..cfg.layers)
        .map(|l| LayerVars {
            weight: param_vars[per_layer * l],
            attention: param_vars[per_layer * l + 1],
            edge_proj: param_vars[per_layer * l + 2],
        })
        .collect();
    let head_base = per_layer * cfg.layers;
    let head = |k: usize| HeadVars {
        hidden_weight: param_vars[head_base + 4 * k],
        hidden_bias: param_vars[head_base + 4 * k + 1],
        out_weight: param_vars[head_base + 4 * k + 2],
        out_bias: param_vars[head_base + 4 * k + 3],
    };

    let cost = tape.constant(inputs.pair_cost.clone());
    let mut z = tape.constant(inputs.roles.clone());
    let mut embeddings = vec![z];
    let mut attention = Vec::with_capacity(cfg.layers);
    for vars in &layer_vars {
        let rng = train_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        let (next, alpha) = record_layer(&mut tape, vars, z, cost, inputs, cfg, rng)?;
        z = next;
        embeddings.push(z);
        attention.push(alpha);
    }

    let node_probs = record_head(&mut tape, &head(0), z, cfg.leaky_slope)?;
    let u = tape.gather_rows(z, inputs.edge_u.clone())?;
    let v = tape.gather_rows(z, inputs.edge_v.clone())?;
    let edge_embedding = tape.add(u, v)?;
    let edge_probs = record_head(&mut tape, &head(1), edge_embedding, cfg.leaky_slope)?;

    Ok(ForwardPass {
        tape,
        params: param_vars,
        embeddings,
        attention,
        node_probs,
        edge_probs,
    })
}

/// Attention coefficients of one layer, paired with their `(i, j)` indices.
#[derive(Debug, Clone)]
pub struct Attention {
    pub pairs: Vec<(usize, usize)>,
    pub alpha: Vec<f64>,
}

/// Computes the attention coefficients of `layer` for embeddings `z_prev`.
pub fn attention(
    layer: &LayerParams,
    z_prev: &Tensor,
    g: &Graph,
    cfg: &ModelConfig,
) -> Result<Attention, ModelError> {
    let inputs = GraphInputs::new(g);
    let mut tape = Tape::new();
    let vars = LayerVars {
        weight: tape.constant(layer.weight.clone()),
        attention: tape.constant(layer.attention.clone()),
        edge_proj: tape.constant(layer.edge_proj.clone()),
    };
    let z = tape.constant(z_prev.clone());
    let cost = tape.constant(inputs.pair_cost.clone());
    let (_, alpha) = record_layer(&mut tape, &vars, z, cost, &inputs, cfg, None)?;
    Ok(Attention {
        pairs: inputs.pairs().collect(),
        alpha: tape.value(alpha).data().to_vec(),
    })
}

/// One attention layer applied to `z_prev`.
pub fn layer_forward(
    layer: &LayerParams,
    z_prev: &Tensor,
    g: &Graph,
    cfg: &ModelConfig,
    train_rng: Option<&mut dyn RngCore>,
) -> Result<Tensor, ModelError> {
    let inputs = GraphInputs::new(g);
    let mut tape = Tape::new();
    let vars = LayerVars {
        weight: tape.constant(layer.weight.clone()),
        attention: tape.constant(layer.attention.clone()),
        edge_proj: tape.constant(layer.edge_proj.clone()),
    };
    let z = tape.constant(z_prev.clone());
    let cost = tape.constant(inputs.pair_cost.clone());
    let (out, _) = record_layer(&mut tape, &vars, z, cost, &inputs, cfg, train_rng)?;
    Ok(tape.value(out).clone())
}

/// `u_ij = z_i + z_j` for every stored edge.
pub fn edge_embed(z: &Tensor, g: &Graph) -> Tensor {
    let d = z.row_len();
    let mut data = Vec::with_capacity(g.n_edges() * d);
    for e in g.edges() {
        data.extend(z.row(e.u).iter().zip(z.row(e.v)).map(|(a, b)| a + b));
    }
    Tensor::matrix(g.n_edges(), d, data).expect("edge embedding shape")
}

/// A configuration together with its trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Model { config, params }
    }

    /// Inference without dropout.
    pub fn predict(&self, g: &Graph) -> Result<Predictions, ModelError> {
        predict(g, &self.params, &self.config)
    }
}

pub fn predict(g: &Graph, params: &ModelParams, cfg: &ModelConfig) -> Result<Predictions, ModelError> {
    let pass = forward(cfg, params, &GraphInputs::new(g), None)?;
    Ok(pass.predictions())
}
