//! Forward-only message-passing encoder.
//!
//! Each layer computes, for every node `i`,
//!
//! ```text
//! h_i' = act(W · AGG({h_j : j in N(i)}) + b)
//! ```
//!
//! optionally adding `h_i` itself to the aggregated multiset. An empty
//! neighborhood aggregates to the zero vector, so isolated nodes receive
//! `act(b)`. After `num_layers` layers the node states are mean-pooled into
//! a single graph [`Embedding`].
//!
//! Parameters are never trained here: they come from [`GnnParams::init`]
//! (seeded Glorot-uniform weights, zero biases) or from a parameter file.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::KnowledgeGraph;
use crate::par::{self, Execution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cannot read out an empty set of node states")]
    EmptyGraph,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("non-finite parameter in layer {layer}")]
    NonFinite { layer: usize },
    #[error("invalid parameter file: {0}")]
    ParamFile(String),
}

impl EncoderError {
    pub fn class(&self) -> &'static str {
        match self {
            EncoderError::DimMismatch { .. } => "DimMismatch",
            EncoderError::EmptyGraph => "EmptyGraph",
            EncoderError::InvalidConfig(_) => "ConfigError",
            EncoderError::NonFinite { .. } => "NonFiniteInput",
            EncoderError::ParamFile(_) => "ParseError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
    Sum,
    Max,
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "avg" | "average" => Ok(Aggregator::Mean),
            "sum" => Ok(Aggregator::Sum),
            "max" => Ok(Aggregator::Max),
            other => Err(format!("unknown aggregator `{other}` (expected mean, sum or max)")),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Sum => "sum",
            Aggregator::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected relu or tanh)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub num_layers: usize,
    pub input_dim: usize,
    /// Width of every layer output and of the final embedding.
    pub hidden_dim: usize,
    #[serde(default)]
    pub aggregator: Aggregator,
    #[serde(default)]
    pub activation: Activation,
    /// Adds the node's own state to its aggregated neighborhood.
    #[serde(default)]
    pub include_self: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            num_layers: 2,
            input_dim: 64,
            hidden_dim: 64,
            aggregator: Aggregator::Mean,
            activation: Activation::Relu,
            include_self: false,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.num_layers == 0 {
            return Err(EncoderError::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(EncoderError::InvalidConfig("dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Input width of layer `k`.
    pub fn layer_in_dim(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Weight matrix (`hidden_dim x in_dim`) and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self, EncoderError> {
        if weight.nrows() != bias.len() {
            return Err(EncoderError::DimMismatch {
                expected: weight.nrows(),
                got: bias.len(),
            });
        }
        Ok(Layer { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<Layer>,
}

impl GnnParams {
    /// Glorot-uniform weights drawn from a ChaCha8 stream seeded by `seed`,
    /// layer by layer in row-major order; zero biases.
    pub fn init(config: &GnnConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..config.num_layers)
            .map(|k| {
                let fan_in = config.layer_in_dim(k);
                let fan_out = config.hidden_dim;
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.gen_range(-limit..=limit)
                });
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(GnnParams { layers })
    }

    /// Checks shapes against `config` and that every entry is finite.
    pub fn validate(&self, config: &GnnConfig) -> Result<(), EncoderError> {
        config.validate()?;
        if self.layers.len() != config.num_layers {
            return Err(EncoderError::InvalidConfig(format!(
                "config has {} layers, params have {}",
                config.num_layers,
                self.layers.len()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            let expected = (config.hidden_dim, config.layer_in_dim(k));
            if layer.weight.dim() != expected {
                return Err(EncoderError::InvalidConfig(format!(
                    "layer {k}: W is {:?}, expected {:?}",
                    layer.weight.dim(),
                    expected
                )));
            }
            if layer.bias.len() != config.hidden_dim {
                return Err(EncoderError::DimMismatch {
                    expected: config.hidden_dim,
                    got: layer.bias.len(),
                });
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFinite { layer: k });
            }
        }
        Ok(())
    }
}

/// Fixed-width graph embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite { layer: usize::MAX });
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Elementwise mean, sum or max over `vectors`, each of length `dim`.
///
/// The empty multiset aggregates to the zero vector.
pub fn aggregate(vectors: &[&[f64]], agg: Aggregator, dim: usize) -> Result<Vec<f64>, EncoderError> {
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(EncoderError::DimMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut out = vec![0.0; dim];
    aggregate_into(vectors.iter().copied(), agg, &mut out);
    Ok(out)
}

fn aggregate_into<'a>(vectors: impl Iterator<Item = &'a [f64]>, agg: Aggregator, out: &mut [f64]) {
    out.fill(0.0);
    let mut count = 0usize;
    for v in vectors {
        match agg {
            Aggregator::Mean | Aggregator::Sum => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x;
                }
            }
            Aggregator::Max => {
                if count == 0 {
                    out.copy_from_slice(v);
                } else {
                    for (o, &x) in out.iter_mut().zip(v) {
                        *o = o.max(x);
                    }
                }
            }
        }
        count += 1;
    }
    if agg == Aggregator::Mean && count > 0 {
        let n = count as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
}

/// Initial states `h^0`: one row per node, in `g.node_ids()` order.
pub fn initial_states(g: &KnowledgeGraph) -> Array2<f64> {
    let rows = g.node_count();
    let cols = g.feature_dim();
    let mut states = Array2::zeros((rows, cols));
    for (mut row, f) in states.rows_mut().into_iter().zip(g.feature_rows()) {
        row.assign(&ArrayView1::from(f.as_slice()));
    }
    states
}

/// One propagation step over all nodes. `states` rows follow
/// `g.node_ids()`; the result has `layer.out_dim()` columns.
pub fn propagate_layer(
    g: &KnowledgeGraph,
    states: &Array2<f64>,
    layer: &Layer,
    config: &GnnConfig,
) -> Result<Array2<f64>, EncoderError> {
    if states.nrows() != g.node_count() {
        return Err(EncoderError::DimMismatch {
            expected: g.node_count(),
            got: states.nrows(),
        });
    }
    if states.ncols() != layer.in_dim() {
        return Err(EncoderError::DimMismatch {
            expected: layer.in_dim(),
            got: states.ncols(),
        });
    }
    let in_dim = layer.in_dim();
    let contiguous = states.as_standard_layout();
    let flat = contiguous.as_slice().expect("standard layout");
    let row = |p: usize| &flat[p * in_dim..(p + 1) * in_dim];

    let mut out = Array2::zeros((g.node_count(), layer.out_dim()));
    let mut agg = vec![0.0; in_dim];
    for (i, mut out_row) in out.rows_mut().into_iter().enumerate() {
        let neighbors = g.neighbor_positions(i);
        if config.include_self {
            // Merge i into the ascending neighbor walk so summation order
            // stays sorted by node id.
            let split = neighbors.partition_point(|&p| p < i);
            let has_self = neighbors.get(split) == Some(&i);
            let own: &[usize] = if has_self { &[] } else { std::slice::from_ref(&i) };
            let order = neighbors[..split]
                .iter()
                .chain(own)
                .chain(&neighbors[split..]);
            aggregate_into(order.map(|&p| row(p)), config.aggregator, &mut agg);
        } else {
            aggregate_into(neighbors.iter().map(|&p| row(p)), config.aggregator, &mut agg);
        }
        let z = layer.weight.dot(&ArrayView1::from(&agg[..])) + &layer.bias;
        out_row.assign(&z.mapv(|x| config.activation.apply(x)));
    }
    Ok(out)
}

/// Mean pooling over node states.
pub fn readout(states: &Array2<f64>) -> Result<Embedding, EncoderError> {
    if states.nrows() == 0 {
        return Err(EncoderError::EmptyGraph);
    }
    let mut sum = vec![0.0; states.ncols()];
    for row in states.rows() {
        for (s, x) in sum.iter_mut().zip(row.iter()) {
            *s += x;
        }
    }
    let n = states.nrows() as f64;
    Ok(Embedding(sum.into_iter().map(|s| s / n).collect()))
}

/// A configuration paired with parameters that match it.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: GnnConfig,
    params: GnnParams,
}

impl Encoder {
    pub fn new(config: GnnConfig, params: GnnParams) -> Result<Self, EncoderError> {
        params.validate(&config)?;
        Ok(Encoder { config, params })
    }

    pub fn seeded(config: GnnConfig, seed: u64) -> Result<Self, EncoderError> {
        let params = GnnParams::init(&config, seed)?;
        Ok(Encoder { config, params })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn params(&self) -> &GnnParams {
        &self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Final node states `h^(L)`, rows in `g.node_ids()` order.
    pub fn encode_nodes(&self, g: &KnowledgeGraph) -> Result<Array2<f64>, EncoderError> {
        if g.feature_dim() != self.config.input_dim {
            return Err(EncoderError::DimMismatch {
                expected: self.config.input_dim,
                got: g.feature_dim(),
            });
        }
        let mut states = initial_states(g);
        for layer in &self.params.layers {
            states = propagate_layer(g, &states, layer, &self.config)?;
        }
        Ok(states)
    }

    pub fn encode_graph(&self, g: &KnowledgeGraph) -> Result<Embedding, EncoderError> {
        readout(&self.encode_nodes(g)?)
    }

    /// Encodes many graphs; output order matches input order.
    pub fn encode_batch(
        &self,
        graphs: &[KnowledgeGraph],
        exec: Execution,
    ) -> Result<Vec<Embedding>, EncoderError> {
        par::map(exec, graphs, |g| self.encode_graph(g))
            .into_iter()
            .collect()
    }

    pub fn to_param_json(&self) -> String {
        serde_json::to_string_pretty(&ParamFile::from(self)).expect("param file serializes")
    }

    pub fn from_param_json(text: &str) -> Result<Self, EncoderError> {
        let file: ParamFile =
            serde_json::from_str(text).map_err(|e| EncoderError::ParamFile(e.to_string()))?;
        file.into_encoder()
    }
}

/// Parameter file layout: `{"config": {...}, "layers": [{"W": [[..]], "b": [..]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamFile {
    pub config: GnnConfig,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDocument {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ParamFile {
    pub fn into_encoder(self) -> Result<Encoder, EncoderError> {
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, doc)| {
                let rows = doc.w.len();
                let cols = doc.w.first().map_or(0, Vec::len);
                if doc.w.iter().any(|r| r.len() != cols) {
                    return Err(EncoderError::ParamFile(format!("layer {k}: ragged W")));
                }
                let flat: Vec<f64> = doc.w.into_iter().flatten().collect();
                let weight = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| EncoderError::ParamFile(e.to_string()))?;
                Layer::new(weight, Array1::from(doc.b))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Encoder::new(self.config, GnnParams { layers })
    }
}

impl From<&Encoder> for ParamFile {
    fn from(enc: &Encoder) -> Self {
        ParamFile {
            config: enc.config.clone(),
            layers: enc
                .params
                .layers
                .iter()
                .map(|l| LayerDocument {
                    w: l.weight.axis_iter(Axis(0)).map(|r| r.to_vec()).collect(),
                    b: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}
