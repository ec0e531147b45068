//! Encode-process-decode Interaction Network over the bipartite
//! location/species graph.
//!
//! * encode: every node set and every active edge set is embedded into a
//!   `latent_dim` space by its own MLP.
//! * process: each step first computes an edge update
//!   `e' = MLP_E([e, v_sender, v_receiver])` for every active edge set, then a
//!   node update `v' = MLP_V([v, agg(e'_1), agg(e'_2), ...])` that aggregates the
//!   freshly computed messages of each incoming edge set (sum or mean). Node
//!   sets without incoming edge sets are updated from their own latent only.
//!   Both updates are added back residually. Processor weights are not shared
//!   across steps.
//! * decode: the score of a `(location, species)` pair is the dot product of
//!   the two final node latents.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    GraphError, TypedGraph, DET_L2S, DET_S2L, LOCATION, NONDET_L2S, NONDET_S2L, SPECIES,
};
use crate::nn::{
    mlp_init, Activation, Aggregation, BoundMlp, MlpParams, MlpSpec, NnError, ParamTensors, Tape,
    Var,
};
use crate::rng::mix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("graph lacks edge set `{0}` required by the model config")]
    MissingEdgeSet(&'static str),
    #[error("edge set `{name}` must connect `{expected_sender}` -> `{expected_receiver}`")]
    WrongEndpoints {
        name: &'static str,
        expected_sender: &'static str,
        expected_receiver: &'static str,
    },
    #[error("parameter store mismatch: {0}")]
    Params(String),
    #[error("pair {index}: ({location}, {species}) out of range")]
    PairOutOfRange {
        index: usize,
        location: usize,
        species: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    OneWay,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub num_hidden_layers: usize,
    pub num_message_passing_steps: usize,
    pub direction: Direction,
    pub include_negative_edges: bool,
    pub aggregation: Aggregation,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            num_hidden_layers: 2,
            num_message_passing_steps: 1,
            direction: Direction::OneWay,
            include_negative_edges: false,
            aggregation: Aggregation::SegmentMean,
            activation: Activation::Relu,
        }
    }
}

/// Static description of one of the four message edge sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeKind {
    pub name: &'static str,
    pub sender: &'static str,
    pub receiver: &'static str,
}

/// Declaration order; it fixes the concatenation order of aggregates.
pub const EDGE_KINDS: [EdgeKind; 4] = [
    EdgeKind {
        name: DET_L2S,
        sender: LOCATION,
        receiver: SPECIES,
    },
    EdgeKind {
        name: DET_S2L,
        sender: SPECIES,
        receiver: LOCATION,
    },
    EdgeKind {
        name: NONDET_L2S,
        sender: LOCATION,
        receiver: SPECIES,
    },
    EdgeKind {
        name: NONDET_S2L,
        sender: SPECIES,
        receiver: LOCATION,
    },
];

pub const NODE_SETS: [&str; 2] = [LOCATION, SPECIES];

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.latent_dim == 0 {
            return Err(ModelError::InvalidConfig("latent_dim must be positive".into()));
        }
        if self.num_hidden_layers == 0 {
            return Err(ModelError::InvalidConfig(
                "num_hidden_layers must be positive".into(),
            ));
        }
        if self.num_message_passing_steps == 0 {
            return Err(ModelError::InvalidConfig(
                "num_message_passing_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn active_edge_kinds(&self) -> Vec<EdgeKind> {
        let bidi = self.direction == Direction::Bidirectional;
        EDGE_KINDS
            .into_iter()
            .filter(|k| match k.name {
                DET_L2S => true,
                DET_S2L => bidi,
                NONDET_L2S => self.include_negative_edges,
                _ => self.include_negative_edges && bidi,
            })
            .collect()
    }

    pub fn incoming_edge_kinds(&self, node_set: &str) -> Vec<EdgeKind> {
        self.active_edge_kinds()
            .into_iter()
            .filter(|k| k.receiver == node_set)
            .collect()
    }

    fn mlp_spec(&self, input_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dim: self.latent_dim,
            num_hidden_layers: self.num_hidden_layers,
            output_dim: self.latent_dim,
            activation: self.activation,
        }
    }

    /// Every parameter role the config needs, with its MLP shape.
    pub fn roles(&self, dims: InputDims) -> Vec<(String, MlpSpec)> {
        let d = self.latent_dim;
        let mut roles = vec![
            (embedder_role(LOCATION), self.mlp_spec(dims.location)),
            (embedder_role(SPECIES), self.mlp_spec(dims.species)),
        ];
        for k in self.active_edge_kinds() {
            roles.push((embedder_role(k.name), self.mlp_spec(dims.edge)));
        }
        for step in 0..self.num_message_passing_steps {
            for k in self.active_edge_kinds() {
                roles.push((edge_processor_role(step, k.name), self.mlp_spec(3 * d)));
            }
            for n in NODE_SETS {
                let fan_in = d * (1 + self.incoming_edge_kinds(n).len());
                roles.push((node_processor_role(step, n), self.mlp_spec(fan_in)));
            }
        }
        roles
    }
}

pub fn embedder_role(set: &str) -> String {
    format!("embedder/{set}")
}

pub fn edge_processor_role(step: usize, edge_set: &str) -> String {
    format!("processor/{step}/edge/{edge_set}")
}

pub fn node_processor_role(step: usize, node_set: &str) -> String {
    format!("processor/{step}/node/{node_set}")
}

/// Raw feature widths of the graph inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub location: usize,
    pub species: usize,
    pub edge: usize,
}

impl InputDims {
    pub fn of_graph(graph: &TypedGraph) -> Result<Self, ModelError> {
        Ok(Self {
            location: graph.node_set(LOCATION)?.feature_dim(),
            species: graph.node_set(SPECIES)?.feature_dim(),
            edge: graph.edge_set(DET_L2S)?.features.ncols(),
        })
    }
}

/// All MLP weights of the model keyed by role. Also used as the gradient
/// container.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub mlps: BTreeMap<String, MlpParams>,
}

impl ParamStore {
    pub fn init(config: &ModelConfig, dims: InputDims, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut mlps = BTreeMap::new();
        for (i, (role, spec)) in config.roles(dims).into_iter().enumerate() {
            spec.validate()?;
            mlps.insert(role, mlp_init(&spec, mix(seed.wrapping_add(i as u64))));
        }
        Ok(Self { mlps })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlps: self
                .mlps
                .iter()
                .map(|(k, p)| {
                    let mut z = p.clone();
                    z.tensors_mut().for_each(|t| t.fill(0.0));
                    (k.clone(), z)
                })
                .collect(),
        }
    }

    pub fn get(&self, role: &str) -> Result<&MlpParams, ModelError> {
        self.mlps
            .get(role)
            .ok_or_else(|| ModelError::Params(format!("missing role `{role}`")))
    }

    pub fn num_parameters(&self) -> usize {
        self.mlps.values().map(|p| p.num_parameters()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.mlps.values().all(|p| p.is_finite())
    }

    /// Checks that exactly the roles of `config` are present with matching shapes.
    pub fn check(&self, config: &ModelConfig, dims: InputDims) -> Result<(), ModelError> {
        let roles = config.roles(dims);
        if roles.len() != self.mlps.len() {
            return Err(ModelError::Params(format!(
                "expected {} roles, found {}",
                roles.len(),
                self.mlps.len()
            )));
        }
        for (role, spec) in roles {
            let p = self.get(&role)?;
            let expected: Vec<_> = spec
                .layer_shapes()
                .into_iter()
                .flat_map(|(i, o)| [(i, o), (1, o)])
                .collect();
            if p.shapes() != expected {
                return Err(ModelError::Params(format!(
                    "role `{role}` has shapes {:?}, expected {expected:?}",
                    p.shapes()
                )));
            }
        }
        Ok(())
    }
}

impl ParamTensors for ParamStore {
    fn tensor_slices(&self) -> Vec<&[f64]> {
        self.mlps.values().flat_map(|p| p.tensors()).collect()
    }

    fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlps.values_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}

/// Node and edge latents, each `count x latent_dim`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentGraph {
    pub nodes: BTreeMap<String, Array2<f64>>,
    pub edges: BTreeMap<String, Array2<f64>>,
}

impl LatentGraph {
    pub fn node(&self, name: &str) -> Option<&Array2<f64>> {
        self.nodes.get(name)
    }

    pub fn edge(&self, name: &str) -> Option<&Array2<f64>> {
        self.edges.get(name)
    }
}

/// Edge indices and node counts shared by every step of one forward pass.
struct Topology {
    counts: BTreeMap<&'static str, usize>,
    senders: BTreeMap<&'static str, Arc<[usize]>>,
    receivers: BTreeMap<&'static str, Arc<[usize]>>,
}

impl Topology {
    fn new(graph: &TypedGraph, config: &ModelConfig) -> Result<Self, ModelError> {
        let mut counts = BTreeMap::new();
        for n in NODE_SETS {
            counts.insert(n, graph.node_set(n)?.count());
        }
        let mut senders = BTreeMap::new();
        let mut receivers = BTreeMap::new();
        for k in config.active_edge_kinds() {
            let e = graph
                .edge_set(k.name)
                .map_err(|_| ModelError::MissingEdgeSet(k.name))?;
            if e.sender_set != k.sender || e.receiver_set != k.receiver {
                return Err(ModelError::WrongEndpoints {
                    name: k.name,
                    expected_sender: k.sender,
                    expected_receiver: k.receiver,
                });
            }
            senders.insert(k.name, Arc::from(e.senders.as_slice()));
            receivers.insert(k.name, Arc::from(e.receivers.as_slice()));
        }
        Ok(Self {
            counts,
            senders,
            receivers,
        })
    }
}

#[derive(Clone, Debug)]
struct TapeLatents {
    nodes: BTreeMap<&'static str, Var>,
    edges: BTreeMap<&'static str, Var>,
}

impl TapeLatents {
    fn extract(&self, tape: &Tape) -> LatentGraph {
        LatentGraph {
            nodes: self
                .nodes
                .iter()
                .map(|(k, &v)| (k.to_string(), tape.value(v).clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(k, &v)| (k.to_string(), tape.value(v).clone()))
                .collect(),
        }
    }
}

/// Parameters of one model bound as tape leaves.
pub struct BoundParams {
    mlps: BTreeMap<String, BoundMlp>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> Self {
        Self {
            mlps: params
                .mlps
                .iter()
                .map(|(k, p)| (k.clone(), tape.bind_mlp(p)))
                .collect(),
        }
    }

    fn get(&self, role: &str) -> Result<&BoundMlp, ModelError> {
        self.mlps
            .get(role)
            .ok_or_else(|| ModelError::Params(format!("missing role `{role}`")))
    }

    pub fn gradients(&self, tape: &Tape, grads: &crate::nn::Gradients) -> ParamStore {
        ParamStore {
            mlps: self
                .mlps
                .iter()
                .map(|(k, b)| (k.clone(), b.gradients(tape, grads)))
                .collect(),
        }
    }
}

fn check_inputs(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
) -> Result<Topology, ModelError> {
    config.validate()?;
    let topo = Topology::new(graph, config)?;
    let dims = InputDims {
        location: graph.node_set(LOCATION)?.feature_dim(),
        species: graph.node_set(SPECIES)?.feature_dim(),
        edge: graph.edge_set(DET_L2S)?.features.ncols(),
    };
    for k in config.active_edge_kinds() {
        let w = graph.edge_set(k.name)?.features.ncols();
        if w != dims.edge {
            return Err(ModelError::Params(format!(
                "edge set `{}` has feature width {w}, expected {}",
                k.name, dims.edge
            )));
        }
    }
    params.check(config, dims)?;
    Ok(topo)
}

fn encode_on_tape(
    tape: &mut Tape,
    graph: &TypedGraph,
    bound: &BoundParams,
    config: &ModelConfig,
) -> Result<TapeLatents, ModelError> {
    let mut nodes = BTreeMap::new();
    for n in NODE_SETS {
        let x = tape.leaf(graph.node_set(n)?.features.clone());
        nodes.insert(n, tape.mlp(bound.get(&embedder_role(n))?, x));
    }
    let mut edges = BTreeMap::new();
    for k in config.active_edge_kinds() {
        let x = tape.leaf(graph.edge_set(k.name)?.features.clone());
        edges.insert(k.name, tape.mlp(bound.get(&embedder_role(k.name))?, x));
    }
    Ok(TapeLatents { nodes, edges })
}

fn process_on_tape(
    tape: &mut Tape,
    topo: &Topology,
    bound: &BoundParams,
    config: &ModelConfig,
    step: usize,
    latents: &TapeLatents,
) -> Result<TapeLatents, ModelError> {
    let kinds = config.active_edge_kinds();

    let mut messages = BTreeMap::new();
    for k in &kinds {
        let s = tape.gather(latents.nodes[k.sender], topo.senders[k.name].clone());
        let r = tape.gather(latents.nodes[k.receiver], topo.receivers[k.name].clone());
        let input = tape.concat(&[latents.edges[k.name], s, r]);
        let mlp = bound.get(&edge_processor_role(step, k.name))?;
        messages.insert(k.name, tape.mlp(mlp, input));
    }

    let mut node_updates = BTreeMap::new();
    for n in NODE_SETS {
        let mut parts = vec![latents.nodes[n]];
        for k in config.incoming_edge_kinds(n) {
            parts.push(tape.segment_reduce(
                messages[k.name],
                topo.receivers[k.name].clone(),
                topo.counts[n],
                config.aggregation,
            ));
        }
        let input = tape.concat(&parts);
        let mlp = bound.get(&node_processor_role(step, n))?;
        node_updates.insert(n, tape.mlp(mlp, input));
    }

    let mut next = latents.clone();
    for k in &kinds {
        next.edges
            .insert(k.name, tape.add(latents.edges[k.name], messages[k.name]));
    }
    for n in NODE_SETS {
        next.nodes.insert(n, tape.add(latents.nodes[n], node_updates[n]));
    }
    Ok(next)
}

fn check_pairs(
    pairs: &[(usize, usize)],
    n_locations: usize,
    n_species: usize,
) -> Result<(), ModelError> {
    for (index, &(location, species)) in pairs.iter().enumerate() {
        if location >= n_locations || species >= n_species {
            return Err(ModelError::PairOutOfRange {
                index,
                location,
                species,
            });
        }
    }
    Ok(())
}

fn decode_on_tape(tape: &mut Tape, latents: &TapeLatents, pairs: &[(usize, usize)]) -> Var {
    let (li, si): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let l = tape.gather(latents.nodes[LOCATION], Arc::from(li));
    let s = tape.gather(latents.nodes[SPECIES], Arc::from(si));
    tape.row_dot(l, s)
}

fn run_on_tape(
    tape: &mut Tape,
    graph: &TypedGraph,
    bound: &BoundParams,
    topo: &Topology,
    config: &ModelConfig,
) -> Result<TapeLatents, ModelError> {
    let mut latents = encode_on_tape(tape, graph, bound, config)?;
    for step in 0..config.num_message_passing_steps {
        latents = process_on_tape(tape, topo, bound, config, step, &latents)?;
    }
    Ok(latents)
}

/// Embeds every node set and active edge set; raw features are untouched.
pub fn encode(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
) -> Result<LatentGraph, ModelError> {
    check_inputs(graph, params, config)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    Ok(encode_on_tape(&mut tape, graph, &bound, config)?.extract(&tape))
}

/// One message-passing step (`step` selects the processor weights).
pub fn process_step(
    latent: &LatentGraph,
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
    step: usize,
) -> Result<LatentGraph, ModelError> {
    let topo = check_inputs(graph, params, config)?;
    if step >= config.num_message_passing_steps {
        return Err(ModelError::InvalidConfig(format!(
            "step {step} beyond the configured {} steps",
            config.num_message_passing_steps
        )));
    }
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let fetch = |map: &BTreeMap<String, Array2<f64>>, name: &str, rows: usize| {
        match map.get(name) {
            Some(m) if m.dim() == (rows, config.latent_dim) => Ok(m.clone()),
            Some(m) => Err(ModelError::Nn(NnError::ShapeMismatch(format!(
                "latent `{name}` is {:?}, expected ({rows}, {})",
                m.dim(),
                config.latent_dim
            )))),
            None => Err(ModelError::Params(format!("latent graph lacks `{name}`"))),
        }
    };
    let mut nodes = BTreeMap::new();
    for n in NODE_SETS {
        nodes.insert(n, tape.leaf(fetch(&latent.nodes, n, topo.counts[n])?));
    }
    let mut edges = BTreeMap::new();
    for k in config.active_edge_kinds() {
        let rows = topo.senders[k.name].len();
        edges.insert(k.name, tape.leaf(fetch(&latent.edges, k.name, rows)?));
    }
    let start = TapeLatents { nodes, edges };
    Ok(process_on_tape(&mut tape, &topo, &bound, config, step, &start)?.extract(&tape))
}

/// Dot-product scores `v_L[i] · v_S[j]` in pair order.
pub fn decode_scores(
    latent: &LatentGraph,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>, ModelError> {
    let loc = latent
        .node(LOCATION)
        .ok_or_else(|| ModelError::Params("latent graph lacks locations".into()))?;
    let sp = latent
        .node(SPECIES)
        .ok_or_else(|| ModelError::Params("latent graph lacks species".into()))?;
    check_pairs(pairs, loc.nrows(), sp.nrows())?;
    Ok(pairs
        .iter()
        .map(|&(i, j)| loc.row(i).dot(&sp.row(j)))
        .collect())
}

/// Final latents after encoding and all message-passing steps.
pub fn run(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
) -> Result<LatentGraph, ModelError> {
    let topo = check_inputs(graph, params, config)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    Ok(run_on_tape(&mut tape, graph, &bound, &topo, config)?.extract(&tape))
}

/// Raw scores (logits) of the target pairs after the full pipeline. Targets
/// need not be edges of the graph.
pub fn forward(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>, ModelError> {
    let latent = run(graph, params, config)?;
    decode_scores(&latent, pairs)
}

/// Mean sigmoid cross-entropy of the target pairs and its gradient with
/// respect to every parameter.
pub fn loss_and_gradients(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
    pairs: &[(usize, usize)],
    labels: &[f64],
) -> Result<(f64, ParamStore), ModelError> {
    let topo = check_inputs(graph, params, config)?;
    if pairs.is_empty() {
        return Err(NnError::EmptyInput.into());
    }
    if pairs.len() != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} pairs but {} labels",
            pairs.len(),
            labels.len()
        ))
        .into());
    }
    check_pairs(pairs, topo.counts[LOCATION], topo.counts[SPECIES])?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let latents = run_on_tape(&mut tape, graph, &bound, &topo, config)?;
    let scores = decode_on_tape(&mut tape, &latents, pairs);
    let y = Array2::from_shape_vec((labels.len(), 1), labels.to_vec()).expect("column");
    let loss = tape.bce_with_logits(scores, Arc::new(y));
    let value = tape.value(loss)[[0, 0]];
    if !value.is_finite() {
        return Err(NnError::NonFiniteLoss(value).into());
    }
    let grads = tape.backward(loss);
    Ok((value, bound.gradients(&tape, &grads)))
}

/// Mean loss only; used by finite-difference checks.
pub fn loss(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
    pairs: &[(usize, usize)],
    labels: &[f64],
) -> Result<f64, ModelError> {
    let scores = forward(graph, params, config, pairs)?;
    Ok(crate::nn::bce_with_logits(&scores, labels)?)
}

/// `sigmoid(v_L[i] · v_S[j])` for every location in `locations` against every
/// species, computed from one forward pass.
pub fn probability_matrix(
    graph: &TypedGraph,
    params: &ParamStore,
    config: &ModelConfig,
    locations: std::ops::Range<usize>,
) -> Result<Array2<f64>, ModelError> {
    let latent = run(graph, params, config)?;
    let loc = &latent.nodes[LOCATION];
    if locations.end > loc.nrows() {
        return Err(ModelError::PairOutOfRange {
            index: 0,
            location: locations.end.saturating_sub(1),
            species: 0,
        });
    }
    let block = loc.slice_axis(Axis(0), (locations.start..locations.end).into());
    let scores = block.dot(&latent.nodes[SPECIES].t());
    Ok(scores.mapv(crate::nn::sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeSet, NodeSet};
    use ndarray::array;

    fn toy_graph(config: &ModelConfig) -> TypedGraph {
        let mut g = TypedGraph::new()
            .add_node_set(NodeSet::new(
                LOCATION,
                array![[0.5, -1.0], [0.2, 0.3], [-0.4, 0.8]],
            ))
            .unwrap()
            .add_node_set(NodeSet::new(SPECIES, Array2::eye(2)))
            .unwrap();
        let det =
            EdgeSet::with_unit_features(DET_L2S, LOCATION, SPECIES, vec![0, 1, 1], vec![0, 0, 1])
                .unwrap();
        let nondet =
            EdgeSet::with_unit_features(NONDET_L2S, LOCATION, SPECIES, vec![2, 0], vec![0, 1])
                .unwrap();
        if config.direction == Direction::Bidirectional {
            g = g.add_edge_set(det.reversed(DET_S2L)).unwrap();
            if config.include_negative_edges {
                g = g.add_edge_set(nondet.reversed(NONDET_S2L)).unwrap();
            }
        }
        if config.include_negative_edges {
            g = g.add_edge_set(nondet).unwrap();
        }
        g.add_edge_set(det).unwrap()
    }

    fn cfg(direction: Direction, neg: bool) -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            num_hidden_layers: 1,
            num_message_passing_steps: 2,
            direction,
            include_negative_edges: neg,
            aggregation: Aggregation::SegmentSum,
            activation: Activation::Silu,
        }
    }

    #[test]
    fn roles_follow_config() {
        let dims = InputDims {
            location: 2,
            species: 2,
            edge: 1,
        };
        let one_way = cfg(Direction::OneWay, false).roles(dims);
        // 2 node embedders + 1 edge embedder + 2 steps * (1 edge + 2 node)
        assert_eq!(one_way.len(), 9);
        let full = cfg(Direction::Bidirectional, true).roles(dims);
        assert_eq!(full.len(), 2 + 4 + 2 * (4 + 2));
        let species_node = full
            .iter()
            .find(|(r, _)| r == &node_processor_role(0, SPECIES))
            .unwrap();
        assert_eq!(species_node.1.input_dim, 4 * 3);
    }

    #[test]
    fn zero_embedders_give_zero_latents() {
        let c = cfg(Direction::Bidirectional, true);
        let g = toy_graph(&c);
        let p = ParamStore::init(&c, InputDims::of_graph(&g).unwrap(), 1)
            .unwrap()
            .zeros_like();
        let lat = encode(&g, &p, &c).unwrap();
        for m in lat.nodes.values().chain(lat.edges.values()) {
            assert_eq!(m.ncols(), c.latent_dim);
            assert!(m.iter().all(|&v| v == 0.0));
        }
        assert_eq!(lat.edges.len(), 4);
    }

    #[test]
    fn zero_processors_are_identity() {
        let c = cfg(Direction::Bidirectional, true);
        let g = toy_graph(&c);
        let mut p = ParamStore::init(&c, InputDims::of_graph(&g).unwrap(), 2).unwrap();
        for (role, mlp) in p.mlps.iter_mut() {
            if role.starts_with("processor/") {
                mlp.tensors_mut().for_each(|t| t.fill(0.0));
            }
        }
        let lat = encode(&g, &p, &c).unwrap();
        let next = process_step(&lat, &g, &p, &c, 0).unwrap();
        assert_eq!(lat, next);
    }

    #[test]
    fn one_way_locations_ignore_species_features() {
        let c = cfg(Direction::OneWay, false);
        let g = toy_graph(&c);
        let p = ParamStore::init(&c, InputDims::of_graph(&g).unwrap(), 3).unwrap();
        let a = run(&g, &p, &c).unwrap();
        let g2 = g
            .with_node_set(NodeSet::new(SPECIES, array![[3.0, -1.0], [0.5, 7.0]]))
            .unwrap();
        let b = run(&g2, &p, &c).unwrap();
        assert_eq!(a.nodes[LOCATION], b.nodes[LOCATION]);
        assert_ne!(a.nodes[SPECIES], b.nodes[SPECIES]);
    }

    #[test]
    fn missing_edge_set_is_reported() {
        let c = cfg(Direction::Bidirectional, false);
        let g = toy_graph(&cfg(Direction::OneWay, false));
        let dims = InputDims::of_graph(&g).unwrap();
        let p = ParamStore::init(&c, dims, 0).unwrap();
        assert!(matches!(
            forward(&g, &p, &c, &[(0, 0)]),
            Err(ModelError::MissingEdgeSet(DET_S2L))
        ));
    }

    #[test]
    fn zero_steps_rejected() {
        let mut c = cfg(Direction::OneWay, false);
        c.num_message_passing_steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn decode_contract() {
        let mut lat = LatentGraph::default();
        lat.nodes.insert(LOCATION.into(), array![[1.0, 0.0], [0.0, 1.0]]);
        lat.nodes.insert(SPECIES.into(), array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(decode_scores(&lat, &[(0, 0)]).unwrap(), vec![0.0]);
        assert_eq!(crate::nn::sigmoid(0.0), 0.5);
        assert_eq!(decode_scores(&lat, &[(0, 1)]).unwrap(), vec![1.0]);
        assert_eq!(
            decode_scores(&lat, &[(1, 0), (0, 1), (0, 0)]).unwrap(),
            vec![1.0, 1.0, 0.0]
        );
        assert!(matches!(
            decode_scores(&lat, &[(2, 0)]),
            Err(ModelError::PairOutOfRange { .. })
        ));
        // doubling a species latent doubles its scores
        let mut doubled = lat.clone();
        doubled.nodes.get_mut(SPECIES).unwrap().row_mut(1).mapv_inplace(|v| 2.0 * v);
        assert_eq!(decode_scores(&doubled, &[(0, 1), (1, 1)]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn forward_equals_composed_steps() {
        let c = cfg(Direction::Bidirectional, true);
        let g = toy_graph(&c);
        let p = ParamStore::init(&c, InputDims::of_graph(&g).unwrap(), 4).unwrap();
        let pairs = [(0, 0), (2, 1), (1, 1)];
        let mut lat = encode(&g, &p, &c).unwrap();
        for step in 0..c.num_message_passing_steps {
            lat = process_step(&lat, &g, &p, &c, step).unwrap();
        }
        let composed = decode_scores(&lat, &pairs).unwrap();
        assert_eq!(forward(&g, &p, &c, &pairs).unwrap(), composed);
    }
}
