use super::params::{LayerIdx, LinearIdx};
use super::{Activation, ModelConfig, ModelError, Parameters, Result};
use crate::morphology::HeteroGraph;
use crate::tensor::{Tape, Tensor, Var};

/// Index tables derived from one graph, reused across forward passes.
///
/// Neighbor attention is laid out as an `n × S` slot table, `S` being the
/// largest in-degree: slot `j` of target `t` holds its `j`-th incoming edge,
/// and unused slots are masked out of the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPlan {
    nodes: usize,
    slots: usize,
    /// `(node type, rows of that type)` for every type present.
    type_groups: Vec<(usize, Vec<usize>)>,
    /// Restores row-major node order after per-type results are stacked.
    type_inverse: Option<Vec<usize>>,
    /// `[slot][target]` source node; 0 as a placeholder for empty slots.
    src_by_slot: Vec<Vec<usize>>,
    /// `[slot][target]` edge index; `edge_count` (a zero row) for empty slots.
    edge_by_slot: Vec<Vec<usize>>,
    mask: Vec<bool>,
    edge_groups: Vec<(usize, Vec<usize>)>,
    edge_inverse: Vec<usize>,
    edge_sources: Vec<usize>,
    edge_count: usize,
    pos_index: Vec<usize>,
}

impl GraphPlan {
    pub fn new(graph: &HeteroGraph, config: &ModelConfig) -> Result<Self> {
        if graph.scheme() != config.scheme {
            return Err(ModelError::Config(format!(
                "graph built with scheme `{}` but model uses `{}`",
                graph.scheme(),
                config.scheme
            )));
        }
        let n = graph.node_count();
        if n > config.max_nodes() {
            return Err(ModelError::Config(format!("{n} nodes exceed the maximum of {}", config.max_nodes())));
        }
        let mut pos_index = Vec::with_capacity(n);
        for node in graph.nodes() {
            if node.row >= config.max_grid_rows || node.col >= config.max_grid_cols {
                return Err(ModelError::GridBounds {
                    row: node.row,
                    col: node.col,
                    rows: config.max_grid_rows,
                    cols: config.max_grid_cols,
                });
            }
            pos_index.push(node.row * config.max_grid_cols + node.col);
        }

        let mut type_groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for u in 0..config.node_type_count() {
            let rows: Vec<usize> = (0..n).filter(|&i| graph.nodes()[i].node_type == u).collect();
            if !rows.is_empty() {
                type_groups.push((u, rows));
            }
        }
        let type_inverse = (type_groups.len() > 1).then(|| inverse_of(type_groups.iter().flat_map(|g| &g.1), n));

        let slots = graph.max_in_degree();
        let edge_count = graph.edges().len();
        let mut src_by_slot = vec![vec![0; n]; slots];
        let mut edge_by_slot = vec![vec![edge_count; n]; slots];
        let mut mask = vec![false; n * slots];
        for t in 0..n {
            for (j, &e) in graph.incoming(t).iter().enumerate() {
                src_by_slot[j][t] = graph.edges()[e].source;
                edge_by_slot[j][t] = e;
                mask[t * slots + j] = true;
            }
        }

        let mut edge_groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for p in 0..config.edge_type_count() {
            let members: Vec<usize> = (0..edge_count).filter(|&e| graph.edges()[e].edge_type == p).collect();
            if !members.is_empty() {
                edge_groups.push((p, members));
            }
        }
        let edge_inverse = inverse_of(edge_groups.iter().flat_map(|g| &g.1), edge_count);
        let edge_sources = graph.edges().iter().map(|e| e.source).collect();

        Ok(Self {
            nodes: n,
            slots,
            type_groups,
            type_inverse,
            src_by_slot,
            edge_by_slot,
            mask,
            edge_groups,
            edge_inverse,
            edge_sources,
            edge_count,
            pos_index,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    /// Expands per-slot weights (`n × S`) into a dense `n × n` matrix whose
    /// row `t`, column `s` is the weight target `t` puts on source `s`.
    pub fn slots_to_dense(&self, slot_weights: &Tensor) -> Tensor {
        let n = self.nodes;
        let mut dense = vec![0.0; n * n];
        for t in 0..n {
            for j in 0..self.slots {
                if self.mask[t * self.slots + j] {
                    dense[t * n + self.src_by_slot[j][t]] += slot_weights.get(t, j);
                }
            }
        }
        Tensor::matrix(n, n, dense).expect("n > 0")
    }

    fn dense_to_slots(&self, dense: &Tensor) -> Result<Tensor> {
        let n = self.nodes;
        if dense.shape() != [n, n] {
            return Err(ModelError::Shape(format!("attention must be {n}x{n}, got {:?}", dense.shape())));
        }
        let mut out = vec![0.0; n * self.slots];
        for t in 0..n {
            for j in 0..self.slots {
                if self.mask[t * self.slots + j] {
                    out[t * self.slots + j] = dense.get(t, self.src_by_slot[j][t]);
                }
            }
        }
        Ok(Tensor::matrix(n, self.slots, out)?)
    }
}

fn inverse_of<'a>(order: impl Iterator<Item = &'a usize>, n: usize) -> Vec<usize> {
    let mut inverse = vec![0; n];
    for (stacked, &original) in order.enumerate() {
        inverse[original] = stacked;
    }
    inverse
}

fn activate(tape: &mut Tape, x: Var, kind: Activation) -> Result<Var> {
    Ok(match kind {
        Activation::Relu => tape.relu(x)?,
        Activation::Tanh => tape.tanh(x)?,
    })
}

fn linear(tape: &mut Tape, pv: &[Var], x: Var, idx: LinearIdx) -> Result<Var> {
    Ok(tape.linear(x, pv[idx.weight], pv[idx.bias])?)
}

/// `x` through `layers`, with the activation after every layer except the
/// last when `activate_last` is false.
fn mlp(tape: &mut Tape, pv: &[Var], mut x: Var, layers: &[LinearIdx], act: Activation, activate_last: bool) -> Result<Var> {
    for (k, &lin) in layers.iter().enumerate() {
        x = linear(tape, pv, x, lin)?;
        if activate_last || k + 1 < layers.len() {
            x = activate(tape, x, act)?;
        }
    }
    Ok(x)
}

fn split_by_type(tape: &mut Tape, plan: &GraphPlan, x: Var) -> Result<Vec<Var>> {
    if plan.type_inverse.is_none() {
        return Ok(vec![x]);
    }
    plan.type_groups
        .iter()
        .map(|(_, rows)| Ok(tape.gather_rows(x, rows.clone())?))
        .collect()
}

fn merge_types(tape: &mut Tape, plan: &GraphPlan, parts: &[Var]) -> Result<Var> {
    let stacked = tape.concat(parts, 0)?;
    match &plan.type_inverse {
        Some(inverse) => Ok(tape.gather_rows(stacked, inverse.clone())?),
        None => Ok(stacked),
    }
}

/// Applies each node type's own linear map to that type's rows.
fn typed_linear(
    tape: &mut Tape,
    pv: &[Var],
    plan: &GraphPlan,
    groups: &[Var],
    weights: impl Fn(usize) -> LinearIdx,
) -> Result<Var> {
    let outs = plan
        .type_groups
        .iter()
        .zip(groups)
        .map(|((u, _), &g)| linear(tape, pv, g, weights(*u)))
        .collect::<Result<Vec<_>>>()?;
    merge_types(tape, plan, &outs)
}

fn check_local(config: &ModelConfig, plan: &GraphPlan, local: &Tensor) -> Result<()> {
    if local.shape() != [plan.nodes, config.local_obs_dim] {
        return Err(ModelError::Shape(format!(
            "local observations must be {}x{}, got {:?}",
            plan.nodes,
            config.local_obs_dim,
            local.shape()
        )));
    }
    Ok(())
}

pub(crate) fn encode_on_tape(tape: &mut Tape, pv: &[Var], params: &Parameters, plan: &GraphPlan, local: Var) -> Result<Var> {
    let layout = params.layout();
    let groups = split_by_type(tape, plan, local)?;
    let embedded = typed_linear(tape, pv, plan, &groups, |u| layout.encoder[u])?;
    let pos = tape.gather_rows(pv[layout.positional], plan.pos_index.clone())?;
    Ok(tape.add(embedded, pos)?)
}

/// Per-head neighbor attention in slot layout (`n × S` each).
pub(crate) fn attention_on_tape(
    tape: &mut Tape,
    pv: &[Var],
    layer: &LayerIdx,
    config: &ModelConfig,
    plan: &GraphPlan,
    h_groups: &[Var],
) -> Result<Vec<Var>> {
    let scale = 1.0 / (config.head_dim() as f64).sqrt();
    (0..config.heads)
        .map(|i| {
            let q = typed_linear(tape, pv, plan, h_groups, |u| layer.q[u][i])?;
            let k = typed_linear(tape, pv, plan, h_groups, |u| layer.k[u][i])?;
            let scores = (0..plan.slots)
                .map(|j| {
                    let kj = tape.gather_rows(k, plan.src_by_slot[j].clone())?;
                    let prod = tape.mul(kj, q)?;
                    Ok(tape.sum(prod, Some(1))?)
                })
                .collect::<Result<Vec<_>>>()?;
            let scores = tape.concat(&scores, 1)?;
            let scaled = tape.scale(scores, scale)?;
            Ok(tape.masked_softmax(scaled, 1, plan.mask.clone())?)
        })
        .collect()
}

/// One message row per graph edge, in edge order: the source's concatenated
/// per-head value projections times the edge type's message matrix
/// (row-vector convention, `m = v · W`).
pub(crate) fn messages_on_tape(
    tape: &mut Tape,
    pv: &[Var],
    layer: &LayerIdx,
    config: &ModelConfig,
    plan: &GraphPlan,
    h_groups: &[Var],
) -> Result<Var> {
    let heads = (0..config.heads)
        .map(|i| typed_linear(tape, pv, plan, h_groups, |u| layer.v[u][i]))
        .collect::<Result<Vec<_>>>()?;
    let values = tape.concat(&heads, 1)?;
    let parts = plan
        .edge_groups
        .iter()
        .map(|(p, edges)| {
            let sources = edges.iter().map(|&e| plan.edge_sources[e]).collect();
            let vs = tape.gather_rows(values, sources)?;
            Ok(tape.matmul(vs, pv[layer.msg[*p]])?)
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&parts, 0)?;
    if plan.edge_groups.len() == 1 {
        return Ok(stacked);
    }
    Ok(tape.gather_rows(stacked, plan.edge_inverse.clone())?)
}

/// Attention-weighted message sum, activation, typed output map, residual.
#[allow(clippy::too_many_arguments)]
pub(crate) fn aggregate_on_tape(
    tape: &mut Tape,
    pv: &[Var],
    layer: &LayerIdx,
    config: &ModelConfig,
    plan: &GraphPlan,
    h: Var,
    alphas: &[Var],
    messages: Var,
) -> Result<Var> {
    let dk = config.head_dim();
    let zero = tape.constant(Tensor::zeros(vec![1, config.embed_dim]));
    let padded = tape.concat(&[messages, zero], 0)?;
    let slot_messages = (0..plan.slots)
        .map(|j| Ok(tape.gather_rows(padded, plan.edge_by_slot[j].clone())?))
        .collect::<Result<Vec<_>>>()?;
    let mut heads = Vec::with_capacity(config.heads);
    for (i, &alpha) in alphas.iter().enumerate() {
        let mut acc: Option<Var> = None;
        for (j, &msg) in slot_messages.iter().enumerate() {
            let part = tape.slice(msg, 1, i * dk, (i + 1) * dk)?;
            let weight = tape.slice(alpha, 1, j, j + 1)?;
            let term = tape.mul(part, weight)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        heads.push(acc.expect("every graph node has at least one neighbor slot"));
    }
    let aggregated = tape.concat(&heads, 1)?;
    let activated = activate(tape, aggregated, config.activation)?;
    let mut groups = split_by_type(tape, plan, activated)?;
    let depth = config.out_mlp_depth;
    for d in 0..depth {
        for ((u, _), g) in plan.type_groups.iter().zip(groups.iter_mut()) {
            let mut y = linear(tape, pv, *g, layer.out[*u][d])?;
            if d + 1 < depth {
                y = activate(tape, y, config.activation)?;
            }
            *g = y;
        }
    }
    let out = merge_types(tape, plan, &groups)?;
    Ok(tape.add(out, h)?)
}

/// Handles to the interesting values of one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Action means, `n × 1`.
    pub mean: Var,
    /// State value, `1 × 1`.
    pub value: Var,
    /// `H^0 ..= H^L`, each `n × embed`.
    pub hidden: Vec<Var>,
    /// `[layer][head]` attention weights in slot layout.
    pub attention: Vec<Vec<Var>>,
}

impl ForwardVars {
    pub fn build(
        tape: &mut Tape,
        pv: &[Var],
        params: &Parameters,
        plan: &GraphPlan,
        local: &Tensor,
        global: &Tensor,
    ) -> Result<Self> {
        let config = params.config();
        let layout = params.layout();
        check_local(config, plan, local)?;
        if global.numel() != config.global_obs_dim {
            return Err(ModelError::Shape(format!(
                "global observation must have {} values, got {}",
                config.global_obs_dim,
                global.numel()
            )));
        }
        let local_var = tape.constant(local.clone());
        let mut h = encode_on_tape(tape, pv, params, plan, local_var)?;
        let mut hidden = vec![h];
        let mut attention = Vec::with_capacity(config.layers);
        for layer in &layout.layers {
            let groups = split_by_type(tape, plan, h)?;
            let alphas = attention_on_tape(tape, pv, layer, config, plan, &groups)?;
            let messages = messages_on_tape(tape, pv, layer, config, plan, &groups)?;
            h = aggregate_on_tape(tape, pv, layer, config, plan, h, &alphas, messages)?;
            hidden.push(h);
            attention.push(alphas);
        }

        let g = tape.constant(global.reshaped(vec![1, config.global_obs_dim]).map_err(ModelError::from)?);
        let global_embed = mlp(tape, pv, g, &layout.global, config.mlp_activation, true)?;
        let repeated = tape.gather_rows(global_embed, vec![0; plan.nodes])?;
        let node_input = tape.concat(&[h, repeated], 1)?;
        let mean = mlp(tape, pv, node_input, &layout.decoder, config.mlp_activation, false)?;
        let pooled = tape.mean(h, Some(0))?;
        let critic_input = tape.concat(&[pooled, global_embed], 1)?;
        let value = mlp(tape, pv, critic_input, &layout.critic, config.mlp_activation, false)?;
        Ok(Self {
            mean,
            value,
            hidden,
            attention,
        })
    }
}

/// Inference result for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Gaussian mean, one entry per node.
    pub mean: Vec<f64>,
    pub value: f64,
    /// Head-averaged `n × n` attention per layer.
    pub attention: Vec<Tensor>,
    /// `[layer][head]` dense `n × n` attention.
    pub head_attention: Vec<Vec<Tensor>>,
}

/// Runs the policy and critic without recording gradients.
pub fn forward(params: &Parameters, plan: &GraphPlan, local: &Tensor, global: &Tensor) -> Result<PolicyOutput> {
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let vars = ForwardVars::build(&mut tape, &pv, params, plan, local, global)?;
    let mean = tape.value(vars.mean).to_vec();
    let value = tape.value(vars.value).data()[0];
    let head_attention: Vec<Vec<Tensor>> = vars
        .attention
        .iter()
        .map(|heads| heads.iter().map(|&a| plan.slots_to_dense(tape.value(a))).collect())
        .collect();
    let attention = head_attention.iter().map(|heads| average(heads)).collect();
    Ok(PolicyOutput {
        mean,
        value,
        attention,
        head_attention,
    })
}

/// Action means and state value only; the cheap path used while acting.
pub fn policy_value(params: &Parameters, plan: &GraphPlan, local: &Tensor, global: &Tensor) -> Result<(Vec<f64>, f64)> {
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let vars = ForwardVars::build(&mut tape, &pv, params, plan, local, global)?;
    Ok((tape.value(vars.mean).to_vec(), tape.value(vars.value).data()[0]))
}

fn average(mats: &[Tensor]) -> Tensor {
    let n = mats.len() as f64;
    let mut data = vec![0.0; mats[0].numel()];
    for m in mats {
        for (d, v) in data.iter_mut().zip(m.data()) {
            *d += v;
        }
    }
    Tensor::new(mats[0].shape().to_vec(), data.into_iter().map(|v| v / n).collect()).expect("same shape")
}

/// `H^0`: typed encoder plus positional rows.
pub fn encode(params: &Parameters, graph: &HeteroGraph, local: &Tensor) -> Result<Tensor> {
    let plan = GraphPlan::new(graph, params.config())?;
    check_local(params.config(), &plan, local)?;
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let x = tape.constant(local.clone());
    let h = encode_on_tape(&mut tape, &pv, params, &plan, x)?;
    Ok(tape.value(h).clone())
}

/// All hidden states `H^0 ..= H^L` of the trunk.
pub fn hidden_states(params: &Parameters, graph: &HeteroGraph, local: &Tensor, global: &Tensor) -> Result<Vec<Tensor>> {
    let plan = GraphPlan::new(graph, params.config())?;
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let vars = ForwardVars::build(&mut tape, &pv, params, &plan, local, global)?;
    Ok(vars.hidden.iter().map(|&v| tape.value(v).clone()).collect())
}

fn layer_setup<'a>(params: &'a Parameters, layer: usize, graph: &HeteroGraph, h: &Tensor) -> Result<(&'a LayerIdx, GraphPlan)> {
    let config = params.config();
    let idx = params
        .layout()
        .layers
        .get(layer)
        .ok_or_else(|| ModelError::Config(format!("layer {layer} out of range")))?;
    let plan = GraphPlan::new(graph, config)?;
    if h.shape() != [plan.nodes, config.embed_dim] {
        return Err(ModelError::Shape(format!(
            "hidden state must be {}x{}, got {:?}",
            plan.nodes,
            config.embed_dim,
            h.shape()
        )));
    }
    Ok((idx, plan))
}

/// Dense per-head attention weights (`h` matrices, `n × n`) of one layer.
pub fn hetero_attention(params: &Parameters, layer: usize, graph: &HeteroGraph, h: &Tensor) -> Result<Vec<Tensor>> {
    let (idx, plan) = layer_setup(params, layer, graph, h)?;
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let hv = tape.constant(h.clone());
    let groups = split_by_type(&mut tape, &plan, hv)?;
    let alphas = attention_on_tape(&mut tape, &pv, idx, params.config(), &plan, &groups)?;
    Ok(alphas.iter().map(|&a| plan.slots_to_dense(tape.value(a))).collect())
}

/// Messages of one layer, one row per edge of `graph` in edge order.
pub fn hetero_message(params: &Parameters, layer: usize, graph: &HeteroGraph, h: &Tensor) -> Result<Tensor> {
    let (idx, plan) = layer_setup(params, layer, graph, h)?;
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let hv = tape.constant(h.clone());
    let groups = split_by_type(&mut tape, &plan, hv)?;
    let m = messages_on_tape(&mut tape, &pv, idx, params.config(), &plan, &groups)?;
    Ok(tape.value(m).clone())
}

/// `H^l` from `H^{l-1}`, given dense per-head attention and per-edge messages.
pub fn hgt_aggregate(
    params: &Parameters,
    layer: usize,
    graph: &HeteroGraph,
    h: &Tensor,
    attention: &[Tensor],
    messages: &Tensor,
) -> Result<Tensor> {
    let (idx, plan) = layer_setup(params, layer, graph, h)?;
    let config = params.config();
    if attention.len() != config.heads {
        return Err(ModelError::Shape(format!("expected {} attention heads, got {}", config.heads, attention.len())));
    }
    if messages.shape() != [plan.edge_count, config.embed_dim] {
        return Err(ModelError::Shape(format!(
            "messages must be {}x{}, got {:?}",
            plan.edge_count,
            config.embed_dim,
            messages.shape()
        )));
    }
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, false);
    let hv = tape.constant(h.clone());
    let alphas = attention
        .iter()
        .map(|a| Ok(tape.constant(plan.dense_to_slots(a)?)))
        .collect::<Result<Vec<_>>>()?;
    let mv = tape.constant(messages.clone());
    let out = aggregate_on_tape(&mut tape, &pv, idx, config, &plan, hv, &alphas, mv)?;
    Ok(tape.value(out).clone())
}

/// Dense head-averaged attention of every layer for one observation.
pub fn attention_dense(params: &Parameters, plan: &GraphPlan, local: &Tensor, global: &Tensor) -> Result<Vec<Tensor>> {
    Ok(forward(params, plan, local, global)?.attention)
}
