//! GCN-encoded actor-critic models.
//!
//! All variants share the encoder: a stack of graph-convolution layers
//! `H' = act(Â H W + b)` over the normalized adjacency, evaluated through the
//! sparse message-passing path. They differ in how node embeddings become
//! action logits:
//!
//! - transductive: embeddings concatenate into one fixed-width vector, so
//!   the model only accepts the node count it was built for;
//! - naive inductive: a shared head maps each actionable node's embedding to
//!   per-action logits independently;
//! - attention inductive: a global state vector, updated by softmax
//!   attention over actionable-node embeddings, is appended to each node
//!   embedding before the shared head.
//!
//! Edge actions score as `f(z_src ⊙ z_dst)` through a shared dense layer and
//! their logits append after the flattened node-action block. Actor and
//! critic are fully separate networks inside one parameter set (`actor.*`
//! and `critic.*` paths).

use serde::{Deserialize, Serialize};

use crate::error::{NumError, PolicyError};
use crate::graph::AttributedGraph;
use crate::nn::{ParamSet, Tape, Var};
use crate::policy::{ActionLayout, ActionSpace};
use crate::tensor::{Activation, PoolMode};
#[cfg(test)]
use crate::tensor::Tensor2;

/// How the actor converts node embeddings into logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorVariant {
    Transductive,
    NaiveInductive,
    AttentionInductive,
}

impl ActorVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActorVariant::Transductive => "transductive",
            ActorVariant::NaiveInductive => "naive_inductive",
            ActorVariant::AttentionInductive => "attention_inductive",
        }
    }
}

/// Hyperparameters of one actor-critic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ActorVariant,
    pub action_space: ActionSpace,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Width of the attention global vector (attention variant only).
    pub global_dim: usize,
    /// Hidden width of the actor/critic heads; `None` means a single dense
    /// layer.
    pub head_hidden: Option<usize>,
    pub num_layers: usize,
    /// Pooling inside the attention global update.
    pub pool: PoolMode,
    /// Update the global vector after every GCN layer (true) or once after
    /// the whole stack (false).
    pub global_per_layer: bool,
    pub gcn_activation: Activation,
    /// Node count the transductive variant is locked to.
    pub fixed_nodes: Option<usize>,
}

impl ModelConfig {
    /// Defaults for the network-defense environment: 2-layer GCN 64/32,
    /// 64-wide global vector with max pooling, 32-wide tanh heads.
    pub fn netdef_default(variant: ActorVariant, fixed_nodes: Option<usize>) -> Self {
        Self {
            variant,
            action_space: ActionSpace::nodes_only(&["restore", "upgrade"]),
            feature_dim: 2,
            hidden_dim: 64,
            embed_dim: 32,
            global_dim: 64,
            head_hidden: Some(32),
            num_layers: 2,
            pool: PoolMode::Max,
            global_per_layer: true,
            gcn_activation: Activation::Relu,
            fixed_nodes,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !self.action_space.is_valid() {
            return Err(PolicyError::InvalidAction("empty or duplicated action ids".into()));
        }
        if self.feature_dim == 0 || self.embed_dim == 0 || self.num_layers == 0 {
            return Err(PolicyError::Num(NumError::Shape("zero-sized model dimension".into())));
        }
        if self.num_layers > 1 && self.hidden_dim == 0 {
            return Err(PolicyError::Num(NumError::Shape("zero hidden dim".into())));
        }
        match self.variant {
            ActorVariant::Transductive if self.fixed_nodes.is_none() => Err(PolicyError::Num(
                NumError::Shape("transductive model needs fixed_nodes".into()),
            )),
            ActorVariant::AttentionInductive if self.global_dim == 0 => Err(PolicyError::Num(
                NumError::Shape("attention model needs global_dim".into()),
            )),
            _ => Ok(()),
        }
    }

    /// Per-layer (input, output) widths of the encoder.
    fn enc_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|i| {
                let input = if i == 0 { self.feature_dim } else { self.hidden_dim };
                let output = if i + 1 == self.num_layers { self.embed_dim } else { self.hidden_dim };
                (input, output)
            })
            .collect()
    }

    /// Stages at which the attention global vector updates, with the node
    /// embedding width feeding each stage.
    fn global_stages(&self) -> Vec<(String, usize)> {
        if self.global_per_layer {
            self.enc_dims()
                .iter()
                .enumerate()
                .map(|(i, &(_, out))| (format!("l{i}"), out))
                .collect()
        } else {
            vec![("post".to_string(), self.embed_dim)]
        }
    }

    fn actor_head_in(&self) -> usize {
        match self.variant {
            ActorVariant::Transductive => self.fixed_nodes.unwrap_or(0) * self.embed_dim,
            ActorVariant::NaiveInductive => self.embed_dim,
            ActorVariant::AttentionInductive => self.embed_dim + self.global_dim,
        }
    }

    fn actor_head_out(&self) -> usize {
        let per_node = self.action_space.node_actions.len();
        match self.variant {
            ActorVariant::Transductive => self.fixed_nodes.unwrap_or(0) * per_node,
            _ => per_node,
        }
    }

    fn critic_head_in(&self) -> usize {
        match self.variant {
            ActorVariant::Transductive => self.fixed_nodes.unwrap_or(0) * self.embed_dim,
            ActorVariant::NaiveInductive => self.embed_dim,
            ActorVariant::AttentionInductive => self.global_dim,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
}

/// Compatibility signature persisted with checkpoints so evaluation can
/// refuse incompatible observations loudly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSignature {
    pub kind: String,
    pub feature_dim: usize,
    pub node_actions: Vec<String>,
    pub edge_actions: Vec<String>,
    pub fixed_nodes: Option<usize>,
}

impl ModelSignature {
    pub fn check_compatible(&self, g: &AttributedGraph) -> Result<(), PolicyError> {
        if g.feature_dim() != self.feature_dim {
            return Err(PolicyError::FeatureDim { expected: self.feature_dim, got: g.feature_dim() });
        }
        if let Some(fixed) = self.fixed_nodes {
            if g.num_nodes() != fixed {
                return Err(PolicyError::SizeMismatch { expected: fixed, got: g.num_nodes() });
            }
        }
        Ok(())
    }
}

/// Plain evaluation products of one observation.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub mask: Vec<bool>,
    pub value: f64,
}

/// A trainable policy: actor logits over the flat slot layout plus a scalar
/// state-value estimate, both recorded on a tape.
pub trait ActorCritic: Send + Sync {
    fn signature(&self) -> ModelSignature;
    fn action_space(&self) -> &ActionSpace;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn actor_logits(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError>;
    fn critic_value(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError>;

    /// Forward both networks without keeping the tape.
    fn evaluate(&self, obs: &AttributedGraph, mask: &[bool]) -> Result<PolicyOutput, PolicyError> {
        let mut tape = Tape::new();
        let logits = self.actor_logits(&mut tape, obs)?;
        let lv = tape.value(logits);
        if lv.len() != mask.len() {
            return Err(PolicyError::InvalidAction(format!(
                "{} logits vs {} mask entries",
                lv.len(),
                mask.len()
            )));
        }
        let logits = lv.to_vec();
        let value = self.critic_value(&mut tape, obs)?;
        let value = tape.value(value).get(0, 0);
        Ok(PolicyOutput { logits, mask: mask.to_vec(), value })
    }
}

/// GCN actor-critic in one of the three head variants.
#[derive(Debug, Clone)]
pub struct GnnPolicy {
    cfg: ModelConfig,
    params: ParamSet,
}

impl GnnPolicy {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut params = ParamSet::new(seed);
        for (name, (rows, cols), init) in expected_shapes(&cfg) {
            match init {
                Init::Glorot => params.insert_glorot(&name, rows, cols),
                Init::Zeros => params.insert_zeros(&name, rows, cols),
            }
        }
        Ok(Self { cfg, params })
    }

    /// Rebuilds a model around restored parameters, verifying every expected
    /// path and shape is present.
    pub fn from_parts(cfg: ModelConfig, params: ParamSet) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let expected = expected_shapes(&cfg);
        if expected.len() != params.len() {
            return Err(PolicyError::Num(NumError::Shape(format!(
                "expected {} parameters, restored {}",
                expected.len(),
                params.len()
            ))));
        }
        for (name, shape, _) in &expected {
            match params.try_get(name) {
                Some(t) if t.shape() == *shape => {}
                Some(t) => {
                    return Err(PolicyError::Num(NumError::Shape(format!(
                        "parameter `{name}`: expected {shape:?}, restored {:?}",
                        t.shape()
                    ))))
                }
                None => {
                    return Err(PolicyError::Num(NumError::Shape(format!(
                        "missing parameter `{name}`"
                    ))))
                }
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn check_size(&self, obs: &AttributedGraph) -> Result<(), PolicyError> {
        if obs.feature_dim() != self.cfg.feature_dim {
            return Err(PolicyError::FeatureDim {
                expected: self.cfg.feature_dim,
                got: obs.feature_dim(),
            });
        }
        if let Some(fixed) = self.cfg.fixed_nodes {
            if obs.num_nodes() != fixed {
                return Err(PolicyError::SizeMismatch { expected: fixed, got: obs.num_nodes() });
            }
            if obs.num_actionable_nodes() != fixed {
                return Err(PolicyError::SizeMismatch {
                    expected: fixed,
                    got: obs.num_actionable_nodes(),
                });
            }
        }
        Ok(())
    }

    /// Encoder shared by both networks: `num_layers` graph convolutions via
    /// the sparse path, interleaved with global-vector updates for the
    /// attention variant.
    fn encode(
        &self,
        tape: &mut Tape,
        obs: &AttributedGraph,
        prefix: &str,
    ) -> Result<(Var, Option<Var>), PolicyError> {
        let n = obs.num_nodes();
        let actionable: Vec<usize> = obs.actionable_nodes().collect();
        let attention = self.cfg.variant == ActorVariant::AttentionInductive;
        if attention && actionable.is_empty() {
            return Err(PolicyError::NoActionableNodes);
        }
        let entries = obs.normalized_adjacency_entries();
        let stages = self.cfg.global_stages();

        let mut h = tape.leaf(obs.features().clone());
        let mut global = if attention {
            Some(tape.param(&format!("{prefix}.global.init"), self.params.get(&format!("{prefix}.global.init"))))
        } else {
            None
        };
        for i in 0..self.cfg.num_layers {
            let w = self.bind(tape, &format!("{prefix}.enc.l{i}.w"));
            let b = self.bind(tape, &format!("{prefix}.enc.l{i}.b"));
            let mixed = tape.spmm(n, entries.clone(), h)?;
            let lin = tape.matmul(mixed, w)?;
            let lin = tape.add_row_broadcast(lin, b)?;
            h = activate(tape, lin, self.cfg.gcn_activation);
            if attention && self.cfg.global_per_layer {
                let z_a = tape.select_rows(h, &actionable)?;
                let g = global.take().expect("attention global set above");
                global = Some(self.global_update(tape, prefix, &stages[i].0, z_a, g)?);
            }
        }
        if attention && !self.cfg.global_per_layer {
            let z_a = tape.select_rows(h, &actionable)?;
            let g = global.take().expect("attention global set above");
            global = Some(self.global_update(tape, prefix, &stages[0].0, z_a, g)?);
        }
        Ok((h, global))
    }

    /// `g' = g + phi_g(POOL_i { a_i * phi_v(g, z_i) })` with `a` the softmax
    /// over per-node attention scores `phi_a(g, z_i)`.
    fn global_update(
        &self,
        tape: &mut Tape,
        prefix: &str,
        stage: &str,
        z_a: Var,
        g: Var,
    ) -> Result<Var, PolicyError> {
        let n_a = tape.value(z_a).rows();
        let g_rows = tape.broadcast_rows(g, n_a)?;
        let inp = tape.concat_cols(g_rows, z_a)?;

        let wv = self.bind(tape, &format!("{prefix}.global.{stage}.value.w"));
        let bv = self.bind(tape, &format!("{prefix}.global.{stage}.value.b"));
        let v = tape.matmul(inp, wv)?;
        let v = tape.add_row_broadcast(v, bv)?;
        let v = tape.tanh(v);

        let wa = self.bind(tape, &format!("{prefix}.global.{stage}.attn.w"));
        let ba = self.bind(tape, &format!("{prefix}.global.{stage}.attn.b"));
        let score = tape.matmul(inp, wa)?;
        let score = tape.add_row_broadcast(score, ba)?;
        let score_row = tape.reshape(score, 1, n_a)?;
        let attn_row = tape.softmax_rows(score_row);
        let attn_col = tape.reshape(attn_row, n_a, 1)?;
        let attn = tape.broadcast_cols(attn_col, self.cfg.global_dim)?;

        let weighted = tape.mul(v, attn)?;
        let pooled = tape.pool_rows(weighted, self.cfg.pool)?;

        let wg = self.bind(tape, &format!("{prefix}.global.{stage}.out.w"));
        let bg = self.bind(tape, &format!("{prefix}.global.{stage}.out.b"));
        let delta = tape.matmul(pooled, wg)?;
        let delta = tape.add_row_broadcast(delta, bg)?;
        Ok(tape.add(g, delta)?)
    }

    /// Dense head: tanh hidden layer when configured, linear output.
    fn head(&self, tape: &mut Tape, path: &str, x: Var) -> Result<Var, NumError> {
        let w0 = self.bind(tape, &format!("{path}.l0.w"));
        let b0 = self.bind(tape, &format!("{path}.l0.b"));
        let h = tape.matmul(x, w0)?;
        let h = tape.add_row_broadcast(h, b0)?;
        if self.cfg.head_hidden.is_none() {
            return Ok(h);
        }
        let h = tape.tanh(h);
        let w1 = self.bind(tape, &format!("{path}.l1.w"));
        let b1 = self.bind(tape, &format!("{path}.l1.b"));
        let out = tape.matmul(h, w1)?;
        Ok(tape.add_row_broadcast(out, b1)?)
    }

    /// `f(z_src ⊙ z_dst)` rows for every actionable edge, flattened.
    fn edge_logits(&self, tape: &mut Tape, z: Var, edges: &[(usize, usize)]) -> Result<Var, PolicyError> {
        let srcs: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dsts: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let zs = tape.select_rows(z, &srcs)?;
        let zd = tape.select_rows(z, &dsts)?;
        let prod = tape.mul(zs, zd)?;
        let w = self.bind(tape, "actor.edge.w");
        let b = self.bind(tape, "actor.edge.b");
        let out = tape.matmul(prod, w)?;
        let out = tape.add_row_broadcast(out, b)?;
        let total = edges.len() * self.cfg.action_space.edge_actions.len();
        Ok(tape.reshape(out, 1, total)?)
    }

    fn bind(&self, tape: &mut Tape, name: &str) -> Var {
        tape.param(name, self.params.get(name))
    }
}

fn activate(tape: &mut Tape, v: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => v,
        Activation::Relu => tape.relu(v),
        Activation::Tanh => tape.tanh(v),
    }
}

/// Full parameter inventory for a config: (path, shape, initializer).
fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, (usize, usize), Init)> {
    let mut out = Vec::new();
    let g = cfg.global_dim;
    for prefix in ["actor", "critic"] {
        for (i, (ind, outd)) in cfg.enc_dims().into_iter().enumerate() {
            out.push((format!("{prefix}.enc.l{i}.w"), (ind, outd), Init::Glorot));
            out.push((format!("{prefix}.enc.l{i}.b"), (1, outd), Init::Zeros));
        }
        if cfg.variant == ActorVariant::AttentionInductive {
            out.push((format!("{prefix}.global.init"), (1, g), Init::Glorot));
            for (stage, zdim) in cfg.global_stages() {
                let base = format!("{prefix}.global.{stage}");
                out.push((format!("{base}.value.w"), (g + zdim, g), Init::Glorot));
                out.push((format!("{base}.value.b"), (1, g), Init::Zeros));
                out.push((format!("{base}.attn.w"), (g + zdim, 1), Init::Glorot));
                out.push((format!("{base}.attn.b"), (1, 1), Init::Zeros));
                out.push((format!("{base}.out.w"), (g, g), Init::Glorot));
                out.push((format!("{base}.out.b"), (1, g), Init::Zeros));
            }
        }
        let (head_in, head_out) = if prefix == "actor" {
            (cfg.actor_head_in(), cfg.actor_head_out())
        } else {
            (cfg.critic_head_in(), 1)
        };
        if head_out > 0 {
            match cfg.head_hidden {
                Some(h) => {
                    out.push((format!("{prefix}.head.l0.w"), (head_in, h), Init::Glorot));
                    out.push((format!("{prefix}.head.l0.b"), (1, h), Init::Zeros));
                    out.push((format!("{prefix}.head.l1.w"), (h, head_out), Init::Glorot));
                    out.push((format!("{prefix}.head.l1.b"), (1, head_out), Init::Zeros));
                }
                None => {
                    out.push((format!("{prefix}.head.l0.w"), (head_in, head_out), Init::Glorot));
                    out.push((format!("{prefix}.head.l0.b"), (1, head_out), Init::Zeros));
                }
            }
        }
    }
    let n_edge = cfg.action_space.edge_actions.len();
    if n_edge > 0 {
        out.push(("actor.edge.w".to_string(), (cfg.embed_dim, n_edge), Init::Glorot));
        out.push(("actor.edge.b".to_string(), (1, n_edge), Init::Zeros));
    }
    out
}

impl ActorCritic for GnnPolicy {
    fn signature(&self) -> ModelSignature {
        ModelSignature {
            kind: self.cfg.variant.as_str().to_string(),
            feature_dim: self.cfg.feature_dim,
            node_actions: self.cfg.action_space.node_actions.clone(),
            edge_actions: self.cfg.action_space.edge_actions.clone(),
            fixed_nodes: self.cfg.fixed_nodes,
        }
    }

    fn action_space(&self) -> &ActionSpace {
        &self.cfg.action_space
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn actor_logits(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError> {
        self.check_size(obs)?;
        let layout = ActionLayout::of(obs, &self.cfg.action_space);
        if layout.slot_count() == 0 {
            return Err(PolicyError::NoActionableNodes);
        }
        let (z, global) = self.encode(tape, obs, "actor")?;

        let has_node_slots = layout.node_slot_count() > 0;
        let node_flat = if has_node_slots {
            let nodes = layout.actionable_nodes();
            let flat = match self.cfg.variant {
                ActorVariant::Transductive => {
                    let width = obs.num_nodes() * self.cfg.embed_dim;
                    let stacked = tape.reshape(z, 1, width)?;
                    self.head(tape, "actor.head", stacked)?
                }
                ActorVariant::NaiveInductive => {
                    let z_a = tape.select_rows(z, nodes)?;
                    let per_node = self.head(tape, "actor.head", z_a)?;
                    tape.reshape(per_node, 1, layout.node_slot_count())?
                }
                ActorVariant::AttentionInductive => {
                    let z_a = tape.select_rows(z, nodes)?;
                    let g = global.expect("attention encode returns a global vector");
                    let g_rows = tape.broadcast_rows(g, nodes.len())?;
                    let with_g = tape.concat_cols(z_a, g_rows)?;
                    let per_node = self.head(tape, "actor.head", with_g)?;
                    tape.reshape(per_node, 1, layout.node_slot_count())?
                }
            };
            Some(flat)
        } else {
            None
        };

        let edges = layout.actionable_edges();
        let edge_flat = if !self.cfg.action_space.edge_actions.is_empty() && !edges.is_empty() {
            Some(self.edge_logits(tape, z, edges)?)
        } else {
            None
        };

        match (node_flat, edge_flat) {
            (Some(n), Some(e)) => Ok(tape.concat_cols(n, e)?),
            (Some(n), None) => Ok(n),
            (None, Some(e)) => Ok(e),
            (None, None) => Err(PolicyError::NoActionableNodes),
        }
    }

    fn critic_value(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError> {
        self.check_size(obs)?;
        let (z, global) = self.encode(tape, obs, "critic")?;
        let value = match self.cfg.variant {
            ActorVariant::Transductive => {
                let width = obs.num_nodes() * self.cfg.embed_dim;
                let stacked = tape.reshape(z, 1, width)?;
                self.head(tape, "critic.head", stacked)?
            }
            ActorVariant::NaiveInductive => {
                let nodes: Vec<usize> = obs.actionable_nodes().collect();
                if nodes.is_empty() {
                    return Err(PolicyError::NoActionableNodes);
                }
                let z_a = tape.select_rows(z, &nodes)?;
                let per_node = self.head(tape, "critic.head", z_a)?;
                tape.pool_rows(per_node, PoolMode::Mean)?
            }
            ActorVariant::AttentionInductive => {
                let g = global.expect("attention encode returns a global vector");
                self.head(tape, "critic.head", g)?
            }
        };
        Ok(value)
    }
}
