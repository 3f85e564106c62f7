//! Flattened-observation MLP baseline.
//!
//! The observation is compressed into one vector: all node features
//! concatenated, followed by the flattened adjacency matrix. Both the input
//! width and the logit vector are locked to the node count the model was
//! built for, which is exactly the failure mode the graph-native policies
//! avoid.

use serde::{Deserialize, Serialize};

use crate::error::{NumError, PolicyError};
use crate::graph::AttributedGraph;
use crate::nn::{ParamSet, Tape, Var};
use crate::policy::{ActionSpace, ActorCritic, ModelSignature};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub action_space: ActionSpace,
}

impl MlpConfig {
    pub fn netdef_default(n: usize) -> Self {
        Self {
            n,
            feature_dim: 2,
            hidden_dim: 64,
            action_space: ActionSpace::nodes_only(&["restore", "upgrade"]),
        }
    }

    fn input_dim(&self) -> usize {
        self.n * self.feature_dim + self.n * self.n
    }

    fn logit_dim(&self) -> usize {
        self.n * self.action_space.node_actions.len()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.n == 0 || self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(PolicyError::Num(NumError::Shape("zero-sized baseline dimension".into())));
        }
        if !self.action_space.is_valid() || !self.action_space.edge_actions.is_empty() {
            return Err(PolicyError::InvalidAction(
                "baseline supports node actions only".into(),
            ));
        }
        Ok(())
    }
}

/// Two tanh hidden layers for each network, separate actor and critic.
#[derive(Debug, Clone)]
pub struct MlpBaseline {
    cfg: MlpConfig,
    params: ParamSet,
}

impl MlpBaseline {
    pub fn new(cfg: MlpConfig, seed: u64) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut params = ParamSet::new(seed);
        let (input, h) = (cfg.input_dim(), cfg.hidden_dim);
        for (prefix, out) in [("actor", cfg.logit_dim()), ("critic", 1)] {
            params.insert_glorot(&format!("{prefix}.l0.w"), input, h);
            params.insert_zeros(&format!("{prefix}.l0.b"), 1, h);
            params.insert_glorot(&format!("{prefix}.l1.w"), h, h);
            params.insert_zeros(&format!("{prefix}.l1.b"), 1, h);
            params.insert_glorot(&format!("{prefix}.out.w"), h, out);
            params.insert_zeros(&format!("{prefix}.out.b"), 1, out);
        }
        Ok(Self { cfg, params })
    }

    pub fn from_parts(cfg: MlpConfig, params: ParamSet) -> Result<Self, PolicyError> {
        let fresh = Self::new(cfg.clone(), 0)?;
        if fresh.params.len() != params.len() {
            return Err(PolicyError::Num(NumError::Shape(format!(
                "expected {} parameters, restored {}",
                fresh.params.len(),
                params.len()
            ))));
        }
        for (name, t) in fresh.params.iter() {
            match params.try_get(name) {
                Some(r) if r.shape() == t.shape() => {}
                Some(r) => {
                    return Err(PolicyError::Num(NumError::Shape(format!(
                        "parameter `{name}`: expected {:?}, restored {:?}",
                        t.shape(),
                        r.shape()
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

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    /// Node features then the row-major adjacency, as one row vector.
    fn flatten_observation(&self, obs: &AttributedGraph) -> Result<Tensor2, PolicyError> {
        if obs.num_nodes() != self.cfg.n {
            return Err(PolicyError::SizeMismatch { expected: self.cfg.n, got: obs.num_nodes() });
        }
        if obs.feature_dim() != self.cfg.feature_dim {
            return Err(PolicyError::FeatureDim {
                expected: self.cfg.feature_dim,
                got: obs.feature_dim(),
            });
        }
        let n = self.cfg.n;
        let mut flat = Vec::with_capacity(self.cfg.input_dim());
        flat.extend_from_slice(obs.features().as_slice());
        for u in 0..n {
            for v in 0..n {
                flat.push(if u != v && obs.has_edge(u, v) { 1.0 } else { 0.0 });
            }
        }
        Ok(Tensor2::from_vec(1, self.cfg.input_dim(), flat).map_err(PolicyError::Num)?)
    }

    fn forward(&self, tape: &mut Tape, prefix: &str, input: Var) -> Result<Var, PolicyError> {
        let mut h = input;
        for layer in ["l0", "l1"] {
            let w = tape.param(&format!("{prefix}.{layer}.w"), self.params.get(&format!("{prefix}.{layer}.w")));
            let b = tape.param(&format!("{prefix}.{layer}.b"), self.params.get(&format!("{prefix}.{layer}.b")));
            h = tape.matmul(h, w)?;
            h = tape.add_row_broadcast(h, b)?;
            h = tape.tanh(h);
        }
        let w = tape.param(&format!("{prefix}.out.w"), self.params.get(&format!("{prefix}.out.w")));
        let b = tape.param(&format!("{prefix}.out.b"), self.params.get(&format!("{prefix}.out.b")));
        let out = tape.matmul(h, w)?;
        Ok(tape.add_row_broadcast(out, b)?)
    }
}

impl ActorCritic for MlpBaseline {
    fn signature(&self) -> ModelSignature {
        ModelSignature {
            kind: "mlp_baseline".to_string(),
            feature_dim: self.cfg.feature_dim,
            node_actions: self.cfg.action_space.node_actions.clone(),
            edge_actions: Vec::new(),
            fixed_nodes: Some(self.cfg.n),
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
        if obs.num_actionable_nodes() != self.cfg.n {
            return Err(PolicyError::SizeMismatch {
                expected: self.cfg.n,
                got: obs.num_actionable_nodes(),
            });
        }
        let input = self.flatten_observation(obs)?;
        let x = tape.leaf(input);
        self.forward(tape, "actor", x)
    }

    fn critic_value(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError> {
        let input = self.flatten_observation(obs)?;
        let x = tape.leaf(input);
        self.forward(tape, "critic", x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::MaskedCategorical;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn graph(n: usize, seed: u64) -> AttributedGraph {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(0.5) {
                    edges.push((u, v));
                }
            }
        }
        let feats = Tensor2::from_fn(n, 2, |_, _| rng.gen_range(0.0..1.0));
        AttributedGraph::new(n, edges, feats, 0..n, []).unwrap()
    }

    fn logits_of(m: &MlpBaseline, g: &AttributedGraph) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = m.actor_logits(&mut tape, g).unwrap();
        tape.value(v).to_vec()
    }

    #[test]
    fn size_change_is_rejected() {
        let m = MlpBaseline::new(MlpConfig::netdef_default(6), 0).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            m.actor_logits(&mut tape, &graph(7, 1)),
            Err(PolicyError::SizeMismatch { expected: 6, got: 7 })
        ));
        assert_eq!(logits_of(&m, &graph(6, 2)).len(), 12);
    }

    #[test]
    fn zero_weights_give_uniform_policy() {
        let mut m = MlpBaseline::new(MlpConfig::netdef_default(4), 1).unwrap();
        let names: Vec<String> = m.params.names().map(String::from).collect();
        for name in names {
            let shape = m.params.get(&name).shape();
            m.params.assign(&name, Tensor2::zeros(shape.0, shape.1)).unwrap();
        }
        let logits = logits_of(&m, &graph(4, 3));
        let dist = MaskedCategorical::from_logits(&logits, &vec![true; 8]).unwrap();
        for &p in dist.probs() {
            assert!((p - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_nodes_change_logits() {
        // searched counterexample: a permutation-sensitive model should not
        // map permuted inputs onto permuted outputs
        for seed in 0..10u64 {
            let m = MlpBaseline::new(MlpConfig::netdef_default(5), seed).unwrap();
            let g = graph(5, 100 + seed);
            let perm = vec![3, 0, 4, 1, 2];
            let pg = g.permute(&perm).unwrap();
            let a = logits_of(&m, &g);
            let b = logits_of(&m, &pg);
            let mut max_diff = 0.0_f64;
            for i in 0..5 {
                for k in 0..2 {
                    max_diff = max_diff.max((a[i * 2 + k] - b[perm[i] * 2 + k]).abs());
                }
            }
            if max_diff > 1e-3 {
                return;
            }
        }
        panic!("no permutation-sensitivity counterexample found");
    }
}
