//! Versioned checkpoints: model descriptor, parameter tensors, optimizer
//! moments, rng position, and training provenance.
//!
//! Serialization is JSON with exact f64 round-trip (serde_json prints the
//! shortest decimal that parses back to the same bits). The provenance block
//! is what lets evaluation flag seen-vs-unseen adversaries and machine-check
//! that test graph seeds never appeared in training.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::PolicyError;
use crate::graph::AttributedGraph;
use crate::netdef::ScenarioConfig;
use crate::nn::{AdamState, ParamSet, Tape, Var};
use crate::policy::{
    ActionSpace, ActorCritic, GnnPolicy, MlpBaseline, MlpConfig, ModelConfig, ModelSignature,
};
use crate::ppo::Optimizers;
use crate::tensor::Tensor2;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Model(#[from] PolicyError),
}

/// Everything needed to rebuild a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDescriptor {
    Gnn { config: ModelConfig },
    MlpBaseline { config: MlpConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TensorData {
    fn of(t: &Tensor2) -> Self {
        Self { rows: t.rows(), cols: t.cols(), data: t.to_vec() }
    }

    fn to_tensor(&self) -> Result<Tensor2, CheckpointError> {
        Tensor2::from_vec(self.rows, self.cols, self.data.clone())
            .map_err(|e| CheckpointError::Model(PolicyError::Num(e)))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdamData {
    pub t: u64,
    pub m: BTreeMap<String, TensorData>,
    pub v: BTreeMap<String, TensorData>,
}

impl AdamData {
    fn of(state: &AdamState) -> Self {
        let mut out = Self { t: state.t, ..Default::default() };
        for (name, m, v) in state.moments() {
            out.m.insert(name.to_string(), TensorData::of(m));
            out.v.insert(name.to_string(), TensorData::of(v));
        }
        out
    }

    fn to_state(&self) -> Result<AdamState, CheckpointError> {
        let mut state = AdamState::new();
        state.t = self.t;
        for (name, m) in &self.m {
            let v = self.v.get(name).ok_or_else(|| {
                CheckpointError::Model(PolicyError::InvalidAction(format!(
                    "optimizer moment `{name}` missing second moment"
                )))
            })?;
            state.restore_moment(name, m.to_tensor()?, v.to_tensor()?);
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimizerData {
    pub actor: AdamData,
    pub critic: AdamData,
}

/// Position in the deterministic training schedule, sufficient to resume
/// bit-for-bit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngInfo {
    pub base_seed: u64,
    pub update_index: u64,
    pub steps_done: u64,
}

/// What the model was trained on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainProvenance {
    pub scenario: Option<ScenarioConfig>,
    pub trained_against: Vec<String>,
    pub train_graph_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelDescriptor,
    pub params: BTreeMap<String, TensorData>,
    pub optimizer: Option<OptimizerData>,
    pub rng: RngInfo,
    pub train: TrainProvenance,
}

/// A policy of either family behind one `ActorCritic` facade.
#[derive(Debug, Clone)]
pub enum AnyPolicy {
    Gnn(GnnPolicy),
    Mlp(MlpBaseline),
}

impl AnyPolicy {
    pub fn new(descriptor: &ModelDescriptor, seed: u64) -> Result<Self, PolicyError> {
        match descriptor {
            ModelDescriptor::Gnn { config } => Ok(Self::Gnn(GnnPolicy::new(config.clone(), seed)?)),
            ModelDescriptor::MlpBaseline { config } => {
                Ok(Self::Mlp(MlpBaseline::new(config.clone(), seed)?))
            }
        }
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        match self {
            Self::Gnn(m) => ModelDescriptor::Gnn { config: m.config().clone() },
            Self::Mlp(m) => ModelDescriptor::MlpBaseline { config: m.config().clone() },
        }
    }

    fn as_dyn(&self) -> &dyn ActorCritic {
        match self {
            Self::Gnn(m) => m,
            Self::Mlp(m) => m,
        }
    }

    fn as_dyn_mut(&mut self) -> &mut dyn ActorCritic {
        match self {
            Self::Gnn(m) => m,
            Self::Mlp(m) => m,
        }
    }
}

impl ActorCritic for AnyPolicy {
    fn signature(&self) -> ModelSignature {
        self.as_dyn().signature()
    }
    fn action_space(&self) -> &ActionSpace {
        self.as_dyn().action_space()
    }
    fn params(&self) -> &ParamSet {
        self.as_dyn().params()
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        self.as_dyn_mut().params_mut()
    }
    fn actor_logits(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError> {
        self.as_dyn().actor_logits(tape, obs)
    }
    fn critic_value(&self, tape: &mut Tape, obs: &AttributedGraph) -> Result<Var, PolicyError> {
        self.as_dyn().critic_value(tape, obs)
    }
}

impl Checkpoint {
    pub fn capture(
        policy: &AnyPolicy,
        optimizer: Option<&Optimizers>,
        rng: RngInfo,
        train: TrainProvenance,
    ) -> Self {
        let params = policy
            .params()
            .iter()
            .map(|(name, t)| (name.to_string(), TensorData::of(t)))
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            model: policy.descriptor(),
            params,
            optimizer: optimizer.map(|o| OptimizerData {
                actor: AdamData::of(&o.actor),
                critic: AdamData::of(&o.critic),
            }),
            rng,
            train,
        }
    }

    pub fn restore_policy(&self) -> Result<AnyPolicy, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let mut params = ParamSet::new(self.rng.base_seed);
        for (name, t) in &self.params {
            params.insert(name, t.to_tensor()?);
        }
        let policy = match &self.model {
            ModelDescriptor::Gnn { config } => {
                AnyPolicy::Gnn(GnnPolicy::from_parts(config.clone(), params)?)
            }
            ModelDescriptor::MlpBaseline { config } => {
                AnyPolicy::Mlp(MlpBaseline::from_parts(config.clone(), params)?)
            }
        };
        Ok(policy)
    }

    pub fn restore_optimizers(&self) -> Result<Optimizers, CheckpointError> {
        match &self.optimizer {
            Some(o) => Ok(Optimizers { actor: o.actor.to_state()?, critic: o.critic.to_state()? }),
            None => Ok(Optimizers::default()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        // write-then-rename so a crash never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Content hash used in report fingerprints.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ActorVariant;
    use crate::ppo::{collect_rollouts, ppo_update, PpoConfig};

    fn sample_policy(seed: u64) -> AnyPolicy {
        let cfg = ModelConfig {
            head_hidden: Some(4),
            hidden_dim: 6,
            embed_dim: 4,
            global_dim: 4,
            ..ModelConfig::netdef_default(ActorVariant::AttentionInductive, None)
        };
        AnyPolicy::new(&ModelDescriptor::Gnn { config: cfg }, seed).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let policy = sample_policy(42);
        let rng = RngInfo { base_seed: 42, update_index: 3, steps_done: 1500 };
        let train = TrainProvenance {
            scenario: Some(ScenarioConfig::default()),
            trained_against: vec!["spread".into()],
            train_graph_seeds: vec![7],
        };
        let ck = Checkpoint::capture(&policy, None, rng, train.clone());
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back.rng, rng);
        assert_eq!(back.train, train);
        let restored = back.restore_policy().unwrap();
        assert_eq!(restored.params(), policy.params());
        assert_eq!(ck.sha256(), back.sha256());
    }

    #[test]
    fn optimizer_state_roundtrips_and_resumes_identically() {
        use crate::error::EnvError;
        use crate::netdef::{NetDefEnv, ScenarioConfig};

        let scenario = ScenarioConfig { n: 4, horizon: 10, ..Default::default() };
        let factory = |i: usize| -> Result<NetDefEnv, EnvError> {
            NetDefEnv::new(scenario.clone(), 5, 100 + i as u64)
        };
        let cfg = PpoConfig { minibatch: 16, ..Default::default() };

        // one update, checkpoint, one more update
        let mut policy = sample_policy(9);
        let mut opt = Optimizers::default();
        let buf = collect_rollouts(&policy, &factory, 2, 10, 1).unwrap();
        ppo_update(&mut policy, &buf, &cfg, &mut opt, 2).unwrap();
        let ck = Checkpoint::capture(&policy, Some(&opt), RngInfo::default(), Default::default());

        let buf2 = collect_rollouts(&policy, &factory, 2, 10, 3).unwrap();
        ppo_update(&mut policy, &buf2, &cfg, &mut opt, 4).unwrap();
        let direct = policy.params().clone();

        // restore and replay the second update
        let mut restored = ck.restore_policy().unwrap();
        let mut ropt = ck.restore_optimizers().unwrap();
        let rbuf = collect_rollouts(&restored, &factory, 2, 10, 3).unwrap();
        ppo_update(&mut restored, &rbuf, &cfg, &mut ropt, 4).unwrap();
        assert_eq!(restored.params(), &direct);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let policy = sample_policy(1);
        let mut ck =
            Checkpoint::capture(&policy, None, RngInfo::default(), TrainProvenance::default());
        ck.version = 99;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json()),
            Err(CheckpointError::Version(99))
        ));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let policy = sample_policy(3);
        let ck = Checkpoint::capture(&policy, None, RngInfo::default(), TrainProvenance::default());
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.sha256(), ck.sha256());
    }
}
