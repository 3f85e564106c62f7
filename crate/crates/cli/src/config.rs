//! Run configuration: one TOML file, every key overridable from the command
//! line via `--set section.key=value`.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use graphdef_core::netdef::{RedSpec, RedVariant, ScenarioConfig};
use graphdef_core::policy::{ActorVariant, MlpConfig, ModelConfig};
use graphdef_core::ppo::PpoConfig;
use graphdef_core::checkpoint::ModelDescriptor;
use graphdef_core::tensor::{Activation, PoolMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: String,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub global_dim: usize,
    pub head_hidden: usize,
    pub num_layers: usize,
    pub pool: String,
    pub global_per_layer: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: "attention_inductive".into(),
            hidden_dim: 64,
            embed_dim: 32,
            global_dim: 64,
            head_hidden: 32,
            num_layers: 2,
            pool: "max".into(),
            global_per_layer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub n: usize,
    pub p: f64,
    pub horizon: usize,
    pub vuln_min: f64,
    pub vuln_max: f64,
    pub vuln_floor: f64,
    /// spread | b_line | meander | none
    pub red_variant: String,
    pub red_sleepy: bool,
    pub red_target: Option<usize>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            n: 10,
            p: 0.4,
            horizon: 500,
            vuln_min: 0.2,
            vuln_max: 0.8,
            vuln_floor: 0.01,
            red_variant: "spread".into(),
            red_sleepy: false,
            red_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub total_steps: u64,
    /// Periodic checkpoint interval, in updates.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { total_steps: 1_000_000, checkpoint_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_graphs: usize,
    pub episodes: usize,
    pub sizes: Vec<usize>,
    /// Labels: spread | b_line | meander, each optionally `sleepy_` prefixed.
    pub red_variants: Vec<String>,
    /// Subset of: zero_shot, size_sweep, adversary, random_oracle.
    pub protocols: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_graphs: 50,
            episodes: 10,
            sizes: vec![10, 20, 30, 40],
            red_variants: vec!["spread".into(), "sleepy_spread".into()],
            protocols: vec!["zero_shot".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub policy_init: u64,
    pub train_graph: u64,
    pub train_base: u64,
    pub eval_graph_base: u64,
    pub eval_red_base: u64,
    pub eval_policy: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            policy_init: 42,
            train_graph: 7,
            train_base: 1,
            eval_graph_base: 1_000_000,
            eval_red_base: 2_000_000,
            eval_policy: 3_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub ppo: PpoConfig,
    pub env: EnvSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub seeds: SeedsSection,
}

impl RunConfig {
    /// Parses TOML, applies `--set section.key=value` overrides, validates.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).context("config is not valid TOML")?;
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e| anyhow!("config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if self.parse_variant().is_err() {
            bail!("model.variant: unknown variant `{}`", m.variant);
        }
        if self.parse_pool().is_err() {
            bail!("model.pool: unknown pool `{}`", m.pool);
        }
        if m.hidden_dim == 0 || m.embed_dim == 0 || m.num_layers == 0 {
            bail!("model: dims and num_layers must be positive");
        }
        let p = &self.ppo;
        if !(p.gamma > 0.0 && p.gamma <= 1.0) {
            bail!("ppo.gamma: must be in (0, 1], got {}", p.gamma);
        }
        if !(0.0..=1.0).contains(&p.lam) {
            bail!("ppo.lam: must be in [0, 1], got {}", p.lam);
        }
        if p.clip <= 0.0 {
            bail!("ppo.clip: must be positive, got {}", p.clip);
        }
        if p.lr_actor <= 0.0 || p.lr_critic <= 0.0 {
            bail!("ppo.lr_actor / ppo.lr_critic: must be positive");
        }
        if p.epochs == 0 || p.minibatch == 0 || p.episodes_per_update == 0 {
            bail!("ppo.epochs, ppo.minibatch, ppo.episodes_per_update: must be positive");
        }
        self.scenario().map_err(|e| anyhow!("env: {e}"))?;
        if self.train.total_steps == 0 || self.train.checkpoint_every == 0 {
            bail!("train.total_steps and train.checkpoint_every must be positive");
        }
        let e = &self.eval;
        if e.n_graphs == 0 || e.episodes == 0 {
            bail!("eval.n_graphs and eval.episodes must be positive");
        }
        for label in &e.red_variants {
            parse_red_label(label)
                .ok_or_else(|| anyhow!("eval.red_variants: unknown adversary `{label}`"))?;
        }
        for proto in &e.protocols {
            if !["zero_shot", "size_sweep", "adversary", "random_oracle"]
                .contains(&proto.as_str())
            {
                bail!("eval.protocols: unknown protocol `{proto}`");
            }
        }
        Ok(())
    }

    fn parse_variant(&self) -> Result<Option<ActorVariant>> {
        match self.model.variant.as_str() {
            "transductive" => Ok(Some(ActorVariant::Transductive)),
            "naive_inductive" => Ok(Some(ActorVariant::NaiveInductive)),
            "attention_inductive" => Ok(Some(ActorVariant::AttentionInductive)),
            "mlp_baseline" => Ok(None),
            other => bail!("unknown variant `{other}`"),
        }
    }

    fn parse_pool(&self) -> Result<PoolMode> {
        match self.model.pool.as_str() {
            "mean" => Ok(PoolMode::Mean),
            "max" => Ok(PoolMode::Max),
            "sum" => Ok(PoolMode::Sum),
            other => bail!("unknown pool `{other}`"),
        }
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let e = &self.env;
        let red = match e.red_variant.as_str() {
            "none" => None,
            label => {
                let mut spec = parse_red_label(label)
                    .ok_or_else(|| anyhow!("env.red_variant: unknown adversary `{label}`"))?;
                spec.sleepy = spec.sleepy || e.red_sleepy;
                spec.target = e.red_target;
                Some(spec)
            }
        };
        let scenario = ScenarioConfig {
            n: e.n,
            p: e.p,
            horizon: e.horizon,
            vuln_range: (e.vuln_min, e.vuln_max),
            vuln_floor: e.vuln_floor,
            red,
        };
        scenario.validate().map_err(|err| anyhow!("{err}"))?;
        Ok(scenario)
    }

    pub fn model_descriptor(&self) -> Result<ModelDescriptor> {
        let descriptor = match self.parse_variant()? {
            None => ModelDescriptor::MlpBaseline {
                config: MlpConfig {
                    n: self.env.n,
                    feature_dim: 2,
                    hidden_dim: self.model.hidden_dim,
                    action_space: graphdef_core::netdef::action_space(),
                },
            },
            Some(variant) => {
                let fixed = matches!(variant, ActorVariant::Transductive).then_some(self.env.n);
                ModelDescriptor::Gnn {
                    config: ModelConfig {
                        variant,
                        action_space: graphdef_core::netdef::action_space(),
                        feature_dim: 2,
                        hidden_dim: self.model.hidden_dim,
                        embed_dim: self.model.embed_dim,
                        global_dim: self.model.global_dim,
                        head_hidden: Some(self.model.head_hidden),
                        num_layers: self.model.num_layers,
                        pool: self.parse_pool()?,
                        global_per_layer: self.model.global_per_layer,
                        gcn_activation: Activation::Relu,
                        fixed_nodes: fixed,
                    },
                }
            }
        };
        Ok(descriptor)
    }
}

pub fn parse_red_label(label: &str) -> Option<RedSpec> {
    let (sleepy, base) = match label.strip_prefix("sleepy_") {
        Some(rest) => (true, rest),
        None => (false, label),
    };
    let variant = match base {
        "spread" => RedVariant::Spread,
        "b_line" => RedVariant::BLine,
        "meander" => RedVariant::Meander,
        _ => return None,
    };
    Some(RedSpec { variant, sleepy, target: None })
}

/// Applies one `section.key=value` override onto the raw TOML tree, so CLI
/// flags map one-to-one onto config keys.
fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{entry}` is not of the form key=value"))?;
    let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
        .map(|t: toml::Value| t["v"].clone())
        .or_else(|_| toml::from_str(&format!("v = \"{raw}\"")).map(|t: toml::Value| t["v"].clone()))
        .map_err(|e| anyhow!("override `{entry}`: {e}"))?;
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{entry}`: `{part}` is not a table"))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    cursor
        .as_table_mut()
        .ok_or_else(|| anyhow!("override `{entry}`: parent is not a table"))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
