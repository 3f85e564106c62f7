//! Clipped-surrogate PPO with generalized advantage estimation.
//!
//! Rollouts collect whole episodes (optionally in parallel; each episode owns
//! a derived rng, so the buffer is deterministic regardless of scheduling).
//! Updates recompute log-probs and values on the tape per minibatch, apply
//! the clipped surrogate to the actor and a squared-error loss to the
//! critic, and step two optimizers with their own learning rates.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{EnvError, NumError, PolicyError};
use crate::graph::AttributedGraph;
use crate::nn::{adam_step, clip_grad_norm, AdamState, GradMap, Tape, Var};
use crate::policy::{ActionInstance, ActionLayout, ActionSpace, ActorCritic, MaskedCategorical};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("environment fault in episode {episode}: {source}")]
    Env {
        episode: usize,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("training diverged: {0}")]
    Diverged(String),
}

/// Environment surface the trainer drives. Episodes are single-threaded;
/// separate instances may run in parallel.
pub trait Environment: Send {
    fn action_space(&self) -> ActionSpace;
    fn observation(&self) -> AttributedGraph;
    fn action_mask(&self) -> Vec<bool>;
    fn step(&mut self, action: &ActionInstance) -> Result<EnvStep, EnvError>;
}

/// One transition's worth of environment feedback.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub observation: AttributedGraph,
    pub reward: f64,
    pub done: bool,
}

/// One recorded step of experience.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: AttributedGraph,
    pub mask: Vec<bool>,
    pub action: ActionInstance,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Episode-ordered experience for one update.
#[derive(Debug, Default)]
pub struct RolloutBuffer {
    episodes: Vec<Vec<Transition>>,
}

impl RolloutBuffer {
    pub fn episodes(&self) -> &[Vec<Transition>] {
        &self.episodes
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn episode_rewards(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|ep| ep.iter().map(|t| t.reward).sum())
            .collect()
    }

    pub fn flat(&self) -> Vec<&Transition> {
        self.episodes.iter().flatten().collect()
    }
}

/// PPO hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub episodes_per_update: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            epochs: 4,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            episodes_per_update: 10,
        }
    }
}

/// Separate optimizer states for the two networks.
#[derive(Debug, Clone, Default)]
pub struct Optimizers {
    pub actor: AdamState,
    pub critic: AdamState,
}

/// Loss and diagnostic averages from one update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_episode_reward: f64,
    pub steps: usize,
    pub episodes: usize,
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 round over the combined word
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs one episode with a frozen policy, sampling from the masked
/// distribution.
fn run_episode<E: Environment>(
    policy: &dyn ActorCritic,
    env: &mut E,
    horizon: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Transition>, PpoError> {
    let space = env.action_space();
    let mut transitions = Vec::new();
    for _ in 0..horizon {
        let observation = env.observation();
        let mask = env.action_mask();
        let out = policy.evaluate(&observation, &mask)?;
        let dist = MaskedCategorical::from_logits(&out.logits, &mask)?;
        let slot = dist.sample(rng);
        let layout = ActionLayout::of(&observation, &space);
        let action = layout
            .instance(slot)
            .ok_or_else(|| PolicyError::InvalidAction(format!("slot {slot}")))?;
        let step = env.step(&action).map_err(|source| PpoError::Env { episode: 0, source })?;
        transitions.push(Transition {
            observation,
            mask,
            action,
            log_prob: dist.log_prob(slot),
            reward: step.reward,
            value: out.value,
            done: step.done,
        });
        if step.done {
            break;
        }
    }
    Ok(transitions)
}

/// Collects `n_episodes` complete episodes against a frozen policy.
/// Deterministic given the seed: episode `i` draws from its own derived rng
/// and the buffer is ordered by episode index.
pub fn collect_rollouts<E: Environment>(
    policy: &dyn ActorCritic,
    env_factory: &(impl Fn(usize) -> Result<E, EnvError> + Sync),
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<RolloutBuffer, PpoError> {
    let episodes: Result<Vec<Vec<Transition>>, PpoError> = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = env_factory(i).map_err(|source| PpoError::Env { episode: i, source })?;
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, i as u64));
            run_episode(policy, &mut env, horizon, &mut rng).map_err(|e| match e {
                PpoError::Env { source, .. } => PpoError::Env { episode: i, source },
                other => other,
            })
        })
        .collect();
    Ok(RolloutBuffer { episodes: episodes? })
}

/// Raw GAE advantages and returns, flat in buffer order.
#[derive(Debug, Clone)]
pub struct GaeResult {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// `delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t`;
/// `A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}`; returns are
/// `A + V`. The advantage output is unnormalized; see
/// [`normalize_advantages`].
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lam: f64) -> Result<GaeResult, PpoError> {
    if buffer.total_steps() == 0 {
        return Err(PpoError::EmptyBuffer);
    }
    let mut advantages = Vec::with_capacity(buffer.total_steps());
    let mut returns = Vec::with_capacity(buffer.total_steps());
    for episode in buffer.episodes() {
        let len = episode.len();
        let mut adv = vec![0.0; len];
        let mut acc = 0.0;
        for t in (0..len).rev() {
            let tr = &episode[t];
            let cont = if tr.done { 0.0 } else { 1.0 };
            // terminal (and truncation) bootstrap value is 0
            let next_value = if t + 1 < len { episode[t + 1].value } else { 0.0 };
            let delta = tr.reward + gamma * next_value * cont - tr.value;
            acc = delta + gamma * lam * cont * acc;
            adv[t] = acc;
        }
        for (t, a) in adv.iter().enumerate() {
            advantages.push(*a);
            returns.push(a + episode[t].value);
        }
    }
    Ok(GaeResult { advantages, returns })
}

/// In-place standardization to mean 0, std 1 (eps 1e-8).
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in advantages.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Builds the clipped-surrogate actor loss for a minibatch on the tape:
/// `-mean(min(rho A, clip(rho) A)) - entropy_coef * mean(entropy)`.
/// Also returns each sample's probability ratio for clip-fraction stats.
pub fn actor_loss(
    policy: &dyn ActorCritic,
    tape: &mut Tape,
    batch: &[&Transition],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> Result<(Var, Vec<f64>), PpoError> {
    let space = policy.action_space().clone();
    let k = batch.len();
    let mut terms = Vec::with_capacity(k);
    let mut neg_entropies = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for (tr, &adv) in batch.iter().zip(advantages) {
        let logits = policy.actor_logits(tape, &tr.observation)?;
        let ls = tape.masked_log_softmax_row(logits, &tr.mask)?;
        let layout = ActionLayout::of(&tr.observation, &space);
        let slot = layout
            .slot(&tr.action)
            .ok_or_else(|| PolicyError::InvalidAction(format!("{:?}", tr.action)))?;
        let lp = tape.get(ls, 0, slot)?;
        let old = tape.scalar(tr.log_prob);
        let diff = tape.sub(lp, old)?;
        let ratio = tape.exp(diff);
        ratios.push(tape.value(ratio).get(0, 0));
        let unclipped = tape.scale(ratio, adv);
        let clamped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
        let clipped = tape.scale(clamped, adv);
        let term = tape.min_elem(unclipped, clipped)?;
        terms.push(term);
        // entropy_i = -sum_j p_j log p_j; masked slots contribute exactly 0
        let p = tape.exp(ls);
        let p_ls = tape.mul(p, ls)?;
        neg_entropies.push(tape.sum_all(p_ls));
    }
    let surrogate = tape.sum_vars(&terms)?;
    let loss = tape.scale(surrogate, -1.0 / k as f64);
    let neg_ent = tape.sum_vars(&neg_entropies)?;
    // -coef * mean(entropy) == +coef * mean(neg_entropy)
    let ent_term = tape.scale(neg_ent, entropy_coef / k as f64);
    Ok((tape.add(loss, ent_term)?, ratios))
}

/// Squared-error critic loss scaled by `value_coef`.
pub fn critic_loss(
    policy: &dyn ActorCritic,
    tape: &mut Tape,
    batch: &[&Transition],
    returns: &[f64],
    value_coef: f64,
) -> Result<Var, PpoError> {
    let k = batch.len();
    let mut terms = Vec::with_capacity(k);
    for (tr, &ret) in batch.iter().zip(returns) {
        let v = policy.critic_value(tape, &tr.observation)?;
        let target = tape.scalar(ret);
        let diff = tape.sub(v, target)?;
        let sq = tape.mul(diff, diff)?;
        terms.push(sq);
    }
    let total = tape.sum_vars(&terms)?;
    Ok(tape.scale(total, value_coef / k as f64))
}

/// Mean entropy of the masked policy over a batch, from plain evaluation.
pub fn mean_entropy(policy: &dyn ActorCritic, batch: &[&Transition]) -> Result<f64, PpoError> {
    let mut total = 0.0;
    for tr in batch {
        let out = policy.evaluate(&tr.observation, &tr.mask)?;
        let dist = MaskedCategorical::from_logits(&out.logits, &tr.mask)?;
        total += dist.entropy();
    }
    Ok(total / batch.len() as f64)
}

fn split_prefix(grads: GradMap, prefix: &str) -> GradMap {
    grads.into_iter().filter(|(name, _)| name.starts_with(prefix)).collect()
}

/// One PPO update over the buffer: GAE, advantage normalization, then
/// `epochs` passes of shuffled minibatches through both networks.
/// Bitwise deterministic for a fixed seed.
pub fn ppo_update(
    policy: &mut dyn ActorCritic,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    opt: &mut Optimizers,
    seed: u64,
) -> Result<UpdateStats, PpoError> {
    let gae = compute_gae(buffer, cfg.gamma, cfg.lam)?;
    let mut advantages = gae.advantages.clone();
    normalize_advantages(&mut advantages);
    let returns = gae.returns;
    let flat = buffer.flat();

    let mut sum_actor = 0.0;
    let mut sum_critic = 0.0;
    let mut sum_entropy = 0.0;
    let mut clipped_count = 0usize;
    let mut sample_count = 0usize;
    let mut batches = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..flat.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, epoch as u64));
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| flat[i]).collect();
            let batch_adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let batch_ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();

            let mut tape = Tape::new();
            let (a_loss, ratios) =
                actor_loss(policy, &mut tape, &batch, &batch_adv, cfg.clip, cfg.entropy_coef)?;
            let a_val = tape.value(a_loss).get(0, 0);
            if !a_val.is_finite() {
                return Err(PpoError::Diverged(format!(
                    "actor loss {a_val} at epoch {epoch} (ratios min {:?} max {:?})",
                    ratios.iter().cloned().fold(f64::INFINITY, f64::min),
                    ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )));
            }
            let grads = tape.backward(a_loss)?;
            let mut actor_grads = split_prefix(tape.param_grads(&grads, policy.params()), "actor.");
            clip_grad_norm(&mut actor_grads, cfg.max_grad_norm);
            adam_step(policy.params_mut(), &actor_grads, cfg.lr_actor, &mut opt.actor)?;

            let mut tape = Tape::new();
            let c_loss = critic_loss(policy, &mut tape, &batch, &batch_ret, cfg.value_coef)?;
            let c_val = tape.value(c_loss).get(0, 0);
            if !c_val.is_finite() {
                return Err(PpoError::Diverged(format!("critic loss {c_val} at epoch {epoch}")));
            }
            let grads = tape.backward(c_loss)?;
            let mut critic_grads =
                split_prefix(tape.param_grads(&grads, policy.params()), "critic.");
            clip_grad_norm(&mut critic_grads, cfg.max_grad_norm);
            adam_step(policy.params_mut(), &critic_grads, cfg.lr_critic, &mut opt.critic)?;

            sum_actor += a_val;
            sum_critic += c_val;
            sum_entropy += mean_entropy(policy, &batch)?;
            clipped_count += ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count();
            sample_count += batch.len();
            batches += 1;
        }
    }

    let rewards = buffer.episode_rewards();
    Ok(UpdateStats {
        actor_loss: sum_actor / batches as f64,
        critic_loss: sum_critic / batches as f64,
        entropy: sum_entropy / batches as f64,
        clip_fraction: clipped_count as f64 / sample_count as f64,
        mean_episode_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        steps: buffer.total_steps(),
        episodes: buffer.episodes().len(),
    })
}
