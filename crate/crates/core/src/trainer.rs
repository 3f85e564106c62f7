//! Training orchestration: epoch-free episode scheduling, deterministic
//! seeding, and checkpoint/resume plumbing around `ppo`.
//!
//! Training runs on a single generated graph (the train context). Every
//! update `u` derives its rollout and shuffle seeds from `(base_seed, u)`,
//! so a run can be stopped at any checkpoint and resumed bit-for-bit.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngInfo, TrainProvenance};
use crate::error::EnvError;
use crate::netdef::{NetDefEnv, ScenarioConfig};
use crate::policy::ActorCritic;
use crate::ppo::{collect_rollouts, ppo_update, Optimizers, PpoConfig, PpoError, UpdateStats};

/// Everything one training run needs beyond the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub ppo: PpoConfig,
    pub scenario: ScenarioConfig,
    /// Seed of the single training graph.
    pub train_graph_seed: u64,
    /// Root of the per-update rollout/shuffle seed derivation.
    pub base_seed: u64,
    /// Stop once at least this many environment steps are consumed.
    pub total_steps: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: u64,
    pub cumulative_steps: u64,
    pub stats: UpdateStats,
    pub wall_ms: u128,
}

/// Where a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub update_index: u64,
    pub steps_done: u64,
}

fn update_seed(base: u64, update: u64, stream: u64) -> u64 {
    let mut z = base ^ (update.wrapping_mul(2).wrapping_add(stream)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs updates until `total_steps` environment steps have been consumed,
/// starting from `progress` (zero for a fresh run). `on_update` sees every
/// update record; returning an error aborts the run. `max_updates` caps how
/// many updates this call performs (for periodic checkpointing), leaving
/// the schedule itself untouched.
pub fn train(
    policy: &mut dyn ActorCritic,
    opt: &mut Optimizers,
    cfg: &TrainerConfig,
    progress: TrainProgress,
    max_updates: Option<u64>,
    mut on_update: impl FnMut(&UpdateRecord) -> Result<(), PpoError>,
) -> Result<TrainProgress, PpoError> {
    let mut update = progress.update_index;
    let mut steps = progress.steps_done;
    let horizon = cfg.scenario.horizon;
    let stop_at = max_updates.map(|m| progress.update_index + m);
    while steps < cfg.total_steps && stop_at.map_or(true, |s| update < s) {
        let started = Instant::now();
        let rollout_seed = update_seed(cfg.base_seed, update, 0);
        let shuffle_seed = update_seed(cfg.base_seed, update, 1);
        let scenario = cfg.scenario.clone();
        let graph_seed = cfg.train_graph_seed;
        let factory = move |episode: usize| -> Result<NetDefEnv, EnvError> {
            // same training graph every episode; fresh red stream per episode
            NetDefEnv::new(
                scenario.clone(),
                graph_seed,
                update_seed(rollout_seed, episode as u64, 2),
            )
        };
        let buffer = collect_rollouts(
            policy,
            &factory,
            cfg.ppo.episodes_per_update,
            horizon,
            rollout_seed,
        )?;
        steps += buffer.total_steps() as u64;
        let stats = ppo_update(policy, &buffer, &cfg.ppo, opt, shuffle_seed)?;
        update += 1;
        let record = UpdateRecord {
            update,
            cumulative_steps: steps,
            stats,
            wall_ms: started.elapsed().as_millis(),
        };
        on_update(&record)?;
    }
    Ok(TrainProgress { update_index: update, steps_done: steps })
}

/// Checkpoint payload for a run at a given progress point.
pub fn snapshot(
    policy: &crate::checkpoint::AnyPolicy,
    opt: &Optimizers,
    cfg: &TrainerConfig,
    progress: TrainProgress,
) -> Checkpoint {
    Checkpoint::capture(
        policy,
        Some(opt),
        RngInfo {
            base_seed: cfg.base_seed,
            update_index: progress.update_index,
            steps_done: progress.steps_done,
        },
        TrainProvenance {
            scenario: Some(cfg.scenario.clone()),
            trained_against: cfg
                .scenario
                .red
                .as_ref()
                .map(|r| vec![r.label()])
                .unwrap_or_default(),
            train_graph_seeds: vec![cfg.train_graph_seed],
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::AnyPolicy;
    use crate::policy::{ActorVariant, GnnPolicy, ModelConfig};

    fn small_trainer_cfg(total_steps: u64) -> TrainerConfig {
        TrainerConfig {
            ppo: PpoConfig { episodes_per_update: 2, minibatch: 16, ..Default::default() },
            scenario: ScenarioConfig { n: 5, horizon: 15, ..Default::default() },
            train_graph_seed: 77,
            base_seed: 3,
            total_steps,
        }
    }

    fn small_policy(seed: u64) -> AnyPolicy {
        AnyPolicy::Gnn(
            GnnPolicy::new(
                ModelConfig {
                    hidden_dim: 6,
                    embed_dim: 4,
                    global_dim: 4,
                    head_hidden: Some(4),
                    ..ModelConfig::netdef_default(ActorVariant::NaiveInductive, None)
                },
                seed,
            )
            .unwrap(),
        )
    }

    #[test]
    fn step_accounting_matches_buffer_sizes() {
        let cfg = small_trainer_cfg(60);
        let mut policy = small_policy(0);
        let mut opt = Optimizers::default();
        let mut from_records = 0u64;
        let progress = train(
            &mut policy,
            &mut opt,
            &cfg,
            TrainProgress { update_index: 0, steps_done: 0 },
            None,
            |rec| {
                from_records = rec.cumulative_steps;
                assert!(rec.stats.steps > 0);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(progress.steps_done, from_records);
        assert!(progress.steps_done >= 60);
        assert!(progress.update_index >= 2);
    }

    #[test]
    fn resume_reproduces_the_direct_run() {
        let cfg = small_trainer_cfg(90);

        // straight-through run
        let mut direct = small_policy(1);
        let mut direct_opt = Optimizers::default();
        let end = train(
            &mut direct,
            &mut direct_opt,
            &cfg,
            TrainProgress { update_index: 0, steps_done: 0 },
            None,
            |_| Ok(()),
        )
        .unwrap();

        // stop after ~half the budget, snapshot, restore, finish
        let mut half = small_policy(1);
        let mut half_opt = Optimizers::default();
        let mid_cfg = TrainerConfig { total_steps: 45, ..cfg.clone() };
        let mid = train(
            &mut half,
            &mut half_opt,
            &mid_cfg,
            TrainProgress { update_index: 0, steps_done: 0 },
            None,
            |_| Ok(()),
        )
        .unwrap();
        let ck = snapshot(&half, &half_opt, &cfg, mid);

        let mut resumed = ck.restore_policy().unwrap();
        let mut resumed_opt = ck.restore_optimizers().unwrap();
        let resumed_end = train(
            &mut resumed,
            &mut resumed_opt,
            &cfg,
            TrainProgress { update_index: ck.rng.update_index, steps_done: ck.rng.steps_done },
            None,
            |_| Ok(()),
        )
        .unwrap();

        assert_eq!(resumed_end, end);
        assert_eq!(resumed.params(), direct.params());
    }
}
