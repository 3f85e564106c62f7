//! `graphdef train`: run the PPO loop with periodic checkpoints, a JSONL
//! training log, and full resumability.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use graphdef_core::checkpoint::{AnyPolicy, Checkpoint};
use graphdef_core::ppo::{Optimizers, PpoError};
use graphdef_core::trainer::{self, TrainProgress, TrainerConfig};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Serialize)]
struct RunManifest<'a> {
    tool_version: &'a str,
    config_sha256: String,
    resumed_from: Option<String>,
    seeds: &'a crate::config::SeedsSection,
}

pub fn run(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(CliError::other)?;

    let resolved = cfg.to_toml();
    fs::write(out.join("config.toml"), &resolved).map_err(CliError::other)?;

    let scenario = cfg.scenario().map_err(CliError::config)?;
    let trainer_cfg = TrainerConfig {
        ppo: cfg.ppo.clone(),
        scenario,
        train_graph_seed: cfg.seeds.train_graph,
        base_seed: cfg.seeds.train_base,
        total_steps: cfg.train.total_steps,
    };

    let (mut policy, mut opt, mut progress) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(CliError::other)?;
            let policy = ck.restore_policy().map_err(CliError::incompatible)?;
            let opt = ck.restore_optimizers().map_err(CliError::incompatible)?;
            let progress = TrainProgress {
                update_index: ck.rng.update_index,
                steps_done: ck.rng.steps_done,
            };
            (policy, opt, progress)
        }
        None => {
            let descriptor = cfg.model_descriptor().map_err(CliError::config)?;
            let policy = AnyPolicy::new(&descriptor, cfg.seeds.policy_init)
                .map_err(CliError::config)?;
            (policy, Optimizers::default(), TrainProgress { update_index: 0, steps_done: 0 })
        }
    };

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_sha256: hex(&Sha256::digest(resolved.as_bytes())),
        resumed_from: resume.map(|p| p.display().to_string()),
        seeds: &cfg.seeds,
    };
    fs::write(
        out.join("run.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(CliError::other)?;

    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("train_log.jsonl"))
        .map_err(CliError::other)?;

    while progress.steps_done < trainer_cfg.total_steps {
        let chunk = trainer::train(
            &mut policy,
            &mut opt,
            &trainer_cfg,
            progress,
            Some(cfg.train.checkpoint_every),
            |rec| {
                let line = serde_json::to_string(rec)
                    .map_err(|e| PpoError::Diverged(format!("log serialization: {e}")))?;
                writeln!(log, "{line}")
                    .map_err(|e| PpoError::Diverged(format!("log write: {e}")))?;
                Ok(())
            },
        );
        progress = match chunk {
            Ok(p) => p,
            // divergence aborts with the last periodic checkpoint retained
            Err(e @ PpoError::Diverged(_)) => return Err(CliError::diverged(e)),
            Err(e) => return Err(CliError::other(e)),
        };
        let ck = trainer::snapshot(&policy, &opt, &trainer_cfg, progress);
        let name = format!("checkpoint_{:06}.json", progress.update_index);
        ck.save(&out.join(name)).map_err(CliError::other)?;
    }

    let final_ck = trainer::snapshot(&policy, &opt, &trainer_cfg, progress);
    final_ck.save(&out.join("checkpoint_final.json")).map_err(CliError::other)?;
    println!(
        "trained {} steps over {} updates -> {}",
        progress.steps_done,
        progress.update_index,
        out.display()
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
