//! `graphdef eval`: run the configured zero-shot protocols on a checkpoint
//! and write reports (JSON, plus CSV for the size sweep).

use std::fs;
use std::path::Path;

use graphdef_core::checkpoint::Checkpoint;
use graphdef_core::eval::{
    adversary_eval, random_policy_eval, size_sweep_csv, size_sweep_eval, zero_shot_eval,
    ContextSampler, EvalError, EvalSeeds,
};
use graphdef_core::netdef::{self, RedSpec};
use graphdef_core::policy::ActorCritic;

use crate::config::{parse_red_label, RunConfig};
use crate::CliError;

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::SeedOverlap { .. } => CliError::config(e),
        other => CliError::other(other),
    }
}

pub fn run(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint).map_err(CliError::other)?;
    let policy = ck.restore_policy().map_err(CliError::incompatible)?;
    if policy.action_space() != &netdef::action_space() {
        return Err(CliError::incompatible("checkpoint action space does not match environment"));
    }
    let hash = ck.sha256();

    fs::create_dir_all(out).map_err(CliError::other)?;
    let scenario = cfg.scenario().map_err(CliError::config)?;
    let sampler = ContextSampler::new(
        scenario,
        EvalSeeds { graph_base: cfg.seeds.eval_graph_base, red_base: cfg.seeds.eval_red_base },
    );
    // no test context may have been consumed in training
    sampler
        .assert_disjoint_from(&ck.train.train_graph_seeds, cfg.eval.n_graphs)
        .map_err(eval_err)?;

    let e = &cfg.eval;
    for protocol in &e.protocols {
        match protocol.as_str() {
            "zero_shot" => {
                let outcome = zero_shot_eval(&policy, &sampler, e.n_graphs, e.episodes, &hash)
                    .map_err(eval_err)?;
                write_json(out, "zero_shot.json", &outcome)?;
            }
            "size_sweep" => {
                let rows =
                    size_sweep_eval(&policy, &sampler, &e.sizes, e.n_graphs, e.episodes, &hash)
                        .map_err(eval_err)?;
                write_json(out, "size_sweep.json", &rows)?;
                fs::write(out.join("size_sweep.csv"), size_sweep_csv(&rows))
                    .map_err(CliError::other)?;
            }
            "adversary" => {
                let variants: Vec<RedSpec> = e
                    .red_variants
                    .iter()
                    .map(|label| {
                        parse_red_label(label)
                            .ok_or_else(|| CliError::config(format!("unknown adversary `{label}`")))
                    })
                    .collect::<Result<_, _>>()?;
                let reports = adversary_eval(
                    &policy,
                    &sampler,
                    &variants,
                    &ck.train.trained_against,
                    e.n_graphs,
                    e.episodes,
                    &hash,
                )
                .map_err(eval_err)?;
                write_json(out, "adversary.json", &reports)?;
            }
            "random_oracle" => {
                let report =
                    random_policy_eval(&sampler, e.n_graphs, e.episodes, cfg.seeds.eval_policy)
                        .map_err(eval_err)?;
                write_json(out, "random_oracle.json", &report)?;
            }
            other => return Err(CliError::config(format!("unknown protocol `{other}`"))),
        }
    }
    println!("evaluation reports written to {}", out.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::other)?;
    fs::write(out.join(name), text).map_err(CliError::other)
}
