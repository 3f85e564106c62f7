//! Graph-based reinforcement learning for automated network defense.
//!
//! The toolkit has three layers:
//!
//! - a numeric substrate: attributed graphs with graph edits ([`graph`]) and
//!   a minimal reverse-mode tape ([`nn`], [`tensor`]);
//! - the agents: GCN encoders with transductive and inductive actor-critic
//!   heads over node/edge action spaces ([`policy`]), trained by clipped
//!   PPO with GAE ([`ppo`]);
//! - the experiment plane: a two-player network-defense environment with
//!   heuristic attackers ([`netdef`]), zero-shot generalization protocols
//!   ([`eval`]), training orchestration ([`trainer`]) and checkpointing
//!   ([`checkpoint`]).

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod netdef;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod tensor;
pub mod trainer;
