//! Policy models whose actions are functions on graph nodes and edges.
//!
//! Observations are attributed graphs; the actor produces one logit per
//! (actionable node, node action) pair followed by one per (actionable edge,
//! edge action) pair. Inductive variants work on any graph; the transductive
//! variant is locked to the node count it was built for.

mod action;
mod baseline;
mod dist;
mod model;

pub use action::{ActionInstance, ActionLayout, ActionSpace};
pub use baseline::{MlpBaseline, MlpConfig};
pub use dist::MaskedCategorical;
pub use model::{
    ActorCritic, ActorVariant, GnnPolicy, ModelConfig, ModelSignature, PolicyOutput,
};
