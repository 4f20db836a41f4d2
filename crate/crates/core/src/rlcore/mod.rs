//! Actor-critic PPO over encoded states.

mod buffer;
mod policy;
mod ppo;

pub use buffer::{gae, normalize_advantages, RolloutBuffer, Transition};
pub use policy::{greedy_action, log_softmax, sample_action, softmax, PolicyValueParams};
pub use ppo::{
    clipped_surrogate, estimate_objective, pg_loss, ppo_loss, Agent, LossBatch, LossTerms,
    Objective, PPOConfig, UpdateStats,
};
