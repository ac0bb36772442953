//! Policy-gradient fine-tuning of a tabular autoregressive generator against
//! the mixed reward.

pub mod language;
pub mod policy;
pub mod train;

pub use language::TrigramLanguage;
pub use policy::{Context, Sampled, TabularPolicy};
pub use train::{
    entropy_schedule, evaluate, mean_log_likelihood, pretrain_ml, reinforce_gradient, reinforce_step, train,
    Credit, Gradient, RewardModel, ScoredSample, TrainConfig, TrainTrace, TraceRecord,
};
