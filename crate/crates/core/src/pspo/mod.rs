//! Sequence-level proximal policy optimization with process rewards, plus
//! the token-level, group-outcome, and outcome-only-critic baselines.

pub mod metrics;
pub mod objective;
pub mod returns;
pub mod train;

pub use metrics::{MetricsLog, MetricsRow, METRICS_HEADER};
pub use objective::{
    actor_loss, clip_active, critic_loss, sequence_ratio, ActorLoss, SequenceRatio, MAX_LOG_RATIO,
};
pub use returns::{compute_gae, compute_returns, normalize_returns, RunningStats, NORM_EPS};
pub use train::{learner_rewards, train, Algorithm, Objective, TrainConfig, TrainOutcome, Trainer};
