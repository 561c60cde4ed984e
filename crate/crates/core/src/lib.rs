//! Desk-scale simulator and trainer for a multi-turn paper-retrieval agent.
//!
//! * [`corpus`] builds a synthetic paper universe with a citation DAG.
//! * [`env`] is the paper-pool environment with Search/Expand tools.
//! * [`nn`] is a two-layer perceptron with analytic gradients and Adam.
//! * [`policy`] is the token-level actor and the critic.
//! * [`pspo`] holds returns, GAE, the sequence-ratio surrogate and the trainer.
//! * [`eval`] computes Recall@k, post-threshold P/R/F1 and efficiency curves.

pub mod config;
pub mod corpus;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod pspo;
pub mod rollout;
pub mod textio;

pub use error::{Error, Result};
