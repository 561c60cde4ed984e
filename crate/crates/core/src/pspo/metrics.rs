//! Per-step training metrics and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use super::train::Algorithm;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "step,algorithm,seed,mean_return,actor_grad_norm,critic_loss,clip_fraction,kl,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Mean undiscounted episode reward of the collected batch.
    pub mean_return: f64,
    pub actor_grad_norm: f64,
    /// Critic loss before the update; NaN for critic-free algorithms.
    pub critic_loss: f64,
    /// Fraction of ratios outside the clip range after the update.
    pub clip_fraction: f64,
    /// Mean `old - new` sequence log-probability after the update.
    pub kl: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_return).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                r.algorithm,
                r.seed,
                r.mean_return,
                r.actor_grad_norm,
                r.critic_loss,
                r.clip_fraction,
                r.kl,
                r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
