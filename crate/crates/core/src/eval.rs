//! Retrieval metrics over a finished episode's pool: Recall@k, post-threshold
//! precision/recall/F1, and recall as tool calls accumulate.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::Actor;
use crate::rollout::{run_episode, EpisodeSpec, RolloutContext, Trajectory};

/// Relevance at or above which a pooled paper is retained.
pub const RETAIN_THRESHOLD: f64 = 0.5;

/// Cutoffs reported in the eval CSV besides the full pool.
pub const RECALL_CUTOFFS: [usize; 3] = [5, 10, 25];

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// `(paper id, relevance)` sorted by relevance desc, then id asc.
    pub ranked: Vec<(usize, f64)>,
    pub truth: BTreeSet<usize>,
    /// Cumulative tool calls after each turn.
    pub cumulative_calls: Vec<usize>,
}

impl RetrievalResult {
    pub fn new(
        ranked: Vec<(usize, f64)>,
        truth: BTreeSet<usize>,
        cumulative_calls: Vec<usize>,
    ) -> Result<Self> {
        for w in ranked.windows(2) {
            let ((a, sa), (b, sb)) = (w[0], w[1]);
            if !(sa > sb || (sa == sb && a < b)) {
                return Err(Error::Invariant(format!(
                    "ranking not strictly ordered at ({a}, {sa}) / ({b}, {sb})"
                )));
            }
        }
        Ok(Self {
            ranked,
            truth,
            cumulative_calls,
        })
    }

    pub fn from_trajectory(traj: &Trajectory, truth: &BTreeSet<usize>) -> Result<Self> {
        let mut acc = 0;
        let calls = traj
            .turns
            .iter()
            .map(|t| {
                acc += t.sample.calls.len();
                acc
            })
            .collect();
        Self::new(traj.final_pool.clone(), truth.clone(), calls)
    }

    pub fn total_calls(&self) -> usize {
        self.cumulative_calls.last().copied().unwrap_or(0)
    }
}

/// `|top-k ∩ truth| / |truth|`; `k` past the end uses the whole list.
pub fn recall_at_k(result: &RetrievalResult, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k", "recall cutoff must be >= 1"));
    }
    if result.truth.is_empty() {
        return Err(Error::UndefinedMetric(
            "recall with an empty truth set".into(),
        ));
    }
    let hits = result
        .ranked
        .iter()
        .take(k)
        .filter(|(id, _)| result.truth.contains(id))
        .count();
    Ok(hits as f64 / result.truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Exact-match P/R/F1 of the papers with relevance `>= threshold`. An empty
/// retained set scores zero precision; F1 is zero when both are zero.
pub fn post_threshold_prf(result: &RetrievalResult, threshold: f64) -> Prf {
    let retained: Vec<usize> = result
        .ranked
        .iter()
        .filter(|(_, s)| *s >= threshold)
        .map(|(id, _)| *id)
        .collect();
    let hits = retained
        .iter()
        .filter(|id| result.truth.contains(id))
        .count() as f64;
    let precision = if retained.is_empty() {
        0.0
    } else {
        hits / retained.len() as f64
    };
    let recall = if result.truth.is_empty() {
        0.0
    } else {
        hits / result.truth.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Calls issued and papers accepted per turn, plus the initial pool.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub seed_ids: Vec<usize>,
    pub turns: Vec<(usize, Vec<usize>)>,
}

impl From<&Trajectory> for EpisodeLog {
    fn from(t: &Trajectory) -> Self {
        Self {
            seed_ids: t.seed_ids.clone(),
            turns: t
                .turns
                .iter()
                .map(|r| (r.sample.calls.len(), r.accepted.clone()))
                .collect(),
        }
    }
}

/// `(cumulative calls, recall of everything pooled so far)`, starting at
/// `(0, seed recall)`. Turns without calls add no point.
pub fn efficiency_curve(log: &EpisodeLog, truth: &BTreeSet<usize>) -> Result<Vec<(usize, f64)>> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric(
            "efficiency curve with an empty truth set".into(),
        ));
    }
    let n = truth.len() as f64;
    let mut pooled: BTreeSet<usize> = log.seed_ids.iter().copied().collect();
    let recall = |pooled: &BTreeSet<usize>| pooled.intersection(truth).count() as f64 / n;
    let mut points = vec![(0, recall(&pooled))];
    let mut calls = 0;
    for (n_calls, accepted) in &log.turns {
        pooled.extend(accepted.iter().copied());
        if *n_calls == 0 {
            continue;
        }
        calls += n_calls;
        points.push((calls, recall(&pooled)));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub query_id: usize,
    pub algorithm: String,
    pub prf: Prf,
    /// Recall at [`RECALL_CUTOFFS`] and at the full pool.
    pub recall_at: [f64; 4],
    pub total_calls: usize,
}

pub const EVAL_HEADER: &str =
    "query_id,algorithm,precision,recall,f1,recall@5,recall@10,recall@25,recall@all,total_calls";

pub fn eval_row(query_id: usize, algorithm: &str, result: &RetrievalResult) -> Result<EvalRow> {
    let mut recall_at = [0.0; 4];
    for (slot, k) in recall_at.iter_mut().zip(RECALL_CUTOFFS) {
        *slot = recall_at_k(result, k)?;
    }
    recall_at[3] = recall_at_k(result, result.ranked.len().max(1))?;
    Ok(EvalRow {
        query_id,
        algorithm: algorithm.to_string(),
        prf: post_threshold_prf(result, RETAIN_THRESHOLD),
        recall_at,
        total_calls: result.total_calls(),
    })
}

/// Runs one episode per query with the given context (use temperature 0 for
/// greedy decoding) and scores the final pools.
pub fn evaluate(
    ctx: &RolloutContext<'_>,
    actor: &Actor,
    query_ids: &[usize],
    algorithm: &str,
    seed: u64,
) -> Result<(Vec<EvalRow>, Vec<Trajectory>)> {
    let mut rows = Vec::with_capacity(query_ids.len());
    let mut trajectories = Vec::with_capacity(query_ids.len());
    for &q in query_ids {
        let traj = run_episode(ctx, actor, None, EpisodeSpec { query_id: q, seed })?;
        let truth = &ctx.corpus.query(q)?.truth;
        rows.push(eval_row(
            q,
            algorithm,
            &RetrievalResult::from_trajectory(&traj, truth)?,
        )?);
        trajectories.push(traj);
    }
    Ok((rows, trajectories))
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.query_id,
            r.algorithm,
            r.prf.precision,
            r.prf.recall,
            r.prf.f1,
            r.recall_at[0],
            r.recall_at[1],
            r.recall_at[2],
            r.recall_at[3],
            r.total_calls
        );
    }
    out
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    std::fs::write(path, eval_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Macro average (per-query mean) of every metric column.
pub fn macro_average(rows: &[EvalRow]) -> Option<(Prf, [f64; 4])> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Some((
        Prf {
            precision: mean(&|r| r.prf.precision),
            recall: mean(&|r| r.prf.recall),
            f1: mean(&|r| r.prf.f1),
        },
        [
            mean(&|r| r.recall_at[0]),
            mean(&|r| r.recall_at[1]),
            mean(&|r| r.recall_at[2]),
            mean(&|r| r.recall_at[3]),
        ],
    ))
}
