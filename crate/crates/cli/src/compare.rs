//! Side-by-side summary of training runs of several algorithms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{CliError, CliResult};
use crate::tables::MetricsSeries;

/// Steps averaged for the final-window return.
pub const DEFAULT_WINDOW: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    /// Mean over seeds of the mean return of the last `window` steps.
    pub final_mean: f64,
    /// Mean over seeds of the summed per-step return.
    pub auc: f64,
    /// Seeds on which this algorithm has the strictly highest final-window return.
    pub wins: usize,
    /// `final_mean` minus that of the reference algorithm.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub steps: usize,
    pub window: usize,
    pub reference: String,
    pub rows: Vec<AlgorithmSummary>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Compares runs that share one step grid and one seed set. The reference
/// for `delta` is `pspo` when present, else the first algorithm by name.
pub fn compare(series: &[MetricsSeries], window: usize) -> CliResult<Comparison> {
    if window == 0 {
        return Err(scout_core::Error::config("window", "must be >= 1").into());
    }
    let Some(first) = series.first() else {
        return Err(CliError::Input(
            "no non-empty metrics files to compare".into(),
        ));
    };
    for s in series {
        if s.steps != first.steps {
            return Err(CliError::Alignment(format!(
                "{} has {} steps, {} has {} (grids must match)",
                s.path.display(),
                s.steps.len(),
                first.path.display(),
                first.steps.len()
            )));
        }
    }

    let mut by_algo: BTreeMap<&str, BTreeMap<u64, &MetricsSeries>> = BTreeMap::new();
    for s in series {
        if by_algo
            .entry(&s.algorithm)
            .or_default()
            .insert(s.seed, s)
            .is_some()
        {
            return Err(CliError::Alignment(format!(
                "two runs of {} seed {}",
                s.algorithm, s.seed
            )));
        }
    }
    if by_algo.len() < 2 {
        return Err(CliError::Input(format!(
            "need runs of at least two algorithms, found {}",
            by_algo.keys().copied().collect::<Vec<_>>().join(", ")
        )));
    }
    let seeds: Vec<u64> = by_algo
        .values()
        .next()
        .map(|m| m.keys().copied().collect())
        .unwrap_or_default();
    for (algo, runs) in &by_algo {
        if !runs.keys().copied().eq(seeds.iter().copied()) {
            return Err(CliError::Alignment(format!(
                "{algo} was run on a different seed set"
            )));
        }
    }

    let steps = first.steps.len();
    let window = window.min(steps);
    let finals: BTreeMap<&str, Vec<f64>> = by_algo
        .iter()
        .map(|(a, runs)| {
            (
                *a,
                runs.values()
                    .map(|s| mean(&s.mean_return[steps - window..]))
                    .collect(),
            )
        })
        .collect();

    let mut wins: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..seeds.len() {
        let mut best: Option<(&str, f64)> = None;
        let mut tied = false;
        for (a, f) in &finals {
            match best {
                Some((_, b)) if f[i] == b => tied = true,
                Some((_, b)) if f[i] < b => {}
                _ => {
                    best = Some((a, f[i]));
                    tied = false;
                }
            }
        }
        if let (Some((a, _)), false) = (best, tied) {
            *wins.entry(a).or_default() += 1;
        }
    }

    let reference = if by_algo.contains_key("pspo") {
        "pspo"
    } else {
        by_algo.keys().next().copied().unwrap_or_default()
    };
    let reference_final = mean(&finals[reference]);
    let rows = by_algo
        .iter()
        .map(|(a, runs)| {
            let final_mean = mean(&finals[a]);
            AlgorithmSummary {
                algorithm: a.to_string(),
                seeds: seeds.clone(),
                final_mean,
                auc: mean(
                    &runs
                        .values()
                        .map(|s| s.mean_return.iter().sum())
                        .collect::<Vec<f64>>(),
                ),
                wins: wins.get(a).copied().unwrap_or(0),
                delta: final_mean - reference_final,
            }
        })
        .collect();
    Ok(Comparison {
        steps,
        window,
        reference: reference.to_string(),
        rows,
    })
}

impl Comparison {
    pub fn render(&self) -> String {
        let n_seeds = self.rows.first().map_or(0, |r| r.seeds.len());
        let mut out = format!(
            "{} steps, final window {}, {} seeds, delta vs {}\n",
            self.steps, self.window, n_seeds, self.reference
        );
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>14} {:>6}",
            "algorithm", "final_mean", "delta", "auc", "wins"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>12.4} {:>12.4} {:>14.2} {:>6}",
                r.algorithm, r.final_mean, r.delta, r.auc, r.wins
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(algo: &str, seed: u64, returns: &[f64]) -> MetricsSeries {
        MetricsSeries {
            path: format!("metrics-{algo}-seed{seed}.csv").into(),
            algorithm: algo.into(),
            seed,
            steps: (0..returns.len()).collect(),
            mean_return: returns.to_vec(),
            actor_grad_norm: vec![0.0; returns.len()],
            critic_loss: vec![0.0; returns.len()],
        }
    }

    #[test]
    fn identical_runs_have_zero_differences() {
        let r = [1.0, 2.0, 3.0];
        let c = compare(&[series("pspo", 0, &r), series("gspo", 0, &r)], 2).unwrap();
        assert!(c.rows.iter().all(|row| row.delta == 0.0 && row.wins == 0));
        assert_eq!(c.rows[0].final_mean, 2.5);
    }

    #[test]
    fn dominating_algorithm_wins_every_seed() {
        let runs: Vec<MetricsSeries> = (0..4)
            .flat_map(|s| {
                [
                    series("pspo", s, &[2.0, 3.0, 4.0]),
                    series("pspo_star", s, &[1.0, 2.0, 3.0]),
                ]
            })
            .collect();
        let c = compare(&runs, 30).unwrap();
        let pspo = c.rows.iter().find(|r| r.algorithm == "pspo").unwrap();
        let star = c.rows.iter().find(|r| r.algorithm == "pspo_star").unwrap();
        assert_eq!((pspo.wins, star.wins), (4, 0));
        assert_eq!(star.delta, -1.0);
        assert_eq!(c.window, 3);
    }

    #[test]
    fn auc_of_constant_curve() {
        let c = compare(
            &[
                series("pspo", 0, &[0.75; 40]),
                series("ppo_token", 0, &[0.5; 40]),
            ],
            10,
        )
        .unwrap();
        let pspo = c.rows.iter().find(|r| r.algorithm == "pspo").unwrap();
        assert_eq!(pspo.auc, 0.75 * 40.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let err = compare(
            &[series("pspo", 0, &[1.0; 5]), series("gspo", 0, &[1.0; 6])],
            3,
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Alignment(_)));
        let err = compare(
            &[series("pspo", 0, &[1.0; 5]), series("gspo", 1, &[1.0; 5])],
            3,
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Alignment(_)));
        assert!(matches!(
            compare(&[series("pspo", 0, &[1.0])], 3),
            Err(CliError::Input(_))
        ));
    }
}
