//! Paper-pool environment: the latent state is the pool of accumulated papers,
//! the agent sees a dual-list summary of it, and each turn executes a batch of
//! Search/Expand tool calls.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Corpus, Query};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Minimum relevance for a retrieved paper to be accepted.
    pub tau: f64,
    /// Number of accepted papers whose relevance counts toward the reward.
    pub k: usize,
    /// Penalty per repeated (or invalid) tool call.
    pub eta: f64,
    pub l_expanded: usize,
    pub l_unexpanded: usize,
    /// Episode ends after this many consecutive turns with nothing accepted.
    pub stagnation_limit: usize,
    pub max_turns: usize,
    pub max_calls: usize,
    /// Hits returned per Search call.
    pub search_limit: usize,
    /// Top search hits for the query topic placed in the pool at reset.
    pub n_seed: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            k: 3,
            eta: 0.5,
            l_expanded: 10,
            l_unexpanded: 10,
            stagnation_limit: 3,
            max_turns: 12,
            max_calls: 3,
            search_limit: 5,
            n_seed: 5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(
                "tau",
                format!("must lie in [0, 1], got {}", self.tau),
            ));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::config(
                "eta",
                format!("must be finite and >= 0, got {}", self.eta),
            ));
        }
        for (name, v) in [
            ("k", self.k),
            ("l_expanded", self.l_expanded),
            ("l_unexpanded", self.l_unexpanded),
            ("stagnation_limit", self.stagnation_limit),
            ("max_turns", self.max_turns),
            ("max_calls", self.max_calls),
            ("search_limit", self.search_limit),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub paper_id: usize,
    /// Relevance to the episode's query, in `[0, 1]`.
    pub score: f64,
    pub expanded: bool,
    pub arrival_turn: usize,
}

/// Latent state: every paper accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperPool {
    pub entries: BTreeMap<usize, PoolEntry>,
    pub query_id: usize,
    pub turn: usize,
    pub stagnant_turns: usize,
    pub last_reward: f64,
}

impl PaperPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, paper_id: usize) -> bool {
        self.entries.contains_key(&paper_id)
    }

    /// Pool ranked by score descending, ties by ascending id.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .entries
            .values()
            .map(|e| (e.paper_id, e.score))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolCall {
    Search {
        probe: Vec<f64>,
    },
    Expand {
        paper_id: usize,
    },
    /// An action that names no valid target. Always penalized.
    Noop,
}

impl ToolCall {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolCall::Search { .. } => "search",
            ToolCall::Expand { .. } => "expand",
            ToolCall::Noop => "noop",
        }
    }
}

/// Append-only record of past calls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub past_search_probes: Vec<Vec<f64>>,
    pub expanded_ids: BTreeSet<usize>,
    pub search_calls: usize,
    pub expand_calls: usize,
}

impl History {
    /// Whether `call` repeats one already recorded. Noop is never a repeat;
    /// it is penalized as invalid instead.
    pub fn contains(&self, call: &ToolCall) -> bool {
        match call {
            ToolCall::Search { probe } => self.past_search_probes.iter().any(|p| p == probe),
            ToolCall::Expand { paper_id } => self.expanded_ids.contains(paper_id),
            ToolCall::Noop => false,
        }
    }

    pub fn record(&mut self, call: &ToolCall) {
        match call {
            ToolCall::Search { probe } => {
                self.search_calls += 1;
                if !self.past_search_probes.iter().any(|p| p == probe) {
                    self.past_search_probes.push(probe.clone());
                }
            }
            ToolCall::Expand { paper_id } => {
                self.expand_calls += 1;
                self.expanded_ids.insert(*paper_id);
            }
            ToolCall::Noop => self.expand_calls += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSummary {
    pub paper_id: usize,
    pub score: f64,
    /// Number of outgoing references.
    pub degree: usize,
    pub arrival_turn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolStats {
    pub pool_size: usize,
    pub turn: usize,
    pub stagnant_turns: usize,
    pub last_reward: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HistoryDigest {
    pub search_calls: usize,
    pub expand_calls: usize,
}

/// Dual-list view of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub expanded_list: Vec<SlotSummary>,
    pub unexpanded_list: Vec<SlotSummary>,
    pub pool_stats: PoolStats,
    pub history_digest: HistoryDigest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallStatus {
    Executed {
        results: usize,
    },
    /// Executed, but penalized because the history already held it.
    Repeated {
        results: usize,
    },
    /// Skipped and penalized.
    Invalid {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallOutcome {
    pub kind: &'static str,
    pub status: CallStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Stagnation,
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub accepted: BTreeSet<usize>,
    pub done: bool,
    pub info: Vec<CallOutcome>,
}

/// Accepted candidates: retrieved ids with relevance at least `tau` that are
/// not yet pooled. Duplicates collapse; ids outside the corpus are dropped.
pub fn filter_candidates(
    raw: &[usize],
    pool: &PaperPool,
    corpus: &Corpus,
    query: &Query,
    tau: f64,
) -> BTreeSet<usize> {
    let mut accepted = BTreeSet::new();
    for &id in raw {
        if pool.contains(id) || accepted.contains(&id) {
            continue;
        }
        match corpus.score(id, query) {
            Ok(score) if score >= tau => {
                accepted.insert(id);
            }
            Ok(_) => {}
            Err(e) => log::debug!("dropping raw result: {e}"),
        }
    }
    accepted
}

/// Sum of the `k` largest scores (all of them if fewer).
pub fn relevance_gain(scores: &[f64], k: usize) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().take(k).sum()
}

/// Calls in `calls` that repeat the history, where each call is added to the
/// history before the next one is checked.
pub fn count_repeats(calls: &[ToolCall], history: &History) -> usize {
    let mut seen = history.clone();
    let mut repeats = 0;
    for call in calls {
        if seen.contains(call) {
            repeats += 1;
        }
        seen.record(call);
    }
    repeats
}

/// Step reward: top-`k` relevance gain minus `eta` per repeated call.
pub fn compute_reward(
    accepted_scores: &[f64],
    calls: &[ToolCall],
    history: &History,
    k: usize,
    eta: f64,
) -> f64 {
    relevance_gain(accepted_scores, k) - eta * count_repeats(calls, history) as f64
}

fn top_slots<'a>(
    entries: impl Iterator<Item = &'a PoolEntry>,
    corpus: &Corpus,
    limit: usize,
) -> Vec<SlotSummary> {
    let mut v: Vec<&PoolEntry> = entries.collect();
    v.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.paper_id.cmp(&b.paper_id))
    });
    v.into_iter()
        .take(limit)
        .map(|e| SlotSummary {
            paper_id: e.paper_id,
            score: e.score,
            degree: corpus.papers.get(e.paper_id).map_or(0, |p| p.refs.len()),
            arrival_turn: e.arrival_turn,
        })
        .collect()
}

pub fn build_observation(
    pool: &PaperPool,
    history: &History,
    corpus: &Corpus,
    l_expanded: usize,
    l_unexpanded: usize,
) -> Observation {
    Observation {
        expanded_list: top_slots(
            pool.entries.values().filter(|e| e.expanded),
            corpus,
            l_expanded,
        ),
        unexpanded_list: top_slots(
            pool.entries.values().filter(|e| !e.expanded),
            corpus,
            l_unexpanded,
        ),
        pool_stats: PoolStats {
            pool_size: pool.len(),
            turn: pool.turn,
            stagnant_turns: pool.stagnant_turns,
            last_reward: pool.last_reward,
        },
        history_digest: HistoryDigest {
            search_calls: history.search_calls,
            expand_calls: history.expand_calls,
        },
    }
}

/// One retrieval episode over a shared corpus.
#[derive(Debug, Clone)]
pub struct SearchEnv<'c> {
    corpus: &'c Corpus,
    query: &'c Query,
    config: EnvConfig,
    pool: PaperPool,
    history: History,
    seed_ids: Vec<usize>,
    termination: Option<Termination>,
    episode_seed: u64,
}

impl<'c> SearchEnv<'c> {
    /// Starts an episode with the top `n_seed` hits for the query topic.
    pub fn reset(
        corpus: &'c Corpus,
        query_id: usize,
        config: &EnvConfig,
        episode_seed: u64,
    ) -> Result<(Self, Observation)> {
        config.validate()?;
        let query = corpus.query(query_id)?;
        let seed_ids = if config.n_seed == 0 {
            Vec::new()
        } else {
            corpus.search(&query.topic, config.n_seed)?
        };
        let mut entries = BTreeMap::new();
        for &id in &seed_ids {
            entries.insert(
                id,
                PoolEntry {
                    paper_id: id,
                    score: corpus.score(id, query)?,
                    expanded: false,
                    arrival_turn: 0,
                },
            );
        }
        let env = SearchEnv {
            corpus,
            query,
            config: config.clone(),
            pool: PaperPool {
                entries,
                query_id,
                turn: 0,
                stagnant_turns: 0,
                last_reward: 0.0,
            },
            history: History::default(),
            seed_ids,
            termination: None,
            episode_seed,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn query(&self) -> &'c Query {
        self.query
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn pool(&self) -> &PaperPool {
        &self.pool
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn seed_ids(&self) -> &[usize] {
        &self.seed_ids
    }

    pub fn episode_seed(&self) -> u64 {
        self.episode_seed
    }

    pub fn is_done(&self) -> bool {
        self.termination.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn observation(&self) -> Observation {
        build_observation(
            &self.pool,
            &self.history,
            self.corpus,
            self.config.l_expanded,
            self.config.l_unexpanded,
        )
    }

    fn check_calls(&self, calls: &[ToolCall]) -> Result<()> {
        if calls.len() > self.config.max_calls {
            return Err(Error::EpisodeAbort(format!(
                "{} calls exceed max_calls = {}",
                calls.len(),
                self.config.max_calls
            )));
        }
        for call in calls {
            if let ToolCall::Search { probe } = call {
                let n = crate::corpus::norm(probe);
                if probe.len() != self.corpus.dim || !n.is_finite() || n == 0.0 {
                    return Err(Error::EpisodeAbort(format!(
                        "malformed search probe (dimension {}, norm {n})",
                        probe.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Executes one turn of tool calls.
    pub fn step(&mut self, calls: &[ToolCall]) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeAbort("step after episode end".into()));
        }
        self.check_calls(calls)?;

        let history_before = self.history.clone();
        let mut raw: Vec<usize> = Vec::new();
        let mut info = Vec::with_capacity(calls.len());
        let mut valid_calls = Vec::with_capacity(calls.len());
        let mut invalid = 0usize;

        for call in calls {
            let repeated = self.history.contains(call);
            let status = match call {
                ToolCall::Search { probe } => {
                    let hits = self.corpus.search(probe, self.config.search_limit)?;
                    let n = hits.len();
                    raw.extend(hits);
                    if repeated {
                        CallStatus::Repeated { results: n }
                    } else {
                        CallStatus::Executed { results: n }
                    }
                }
                ToolCall::Expand { paper_id } => match self.pool.entries.get_mut(paper_id) {
                    Some(entry) => {
                        entry.expanded = true;
                        let refs = self.corpus.references(*paper_id)?;
                        raw.extend_from_slice(refs);
                        if repeated {
                            CallStatus::Repeated {
                                results: refs.len(),
                            }
                        } else {
                            CallStatus::Executed {
                                results: refs.len(),
                            }
                        }
                    }
                    None => CallStatus::Invalid {
                        reason: format!("paper {paper_id} is not in the pool"),
                    },
                },
                ToolCall::Noop => CallStatus::Invalid {
                    reason: "no target".into(),
                },
            };
            if let CallStatus::Invalid { reason } = &status {
                log::debug!("skipping {} call: {reason}", call.kind());
                invalid += 1;
                self.history.record(&ToolCall::Noop);
            } else {
                valid_calls.push(call.clone());
                self.history.record(call);
            }
            info.push(CallOutcome {
                kind: call.kind(),
                status,
            });
        }

        let accepted =
            filter_candidates(&raw, &self.pool, self.corpus, self.query, self.config.tau);
        let mut scores = Vec::with_capacity(accepted.len());
        let next_turn = self.pool.turn + 1;
        for &id in &accepted {
            let score = self.corpus.score(id, self.query)?;
            scores.push(score);
            self.pool.entries.insert(
                id,
                PoolEntry {
                    paper_id: id,
                    score,
                    expanded: false,
                    arrival_turn: next_turn,
                },
            );
        }

        let reward = compute_reward(
            &scores,
            &valid_calls,
            &history_before,
            self.config.k,
            self.config.eta,
        ) - self.config.eta * invalid as f64;

        self.pool.turn = next_turn;
        self.pool.last_reward = reward;
        if accepted.is_empty() {
            self.pool.stagnant_turns += 1;
        } else {
            self.pool.stagnant_turns = 0;
        }
        if self.pool.stagnant_turns >= self.config.stagnation_limit {
            self.termination = Some(Termination::Stagnation);
        } else if self.pool.turn >= self.config.max_turns {
            self.termination = Some(Termination::MaxTurns);
        }

        Ok(StepResult {
            observation: self.observation(),
            reward,
            accepted,
            done: self.is_done(),
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig};

    fn corpus() -> Corpus {
        build_corpus(&CorpusConfig::new(11, 200, 4, 8, 4)).unwrap()
    }

    fn cfg(n_seed: usize) -> EnvConfig {
        EnvConfig {
            n_seed,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reset_seeds_pool() {
        let c = corpus();
        let (env, obs) = SearchEnv::reset(&c, 0, &cfg(0), 1).unwrap();
        assert!(env.pool().is_empty());
        assert!(obs.expanded_list.is_empty() && obs.unexpanded_list.is_empty());

        let (env, obs) = SearchEnv::reset(&c, 0, &cfg(5), 1).unwrap();
        assert_eq!(env.pool().len(), 5);
        assert!(env.pool().entries.values().all(|e| !e.expanded));
        assert_eq!(obs.unexpanded_list.len(), 5);
        let (_, again) = SearchEnv::reset(&c, 0, &cfg(5), 1).unwrap();
        assert_eq!(obs, again);

        let err = SearchEnv::reset(&c, 99, &cfg(5), 1).unwrap_err();
        assert!(matches!(err, Error::NotFound { what: "query", .. }));
    }

    #[test]
    fn filter_applies_threshold_and_novelty() {
        let c = corpus();
        let q = &c.queries[0];
        let (env, _) = SearchEnv::reset(&c, 0, &cfg(5), 1).unwrap();
        let pool = env.pool();
        let pooled: Vec<usize> = pool.entries.keys().copied().collect();
        assert!(filter_candidates(&pooled, pool, &c, q, 0.0).is_empty());

        let fresh: Vec<usize> = (0..c.n_papers())
            .filter(|id| !pool.contains(*id))
            .take(20)
            .collect();
        let got = filter_candidates(&fresh, pool, &c, q, 0.0);
        assert_eq!(got, fresh.iter().copied().collect());

        // Unknown ids and in-list duplicates are dropped.
        let got = filter_candidates(&[fresh[0], fresh[0], 10_000], pool, &c, q, 0.0);
        assert_eq!(got, BTreeSet::from([fresh[0]]));
    }

    #[test]
    fn filter_threshold_example() {
        // a has relevance 0.4, b has 0.005; tau = 0.01 keeps only a.
        let mut c = corpus();
        let q = c.queries[0].clone();
        let along = |r: f64| -> Vec<f64> {
            // cos = 2r - 1 against the query topic, using a direction orthogonal to it.
            let cos: f64 = 2.0 * r - 1.0;
            let mut orth: Vec<f64> = vec![0.0; q.topic.len()];
            orth[0] = 1.0;
            let proj = crate::corpus::dot(&orth, &q.topic);
            let mut o: Vec<f64> = orth
                .iter()
                .zip(&q.topic)
                .map(|(x, t)| x - proj * t)
                .collect();
            let n = crate::corpus::norm(&o);
            o.iter_mut().for_each(|x| *x /= n);
            let sin = (1.0 - cos * cos).sqrt();
            q.topic
                .iter()
                .zip(&o)
                .map(|(t, x)| cos * t + sin * x)
                .collect()
        };
        c.papers[150].topic = along(0.4);
        c.papers[151].topic = along(0.005);
        assert!((c.score(150, &q).unwrap() - 0.4).abs() < 1e-12);
        assert!((c.score(151, &q).unwrap() - 0.005).abs() < 1e-12);
        let (env, _) = SearchEnv::reset(&c, 0, &cfg(0), 1).unwrap();
        let got = filter_candidates(&[150, 151], env.pool(), &c, &q, 0.01);
        assert_eq!(got, BTreeSet::from([150]));
    }

    #[test]
    fn reward_examples() {
        let none = History::default();
        let r = compute_reward(&[0.9, 0.8, 0.7, 0.6], &[], &none, 3, 0.5);
        assert!((r - 2.4).abs() < 1e-12);

        let mut h = History::default();
        h.record(&ToolCall::Expand { paper_id: 4 });
        let r = compute_reward(&[], &[ToolCall::Expand { paper_id: 4 }], &h, 3, 0.5);
        assert_eq!(r, -0.5);
        assert_eq!(compute_reward(&[], &[], &none, 3, 0.5), 0.0);

        // Fewer than k accepted uses all of them.
        assert!((compute_reward(&[0.3, 0.2], &[], &none, 3, 0.5) - 0.5).abs() < 1e-12);

        // Search repeats compare probes exactly.
        let s = |x: f64| ToolCall::Search {
            probe: vec![x, 1.0],
        };
        assert_eq!(count_repeats(&[s(0.5), s(0.5), s(0.25)], &none), 1);
    }

    #[test]
    fn empty_turns_stagnate_and_terminate() {
        let c = corpus();
        let (mut env, _) = SearchEnv::reset(&c, 0, &cfg(3), 1).unwrap();
        for t in 1..=3 {
            let res = env.step(&[]).unwrap();
            assert_eq!(res.reward, 0.0);
            assert_eq!(env.pool().stagnant_turns, t);
            assert_eq!(res.done, t == 3);
        }
        assert_eq!(env.termination(), Some(Termination::Stagnation));
        assert!(matches!(env.step(&[]), Err(Error::EpisodeAbort(_))));
    }

    #[test]
    fn max_turns_terminates() {
        let c = corpus();
        let config = EnvConfig {
            max_turns: 2,
            ..cfg(3)
        };
        let (mut env, _) = SearchEnv::reset(&c, 0, &config, 1).unwrap();
        assert!(!env.step(&[]).unwrap().done);
        assert!(env.step(&[]).unwrap().done);
        assert_eq!(env.termination(), Some(Termination::MaxTurns));
    }

    #[test]
    fn double_expand_in_one_turn_is_penalized_once() {
        let c = corpus();
        let (mut env, obs) = SearchEnv::reset(&c, 0, &cfg(5), 1).unwrap();
        let target = obs.unexpanded_list[0].paper_id;
        let expand = ToolCall::Expand { paper_id: target };
        let res = env.step(&[expand.clone(), expand]).unwrap();
        let scores: Vec<f64> = res
            .accepted
            .iter()
            .map(|&id| c.score(id, &c.queries[0]).unwrap())
            .collect();
        let expected = relevance_gain(&scores, 3) - 0.5;
        assert!((res.reward - expected).abs() < 1e-12);
        assert!(matches!(res.info[1].status, CallStatus::Repeated { .. }));
        assert!(env.pool().entries[&target].expanded);
        assert!(res
            .observation
            .expanded_list
            .iter()
            .any(|s| s.paper_id == target));
        assert!(res
            .observation
            .unexpanded_list
            .iter()
            .all(|s| s.paper_id != target));
    }

    #[test]
    fn invalid_targets_are_skipped_and_penalized() {
        let c = corpus();
        let (mut env, _) = SearchEnv::reset(&c, 0, &cfg(0), 1).unwrap();
        let res = env
            .step(&[ToolCall::Expand { paper_id: 3 }, ToolCall::Noop])
            .unwrap();
        assert_eq!(res.reward, -1.0);
        assert!(res.accepted.is_empty());
        assert!(matches!(res.info[0].status, CallStatus::Invalid { .. }));
    }

    #[test]
    fn malformed_calls_abort() {
        let c = corpus();
        let (mut env, _) = SearchEnv::reset(&c, 0, &cfg(0), 1).unwrap();
        let too_many = vec![ToolCall::Noop; 4];
        assert!(matches!(env.step(&too_many), Err(Error::EpisodeAbort(_))));
        let bad = ToolCall::Search {
            probe: vec![0.0; 8],
        };
        assert!(matches!(env.step(&[bad]), Err(Error::EpisodeAbort(_))));
        let short = ToolCall::Search {
            probe: vec![1.0; 3],
        };
        assert!(matches!(env.step(&[short]), Err(Error::EpisodeAbort(_))));
    }

    #[test]
    fn observation_truncates_to_top_scores() {
        let c = corpus();
        let (env, _) = SearchEnv::reset(&c, 0, &cfg(12), 1).unwrap();
        let obs = env.observation();
        assert_eq!(obs.unexpanded_list.len(), 10);
        let mut all: Vec<(usize, f64)> = env.pool().ranked();
        all.truncate(10);
        let shown: Vec<usize> = obs.unexpanded_list.iter().map(|s| s.paper_id).collect();
        assert_eq!(shown, all.iter().map(|x| x.0).collect::<Vec<_>>());
    }
}
