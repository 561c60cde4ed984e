//! Episode execution: runs the actor against a [`SearchEnv`] and records the
//! per-turn features, samples, rewards and critic values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::env::{EnvConfig, SearchEnv, Termination};
use crate::error::{Error, Result};
use crate::policy::{
    featurize, sample_turn, value_estimate, Actor, Critic, DecodeContext, FeatureLayout,
    FeatureVector, TurnSample,
};

/// Environment variable capping rollout parallelism.
pub const THREADS_ENV: &str = "SCOUT_SIM_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    pub features: FeatureVector,
    pub sample: TurnSample,
    pub reward: f64,
    /// Critic output for `features` under the collecting snapshot.
    pub value: f64,
    pub accepted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub turns: Vec<TurnRecord>,
    pub query_id: usize,
    pub seed_ids: Vec<usize>,
    pub termination: Termination,
    /// Final pool ranked by score desc, ties by id asc.
    pub final_pool: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.turns.iter().map(|t| t.reward).sum()
    }

    pub fn total_calls(&self) -> usize {
        self.turns.iter().map(|t| t.sample.calls.len()).sum()
    }
}

/// Which query an episode runs and the seed of its sampling stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub query_id: usize,
    pub seed: u64,
}

/// Shared, read-only inputs of every rollout.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub corpus: &'a Corpus,
    pub env: &'a EnvConfig,
    pub layout: &'a FeatureLayout,
    pub search_mix: f64,
    /// 1.0 samples from the actor, 0.0 decodes greedily.
    pub temperature: f64,
}

pub fn run_episode(
    ctx: &RolloutContext<'_>,
    actor: &Actor,
    critic: Option<&Critic>,
    spec: EpisodeSpec,
) -> Result<Trajectory> {
    let with_context = |e: Error| match e {
        Error::EpisodeAbort(msg) => {
            Error::EpisodeAbort(format!("query {} seed {}: {msg}", spec.query_id, spec.seed))
        }
        other => other,
    };
    let (mut env, mut obs) = SearchEnv::reset(ctx.corpus, spec.query_id, ctx.env, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let query_topic = &env.query().topic;
    let mut turns = Vec::new();
    while !env.is_done() {
        let features = featurize(&obs, ctx.layout);
        let value = match critic {
            Some(c) => value_estimate(c, &features)?,
            None => 0.0,
        };
        let decode = DecodeContext::new(&obs, query_topic, ctx.search_mix);
        let sample = sample_turn(actor, &features, &decode, ctx.temperature, &mut rng)?;
        let step = env.step(&sample.calls).map_err(with_context)?;
        turns.push(TurnRecord {
            features,
            sample,
            reward: step.reward,
            value,
            accepted: step.accepted.into_iter().collect(),
        });
        obs = step.observation;
    }
    Ok(Trajectory {
        turns,
        query_id: spec.query_id,
        seed_ids: env.seed_ids().to_vec(),
        termination: env.termination().expect("loop exits only when done"),
        final_pool: env.pool().ranked(),
    })
}

/// Runs every episode, in parallel, returning trajectories in `specs` order.
/// The result does not depend on the thread count.
pub fn collect_batch(
    ctx: &RolloutContext<'_>,
    actor: &Actor,
    critic: Option<&Critic>,
    specs: &[EpisodeSpec],
) -> Result<Vec<Trajectory>> {
    if specs.is_empty() {
        return Err(Error::config("n_episodes", "must be >= 1"));
    }
    specs
        .par_iter()
        .map(|s| run_episode(ctx, actor, critic, *s))
        .collect()
}

/// Configures the global rayon pool from `SCOUT_SIM_THREADS`, if set.
/// Returns the thread cap that was applied.
pub fn configure_threads_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Error::config(
            THREADS_ENV,
            format!("expected a positive integer, got `{raw}`"),
        )
    })?;
    // A pool that is already built keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig};
    use crate::policy::{PolicyConfig, Vocabulary};

    #[test]
    fn episodes_terminate_and_are_deterministic() {
        let corpus = build_corpus(&CorpusConfig::new(5, 300, 4, 8, 4)).unwrap();
        let env = EnvConfig::default();
        let layout = FeatureLayout::from_env(&env);
        let pc = PolicyConfig::default();
        let vocab = Vocabulary {
            n_directions: pc.n_directions,
            n_slots: env.l_unexpanded,
        };
        let actor = Actor::new(layout.len(), 16, vocab, env.max_calls, 1);
        let critic = Critic::new(layout.len(), 16, 2);
        let ctx = RolloutContext {
            corpus: &corpus,
            env: &env,
            layout: &layout,
            search_mix: pc.search_mix,
            temperature: 1.0,
        };
        let specs: Vec<EpisodeSpec> = (0..6)
            .map(|i| EpisodeSpec {
                query_id: i % 4,
                seed: i as u64,
            })
            .collect();
        let a = collect_batch(&ctx, &actor, Some(&critic), &specs).unwrap();
        let b = collect_batch(&ctx, &actor, Some(&critic), &specs).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert!(!t.is_empty() && t.len() <= env.max_turns);
            assert!(t
                .turns
                .iter()
                .all(|r| r.reward.is_finite() && r.value.is_finite()));
        }
        assert!(collect_batch(&ctx, &actor, None, &[]).is_err());
    }
}
