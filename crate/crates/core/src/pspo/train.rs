//! Collect/update loop for the sequence-level trainer and its baselines.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{MetricsLog, MetricsRow};
use super::objective::{actor_loss, critic_loss, sequence_ratio};
use super::returns::{compute_gae, compute_returns, normalize_returns, RunningStats};
use crate::corpus::Corpus;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{optimizer_step, OptimizerState, ParamSet};
use crate::policy::{
    sequence_logprob_accumulate, Actor, Critic, FeatureLayout, PolicyConfig, Vocabulary,
};
use crate::rollout::{collect_batch, EpisodeSpec, RolloutContext, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Sequence-level ratio, per-turn process rewards, critic + GAE.
    Pspo,
    /// Token-level ratios and clipping with the turn advantage broadcast.
    PpoToken,
    /// Outcome reward, group-mean baseline, length-normalized ratio.
    Gspo,
    /// Sequence-level like `Pspo`, but all reward moved to the last turn.
    PspoStar,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Pspo,
        Algorithm::PpoToken,
        Algorithm::Gspo,
        Algorithm::PspoStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pspo => "pspo",
            Algorithm::PpoToken => "ppo_token",
            Algorithm::Gspo => "gspo",
            Algorithm::PspoStar => "pspo_star",
        }
    }

    pub fn uses_critic(self) -> bool {
        self != Algorithm::Gspo
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "algorithm",
                    format!("unknown algorithm `{s}` (pspo, ppo_token, gspo, pspo_star)"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub lambda: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub kl_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub episodes_per_batch: usize,
    /// Episodes per sampled query; the GSPO baseline averages over a group.
    pub group_size: usize,
    pub pretrain_steps: usize,
    pub total_steps: usize,
    /// Passes over each collected batch.
    pub update_epochs: usize,
    /// Queries `0..n_train_queries` are used for training, the rest are held out.
    pub n_train_queries: usize,
    /// Fill `wall_ms`; off keeps metrics byte-reproducible.
    pub record_wall_time: bool,
}

impl TrainConfig {
    /// Rates and clip bounds sized for the small networks here.
    pub fn toy() -> Self {
        Self {
            algorithm: Algorithm::Pspo,
            gamma: 0.99,
            lambda: 0.95,
            eps_low: 0.1,
            eps_high: 0.2,
            kl_coef: 0.001,
            actor_lr: 1e-3,
            critic_lr: 3e-3,
            episodes_per_batch: 16,
            group_size: 8,
            pretrain_steps: 100,
            total_steps: 300,
            update_epochs: 1,
            n_train_queries: 50,
            record_wall_time: false,
        }
    }

    /// Learning rates and clip bounds of the original large-model run.
    pub fn paper() -> Self {
        Self {
            eps_low: 3e-4,
            eps_high: 4e-4,
            actor_lr: 1e-6,
            critic_lr: 1e-5,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(
                "gamma",
                format!("must lie in (0, 1], got {}", self.gamma),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(
                "lambda",
                format!("must lie in [0, 1], got {}", self.lambda),
            ));
        }
        for (name, v) in [
            ("eps_low", self.eps_low),
            ("eps_high", self.eps_high),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.kl_coef.is_finite() && self.kl_coef >= 0.0) {
            return Err(Error::config(
                "kl_coef",
                format!("must be >= 0, got {}", self.kl_coef),
            ));
        }
        if self.group_size == 0 {
            return Err(Error::config("group_size", "must be >= 1"));
        }
        if self.episodes_per_batch == 0 || self.episodes_per_batch % self.group_size != 0 {
            return Err(Error::config(
                "episodes_per_batch",
                format!(
                    "must be a positive multiple of group_size ({})",
                    self.group_size
                ),
            ));
        }
        if self.update_epochs == 0 {
            return Err(Error::config("update_epochs", "must be >= 1"));
        }
        if self.n_train_queries == 0 {
            return Err(Error::config("n_train_queries", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-turn rewards as seen by the learner: unchanged, or with the whole
/// trajectory reward delivered at the last turn.
pub fn learner_rewards(algorithm: Algorithm, rewards: &[f64]) -> Vec<f64> {
    match algorithm {
        Algorithm::Pspo | Algorithm::PpoToken => rewards.to_vec(),
        Algorithm::PspoStar | Algorithm::Gspo => {
            let mut out = vec![0.0; rewards.len()];
            if let Some(last) = out.last_mut() {
                *last = rewards.iter().sum();
            }
            out
        }
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: MetricsLog,
    pub actor: Actor,
    pub critic: Critic,
    pub pretrain_losses: Vec<f64>,
    pub return_stats: RunningStats,
    /// Importance ratios clamped because their log exceeded the bound.
    pub ratio_clamps: u64,
}

/// Trainer state for one seed.
#[derive(Debug, Clone)]
pub struct Trainer<'c> {
    corpus: &'c Corpus,
    env: EnvConfig,
    policy: PolicyConfig,
    config: TrainConfig,
    layout: FeatureLayout,
    seed: u64,
    pub actor: Actor,
    pub critic: Critic,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    pub return_stats: RunningStats,
    rng: ChaCha8Rng,
    ratio_clamps: u64,
}

/// Turns per parallel gradient chunk. Fixed so the summation order, and
/// hence every bit of the result, is independent of the thread count.
const GRAD_CHUNK: usize = 16;

/// A loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad: ParamSet,
    pub clip_fraction: f64,
    pub clamps: u64,
}

struct Surrogate {
    loss: f64,
    clip_fraction: f64,
    coeffs: Vec<Vec<f64>>,
    clamps: u64,
}

struct TurnRef<'t> {
    traj: usize,
    turn: usize,
    record: &'t crate::rollout::TurnRecord,
}

fn flatten(batch: &[Trajectory]) -> Vec<TurnRef<'_>> {
    batch
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            t.turns.iter().enumerate().map(move |(j, r)| TurnRef {
                traj: i,
                turn: j,
                record: r,
            })
        })
        .collect()
}

fn sum_chunks(chunks: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for c in chunks {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    total
}

impl<'c> Trainer<'c> {
    pub fn new(
        corpus: &'c Corpus,
        env: &EnvConfig,
        policy: &PolicyConfig,
        config: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        env.validate()?;
        config.validate()?;
        if config.n_train_queries > corpus.queries.len() {
            return Err(Error::config(
                "n_train_queries",
                format!("corpus has only {} queries", corpus.queries.len()),
            ));
        }
        if policy.hidden == 0 || policy.n_directions == 0 {
            return Err(Error::config("hidden", "policy sizes must be >= 1"));
        }
        let layout = FeatureLayout::from_env(env);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocabulary {
            n_directions: policy.n_directions,
            n_slots: env.l_unexpanded,
        };
        let actor = Actor::new(
            layout.len(),
            policy.hidden,
            vocab,
            env.max_calls,
            rng.next_u64(),
        );
        let critic = Critic::new(layout.len(), policy.hidden, rng.next_u64());
        Ok(Self {
            corpus,
            env: env.clone(),
            policy: policy.clone(),
            config: config.clone(),
            actor_opt: OptimizerState::new(actor.params.len(), config.actor_lr),
            critic_opt: OptimizerState::new(critic.params.len(), config.critic_lr),
            layout,
            seed,
            actor,
            critic,
            return_stats: RunningStats::default(),
            rng,
            ratio_clamps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn context(&self) -> RolloutContext<'_> {
        RolloutContext {
            corpus: self.corpus,
            env: &self.env,
            layout: &self.layout,
            search_mix: self.policy.search_mix,
            temperature: 1.0,
        }
    }

    /// Draws the next batch: `episodes_per_batch / group_size` training
    /// queries, each run `group_size` times with distinct seeds.
    pub fn next_specs(&mut self) -> Vec<EpisodeSpec> {
        let groups = self.config.episodes_per_batch / self.config.group_size;
        let mut specs = Vec::with_capacity(self.config.episodes_per_batch);
        for _ in 0..groups {
            let query_id = self.rng.random_range(0..self.config.n_train_queries);
            for _ in 0..self.config.group_size {
                specs.push(EpisodeSpec {
                    query_id,
                    seed: self.rng.next_u64(),
                });
            }
        }
        specs
    }

    pub fn collect(&mut self) -> Result<Vec<Trajectory>> {
        let specs = self.next_specs();
        let critic = self.config.algorithm.uses_critic().then_some(&self.critic);
        collect_batch(&self.context(), &self.actor, critic, &specs)
    }

    /// Normalized discounted returns of every turn, flattened in batch order.
    /// Updates the running return statistics.
    pub fn critic_targets(&mut self, batch: &[Trajectory]) -> Vec<f64> {
        let returns: Vec<f64> = batch
            .iter()
            .flat_map(|t| {
                compute_returns(
                    &learner_rewards(self.config.algorithm, &t.rewards()),
                    self.config.gamma,
                )
            })
            .collect();
        normalize_returns(&mut self.return_stats, &returns)
    }

    /// Critic regression on the batch; returns the loss before the first step.
    fn update_critic(&mut self, batch: &[Trajectory], targets: &[f64]) -> Result<f64> {
        let mut first_loss = None;
        for _ in 0..self.config.update_epochs {
            let obj = self.critic_objective(batch, targets)?;
            if !obj.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite critic loss at optimizer step {} ({} seed {})",
                    self.critic_opt.step, self.config.algorithm, self.seed
                )));
            }
            first_loss.get_or_insert(obj.loss);
            optimizer_step(&mut self.critic.params, &obj.grad, &mut self.critic_opt)?;
        }
        Ok(first_loss.unwrap_or(0.0))
    }

    /// Trains the critic under the frozen current actor. Returns the
    /// pre-update loss of every step.
    pub fn value_pretrain(&mut self, steps: usize) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(steps);
        if !self.config.algorithm.uses_critic() {
            return Ok(losses);
        }
        for _ in 0..steps {
            let batch = self.collect()?;
            let targets = self.critic_targets(&batch);
            losses.push(self.update_critic(&batch, &targets)?);
        }
        Ok(losses)
    }

    /// Per-turn advantages, one vector per trajectory.
    pub fn advantages(&self, batch: &[Trajectory]) -> Vec<Vec<f64>> {
        match self.config.algorithm {
            Algorithm::Gspo => {
                let totals: Vec<f64> = batch.iter().map(Trajectory::total_reward).collect();
                let g = self.config.group_size;
                batch
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let start = i / g * g;
                        let group = &totals[start..(start + g).min(totals.len())];
                        let mean = group.iter().sum::<f64>() / group.len() as f64;
                        vec![totals[i] - mean; t.len()]
                    })
                    .collect()
            }
            algo => batch
                .iter()
                .map(|t| {
                    let rewards = learner_rewards(algo, &t.rewards());
                    let mut values: Vec<f64> = t
                        .turns
                        .iter()
                        .map(|r| self.return_stats.denormalize(r.value))
                        .collect();
                    values.push(0.0);
                    compute_gae(&rewards, &values, self.config.gamma, self.config.lambda)
                })
                .collect(),
        }
    }

    /// Per-turn current log-probabilities (per token for the token-level
    /// baseline) under the live actor.
    fn current_logprobs(&self, turns: &[TurnRef<'_>]) -> Result<Vec<Vec<f64>>> {
        let actor = &self.actor;
        turns
            .par_iter()
            .map(|t| {
                let s = &t.record.sample;
                let coeffs = vec![0.0; s.tokens.len()];
                Ok(sequence_logprob_accumulate(
                    actor,
                    &t.record.features,
                    &s.tokens,
                    &coeffs,
                    None,
                )?
                .per_token)
            })
            .collect()
    }

    /// Loss terms for the live actor. Returns the per-token gradient
    /// coefficients of every turn together with the loss and clip fraction.
    fn surrogate(&self, turns: &[TurnRef<'_>], adv: &[Vec<f64>], new: &[Vec<f64>]) -> Surrogate {
        let c = &self.config;
        let mut clamps = 0u64;
        match c.algorithm {
            Algorithm::PpoToken => {
                let mut ratios = Vec::new();
                let mut advs = Vec::new();
                let mut kls = Vec::new();
                let mut index = Vec::new();
                for (k, t) in turns.iter().enumerate() {
                    let s = &t.record.sample;
                    for i in 0..s.free_len() {
                        let r = sequence_ratio(new[k][i], s.logprobs[i]);
                        clamps += u64::from(r.clamped);
                        ratios.push(r);
                        advs.push(adv[t.traj][t.turn]);
                        kls.push(s.logprobs[i] - new[k][i]);
                        index.push((k, i));
                    }
                }
                let w: Vec<f64> = ratios.iter().map(|r| r.value).collect();
                let l = actor_loss(&w, &advs, c.eps_low, c.eps_high, c.kl_coef, &kls);
                let g = l.grad_logprob(&w);
                let mut coeffs: Vec<Vec<f64>> = turns
                    .iter()
                    .map(|t| vec![0.0; t.record.sample.tokens.len()])
                    .collect();
                for (j, &(k, i)) in index.iter().enumerate() {
                    coeffs[k][i] = if ratios[j].clamped { -l.grad_kl } else { g[j] };
                }
                Surrogate {
                    loss: l.loss,
                    clip_fraction: l.clip_fraction,
                    coeffs,
                    clamps,
                }
            }
            algo => {
                let mut ratios = Vec::with_capacity(turns.len());
                let mut advs = Vec::with_capacity(turns.len());
                let mut kls = Vec::with_capacity(turns.len());
                let mut scale = Vec::with_capacity(turns.len());
                for (k, t) in turns.iter().enumerate() {
                    let s = &t.record.sample;
                    let new_total: f64 = new[k].iter().sum();
                    // Length-normalized ratio for the group baseline.
                    let len = if algo == Algorithm::Gspo {
                        s.free_len().max(1) as f64
                    } else {
                        1.0
                    };
                    let r = sequence_ratio(new_total / len, s.total_logprob / len);
                    clamps += u64::from(r.clamped);
                    ratios.push(r);
                    advs.push(adv[t.traj][t.turn]);
                    kls.push(s.total_logprob - new_total);
                    scale.push(len);
                }
                let w: Vec<f64> = ratios.iter().map(|r| r.value).collect();
                let l = actor_loss(&w, &advs, c.eps_low, c.eps_high, c.kl_coef, &kls);
                let coeffs = turns
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let through_ratio = if ratios[k].clamped {
                            0.0
                        } else {
                            l.grad_ratio[k] * w[k] / scale[k]
                        };
                        vec![through_ratio - l.grad_kl; t.record.sample.tokens.len()]
                    })
                    .collect();
                Surrogate {
                    loss: l.loss,
                    clip_fraction: l.clip_fraction,
                    coeffs,
                    clamps,
                }
            }
        }
    }

    /// Actor loss on `batch` under the live parameters and its exact
    /// gradient.
    pub fn actor_objective(&self, batch: &[Trajectory], adv: &[Vec<f64>]) -> Result<Objective> {
        let turns = flatten(batch);
        let new = self.current_logprobs(&turns)?;
        let sur = self.surrogate(&turns, adv, &new);
        let actor = &self.actor;
        let n_params = actor.params.len();
        let chunks = turns
            .par_chunks(GRAD_CHUNK)
            .zip(sur.coeffs.par_chunks(GRAD_CHUNK))
            .map(|(ts, cs)| {
                let mut g = vec![0.0; n_params];
                for (t, c) in ts.iter().zip(cs) {
                    sequence_logprob_accumulate(
                        actor,
                        &t.record.features,
                        &t.record.sample.tokens,
                        c,
                        Some(&mut g),
                    )?;
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective {
            loss: sur.loss,
            grad: ParamSet {
                values: sum_chunks(chunks, n_params),
                ..actor.params.zeros_like()
            },
            clip_fraction: sur.clip_fraction,
            clamps: sur.clamps,
        })
    }

    /// Critic loss against `targets` under the live parameters and its exact
    /// gradient.
    pub fn critic_objective(&self, batch: &[Trajectory], targets: &[f64]) -> Result<Objective> {
        let turns = flatten(batch);
        let critic = &self.critic;
        let values = turns
            .par_iter()
            .map(|t| critic.value_accumulate(&t.record.features, 0.0, None))
            .collect::<Result<Vec<f64>>>()?;
        let (loss, grad_values) = critic_loss(&values, targets);
        let n_params = critic.params.len();
        let chunks = turns
            .par_chunks(GRAD_CHUNK)
            .zip(grad_values.par_chunks(GRAD_CHUNK))
            .map(|(ts, gs)| {
                let mut g = vec![0.0; n_params];
                for (t, c) in ts.iter().zip(gs) {
                    critic.value_accumulate(&t.record.features, *c, Some(&mut g))?;
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective {
            loss,
            grad: ParamSet {
                values: sum_chunks(chunks, n_params),
                ..critic.params.zeros_like()
            },
            clip_fraction: 0.0,
            clamps: 0,
        })
    }

    /// Returns (gradient norm of the first epoch, clip fraction, KL) where the
    /// last two are measured after the update.
    fn update_actor(&mut self, batch: &[Trajectory], adv: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
        let mut first_norm = None;
        for _ in 0..self.config.update_epochs {
            let obj = self.actor_objective(batch, adv)?;
            if !obj.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite actor loss at optimizer step {} ({} seed {})",
                    self.actor_opt.step, self.config.algorithm, self.seed
                )));
            }
            self.ratio_clamps += obj.clamps;
            first_norm.get_or_insert(obj.grad.norm());
            optimizer_step(&mut self.actor.params, &obj.grad, &mut self.actor_opt)?;
        }

        let turns = flatten(batch);
        let new = self.current_logprobs(&turns)?;
        let clip_fraction = self.surrogate(&turns, adv, &new).clip_fraction;
        let kl = turns
            .iter()
            .zip(&new)
            .map(|(t, n)| t.record.sample.total_logprob - n.iter().sum::<f64>())
            .sum::<f64>()
            / turns.len().max(1) as f64;
        Ok((first_norm.unwrap_or(0.0), clip_fraction, kl))
    }

    /// One collect/update cycle.
    pub fn step(&mut self, step: usize) -> Result<MetricsRow> {
        let started = Instant::now();
        let batch = self.collect()?;
        let mean_return =
            batch.iter().map(Trajectory::total_reward).sum::<f64>() / batch.len() as f64;

        let stats = if self.config.algorithm.uses_critic() {
            let targets = self.critic_targets(&batch);
            let adv = self.advantages(&batch);
            let loss = self.update_critic(&batch, &targets)?;
            let (grad_norm, clip, kl) = self.update_actor(&batch, &adv)?;
            (loss, grad_norm, clip, kl)
        } else {
            let adv = self.advantages(&batch);
            let (grad_norm, clip, kl) = self.update_actor(&batch, &adv)?;
            (f64::NAN, grad_norm, clip, kl)
        };
        let (critic_loss, actor_grad_norm, clip_fraction, kl) = stats;
        Ok(MetricsRow {
            step,
            algorithm: self.config.algorithm,
            seed: self.seed,
            mean_return,
            actor_grad_norm,
            critic_loss,
            clip_fraction,
            kl,
            wall_ms: if self.config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }

    /// Value pretraining followed by `total_steps` collect/update cycles.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let pretrain_losses = if self.config.total_steps == 0 {
            Vec::new()
        } else {
            self.value_pretrain(self.config.pretrain_steps)?
        };
        let mut metrics = MetricsLog::default();
        for step in 0..self.config.total_steps {
            metrics.rows.push(self.step(step)?);
        }
        Ok(TrainOutcome {
            metrics,
            actor: self.actor,
            critic: self.critic,
            pretrain_losses,
            return_stats: self.return_stats,
            ratio_clamps: self.ratio_clamps,
        })
    }
}

/// Trains one seed end to end.
pub fn train(
    corpus: &Corpus,
    env: &EnvConfig,
    policy: &PolicyConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    Trainer::new(corpus, env, policy, config, seed)?.run()
}
