//! Token-level actor and scalar critic.
//!
//! A turn is a short sequence over a small action vocabulary: `SEARCH(d)` for
//! one of `n_directions` fixed search directions, `EXPAND(s)` for an
//! unexpanded observation slot, and `END`. Tokens are generated
//! autoregressively; the prefix is fed back by adding the learned embedding
//! of every emitted token to the feature vector. Once `max_calls` tool tokens
//! have been emitted, `END` is forced with probability one.

use rand::Rng;

use crate::corpus::normalized;
use crate::env::{EnvConfig, Observation, SlotSummary, ToolCall};
use crate::error::{Error, Result};
use crate::nn::{Mlp, ParamSet, Shape};

/// Scales used to squash observation fields into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub l_expanded: usize,
    pub l_unexpanded: usize,
    pub max_turns: usize,
    pub stagnation_limit: usize,
    pub pool_scale: f64,
    pub reward_scale: f64,
    pub degree_scale: f64,
    pub count_scale: f64,
}

pub const STAT_FEATURES: usize = 4;
pub const SLOT_FEATURES: usize = 3;
pub const DIGEST_FEATURES: usize = 2;

impl FeatureLayout {
    pub fn from_env(config: &EnvConfig) -> Self {
        Self {
            l_expanded: config.l_expanded,
            l_unexpanded: config.l_unexpanded,
            max_turns: config.max_turns,
            stagnation_limit: config.stagnation_limit,
            pool_scale: 20.0,
            reward_scale: config.k as f64,
            degree_scale: 8.0,
            count_scale: 8.0,
        }
    }

    pub fn len(&self) -> usize {
        STAT_FEATURES + SLOT_FEATURES * (self.l_unexpanded + self.l_expanded) + DIGEST_FEATURES
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    (num as f64 / den.max(1) as f64).min(1.0)
}

/// Fixed-length numeric encoding: pool stats, unexpanded slots, expanded
/// slots, history digest. Empty slots are all zeros.
pub fn featurize(obs: &Observation, layout: &FeatureLayout) -> FeatureVector {
    let mut f = Vec::with_capacity(layout.len());
    let s = &obs.pool_stats;
    f.push((s.pool_size as f64 / layout.pool_scale).tanh());
    f.push(ratio(s.turn, layout.max_turns));
    f.push(ratio(s.stagnant_turns, layout.stagnation_limit));
    f.push((s.last_reward / layout.reward_scale).tanh());

    let mut push_slots = |list: &[SlotSummary], n: usize| {
        for i in 0..n {
            match list.get(i) {
                Some(slot) => {
                    f.push(slot.score);
                    f.push((slot.degree as f64 / layout.degree_scale).tanh());
                    f.push(1.0 / (1.0 + s.turn.saturating_sub(slot.arrival_turn) as f64));
                }
                None => f.extend([0.0; SLOT_FEATURES]),
            }
        }
    };
    push_slots(&obs.unexpanded_list, layout.l_unexpanded);
    push_slots(&obs.expanded_list, layout.l_expanded);

    let d = obs.history_digest;
    f.push((d.search_calls as f64 / layout.count_scale).tanh());
    f.push((d.expand_calls as f64 / layout.count_scale).tanh());
    FeatureVector(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionToken {
    Search(usize),
    Expand(usize),
    End,
}

/// Index layout: searches `0..n_directions`, expands next, `END` last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub n_directions: usize,
    pub n_slots: usize,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.n_directions + self.n_slots + 1
    }

    pub fn end(&self) -> usize {
        self.n_directions + self.n_slots
    }

    pub fn token(&self, index: usize) -> Result<ActionToken> {
        if index < self.n_directions {
            Ok(ActionToken::Search(index))
        } else if index < self.end() {
            Ok(ActionToken::Expand(index - self.n_directions))
        } else if index == self.end() {
            Ok(ActionToken::End)
        } else {
            Err(Error::Invariant(format!(
                "token {index} outside vocabulary of size {}",
                self.size()
            )))
        }
    }

    pub fn index(&self, token: ActionToken) -> usize {
        match token {
            ActionToken::Search(d) => d,
            ActionToken::Expand(s) => self.n_directions + s,
            ActionToken::End => self.end(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub n_directions: usize,
    /// Weight of the direction vector mixed into the query topic.
    pub search_mix: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            n_directions: 8,
            search_mix: 0.5,
        }
    }
}

/// What a token sequence needs to become tool calls.
#[derive(Debug, Clone, Copy)]
pub struct DecodeContext<'a> {
    pub query_topic: &'a [f64],
    pub unexpanded: &'a [SlotSummary],
    pub search_mix: f64,
}

impl<'a> DecodeContext<'a> {
    pub fn new(obs: &'a Observation, query_topic: &'a [f64], search_mix: f64) -> Self {
        Self {
            query_topic,
            unexpanded: &obs.unexpanded_list,
            search_mix,
        }
    }

    /// Unit vector `query + mix * (±e_{d mod dim})`, sign flipping every
    /// `dim` directions.
    pub fn search_probe(&self, direction: usize) -> Vec<f64> {
        let dim = self.query_topic.len();
        let mut v = self.query_topic.to_vec();
        let sign = if (direction / dim) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        v[direction % dim] += sign * self.search_mix;
        normalized(&v).unwrap_or_else(|| self.query_topic.to_vec())
    }

    pub fn decode(&self, vocab: &Vocabulary, tokens: &[usize]) -> Result<Vec<ToolCall>> {
        let mut calls = Vec::new();
        for &t in tokens {
            match vocab.token(t)? {
                ActionToken::Search(d) => calls.push(ToolCall::Search {
                    probe: self.search_probe(d),
                }),
                ActionToken::Expand(s) => calls.push(match self.unexpanded.get(s) {
                    Some(slot) => ToolCall::Expand {
                        paper_id: slot.paper_id,
                    },
                    None => ToolCall::Noop,
                }),
                ActionToken::End => break,
            }
        }
        Ok(calls)
    }
}

/// Autoregressive policy over the action vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub mlp: Mlp,
    pub vocab: Vocabulary,
    pub max_calls: usize,
    pub params: ParamSet,
}

const EMBED: &str = "actor.embed";

impl Actor {
    pub fn new(
        feature_len: usize,
        hidden: usize,
        vocab: Vocabulary,
        max_calls: usize,
        seed: u64,
    ) -> Self {
        let mlp = Mlp::new(feature_len, hidden, vocab.size());
        Self {
            mlp,
            vocab,
            max_calls,
            params: ParamSet::init(Self::shapes(&mlp, vocab), seed),
        }
    }

    pub fn from_params(
        feature_len: usize,
        hidden: usize,
        vocab: Vocabulary,
        max_calls: usize,
        params: ParamSet,
    ) -> Result<Self> {
        let mlp = Mlp::new(feature_len, hidden, vocab.size());
        if params.shapes != Self::shapes(&mlp, vocab) {
            return Err(Error::Invariant(
                "actor checkpoint shapes do not match the configuration".into(),
            ));
        }
        params.check()?;
        Ok(Self {
            mlp,
            vocab,
            max_calls,
            params,
        })
    }

    fn shapes(mlp: &Mlp, vocab: Vocabulary) -> Vec<Shape> {
        let mut s = mlp.shapes("actor");
        s.push(Shape::new(EMBED, vocab.size(), mlp.input, mlp.input));
        s
    }

    /// Longest admissible sequence, counting the terminating `END`.
    pub fn max_len(&self) -> usize {
        self.max_calls + 1
    }

    fn net_params(&self) -> &[f64] {
        &self.params.values[..self.mlp.param_len()]
    }

    fn embedding(&self, token: usize) -> &[f64] {
        let d = self.mlp.input;
        let base = self.mlp.param_len() + token * d;
        &self.params.values[base..base + d]
    }

    fn position_input(&self, features: &[f64], prefix: &[usize]) -> Vec<f64> {
        let mut x = features.to_vec();
        for &t in prefix {
            for (xi, e) in x.iter_mut().zip(self.embedding(t)) {
                *xi += e;
            }
        }
        x
    }

    /// Logits for the next token given `features` and the emitted prefix.
    pub fn logits(&self, features: &FeatureVector, prefix: &[usize]) -> Result<Vec<f64>> {
        let x = self.position_input(features.as_slice(), prefix);
        Ok(self.mlp.forward(self.net_params(), &x)?.0)
    }

    fn check_sequence(&self, tokens: &[usize]) -> Result<()> {
        let end = self.vocab.end();
        if tokens.is_empty() || tokens.len() > self.max_len() {
            return Err(Error::Invariant(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.max_len()
            )));
        }
        for (i, &t) in tokens.iter().enumerate() {
            self.vocab.token(t)?;
            if (t == end) != (i + 1 == tokens.len()) {
                return Err(Error::Invariant(
                    "sequence must contain END exactly at the end".into(),
                ));
            }
        }
        Ok(())
    }

    /// Whether position `i` of an admissible sequence is the forced `END`.
    fn forced(&self, i: usize) -> bool {
        i == self.max_calls
    }
}

/// Numerically stable log-softmax. Any `+inf` logits share all the mass.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let n_inf = logits.iter().filter(|v| **v == f64::INFINITY).count();
    if n_inf > 0 {
        let lp = -(n_inf as f64).ln();
        return logits
            .iter()
            .map(|v| {
                if *v == f64::INFINITY {
                    lp
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// One generated turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnSample {
    pub tokens: Vec<usize>,
    /// Log-probability of each token under the actor; 0 for a forced `END`.
    pub logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub forced_end: bool,
    pub calls: Vec<ToolCall>,
}

impl TurnSample {
    /// Tokens that were actually sampled (excludes a forced `END`).
    pub fn free_len(&self) -> usize {
        self.tokens.len() - usize::from(self.forced_end)
    }
}

/// Samples one turn. `temperature == 0` decodes greedily (lowest index wins
/// ties); stored log-probabilities are always those of the untempered actor.
pub fn sample_turn<R: Rng + ?Sized>(
    actor: &Actor,
    features: &FeatureVector,
    ctx: &DecodeContext<'_>,
    temperature: f64,
    rng: &mut R,
) -> Result<TurnSample> {
    let end = actor.vocab.end();
    let mut tokens = Vec::with_capacity(actor.max_len());
    let mut logprobs = Vec::with_capacity(actor.max_len());
    let mut forced_end = false;
    loop {
        if actor.forced(tokens.len()) {
            tokens.push(end);
            logprobs.push(0.0);
            forced_end = true;
            break;
        }
        let logits = actor.logits(features, &tokens)?;
        let lp = log_softmax(&logits);
        let choice = if temperature == 0.0 {
            argmax(&logits)
        } else {
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            draw(&log_softmax(&scaled), rng)
        };
        tokens.push(choice);
        logprobs.push(lp[choice]);
        if choice == end {
            break;
        }
    }
    let total_logprob = logprobs.iter().sum();
    let calls = ctx.decode(&actor.vocab, &tokens)?;
    Ok(TurnSample {
        tokens,
        logprobs,
        total_logprob,
        forced_end,
        calls,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in logp.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProb {
    pub total: f64,
    pub per_token: Vec<f64>,
}

/// Log-probabilities of `tokens`, accumulating `Σ_i coeffs[i] ∇ log π(token_i)`
/// into `grad` when given. `coeffs` must have one entry per token; the entry
/// for a forced `END` is ignored.
pub fn sequence_logprob_accumulate(
    actor: &Actor,
    features: &FeatureVector,
    tokens: &[usize],
    coeffs: &[f64],
    mut grad: Option<&mut [f64]>,
) -> Result<SequenceLogProb> {
    actor.check_sequence(tokens)?;
    if coeffs.len() != tokens.len() {
        return Err(Error::Invariant(
            "one coefficient per token required".into(),
        ));
    }
    if let Some(g) = grad.as_deref() {
        if g.len() != actor.params.len() {
            return Err(Error::Invariant(
                "gradient buffer has the wrong length".into(),
            ));
        }
    }
    let net_len = actor.mlp.param_len();
    let d = actor.mlp.input;
    let mut per_token = Vec::with_capacity(tokens.len());
    for (i, &tok) in tokens.iter().enumerate() {
        if actor.forced(i) {
            per_token.push(0.0);
            continue;
        }
        let x = actor.position_input(features.as_slice(), &tokens[..i]);
        let (logits, cache) = actor.mlp.forward(actor.net_params(), &x)?;
        let lp = log_softmax(&logits);
        per_token.push(lp[tok]);
        let c = coeffs[i];
        if let (Some(g), true) = (grad.as_deref_mut(), c != 0.0) {
            let grad_logits: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(j, l)| c * (f64::from(u8::from(j == tok)) - l.exp()))
                .collect();
            let (g_net, g_embed) = g.split_at_mut(net_len);
            let gx = actor
                .mlp
                .backward(actor.net_params(), &cache, &grad_logits, g_net)?;
            for &prev in &tokens[..i] {
                for (ge, gxi) in g_embed[prev * d..(prev + 1) * d].iter_mut().zip(&gx) {
                    *ge += gxi;
                }
            }
        }
    }
    Ok(SequenceLogProb {
        total: per_token.iter().sum(),
        per_token,
    })
}

/// Total and per-token log-probabilities of `tokens` with the exact
/// gradient of the total.
pub fn sequence_logprob(
    actor: &Actor,
    features: &FeatureVector,
    tokens: &[usize],
) -> Result<(SequenceLogProb, ParamSet)> {
    let mut grad = actor.params.zeros_like();
    let coeffs = vec![1.0; tokens.len()];
    let lp = sequence_logprob_accumulate(actor, features, tokens, &coeffs, Some(&mut grad.values))?;
    Ok((lp, grad))
}

/// State-value network `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub mlp: Mlp,
    pub params: ParamSet,
}

impl Critic {
    pub fn new(feature_len: usize, hidden: usize, seed: u64) -> Self {
        let mlp = Mlp::new(feature_len, hidden, 1);
        Self {
            mlp,
            params: ParamSet::init(mlp.shapes("critic"), seed),
        }
    }

    pub fn from_params(feature_len: usize, hidden: usize, params: ParamSet) -> Result<Self> {
        let mlp = Mlp::new(feature_len, hidden, 1);
        if params.shapes != mlp.shapes("critic") {
            return Err(Error::Invariant(
                "critic checkpoint shapes do not match the configuration".into(),
            ));
        }
        params.check()?;
        Ok(Self { mlp, params })
    }

    /// `V(x)`, accumulating `coeff * ∇V` into `grad` when given.
    pub fn value_accumulate(
        &self,
        features: &FeatureVector,
        coeff: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let (out, cache) = self.mlp.forward(&self.params.values, features.as_slice())?;
        if let Some(g) = grad {
            if coeff != 0.0 {
                self.mlp
                    .backward(&self.params.values, &cache, &[coeff], g)?;
            }
        }
        Ok(out[0])
    }
}

pub fn value_estimate(critic: &Critic, features: &FeatureVector) -> Result<f64> {
    critic.value_accumulate(features, 0.0, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{HistoryDigest, PoolStats};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slot(id: usize, score: f64) -> SlotSummary {
        SlotSummary {
            paper_id: id,
            score,
            degree: 4,
            arrival_turn: 0,
        }
    }

    fn obs(unexpanded: Vec<SlotSummary>) -> Observation {
        Observation {
            expanded_list: vec![],
            unexpanded_list: unexpanded,
            pool_stats: PoolStats {
                pool_size: 3,
                turn: 1,
                stagnant_turns: 0,
                last_reward: 0.5,
            },
            history_digest: HistoryDigest::default(),
        }
    }

    fn layout() -> FeatureLayout {
        FeatureLayout::from_env(&EnvConfig {
            l_expanded: 2,
            l_unexpanded: 3,
            ..EnvConfig::default()
        })
    }

    fn small_actor(seed: u64) -> Actor {
        // Vocabulary 2 + 3 + 1 = 6, sequences of at most 3 tokens.
        let vocab = Vocabulary {
            n_directions: 2,
            n_slots: 3,
        };
        Actor::new(layout().len(), 8, vocab, 2, seed)
    }

    fn features() -> FeatureVector {
        featurize(&obs(vec![slot(7, 0.8), slot(3, 0.6)]), &layout())
    }

    #[test]
    fn featurize_layout_and_empty_slots() {
        let lay = layout();
        let empty = Observation {
            expanded_list: vec![],
            unexpanded_list: vec![],
            pool_stats: PoolStats {
                pool_size: 0,
                turn: 0,
                stagnant_turns: 0,
                last_reward: 0.0,
            },
            history_digest: HistoryDigest::default(),
        };
        let f = featurize(&empty, &lay);
        assert_eq!(f.len(), lay.len());
        assert!(f.0.iter().all(|v| *v == 0.0));

        let f = features();
        assert_eq!(f.0[STAT_FEATURES], 0.8);
        assert_eq!(f.0[STAT_FEATURES + SLOT_FEATURES], 0.6);
        assert!(
            f.0[STAT_FEATURES + 2 * SLOT_FEATURES..STAT_FEATURES + 3 * SLOT_FEATURES]
                .iter()
                .all(|v| *v == 0.0)
        );
        assert!(f.0.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn vocabulary_round_trip() {
        let v = Vocabulary {
            n_directions: 2,
            n_slots: 3,
        };
        for i in 0..v.size() {
            assert_eq!(v.index(v.token(i).unwrap()), i);
        }
        assert!(v.token(6).is_err());
    }

    #[test]
    fn decode_maps_slots_and_directions() {
        let o = obs(vec![slot(7, 0.8)]);
        let q = [0.6, 0.8, 0.0];
        let ctx = DecodeContext::new(&o, &q, 0.5);
        let v = Vocabulary {
            n_directions: 2,
            n_slots: 3,
        };
        let calls = ctx.decode(&v, &[2, 3, 0, 5]).unwrap();
        assert_eq!(calls[0], ToolCall::Expand { paper_id: 7 });
        assert_eq!(calls[1], ToolCall::Noop);
        match &calls[2] {
            ToolCall::Search { probe } => {
                assert!((crate::corpus::norm(probe) - 1.0).abs() < 1e-12);
                let expected = normalized(&[1.1, 0.8, 0.0]).unwrap();
                assert_eq!(probe, &expected);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forced_end_logits_give_empty_turn() {
        let mut a = small_actor(1);
        let end = a.vocab.end();
        let bias = a.params.block_mut("actor.l2.bias").unwrap();
        bias[end] = f64::INFINITY;
        let o = obs(vec![]);
        let ctx = DecodeContext::new(&o, &[1.0, 0.0], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_turn(&a, &features(), &ctx, 1.0, &mut rng).unwrap();
        assert_eq!(s.tokens, vec![end]);
        assert!(s.calls.is_empty());
        assert_eq!(s.total_logprob, 0.0);
    }

    #[test]
    fn sampling_is_seeded_and_consistent_with_recompute() {
        let a = small_actor(2);
        let o = obs(vec![slot(7, 0.8), slot(3, 0.6)]);
        let q = [0.0, 1.0, 0.0];
        let ctx = DecodeContext::new(&o, &q, 0.5);
        let f = features();
        for seed in 0..50 {
            let s1 = sample_turn(&a, &f, &ctx, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let s2 = sample_turn(&a, &f, &ctx, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(s1, s2);
            assert_eq!(s1.total_logprob, s1.logprobs.iter().sum::<f64>());
            assert!(s1.calls.len() <= a.max_calls);
            let (lp, _) = sequence_logprob(&a, &f, &s1.tokens).unwrap();
            assert!((lp.total - s1.total_logprob).abs() <= 1e-12);
            for (x, y) in lp.per_token.iter().zip(&s1.logprobs) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_scale_invariant() {
        let a = small_actor(3);
        let o = obs(vec![slot(7, 0.8)]);
        let ctx = DecodeContext::new(&o, &[1.0, 0.0], 0.5);
        let f = features();
        let g1 = sample_turn(&a, &f, &ctx, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let g2 = sample_turn(&a, &f, &ctx, 0.0, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(g1.tokens, g2.tokens);

        let mut scaled = a.clone();
        for name in ["actor.l2.weight", "actor.l2.bias"] {
            scaled
                .params
                .block_mut(name)
                .unwrap()
                .iter_mut()
                .for_each(|v| *v *= 3.5);
        }
        let g3 = sample_turn(&scaled, &f, &ctx, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g1.tokens, g3.tokens);
    }

    #[test]
    fn uniform_policy_logprob_is_length_times_log_vocab() {
        let mut a = small_actor(4);
        a.params.values.iter_mut().for_each(|v| *v = 0.0);
        let f = features();
        let v = a.vocab.size() as f64;
        let (lp, _) = sequence_logprob(&a, &f, &[0, 5]).unwrap();
        assert!((lp.total + 2.0 * v.ln()).abs() < 1e-12);
        // Length-3 sequence: the final END is forced and contributes nothing.
        let (lp, _) = sequence_logprob(&a, &f, &[0, 1, 5]).unwrap();
        assert!((lp.total + 2.0 * v.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_sequences_are_rejected() {
        let a = small_actor(5);
        let f = features();
        assert!(sequence_logprob(&a, &f, &[6]).is_err());
        assert!(sequence_logprob(&a, &f, &[0, 1]).is_err());
        assert!(sequence_logprob(&a, &f, &[5, 5]).is_err());
        assert!(sequence_logprob(&a, &f, &[0, 1, 2, 5]).is_err());
        assert!(sequence_logprob(&a, &f, &[]).is_err());
    }

    #[test]
    fn sequence_probabilities_sum_to_one() {
        let a = small_actor(6);
        let f = features();
        let end = a.vocab.end();
        let mut total = 0.0;
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(prefix) = stack.pop() {
            for t in 0..a.vocab.size() {
                let mut seq = prefix.clone();
                seq.push(t);
                if t == end {
                    total += sequence_logprob(&a, &f, &seq).unwrap().0.total.exp();
                } else if seq.len() == a.max_calls {
                    seq.push(end);
                    total += sequence_logprob(&a, &f, &seq).unwrap().0.total.exp();
                } else {
                    stack.push(seq);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn sequence_gradient_matches_finite_differences() {
        let a = small_actor(7);
        let f = features();
        let tokens = [3, 0, 5];
        let (_, grad) = sequence_logprob(&a, &f, &tokens).unwrap();
        let h = 1e-5;
        for i in 0..a.params.len() {
            let mut plus = a.clone();
            let mut minus = a.clone();
            plus.params.values[i] += h;
            minus.params.values[i] -= h;
            let fd = (sequence_logprob(&plus, &f, &tokens).unwrap().0.total
                - sequence_logprob(&minus, &f, &tokens).unwrap().0.total)
                / (2.0 * h);
            let g = grad.values[i];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            assert!(
                rel <= 1e-4 || (fd - g).abs() < 1e-9,
                "param {i}: {fd} vs {g}"
            );
        }
    }

    #[test]
    fn critic_values_and_gradient() {
        let lay = layout();
        let mut zero = Critic::new(lay.len(), 6, 1);
        zero.params.values.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(value_estimate(&zero, &features()).unwrap(), 0.0);

        let c = Critic::new(lay.len(), 6, 2);
        let f = features();
        let v = value_estimate(&c, &f).unwrap();
        assert_eq!(v, value_estimate(&c, &f).unwrap());
        let mut g = vec![0.0; c.params.len()];
        c.value_accumulate(&f, 1.0, Some(&mut g)).unwrap();
        let h = 1e-5;
        for i in 0..c.params.len() {
            let mut plus = c.clone();
            let mut minus = c.clone();
            plus.params.values[i] += h;
            minus.params.values[i] -= h;
            let fd = (value_estimate(&plus, &f).unwrap() - value_estimate(&minus, &f).unwrap())
                / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel <= 1e-4 || (fd - g[i]).abs() < 1e-9);
        }
    }
}
