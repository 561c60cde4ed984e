//! Flat `key = value` experiment configuration with `[section]` headers.
//!
//! ```text
//! # comment
//! [train]
//! gamma = 0.99
//! algorithm = pspo
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::CorpusConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;
use crate::pspo::{Algorithm, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    /// Training seeds; each produces an independent run.
    pub seeds: Vec<u64>,
    /// Seed of the evaluation episodes.
    pub eval_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Learning rates and clip bounds sized for the small networks.
    Toy,
    /// Large-model learning rates and clip bounds.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config(
                "preset",
                format!("expected `toy` or `paper`, got `{other}`"),
            )),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut corpus = CorpusConfig::new(7, 2000, 60, 16, 6);
        corpus.n_clusters = 80;
        Self {
            corpus,
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            train: match preset {
                Preset::Toy => TrainConfig::toy(),
                Preset::Paper => TrainConfig::paper(),
            },
            seeds: vec![0],
            eval_seed: 0,
        }
    }

    /// Query ids used for training.
    pub fn train_queries(&self) -> std::ops::Range<usize> {
        0..self.train.n_train_queries.min(self.corpus.n_queries)
    }

    /// Query ids held out for evaluation.
    pub fn eval_queries(&self) -> std::ops::Range<usize> {
        self.train.n_train_queries.min(self.corpus.n_queries)..self.corpus.n_queries
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if self.train.n_train_queries > self.corpus.n_queries {
            return Err(Error::config(
                "n_train_queries",
                format!("exceeds n_queries ({})", self.corpus.n_queries),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !KEYS.iter().any(|(s, _)| *s == section) {
                    return Err(Error::UnknownKey {
                        suggestion: nearest(&section, KEYS.iter().map(|(s, _)| *s))
                            .map(|s| format!("[{s}]")),
                        key: format!("[{section}]"),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !set_field(self, &section, key, value, line_no)? {
                let in_section = KEYS.iter().filter(|(s, _)| *s == section).map(|(_, k)| *k);
                let suggestion =
                    nearest(key, in_section).or_else(|| nearest(key, KEYS.iter().map(|(_, k)| *k)));
                return Err(Error::UnknownKey {
                    key: key.to_string(),
                    suggestion: suggestion.map(str::to_string),
                });
            }
        }
        Ok(())
    }

    pub fn from_text(preset: Preset, text: &str) -> Result<Self> {
        let mut cfg = Self::preset(preset);
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(preset: Preset, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(preset, &text)
    }

    /// Every key with its resolved value, grouped by section. Parsing the
    /// output reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in render(self) {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

fn nearest<'a>(key: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .map(|c| (strsim::levenshtein(key, c), c))
        .filter(|(d, c)| *d <= 3.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

trait ConfigValue: Sized {
    fn parse_value(raw: &str, line: usize) -> Result<Self>;
    fn render(&self) -> String;
}

fn parse_err(raw: &str, line: usize, what: &str) -> Error {
    Error::Parse {
        line,
        reason: format!("`{raw}` is not a valid {what}"),
    }
}

impl ConfigValue for usize {
    fn parse_value(raw: &str, line: usize) -> Result<Self> {
        raw.parse().map_err(|_| parse_err(raw, line, "count"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(raw: &str, line: usize) -> Result<Self> {
        raw.parse().map_err(|_| parse_err(raw, line, "integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for f64 {
    fn parse_value(raw: &str, line: usize) -> Result<Self> {
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(raw, line, "number"))
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for bool {
    fn parse_value(raw: &str, line: usize) -> Result<Self> {
        raw.parse().map_err(|_| parse_err(raw, line, "boolean"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Algorithm {
    fn parse_value(raw: &str, line: usize) -> Result<Self> {
        raw.parse()
            .map_err(|_| parse_err(raw, line, "algorithm (pspo, ppo_token, gspo, pspo_star)"))
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for Vec<u64> {
    fn parse_value(raw: &str, line: usize) -> Result<Self> {
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| parse_err(raw, line, "comma-separated seed list"))
            })
            .collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

macro_rules! config_fields {
    ($($section:literal $key:literal => $($field:ident).+;)*) => {
        /// Every accepted `(section, key)` pair.
        pub const KEYS: &[(&str, &str)] = &[$(($section, $key)),*];

        fn set_field(cfg: &mut ExperimentConfig, section: &str, key: &str, value: &str, line: usize) -> Result<bool> {
            match (section, key) {
                $(($section, $key) => {
                    cfg.$($field).+ = ConfigValue::parse_value(value, line)?;
                    Ok(true)
                })*
                _ => Ok(false),
            }
        }

        fn render(cfg: &ExperimentConfig) -> Vec<(&'static str, &'static str, String)> {
            vec![$(($section, $key, ConfigValue::render(&cfg.$($field).+))),*]
        }
    };
}

config_fields! {
    "corpus" "seed" => corpus.seed;
    "corpus" "n_papers" => corpus.n_papers;
    "corpus" "n_queries" => corpus.n_queries;
    "corpus" "dim" => corpus.dim;
    "corpus" "avg_refs" => corpus.avg_refs;
    "corpus" "n_clusters" => corpus.n_clusters;
    "corpus" "paper_spread" => corpus.paper_spread;
    "corpus" "query_spread" => corpus.query_spread;
    "corpus" "truth_threshold" => corpus.truth_threshold;
    "corpus" "citation_sharpness" => corpus.citation_sharpness;
    "env" "tau" => env.tau;
    "env" "k" => env.k;
    "env" "eta" => env.eta;
    "env" "l_expanded" => env.l_expanded;
    "env" "l_unexpanded" => env.l_unexpanded;
    "env" "stagnation_limit" => env.stagnation_limit;
    "env" "max_turns" => env.max_turns;
    "env" "max_calls" => env.max_calls;
    "env" "search_limit" => env.search_limit;
    "env" "n_seed" => env.n_seed;
    "policy" "hidden" => policy.hidden;
    "policy" "n_directions" => policy.n_directions;
    "policy" "search_mix" => policy.search_mix;
    "train" "algorithm" => train.algorithm;
    "train" "gamma" => train.gamma;
    "train" "lambda" => train.lambda;
    "train" "eps_low" => train.eps_low;
    "train" "eps_high" => train.eps_high;
    "train" "kl_coef" => train.kl_coef;
    "train" "actor_lr" => train.actor_lr;
    "train" "critic_lr" => train.critic_lr;
    "train" "episodes_per_batch" => train.episodes_per_batch;
    "train" "group_size" => train.group_size;
    "train" "pretrain_steps" => train.pretrain_steps;
    "train" "total_steps" => train.total_steps;
    "train" "update_epochs" => train.update_epochs;
    "train" "n_train_queries" => train.n_train_queries;
    "train" "record_wall_time" => train.record_wall_time;
    "run" "seeds" => seeds;
    "run" "eval_seed" => eval_seed;
}
