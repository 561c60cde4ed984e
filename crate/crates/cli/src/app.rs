//! Subcommand dispatch. Every file a command writes lives under `--out`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use scout_core::config::{ExperimentConfig, Preset};
use scout_core::corpus::{build_corpus, Corpus};
use scout_core::eval::{efficiency_curve, evaluate, macro_average, write_eval_csv, EpisodeLog};
use scout_core::nn::{read_checkpoint, write_checkpoint};
use scout_core::policy::{Actor, FeatureLayout, Vocabulary};
use scout_core::pspo::{train, Algorithm};
use scout_core::rollout::{configure_threads_from_env, RolloutContext};

use crate::compare::{compare, DEFAULT_WINDOW};
use crate::error::{CliError, CliResult};
use crate::plot::{recall_panel, render_svg, training_panels};
use crate::tables::{list_csv, read_curves, read_metrics, CURVES_HEADER};

#[derive(Debug, Parser)]
#[command(
    name = "scout-sim",
    version,
    about = "Synthetic scholarly-search agent: corpus generation, training, evaluation, charts"
)]
pub struct Cli {
    /// Config file of `key = value` lines grouped in `[section]`s.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Training seed; repeat for several runs. Overrides the config.
    #[arg(long = "seed", global = true)]
    pub seeds: Vec<u64>,
    /// pspo, ppo_token, gspo or pspo_star. Overrides the config.
    #[arg(long, global = true)]
    pub algo: Option<String>,
    /// Base values that the config file overrides.
    #[arg(long, global = true, default_value = "toy")]
    pub preset: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic corpus.
    GenCorpus,
    /// Train one algorithm on every seed.
    Train,
    /// Greedy evaluation of trained actors on the held-out queries.
    Eval,
    /// Render charts from the CSVs in the output directory.
    Plot,
    /// Summarize metrics CSVs of two or more algorithms.
    Compare {
        /// Metrics CSVs; defaults to every `metrics-*.csv` in the output directory.
        files: Vec<PathBuf>,
        /// Trailing steps averaged for the final-window return.
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Plot => "plot",
            Command::Compare { .. } => "compare",
        }
    }
}

/// Resolves preset, config file and flag overrides into one config.
pub fn resolve_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let preset: Preset = cli.preset.parse()?;
    let mut cfg = ExperimentConfig::preset(preset);
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.clone(),
            source,
        })?;
        cfg.apply_text(&text)?;
    }
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    if let Some(algo) = &cli.algo {
        cfg.train.algorithm = algo.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Text of a run manifest. It is itself a valid config file: the
/// descriptive header is commented out and the resolved config follows.
pub fn manifest_text(cli: &Cli, cfg: &ExperimentConfig) -> String {
    let mut out = String::from("# scout-sim run manifest\n");
    let config_path = cli
        .config
        .as_ref()
        .map_or("(none)".to_string(), |p| p.display().to_string());
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    for (k, v) in [
        ("command", cli.command.name().to_string()),
        ("build", format!("scout-sim {}", env!("CARGO_PKG_VERSION"))),
        ("config_path", config_path),
        ("preset", cli.preset.clone()),
        ("out_dir", cli.out.display().to_string()),
        ("seeds", seeds.join(",")),
    ] {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push('\n');
    out.push_str(&cfg.to_text());
    out
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| scout_core::Error::io(path, e).into())
}

fn prepare_out(cli: &Cli) -> CliResult<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| scout_core::Error::io(&cli.out, e).into())
}

fn write_manifest(cli: &Cli, cfg: &ExperimentConfig, tag: &str) -> CliResult<PathBuf> {
    prepare_out(cli)?;
    let path = cli.out.join(format!("manifest-{tag}.txt"));
    write_file(&path, &manifest_text(cli, cfg))?;
    Ok(path)
}

fn run_name(algo: Algorithm, seed: u64) -> String {
    format!("{algo}-seed{seed}")
}

fn policy_parts(cfg: &ExperimentConfig) -> (FeatureLayout, Vocabulary) {
    (
        FeatureLayout::from_env(&cfg.env),
        Vocabulary {
            n_directions: cfg.policy.n_directions,
            n_slots: cfg.env.l_unexpanded,
        },
    )
}

fn gen_corpus(cli: &Cli, cfg: &ExperimentConfig) -> CliResult<()> {
    write_manifest(cli, cfg, "gen-corpus")?;
    let corpus = build_corpus(&cfg.corpus)?;
    let path = cli.out.join("corpus.txt");
    corpus.write_to(&path)?;
    println!(
        "wrote {} ({} papers, {} queries)",
        path.display(),
        corpus.papers.len(),
        corpus.queries.len()
    );
    Ok(())
}

fn train_all(cli: &Cli, cfg: &ExperimentConfig) -> CliResult<()> {
    let algo = cfg.train.algorithm;
    write_manifest(cli, cfg, &format!("train-{algo}"))?;
    let corpus = build_corpus(&cfg.corpus)?;
    for &seed in &cfg.seeds {
        let outcome = train(&corpus, &cfg.env, &cfg.policy, &cfg.train, seed)?;
        let name = run_name(algo, seed);
        outcome
            .metrics
            .write_csv(&cli.out.join(format!("metrics-{name}.csv")))?;
        let steps = cfg.train.total_steps as u64;
        write_checkpoint(
            &cli.out.join(format!("actor-{name}.ckpt")),
            &outcome.actor.params,
            steps,
        )?;
        write_checkpoint(
            &cli.out.join(format!("critic-{name}.ckpt")),
            &outcome.critic.params,
            steps,
        )?;
        let last = outcome
            .metrics
            .rows
            .last()
            .map_or(f64::NAN, |r| r.mean_return);
        println!(
            "{name}: {} steps, last mean return {last:.4}, ratio clamps {}",
            outcome.metrics.rows.len(),
            outcome.ratio_clamps
        );
    }
    Ok(())
}

fn load_actor(path: &Path, cfg: &ExperimentConfig) -> CliResult<Actor> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "checkpoint {} not found (run `train` first)",
            path.display()
        )));
    }
    let (params, _) = read_checkpoint(path)?;
    let (layout, vocab) = policy_parts(cfg);
    Ok(Actor::from_params(
        layout.len(),
        cfg.policy.hidden,
        vocab,
        cfg.env.max_calls,
        params,
    )?)
}

fn eval_all(cli: &Cli, cfg: &ExperimentConfig) -> CliResult<()> {
    let algo = cfg.train.algorithm;
    let queries: Vec<usize> = cfg.eval_queries().collect();
    if queries.is_empty() {
        return Err(scout_core::Error::config(
            "n_train_queries",
            "leaves no held-out queries to evaluate",
        )
        .into());
    }
    write_manifest(cli, cfg, &format!("eval-{algo}"))?;
    let corpus: Corpus = build_corpus(&cfg.corpus)?;
    let (layout, _) = policy_parts(cfg);
    let ctx = RolloutContext {
        corpus: &corpus,
        env: &cfg.env,
        layout: &layout,
        search_mix: cfg.policy.search_mix,
        temperature: 0.0,
    };
    for &seed in &cfg.seeds {
        let name = run_name(algo, seed);
        let actor = load_actor(&cli.out.join(format!("actor-{name}.ckpt")), cfg)?;
        let (rows, trajectories) = evaluate(&ctx, &actor, &queries, algo.name(), cfg.eval_seed)?;
        write_eval_csv(&cli.out.join(format!("eval-{name}.csv")), &rows)?;

        let mut curves = format!("{CURVES_HEADER}\n");
        for (q, traj) in queries.iter().zip(&trajectories) {
            for (calls, recall) in
                efficiency_curve(&EpisodeLog::from(traj), &corpus.query(*q)?.truth)?
            {
                let _ = writeln!(curves, "{algo},{seed},{q},{calls},{recall}");
            }
        }
        write_file(&cli.out.join(format!("curves-{name}.csv")), &curves)?;

        if let Some((prf, recall)) = macro_average(&rows) {
            println!(
                "{name}: precision {:.4} recall {:.4} f1 {:.4} recall@5 {:.4} recall@10 {:.4} recall@25 {:.4} recall@all {:.4}",
                prf.precision, prf.recall, prf.f1, recall[0], recall[1], recall[2], recall[3]
            );
        }
    }
    Ok(())
}

fn read_all_metrics(paths: &[PathBuf]) -> CliResult<Vec<crate::tables::MetricsSeries>> {
    let mut out = Vec::new();
    for p in paths {
        if let Some(s) = read_metrics(p)? {
            out.push(s);
        }
    }
    Ok(out)
}

fn plot(cli: &Cli) -> CliResult<()> {
    let metrics = list_csv(&cli.out, "metrics-")?;
    let curves = list_csv(&cli.out, "curves-")?;
    if metrics.is_empty() && curves.is_empty() {
        return Err(CliError::Input(format!(
            "no metrics or curves CSVs in {}",
            cli.out.display()
        )));
    }
    if !metrics.is_empty() {
        let series = read_all_metrics(&metrics)?;
        let path = cli.out.join("training.svg");
        write_file(&path, &render_svg(&training_panels(&series)))?;
        println!("wrote {}", path.display());
    }
    if !curves.is_empty() {
        let mut points = Vec::new();
        for p in &curves {
            points.extend(read_curves(p)?);
        }
        let path = cli.out.join("recall_vs_calls.svg");
        write_file(&path, &render_svg(&[recall_panel(&points)]))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn compare_runs(cli: &Cli, files: &[PathBuf], window: usize) -> CliResult<()> {
    let paths = if files.is_empty() {
        list_csv(&cli.out, "metrics-")?
    } else {
        files.to_vec()
    };
    let series = read_all_metrics(&paths)?;
    print!("{}", compare(&series, window)?.render());
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    configure_threads_from_env()?;
    match &cli.command {
        Command::Plot => plot(cli),
        Command::Compare { files, window } => compare_runs(cli, files, *window),
        cmd => {
            let cfg = resolve_config(cli)?;
            match cmd {
                Command::GenCorpus => gen_corpus(cli, &cfg),
                Command::Train => train_all(cli, &cfg),
                _ => eval_all(cli, &cfg),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::parse_from(std::iter::once("scout-sim").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(
            &path,
            "[train]\ngamma = 0.9\nalgorithm = gspo\n[run]\nseeds = 4,5\n",
        )
        .unwrap();
        let c = cli(&[
            "train",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "--algo",
            "pspo_star",
        ]);
        let cfg = resolve_config(&c).unwrap();
        assert_eq!(cfg.train.gamma, 0.9);
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.train.algorithm, Algorithm::PspoStar);
    }

    #[test]
    fn manifest_parses_back_to_the_same_config() {
        let c = cli(&["train", "--preset", "paper", "--seed", "3"]);
        let cfg = resolve_config(&c).unwrap();
        let text = manifest_text(&c, &cfg);
        assert!(text.contains("# command = train"));
        assert_eq!(
            ExperimentConfig::from_text(Preset::Toy, &text).unwrap(),
            cfg
        );
    }

    #[test]
    fn exit_codes() {
        let bad_preset = resolve_config(&cli(&["train", "--preset", "huge"])).unwrap_err();
        assert_eq!(bad_preset.exit_code(), 2);
        let missing =
            resolve_config(&cli(&["train", "--config", "/nonexistent/x.conf"])).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
        assert!(missing.to_string().contains("/nonexistent/x.conf"));
        assert_eq!(CliError::Alignment("x".into()).exit_code(), 3);
    }
}
