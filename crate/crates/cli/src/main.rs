use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lane_cli::{
    cmd_eval, cmd_prepare, cmd_synth, cmd_train, read_train_config, DevSampling, EvalArgs, InputError, PrepareArgs,
    SynthArgs, TrainArgs,
};
use lane_core::corpus::{SynthConfig, DEFAULT_CAP_PER_LEMMA, DEFAULT_DEV_SIZE};
use lane_core::train::TrainConfig;

/// Contrastive word-in-context training with scheduled lexical adversarial negatives.
#[derive(Parser, Debug)]
#[command(name = "lane", version)]
struct Cli {
    /// Seed for every random choice of the command (overrides config files).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic sense-annotated usage file.
    Synth(SynthCli),
    /// Build contrastive pairs and split them into train/dev/test.
    Prepare(PrepareCli),
    /// Train an encoder with dev-based model selection.
    Train(TrainCli),
    /// Evaluate a checkpoint on a pair file.
    Eval(EvalCli),
}

#[derive(Args, Debug)]
struct SynthCli {
    /// JSON file with corpus settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_lemmas: Option<usize>,
    #[arg(long)]
    senses_per_lemma: Option<usize>,
    #[arg(long)]
    contexts_per_sense: Option<usize>,
    #[arg(long)]
    ambiguity: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PrepareCli {
    /// Usage file (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Maximum pairs per lemma and part of speech; 0 keeps every pair.
    #[arg(long, default_value_t = DEFAULT_CAP_PER_LEMMA)]
    cap: usize,
    #[arg(long, default_value_t = DEFAULT_DEV_SIZE)]
    dev_size: usize,
    /// Draw dev as whole lemmas instead of individual pairs.
    #[arg(long)]
    dev_by_lemma: bool,
}

#[derive(Args, Debug)]
struct TrainCli {
    /// Directory holding train.jsonl and dev.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run config (JSON); absent fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Re-tune the decision threshold on this pair file.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Baseline checkpoint to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn echo_config<T: serde::Serialize>(config: &T) -> Result<()> {
    eprintln!("effective config:\n{}", serde_json::to_string_pretty(config)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Synth(a) => {
            let mut config = match &a.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| InputError(format!("{}: {e}", path.display())))?
                }
                None => SynthConfig::default(),
            };
            config.n_lemmas = a.n_lemmas.unwrap_or(config.n_lemmas);
            config.senses_per_lemma = a.senses_per_lemma.unwrap_or(config.senses_per_lemma);
            config.contexts_per_sense = a.contexts_per_sense.unwrap_or(config.contexts_per_sense);
            config.ambiguity = a.ambiguity.unwrap_or(config.ambiguity);
            config.seed = cli.seed.unwrap_or(config.seed);
            echo_config(&config)?;
            cmd_synth(&SynthArgs { config, out: a.out })
        }
        Command::Prepare(a) => {
            let args = PrepareArgs {
                usages: a.input,
                out: a.out,
                cap_per_lemma: (a.cap > 0).then_some(a.cap),
                dev_size: a.dev_size,
                dev_sampling: if a.dev_by_lemma { DevSampling::Lemmas } else { DevSampling::Pairs },
                seed: cli.seed.unwrap_or(0),
            };
            echo_config(&args)?;
            cmd_prepare(&args).map(|_| ())
        }
        Command::Train(a) => {
            let mut config = match &a.config {
                Some(path) => read_train_config(path)?,
                None => TrainConfig::default(),
            };
            config.seed = cli.seed.unwrap_or(config.seed);
            echo_config(&config)?;
            let summary = cmd_train(&TrainArgs { data: a.data, out: a.out.clone(), config, config_path: a.config })?;
            println!("best epoch {} threshold {}", summary.best_epoch, summary.threshold);
            Ok(())
        }
        Command::Eval(a) => {
            let metrics = cmd_eval(&EvalArgs {
                checkpoint: a.checkpoint,
                pairs: a.pairs,
                out: a.out,
                dev: a.dev,
                baseline: a.baseline,
                seed: cli.seed.unwrap_or(0),
            })?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANE_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
