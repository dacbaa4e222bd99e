use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ptune::{
    cmd_ablate, cmd_adapt, cmd_eval, cmd_gen, cmd_pretrain, cmd_rescore, saved_strategies, ExperimentConfig, GenRequest,
};
use ptune_core::adapt::{AdaptStrategy, InitMode};
use ptune_core::table::fmt_real;

#[derive(Parser)]
#[command(name = "ptune", version, about = "Soft prompt-tuning experiments at desk scale")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Refuse artifacts trained against a different base checkpoint.
    #[arg(long, global = true)]
    strict_hash: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    None,
    PromptTune,
    FineTune,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus from a grammar plus a synthetic n-best file.
    Gen {
        /// Shipped grammar name or grammar JSON file.
        #[arg(long)]
        grammar: String,
        /// Number of sentences.
        #[arg(long, short = 'n')]
        count: usize,
        #[arg(long)]
        confusion: Option<String>,
        #[arg(long, default_value_t = 10)]
        n_hyps: usize,
        #[arg(long, default_value_t = 0.5)]
        noise_sd: f64,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Train the generic base model.
    Pretrain,
    /// Adapt the base model with one strategy.
    Adapt {
        #[arg(long, value_enum)]
        strategy: Kind,
        #[arg(long)]
        prompt_size: Option<usize>,
        /// Prompt initialization; the config's otherwise.
        #[arg(long)]
        init: Option<String>,
    },
    /// Test perplexity of the base model and all saved artifacts.
    Eval,
    /// Prompt-size sweep against no adaptation and fine tuning.
    Ablate,
    /// N-best rescoring with the base and prompt-tuned models.
    Rescore,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.strict_hash |= cli.strict_hash;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Gen {
            grammar,
            count,
            confusion,
            n_hyps,
            noise_sd,
            stopwords,
        } => {
            let req = GenRequest {
                grammar: grammar.clone(),
                count: *count,
                seed: cli.seed.unwrap_or(0),
                out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
                confusion: confusion.clone(),
                n_hyps: *n_hyps,
                noise_sd: *noise_sd,
                stopwords: stopwords.clone(),
            };
            let out = cmd_gen(&req)?;
            println!("corpus {}", out.corpus.display());
            if let Some(p) = out.nbest {
                println!("n-best {}", p.display());
            }
        }
        Command::Pretrain => {
            let cfg = load_config(&cli)?;
            let out = cmd_pretrain(&cfg)?;
            let last = out.report.train_loss_trace.last().copied().unwrap_or(f64::NAN);
            println!("{}  {}", out.digest, out.checkpoint.display());
            println!("final train loss {}", fmt_real(last));
        }
        Command::Adapt {
            strategy,
            prompt_size,
            init,
        } => {
            let cfg = load_config(&cli)?;
            let strategy = match strategy {
                Kind::None => AdaptStrategy::None,
                Kind::FineTune => AdaptStrategy::FineTune,
                Kind::PromptTune => {
                    let init = match init {
                        Some(name) => serde_json::from_value::<InitMode>(serde_json::Value::String(name.clone()))
                            .with_context(|| format!("unknown prompt init {name}"))?,
                        None => cfg.adaptation.prompt_init,
                    };
                    AdaptStrategy::PromptTune {
                        prompt_size: prompt_size.context("prompt_tune needs --prompt-size")?,
                        init,
                    }
                }
            };
            let (_, row) = cmd_adapt(&cfg, &strategy)?;
            println!("{} test ppl {}", row.strategy.label(), fmt_real(row.test.perplexity));
        }
        Command::Eval => {
            let cfg = load_config(&cli)?;
            for row in cmd_eval(&cfg, &saved_strategies(&cfg))? {
                println!("{} test ppl {}", row.strategy.label(), fmt_real(row.test.perplexity));
            }
        }
        Command::Ablate => {
            let cfg = load_config(&cli)?;
            let out = cmd_ablate(&cfg)?;
            print!("{}", out.csv);
            return Ok(out.error_count == 0);
        }
        Command::Rescore => {
            let cfg = load_config(&cli)?;
            print!("{}", cmd_rescore(&cfg)?.csv);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
