//! `auxline`: ingest, perturb, score, sft, train, eval and report.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "auxline",
    version,
    about = "Auxiliary-line reasoning: data pipeline, GRPO trainer and evaluator"
)]
pub struct Cli {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build records, rejects, SFT examples and scenes from a fixture corpus.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Build gold and perturbed supervision triplets.
    Perturb {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        negatives: Option<usize>,
    },
    /// Re-judge supervision triplets with the oracle; one judge line each.
    Score {
        #[arg(long)]
        triplets: Option<PathBuf>,
    },
    /// Supervised stage only.
    Sft {
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Supervised stage (unless disabled) followed by GRPO.
    Train {
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Skip the supervised stage.
        #[arg(long)]
        no_sft: bool,
    },
    /// Pass@1 / Pass@5 on the task set.
    Eval {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Evaluate the untrained initial policy instead of a checkpoint.
        #[arg(long, conflicts_with = "policy")]
        init: bool,
    },
    /// Summarize the run directory.
    Report,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Some(Command::Ingest { corpus: Some(c) }) => cfg.ingest.corpus = c.clone(),
        Some(Command::Perturb {
            records,
            scenes,
            negatives,
        }) => {
            if let Some(r) = records {
                cfg.perturb.records = r.clone();
            }
            if let Some(s) = scenes {
                cfg.perturb.scenes = s.clone();
            }
            if let Some(n) = negatives {
                cfg.perturb.per_gold_negatives = *n;
            }
        }
        Some(Command::Score { triplets: Some(t) }) => cfg.score.triplets = t.clone(),
        Some(Command::Sft { tasks: Some(t) }) => cfg.tasks.file = t.clone(),
        Some(Command::Train { tasks, no_sft }) => {
            if let Some(t) = tasks {
                cfg.tasks.file = t.clone();
            }
            if *no_sft {
                cfg.train.sft_first = false;
            }
        }
        Some(Command::Eval { policy, tasks, .. }) => {
            if let Some(p) = policy {
                cfg.eval.policy = p.clone();
            }
            if let Some(t) = tasks {
                cfg.tasks.file = t.clone();
            }
        }
        _ => {}
    }
    cfg.grpo.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    commands::snapshot_config(&cfg, cli.config.as_deref())?;
    commands::dispatch(command, &cfg, cli.format)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
