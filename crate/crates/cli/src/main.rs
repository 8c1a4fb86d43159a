mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::{RunConfig, SEED_ENV};
use rose_core::windowing::Aggregation;

/// Recommends a refactoring (Extract Method, Move Class, Pull Up Method) for
/// a code snippet, and trains and evaluates the classifier behind it.
#[derive(Debug, Parser)]
#[command(name = "rose", version)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set model.d_model=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Labeled corpus (TSV: code, label[, project]).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Undersample every label to the minority count first.
    #[arg(long)]
    balance: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a TSV corpus, print label counts, optionally write it back normalized.
    Ingest {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write a template-generated corpus.
    Synth {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on an 80/10/10 split and evaluate on the test part.
    Train(RunArgs),
    /// Random search over learning rate, batch size and weight decay.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Evaluate a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to the vocabulary next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value = "mean_logits")]
        aggregation: Aggregation,
    },
    /// Stratified (or project-grouped) k-fold cross-validation.
    Kfold {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Keep all samples of a project in the same fold.
        #[arg(long)]
        grouped: bool,
    },
    /// Recommend a refactoring for one code file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        code: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// god_class, cyclic_dependency or hub_like_dependency.
        #[arg(long)]
        smell: Option<String>,
        #[arg(long, default_value = "mean_logits")]
        aggregation: Aggregation,
    },
    /// Metrics of a published baseline confusion matrix (codebert or codet5).
    Reference {
        baseline: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn base_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(CliError::Input)?;
    }
    cfg.apply_env_seed(std::env::var(SEED_ENV).ok())
        .map_err(CliError::Input)?;
    cfg.apply_overrides(&cli.overrides).map_err(CliError::Input)?;
    Ok(cfg)
}

fn apply_run_args(cfg: &mut RunConfig, a: &RunArgs) {
    if let Some(v) = &a.corpus {
        cfg.corpus = Some(v.clone());
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    cfg.balance |= a.balance;
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.train.weight_decay = v;
    }
    if let Some(v) = a.patience {
        cfg.train.early_stop_patience = v;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = base_config(&cli)?;
    let validated = |cfg: &mut RunConfig, a: &RunArgs| {
        apply_run_args(cfg, a);
        cfg.validate().map_err(CliError::Input)
    };
    match &cli.command {
        Command::Ingest { input, output } => commands::cmd_ingest(input, output.as_deref()),
        Command::Synth {
            output,
            per_class,
            seed,
        } => commands::cmd_synth(output, *per_class, seed.unwrap_or(cfg.train.seed)),
        Command::Train(a) => {
            validated(&mut cfg, a)?;
            commands::cmd_train(&cfg)
        }
        Command::Search { run, budget } => {
            if let Some(b) = budget {
                cfg.search.budget = *b;
            }
            validated(&mut cfg, run)?;
            cfg.search.validate().map_err(|e| CliError::Input(e.to_string()))?;
            commands::cmd_search(&cfg)
        }
        Command::Eval {
            checkpoint,
            corpus,
            vocab,
            out_dir,
            aggregation,
        } => commands::cmd_eval(checkpoint, corpus, vocab.as_deref(), out_dir.as_deref(), *aggregation),
        Command::Kfold { run, k, grouped } => {
            if let Some(k) = k {
                cfg.k = *k;
            }
            cfg.grouped |= grouped;
            validated(&mut cfg, run)?;
            commands::cmd_kfold(&cfg)
        }
        Command::Predict {
            checkpoint,
            code,
            vocab,
            smell,
            aggregation,
        } => commands::cmd_predict(checkpoint, code, vocab.as_deref(), smell.as_deref(), *aggregation),
        Command::Reference { baseline, out_dir } => commands::cmd_reference(baseline, out_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
