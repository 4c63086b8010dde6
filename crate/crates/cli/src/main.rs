mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fms_core::model::Split;

use commands::ExportKind;
use config::RunConfig;
use error::CliError;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Knowledge graph completion with flow-modulated scoring.
#[derive(Parser, Debug)]
#[command(name = "fms", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model, save the best checkpoint and report test metrics.
    Train(RunArgs),
    /// Evaluate a checkpoint on a split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Write case-study CSVs from a checkpoint.
    Export {
        #[arg(value_enum)]
        kind: ExportKind,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "test")]
        split: Split,
    },
}

/// Flags shared by every command. They override values from `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train.txt, valid.txt and test.txt.
    #[arg(long)]
    dataset: Option<String>,
    /// relation | entity
    #[arg(long)]
    task: Option<String>,
    /// transductive | inductive
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    hops: Option<String>,
    #[arg(long)]
    topk: Option<String>,
    #[arg(long)]
    neighbor_samples: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    /// Energy temperature.
    #[arg(long)]
    temperature: Option<String>,
    /// Path noise standard deviation.
    #[arg(long)]
    sigma: Option<String>,
    /// Weight of the flow-matching loss.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// paired | ot
    #[arg(long)]
    coupling: Option<String>,
    /// midpoint | mc:<samples>
    #[arg(long)]
    inference: Option<String>,
    /// none | no-topk | no-energy-score | no-flow
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Checkpoint path; defaults to <out>/model.fms.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Largest number of ranked entity candidates per query.
    #[arg(long)]
    candidate_cap: Option<String>,
    /// Corrupted candidates per entity query in training.
    #[arg(long)]
    negatives: Option<String>,
    /// Validation queries per epoch, or `all`.
    #[arg(long)]
    valid_queries: Option<String>,
    /// attention | mean | concat_mlp
    #[arg(long)]
    aggregator: Option<String>,
    /// true | false
    #[arg(long)]
    cfm_stop_gradient: Option<String>,
    /// parallel | sequential
    #[arg(long)]
    exec: Option<String>,
    #[arg(long)]
    category_threshold: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("dataset", &self.dataset),
            ("task", &self.task),
            ("setting", &self.setting),
            ("dim", &self.dim),
            ("hops", &self.hops),
            ("topk", &self.topk),
            ("neighbor_samples", &self.neighbor_samples),
            ("heads", &self.heads),
            ("temperature", &self.temperature),
            ("sigma", &self.sigma),
            ("lambda", &self.lambda),
            ("lr", &self.lr),
            ("l2", &self.l2),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("coupling", &self.coupling),
            ("inference", &self.inference),
            ("ablation", &self.ablation),
            ("seed", &self.seed),
            ("out", &self.out),
            ("checkpoint", &self.checkpoint),
            ("candidate_cap", &self.candidate_cap),
            ("negatives", &self.negatives),
            ("valid_queries", &self.valid_queries),
            ("aggregator", &self.aggregator),
            ("cfm_stop_gradient", &self.cfm_stop_gradient),
            ("exec", &self.exec),
            ("category_threshold", &self.category_threshold),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.finalize();
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => commands::cmd_train(&args.resolve()?),
        Command::Eval { run, split } => commands::cmd_eval(&run.resolve()?, split),
        Command::Export { kind, run, split } => commands::cmd_export(&run.resolve()?, kind, split),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
