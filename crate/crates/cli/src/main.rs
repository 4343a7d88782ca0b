use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hvla_cli::stages::{default_out, inspect};
use hvla_cli::{run, CliError, Command, EvalPolicy, PipelineConfig};

#[derive(Parser)]
#[command(name = "hvla", version, about = "Toy humanoid VLA pipeline: data, tokenizer, training, scheduling, evaluation")]
struct Cli {
    /// Pipeline config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding datasets, checkpoints and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, `section.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate demonstrations and fit normalization statistics.
    Gendata,
    /// Fit the action tokenizer on task-space actions.
    FitTokenizer,
    /// Next-token pretraining of the context encoder.
    Pretrain,
    /// Train the action expert on every task with the encoder frozen.
    Posttrain,
    /// Finetune the action expert on one task.
    Finetune,
    /// Sweep the chunk scheduler over latency, s_min and horizon.
    BenchRtc,
    /// Closed-loop evaluation.
    Eval {
        #[arg(long, value_enum, default_value = "expert")]
        policy: PolicyArg,
        /// Task id (defaults to the finetuning task).
        #[arg(long)]
        task: Option<u32>,
    },
    /// Print the header of a dataset, checkpoint or report.
    Inspect { path: PathBuf },
    /// Print the resolved config.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Expert,
    Untrained,
    Oracle,
    Zeros,
}

/// Stdout line; a closed pipe is not an error.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut config = base.with_overrides(&cli.set)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let command = match &cli.command {
        Cmd::Inspect { path } => {
            say(&serde_json::to_string_pretty(&inspect(path)?).map_err(CliError::internal)?);
            return Ok(());
        }
        Cmd::Config => {
            say(&resolve(&cli)?.to_json_pretty());
            return Ok(());
        }
        Cmd::Gendata => Command::Gendata,
        Cmd::FitTokenizer => Command::FitTokenizer,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Posttrain => Command::Posttrain,
        Cmd::Finetune => Command::Finetune,
        Cmd::BenchRtc => Command::BenchRtc,
        Cmd::Eval { policy, task } => {
            let policy = match policy {
                PolicyArg::Expert => EvalPolicy::Expert,
                PolicyArg::Untrained => EvalPolicy::Untrained,
                PolicyArg::Oracle => EvalPolicy::Oracle,
                PolicyArg::Zeros => EvalPolicy::Zeros,
            };
            Command::Eval { policy, task: *task }
        }
    };
    let config = resolve(&cli)?;
    let out = cli.out.clone().unwrap_or_else(default_out);
    let outcome = run(&command, &config, &out)?;
    for line in outcome.summary {
        say(&line);
    }
    say(&format!("manifest: {}", out.join(&config.paths.reports).join(format!("{}.manifest.json", command.name())).display()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
