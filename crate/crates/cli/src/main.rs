use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use punet::model::FineTuneMode;
use punet::train::TrainingStrategy;
use punet_cli::commands::{self, AblationKind, Domain};
use punet_cli::{CliError, RunConfig, SEED_ENV};

/// Rater-prompted U-Net: synthetic data, pretraining, prompt fine-tuning,
/// evaluation and ablations.
///
/// Exit codes: 0 success, 2 configuration or contract error, 3 numeric
/// failure, 4 I/O or file-format error.
#[derive(Parser, Debug)]
#[command(name = "punet", version)]
struct Cli {
    /// JSON run configuration; keys not given fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config file and PUNET_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data generation and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-rater dataset.
    Synth {
        #[arg(long, value_enum, default_value = "source")]
        domain: Domain,
        /// Output directory [default: <data_dir>/<domain>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every parameter on source-domain majority-vote labels.
    Pretrain {
        /// Source dataset [default: <data_dir>/source].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory [default: <pretrain_dir>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop before this epoch and save a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Continue the session saved in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Adapt a checkpoint to target-domain multi-rater labels.
    Finetune {
        /// Pretrained checkpoint [default: <pretrain_dir>].
        #[arg(long)]
        from: Option<PathBuf>,
        /// Target training set [default: <data_dir>/target/train].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory [default: <finetune_dir>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// full, head or prompt [default: config `mode`].
        #[arg(long)]
        mode: Option<FineTuneMode>,
        /// individual, fusion, mix or label_sampling [default: config `strategy`].
        #[arg(long)]
        strategy: Option<TrainingStrategy>,
        /// Stop before this epoch and save a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Continue the session saved in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score every prompt against every label source on a test set.
    Eval {
        /// Checkpoint [default: <finetune_dir>].
        #[arg(long)]
        from: Option<PathBuf>,
        /// Test set [default: <data_dir>/target/test].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory [default: <report_dir>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare insertion schemes or training strategies over seeds.
    Ablate {
        #[arg(value_enum)]
        kind: AblationKind,
        /// Comma-separated seeds [default: config `ablation_seeds`].
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Report directory [default: <report_dir>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = cfg.resolve_seed(cli.seed, env.as_deref())?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| punet::Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let or = |p: Option<PathBuf>, d: PathBuf| p.unwrap_or(d);
    match cli.command {
        Command::Synth { domain, out } => {
            let sub = match domain {
                Domain::Source => "source",
                Domain::Target => "target",
            };
            commands::cmd_synth(&cfg, domain, &or(out, cfg.data_dir.join(sub)))
        }
        Command::Pretrain {
            data,
            out,
            stop_after,
            resume,
        } => commands::cmd_pretrain(
            &cfg,
            &or(data, cfg.data_dir.join("source")),
            &or(out, cfg.pretrain_dir.clone()),
            stop_after,
            resume,
        ),
        Command::Finetune {
            from,
            data,
            out,
            mode,
            strategy,
            stop_after,
            resume,
        } => {
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            commands::cmd_finetune(
                &cfg,
                &or(from, cfg.pretrain_dir.clone()),
                &or(data, cfg.data_dir.join("target/train")),
                &or(out, cfg.finetune_dir.clone()),
                cfg.mode,
                cfg.strategy,
                stop_after,
                resume,
            )
        }
        Command::Eval { from, data, out } => commands::cmd_eval(
            &cfg,
            &or(from, cfg.finetune_dir.clone()),
            &or(data, cfg.data_dir.join("target/test")),
            &or(out, cfg.report_dir.clone()),
        ),
        Command::Ablate { kind, seeds, out } => {
            if let Some(s) = seeds {
                cfg.ablation_seeds = s;
            }
            commands::cmd_ablate(&cfg, kind, &cfg.ablation_seeds, &or(out, cfg.report_dir.clone()))
        }
        Command::Gradcheck => commands::cmd_gradcheck(seed).map(|(text, _)| text),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
