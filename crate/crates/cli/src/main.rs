use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod context;

use context::Context;

#[derive(Parser, Debug)]
#[command(name = "farm", version, about = "Drift-aware family classification on learned embeddings")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed (and the scenario seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Abort on the first malformed row or infeasible request instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,
    /// Compute and report, but write no files.
    #[arg(long, global = true)]
    read_only: bool,
    /// Write machine-readable results (JSON, or JSON lines for `stream`) here.
    #[arg(long, global = true)]
    json_out: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the default configuration document.
    DefaultConfig,
    /// Write synthetic train/evolved/unseen CSV files from the `[scenario]` section.
    GenerateScenario {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit preprocessing, train the autoencoder, cluster, and write a checkpoint.
    Train {
        /// Labeled training CSV.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the held-out split as CSV.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Classify rows in order, adapting to drift; writes a resumable snapshot.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Final state snapshot (default: `<checkpoint>.snapshot.json`).
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Continue from a snapshot written by an earlier run on the same stream.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Original training CSV; enables retraining when a novel family fills up.
        #[arg(long)]
        train_data: Option<PathBuf>,
    },
    /// Score a labeled CSV against a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
    },
    /// N-way K-shot episodic accuracy on checkpoint embeddings.
    Episodes {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides `episodes.n_way`.
        #[arg(long, value_delimiter = ',')]
        n_way: Vec<usize>,
        /// Overrides `episodes.k_shot`.
        #[arg(long, value_delimiter = ',')]
        k_shot: Vec<usize>,
        /// Overrides `episodes.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Write id, family and latent coordinates for every row.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Held-out samples of known families: precision, recall, F1.
    Testing,
    /// Shifted samples of known families: grouped drift table.
    Evolved,
    /// Samples of families absent from training: per-family drift rate.
    Unseen,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", farm_core::config::DEFAULT_CONFIG_TOML);
        return Ok(());
    }
    let ctx = Context::new(cli.config.as_deref(), cli.seed, cli.strict, cli.read_only, cli.json_out)?;
    ctx.print_effective_config()?;
    match cli.command {
        Command::DefaultConfig => unreachable!(),
        Command::GenerateScenario { out_dir } => commands::scenario::run(&ctx, &out_dir),
        Command::Train { data, out, test_out } => commands::train::run(&ctx, &data, &out, test_out.as_deref()),
        Command::Stream {
            checkpoint,
            data,
            snapshot,
            resume,
            train_data,
        } => commands::stream::run(
            &ctx,
            &commands::stream::Args {
                checkpoint,
                data,
                snapshot,
                resume,
                train_data,
            },
        ),
        Command::Evaluate { checkpoint, data, mode } => commands::evaluate::run(&ctx, &checkpoint, &data, mode),
        Command::Episodes {
            checkpoint,
            data,
            n_way,
            k_shot,
            episodes,
        } => commands::episodes::run(&ctx, &checkpoint, &data, &n_way, &k_shot, episodes),
        Command::ExportEmbeddings { checkpoint, data, out } => commands::export::run(&ctx, &checkpoint, &data, &out),
    }
}
