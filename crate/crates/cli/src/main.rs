mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Warm-start workflow for graph-based recommenders: train a model, fold in
/// warm users, evaluate ranking quality, and benchmark update latency.
#[derive(Parser)]
#[command(name = "warmfold", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file (`key = value` lines; see README).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.rank=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `dataset.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Shorthand for `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shorthand for `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, split, train, and persist the model container.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Update every warm user's embedding with each configured strategy.
    Foldin {
        #[command(flatten)]
        common: Common,
        /// Model container (defaults to `<output.dir>/model.bin`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Rank test users against fold-in outputs and emit the metric table.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory holding `foldin_<strategy>.emb` files (defaults to
        /// `output.dir`).
        #[arg(long)]
        foldin_dir: Option<PathBuf>,
    },
    /// Time per-user updates over synthetic catalogues and fit the scaling
    /// exponent.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Print a model container's header and verify its checksum.
    Inspect { model: PathBuf },
}

fn build_config(common: &Common) -> warmfold::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &common.data {
        config.dataset = data.clone();
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.set("seed", &seed.to_string())?;
    }
    let overrides: Vec<(String, String)> = common
        .sets
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| {
                    warmfold::Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}"))
                })
        })
        .collect::<warmfold::Result<_>>()?;
    config.apply_overrides(&overrides)?;
    Ok(config)
}

fn run() -> warmfold::Result<()> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap usage errors (and --help/--version) handle their own output
        e.print().ok();
        std::process::exit(if e.use_stderr() { 1 } else { 0 });
    });
    let cli = match cli {
        Ok(c) => c,
        Err(_) => unreachable!("exited above"),
    };

    match cli.command {
        Command::Train { common } => {
            let config = build_config(&common)?;
            commands::cmd_train(&config)
        }
        Command::Foldin { common, model } => {
            let config = build_config(&common)?;
            let model_path = commands::resolve_paths(&config, model);
            commands::cmd_foldin(&config, &model_path)
        }
        Command::Eval {
            common,
            model,
            foldin_dir,
        } => {
            let config = build_config(&common)?;
            let model_path = commands::resolve_paths(&config, model);
            let foldin = foldin_dir.unwrap_or_else(|| config.out_dir.clone());
            commands::cmd_eval(&config, &model_path, &foldin)
        }
        Command::Bench { common } => {
            let config = build_config(&common)?;
            commands::cmd_bench(&config)
        }
        Command::Inspect { model } => commands::cmd_inspect(&model),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err) as u8)
        }
    }
}
