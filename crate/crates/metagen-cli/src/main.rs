//! Command-line entry point tying the pipeline together: dataset synthesis,
//! marginal pretraining, multi-seed training, evaluation against freshly
//! sampled reference conditions, and cross-seed reporting.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 run failure. All
//! randomness flows from explicit `--seed` flags. `METAGEN_THREADS` caps the
//! training worker pool. A `--config` file supplies `key = value` defaults;
//! explicit flags win.

mod config_file;
mod eval;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use metagen::datagen::{Dataset, DatasetConfig, build_dataset, load_dataset, save_dataset};
use metagen::models::ModelKind;
use metagen::training::{
    ExperimentConfig, RunStatus, TrainConfig, prepare, run_experiment,
};

use config_file::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "metagen",
    about = "Nested-cylinder generative-design benchmark pipeline",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    /// Plain-text `key = value` config file; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset and write it as JSON Lines.
    GenData(GenDataArgs),
    /// Pretrain the four marginal VAEs only.
    TrainMarginals(TrainArgs),
    /// Pretrain marginals and train the selected models for every seed.
    Train(TrainArgs),
    /// Sample every trained model at held-out conditions and score it.
    Evaluate(EvalArgs),
    /// Aggregate evaluation CSVs across seeds and print ordering verdicts.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of records.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the JSON Lines file.
    #[arg(long)]
    out: PathBuf,
    /// Points per rendered circle (representation resolution).
    #[arg(long, default_value_t = 30)]
    n_points: usize,
    /// Shuffle the branch blocks before writing.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    shuffle: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset produced by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoints, logs, and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated model kinds (meta-vae, smvae, vanilla-vae, vanilla-gan).
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        "meta-vae".to_string(), "smvae".to_string(),
        "vanilla-vae".to_string(), "vanilla-gan".to_string()
    ])]
    models: Vec<String>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    marginal_epochs: usize,
    #[arg(long, default_value_t = 0)]
    marginal_seed: u64,
    /// Held-out fraction of the dataset used for validation curves.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory holding the manifest and checkpoints.
    #[arg(long)]
    runs: PathBuf,
    /// Output directory for evaluation CSVs.
    #[arg(long)]
    out: PathBuf,
    /// Held-out conditions (and reference systems) per model.
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    /// Bins per axis of the joint histograms.
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Seed of the held-out condition sampler and of model sampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also score the reference against itself and against a resample.
    #[arg(long, default_value_t = false)]
    reference_rows: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Evaluation directory produced by `evaluate`.
    #[arg(long)]
    eval: PathBuf,
    /// Where to write report.csv (defaults to the evaluation directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero unless the expected model orderings hold.
    #[arg(long, default_value_t = false)]
    assert_paper_ordering: bool,
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            // clap handles --help/--version as "errors" with zero exit
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match cli.command {
        Command::GenData(mut args) => {
            file.merge(&mut args.n, "n", sub)?;
            file.merge(&mut args.seed, "seed", sub)?;
            file.merge(&mut args.n_points, "n-points", sub)?;
            file.merge(&mut args.shuffle, "shuffle", sub)?;
            file.reject_unknown()?;
            cmd_gen_data(args)
        }
        Command::TrainMarginals(args) | Command::Train(args) => {
            let marginals_only = name == "train-marginals";
            let mut args = args;
            file.merge(&mut args.epochs, "epochs", sub)?;
            file.merge(&mut args.batch_size, "batch-size", sub)?;
            file.merge(&mut args.marginal_epochs, "marginal-epochs", sub)?;
            file.merge(&mut args.marginal_seed, "marginal-seed", sub)?;
            file.merge(&mut args.val_fraction, "val-fraction", sub)?;
            file.reject_unknown()?;
            cmd_train(args, marginals_only)
        }
        Command::Evaluate(mut args) => {
            file.merge(&mut args.samples, "samples", sub)?;
            file.merge(&mut args.bins, "bins", sub)?;
            file.merge(&mut args.seed, "seed", sub)?;
            file.merge(&mut args.reference_rows, "reference-rows", sub)?;
            file.reject_unknown()?;
            eval::cmd_evaluate(args)
        }
        Command::Report(args) => {
            file.reject_unknown()?;
            report::cmd_report(args)
        }
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Validation("--n must be at least 1".into()));
    }
    if args.n_points < 3 {
        return Err(CliError::Validation("--n-points must be at least 3".into()));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", parent.display())))?;
    }
    let cfg = DatasetConfig {
        n_records: args.n,
        seed: args.seed,
        n_points: args.n_points,
        shuffle: args.shuffle,
    };
    let ds = build_dataset(&cfg);
    save_dataset(&ds, &args.out).map_err(|e| CliError::Run(e.to_string()))?;
    println!("wrote {} records to {}", ds.records.len(), args.out.display());
    Ok(())
}

fn load_dataset_arg(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("dataset not found: {}", path.display())));
    }
    let outcome = load_dataset(path).map_err(|e| CliError::Validation(e.to_string()))?;
    for w in &outcome.warnings {
        eprintln!("warning: {}:{}: {}", path.display(), w.line, w.msg);
    }
    Ok(outcome.dataset)
}

fn worker_count() -> usize {
    match std::env::var("METAGEN_THREADS") {
        Ok(v) => v.parse().unwrap_or(1).max(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

fn cmd_train(args: TrainArgs, marginals_only: bool) -> Result<(), CliError> {
    let kinds: Vec<ModelKind> = if marginals_only {
        Vec::new()
    } else {
        args.models
            .iter()
            .map(|m| {
                ModelKind::parse(m)
                    .ok_or_else(|| CliError::Validation(format!("unknown model kind `{m}`")))
            })
            .collect::<Result<_, _>>()?
    };

    let dataset = load_dataset_arg(&args.data)?;
    let train = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seeds: args.seeds.clone(),
        marginal_epochs: args.marginal_epochs,
        marginal_seed: args.marginal_seed,
        val_fraction: args.val_fraction,
        ..Default::default()
    };
    train.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let data = prepare(dataset, &train.model.clone(), train.val_fraction)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let cfg = ExperimentConfig { train, kinds, out_dir: args.out.clone() };
    let workers = worker_count();
    let manifest =
        run_experiment(&data, &cfg, workers).map_err(|e| CliError::Run(e.to_string()))?;

    let mut non_gan_failures = 0usize;
    for (id, entry) in manifest.runs.iter() {
        let status = match entry.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Failed => {
                if entry.kind != ModelKind::VanillaGan.as_str() {
                    non_gan_failures += 1;
                }
                format!("FAILED ({})", entry.error.as_deref().unwrap_or("unknown"))
            }
        };
        println!("{id}: {status} in {:.1}s", entry.elapsed_secs);
    }
    println!(
        "manifest: {} runs, {:.1}s total, {} worker(s)",
        manifest.runs.len(),
        manifest.total_seconds,
        manifest.workers
    );
    if non_gan_failures > 0 {
        return Err(CliError::Run(format!("{non_gan_failures} non-GAN run(s) failed")));
    }
    Ok(())
}
