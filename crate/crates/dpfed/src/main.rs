use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dpfed::commands::{self, SUMMARY_FILE};
use dpfed::config::ExperimentConfig;
use dpfed::mnist::{load_mnist, MnistFiles, DATA_DIR_ENV};
use dpfed::sweep::{run_sweep, write_summary, SweepGrid};
use dpfed_core::federation::Schedule;

/// Client-level differentially private federated learning on MNIST.
#[derive(Parser)]
#[command(name = "dpfed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its metrics, final weights and configuration.
    Run(RunArgs),
    /// Train every cell of a hyperparameter grid and rank the results.
    Sweep(SweepArgs),
    /// Print delta after each of a number of composed rounds.
    Accountant(AccountantArgs),
    /// Summarize how labels are spread over the client partition.
    InspectPartition(InspectArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the MNIST IDX files.
    #[arg(long, env = DATA_DIR_ENV, default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long, default_value = "train-images-idx3-ubyte")]
    train_images: String,
    #[arg(long, default_value = "train-labels-idx1-ubyte")]
    train_labels: String,
    #[arg(long, default_value = "t10k-images-idx3-ubyte")]
    test_images: String,
    #[arg(long, default_value = "t10k-labels-idx1-ubyte")]
    test_labels: String,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<(dpfed_core::data::Dataset, dpfed_core::data::Dataset)> {
        let files = MnistFiles {
            train_images: self.train_images.clone(),
            train_labels: self.train_labels.clone(),
            test_images: self.test_images.clone(),
            test_labels: self.test_labels.clone(),
        };
        let data = load_mnist(&self.data_dir, &files)
            .with_context(|| format!("loading MNIST from {}", self.data_dir.display()))?;
        log::info!(
            "loaded {} training and {} test images",
            data.0.len(),
            data.1.len()
        );
        Ok(data)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Total number of clients K.
    #[arg(long)]
    clients: Option<usize>,
    /// Local mini-batch size B.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Local epochs E.
    #[arg(long)]
    epochs: Option<usize>,
    /// Local learning rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Clients per round, e.g. `30` or `1:30,6:60`.
    #[arg(long)]
    m_schedule: Option<String>,
    /// Noise multiplier per round, e.g. `1.0` or `1:1.2,8:0.9`.
    #[arg(long)]
    sigma_schedule: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Stop before delta would exceed this value.
    #[arg(long)]
    delta_threshold: Option<f64>,
    /// Maximum number of communication rounds.
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop once test accuracy reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Plain federated averaging without clipping, noise or accounting.
    #[arg(long)]
    no_dp: bool,
    /// Evaluate on the test set every this many rounds.
    #[arg(long)]
    eval_every: Option<u32>,
    /// Threads for client updates (run) or grid cells (sweep).
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ConfigArgs {
    fn effective(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let overrides: [(&str, Option<String>); 13] = [
            ("clients", self.clients.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("local_epochs", self.epochs.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("m_schedule", self.m_schedule.clone()),
            ("sigma_schedule", self.sigma_schedule.clone()),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            (
                "delta_threshold",
                self.delta_threshold.map(|v| v.to_string()),
            ),
            ("max_rounds", self.rounds.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            (
                "target_accuracy",
                self.target_accuracy.map(|v| v.to_string()),
            ),
            ("eval_every", self.eval_every.map(|v| v.to_string())),
            ("dp", self.no_dp.then(|| "false".to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        cfg.federated().validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(commands::default_out_dir)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Also write metrics as JSON lines.
    #[arg(long)]
    jsonl: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// `;`-separated local batch sizes.
    #[arg(long)]
    grid_batch_size: Option<String>,
    /// `;`-separated local epoch counts.
    #[arg(long)]
    grid_epochs: Option<String>,
    /// `;`-separated participation schedules.
    #[arg(long)]
    grid_m: Option<String>,
    /// `;`-separated noise schedules.
    #[arg(long)]
    grid_sigma: Option<String>,
}

#[derive(Args)]
struct AccountantArgs {
    /// Sampling ratio m/K, constant or a schedule.
    #[arg(long)]
    q: String,
    /// Noise multiplier, constant or a schedule.
    #[arg(long)]
    z: String,
    #[arg(long)]
    rounds: u32,
    #[arg(long, default_value_t = 8.0)]
    epsilon: f64,
    #[arg(long, default_value_t = dpfed_core::dp::DEFAULT_LAMBDA_MAX)]
    lambda_max: u32,
    /// Comma-separated output.
    #[arg(long)]
    csv: bool,
    /// Write the final accountant state to this file.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, default_value_t = 100)]
    clients: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// One row per client instead of the summary.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    data: DataArgs,
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.config.effective()?;
    let (train, test) = args.data.load()?;
    let out = args.config.out_dir();
    let history = commands::train(&cfg, &train, &test, args.config.workers)?;
    commands::write_run_outputs(&out, &cfg, &history, args.jsonl)?;
    print!("{}", commands::describe_run(&history));
    println!("outputs: {}", out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let base = args.config.effective()?;
    let grid = SweepGrid::parse(
        args.grid_batch_size
            .as_deref()
            .unwrap_or(&base.batch_size.to_string()),
        args.grid_epochs
            .as_deref()
            .unwrap_or(&base.local_epochs.to_string()),
        args.grid_m
            .as_deref()
            .unwrap_or(&base.m_schedule().to_string()),
        args.grid_sigma
            .as_deref()
            .unwrap_or(&base.sigma_schedule.to_string()),
    )?;
    let cells = grid.cells(&base)?;
    for c in &cells {
        c.federated().validate()?;
    }
    let (train, test) = args.data.load()?;
    log::info!(
        "sweeping {} cells on {} workers",
        cells.len(),
        args.config.workers
    );
    let results = run_sweep(&cells, &train, &test, args.config.workers)?;
    let out = args.config.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_summary(&results, &out.join(SUMMARY_FILE))?;
    if let Some(best) = results.first() {
        println!(
            "best cell {}: B={} E={} m={} sigma={} seed={} acc={:.4} rounds={} cc={}",
            best.index,
            best.config.batch_size,
            best.config.local_epochs,
            best.config.m_schedule(),
            best.config.sigma_schedule,
            best.config.seed,
            best.final_accuracy,
            best.rounds,
            best.cc
        );
    }
    println!("summary: {}", out.join(SUMMARY_FILE).display());
    Ok(())
}

fn cmd_accountant(args: &AccountantArgs) -> anyhow::Result<()> {
    let q: Schedule<f64> = args.q.parse().context("--q")?;
    let z: Schedule<f64> = args.z.parse().context("--z")?;
    let (rows, acct) =
        commands::accountant_table(&q, &z, args.rounds, args.epsilon, args.lambda_max)?;
    print!("{}", commands::render_accountant_table(&rows, args.csv));
    if let Some(path) = &args.save {
        write_file(path, &dpfed::accountant_io::render_accountant(&acct))?;
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> anyhow::Result<()> {
    if args.clients == 0 {
        bail!("--clients must be at least 1");
    }
    let (train, _) = args.data.load()?;
    let summary = commands::inspect_partition(&train, args.clients, args.seed)?;
    print!("{}", commands::render_partition_summary(&summary, args.csv));
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Accountant(a) => cmd_accountant(a),
        Command::InspectPartition(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
