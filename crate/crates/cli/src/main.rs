//! `hdrm` batch front end: prepare, train, eval, export.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdrm::config::RunConfig;
use hdrm::dataset::Format;
use hdrm::eval::Split;
use hdrm::pipeline::{Ablation, SweepParam};
use hdrm::HdrmError;

#[derive(Debug, Parser)]
#[command(
    name = "hdrm",
    version,
    about = "Hyperbolic direction-aware latent diffusion recommender"
)]
struct Cli {
    /// Run configuration (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, env = "HDRM_SEED", value_name = "SEED")]
    seed: Option<u64>,

    /// Caps the number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Logs per-epoch progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize, split 7:1:2 and write the dataset artifacts.
    Prepare(PrepareArgs),
    /// Train stage 1, cluster, then train stage 2.
    Train(TrainArgs),
    /// Full-ranking evaluation of a trained model, or a hyperparameter sweep.
    Eval(EvalArgs),
    /// Write embeddings, cluster ids and popularity labels as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Ratings file with `user item rating [timestamp]` rows.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Column separator; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    /// Output directory (defaults to the configured data_dir).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Move low-rated pairs into train plus as many random fake pairs.
    #[arg(long)]
    pub noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset directory (defaults to the configured data_dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model directory (defaults to the configured out_dir).
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: Stage,
    /// Structural ablation.
    #[arg(long, value_name = "geo|diff|hyp")]
    pub ablate: Option<Ablation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also report the popularity and MF-BPR baselines.
    #[arg(long)]
    pub baselines: bool,
    /// Retrain over a grid of margins or diffusion step counts.
    #[arg(long, value_name = "margin|steps")]
    pub sweep: Option<SweepParam>,
    /// Grid as `a..b` or `a,b,c`; defaults to the standard grid.
    #[arg(requires = "sweep")]
    pub grid: Option<String>,
    /// Directory for the metric files (defaults to the model directory).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Output directory (defaults to `<run>/export`).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &HdrmError) -> u8 {
    match err {
        HdrmError::Config(_) => 2,
        HdrmError::Numeric(_) => 4,
        _ => 3,
    }
}

fn load_config(cli: &Cli) -> hdrm::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            HdrmError::Io { path, source } => HdrmError::Config(format!("cannot read {}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> hdrm::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| HdrmError::Config(format!("cannot size thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Prepare(args) => commands::prepare(&cfg, args),
        Command::Train(args) => commands::train(&cfg, args),
        Command::Eval(args) => commands::eval(&cfg, cli.seed, args),
        Command::Export(args) => commands::export(&cfg, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
