use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "annet", version, about = "Community detection in networks with node metadata")]
struct Cli {
    /// Worker threads for restarts and benchmark jobs; 1 makes every run bit-reproducible.
    #[arg(long, global = true, env = "ANNET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model to a network and its metadata.
    Fit(FitArgs),
    /// Community probabilities implied by a metadata value alone.
    Predict(PredictArgs),
    /// Write a planted-partition network with noisy metadata.
    Generate(GenerateArgs),
    /// Run a synthetic benchmark.
    #[command(subcommand)]
    Benchmark(BenchmarkCommand),
    /// Normalized mutual information between two label files.
    Nmi(NmiArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Edge list, one `u v` pair per line.
    #[arg(long)]
    edges: PathBuf,
    /// Metadata CSV with header `node,value`.
    #[arg(long)]
    metadata: PathBuf,
    /// Number of communities.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Treat metadata values as real numbers.
    #[arg(long)]
    ordered: bool,
    /// Bernstein degree of the ordered prior.
    #[arg(long, requires = "ordered")]
    degree: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_em_steps: Option<usize>,
    #[arg(long)]
    max_bp_steps: Option<usize>,
    /// EM stopping threshold on the relative parameter change.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Node marginals as CSV `node,community,probability`.
    #[arg(long)]
    marginals: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Report written by `annet fit`.
    #[arg(long)]
    model: PathBuf,
    /// Metadata value: a category label, or a number for ordered metadata.
    #[arg(long, allow_hyphen_values = true)]
    value: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Mean number of neighbours in the same group.
    #[arg(long)]
    cin: f64,
    /// Mean number of neighbours in each other group.
    #[arg(long)]
    cout: f64,
    /// Fraction of nodes whose metadata equals their group.
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File name prefix: writes PREFIX.edges, PREFIX.metadata.csv, PREFIX.truth.csv.
    #[arg(long, default_value = "planted")]
    prefix: String,
}

#[derive(Debug, Subcommand)]
enum BenchmarkCommand {
    /// Accuracy against network strength for several metadata match rates.
    Fig1a(Fig1aArgs),
    /// Success rates with and without metadata on two-way ambiguous networks.
    Fig1b(Fig1bArgs),
}

#[derive(Debug, Args)]
pub struct Fig1aArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Mean degree.
    #[arg(long, default_value_t = 8.0)]
    c: f64,
    /// Match rates, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9])]
    rho: Vec<f64>,
    /// Values of cin - cout, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0])]
    diff: Vec<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Fig1bArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 20.0)]
    cin: f64,
    #[arg(long, default_value_t = 4.0)]
    cout: f64,
    /// Fraction of nodes whose metadata agrees with the planted split.
    #[arg(long, default_value_t = 0.65)]
    agreement: f64,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-repetition CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NmiArgs {
    /// Label CSV with header `node,label`.
    a: PathBuf,
    b: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let reproducible = threads == 1;
    let result = match cli.command {
        Command::Fit(args) => commands::fit(args, reproducible),
        Command::Predict(args) => commands::predict(args),
        Command::Generate(args) => commands::generate(args),
        Command::Benchmark(BenchmarkCommand::Fig1a(args)) => commands::fig1a(args, reproducible),
        Command::Benchmark(BenchmarkCommand::Fig1b(args)) => commands::fig1b(args, reproducible),
        Command::Nmi(args) => commands::nmi(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("annet: {e}");
            ExitCode::from(e.code())
        }
    }
}
