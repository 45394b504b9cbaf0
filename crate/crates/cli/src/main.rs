//! Operator-facing command line for the neuroevolution pipeline:
//! synthetic data generation, evolution runs, grid search, genome
//! evaluation, attack scoring, and report rendering.

mod commands;
mod error;
mod manifest;
mod plot;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nascty_core::evolution::CrossoverKind;

#[derive(Parser)]
#[command(
    name = "nascty",
    version,
    about = "Genetic search of CNN architectures for profiling side-channel analysis",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic leakage trace files (train/validation/attack)
    GenTraces(GenTracesArgs),
    /// Run the evolutionary architecture search
    Evolve(EvolveArgs),
    /// Run repeated evolution over a grid of GA parameters
    GridSearch(GridSearchArgs),
    /// Train a genome's network and score it as a profiling attack
    EvalGenome(EvalGenomeArgs),
    /// Score a saved trained network against an attack trace file
    Attack(AttackArgs),
    /// Render SVG plots and a markdown summary from a run directory
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenTracesArgs {
    /// Output directory for train.traces, val.traces, attack.traces
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Points per trace
    #[arg(long, default_value_t = 700)]
    pub n_samples: usize,
    /// Sample index of the S-box output leakage [default: n-samples / 2]
    #[arg(long)]
    pub leak_point: Option<usize>,
    /// Sample index of the mask leakage (omit for no mask leakage)
    #[arg(long)]
    pub mask_point: Option<usize>,
    /// Standard deviation of the Gaussian background noise
    #[arg(long, default_value_t = 0.5)]
    pub noise_sigma: f64,
    /// Enable Boolean masking of the S-box output
    #[arg(long)]
    pub masking: bool,
    /// Upper bound of the per-trace random shift applied to every split
    #[arg(long, default_value_t = 0)]
    pub desync_level: usize,
    /// Fixed key byte shared by all traces
    #[arg(long, default_value_t = 0x22)]
    pub key_byte: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training traces per class (256 classes)
    #[arg(long, default_value_t = 139)]
    pub train_per_class: usize,
    /// Validation traces per class
    #[arg(long, default_value_t = 15)]
    pub val_per_class: usize,
    /// Attack trace count (not class-balanced)
    #[arg(long, default_value_t = 10_000)]
    pub attack_count: usize,
}

#[derive(Args, Clone)]
pub struct EvolveArgs {
    /// Balanced, normalized training trace file
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Balanced, normalized validation trace file
    #[arg(long, value_name = "FILE")]
    pub val: PathBuf,
    /// Output directory for checkpoint, CSV log, and champion genome
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// TOML configuration file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Resume from a checkpoint written by a previous run
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub tournament_size: Option<usize>,
    /// Truncation proportion in (0, 1]
    #[arg(long)]
    pub truncation: Option<f64>,
    /// Crossover kind: one-point or parameter-wise
    #[arg(long, value_enum)]
    pub crossover: Option<CrossoverArg>,
    /// Polynomial mutation eta
    #[arg(long)]
    pub eta: Option<f64>,
    /// Training epochs per fitness evaluation
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Master seed; every stream in the run derives from it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel fitness workers (NASCTY_WORKERS overrides config, flag wins)
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum CrossoverArg {
    #[value(name = "one-point")]
    OnePoint,
    #[value(name = "parameter-wise")]
    ParameterWise,
}

impl From<CrossoverArg> for CrossoverKind {
    fn from(value: CrossoverArg) -> Self {
        match value {
            CrossoverArg::OnePoint => CrossoverKind::OnePoint,
            CrossoverArg::ParameterWise => CrossoverKind::ParameterWise,
        }
    }
}

#[derive(Args)]
pub struct GridSearchArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub val: PathBuf,
    /// Attack trace file used to score each cell's champion
    #[arg(long, value_name = "FILE")]
    pub attack: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Comma-separated eta values
    #[arg(long, value_delimiter = ',', default_values_t = vec![20.0, 40.0])]
    pub etas: Vec<f64>,
    /// Comma-separated crossover kinds
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = vec![CrossoverArg::OnePoint, CrossoverArg::ParameterWise])]
    pub crossovers: Vec<CrossoverArg>,
    /// Comma-separated truncation proportions
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0])]
    pub truncations: Vec<f64>,
    /// Independent runs per cell; the best is reported
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 52)]
    pub population: usize,
    #[arg(long, default_value_t = 10)]
    pub generations: usize,
    /// Training epochs per fitness evaluation
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Epochs used to train each cell champion before attack scoring
    #[arg(long, default_value_t = 50)]
    pub eval_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub folds: usize,
    /// Incremental attack traces per fold
    #[arg(long, default_value_t = 200)]
    pub attack_traces: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args)]
pub struct EvalGenomeArgs {
    /// Genome text file
    #[arg(long, value_name = "FILE")]
    pub genome: PathBuf,
    /// Balanced, normalized training trace file
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Attack trace file
    #[arg(long, value_name = "FILE")]
    pub attack: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Training epochs for the final network
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Attack folds
    #[arg(long, default_value_t = 100)]
    pub folds: usize,
    /// Incremental attack traces per fold
    #[arg(long, default_value_t = 200)]
    pub attack_traces: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct AttackArgs {
    /// Trained network file written by eval-genome
    #[arg(long, value_name = "FILE")]
    pub network: PathBuf,
    /// Attack trace file
    #[arg(long, value_name = "FILE")]
    pub attack: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub folds: usize,
    #[arg(long, default_value_t = 200)]
    pub attack_traces: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory holding generations.csv and/or ge_curve.csv
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    /// Output directory [default: the run directory]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTraces(args) => commands::gen_traces::run(args),
        Command::Evolve(args) => commands::evolve::run(args),
        Command::GridSearch(args) => commands::grid_search::run(args),
        Command::EvalGenome(args) => commands::eval_genome::run(args),
        Command::Attack(args) => commands::attack::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
