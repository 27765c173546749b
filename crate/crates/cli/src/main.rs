//! `poroforest` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "poroforest", version, about = "Tree ensembles for concrete porosity prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/test assignment written as the `training` column.
    Split(SplitArgs),
    /// Fit a random forest on the training records.
    TrainRf(TrainRfArgs),
    /// Fit least-squares boosting on the training records.
    TrainGbt(TrainGbtArgs),
    /// Bayesian optimization of forest leaf size and predictors per split.
    TuneRf(TuneArgs),
    /// Bayesian optimization of the four boosting hyperparameters.
    TuneGbt(TuneArgs),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Out-of-bag permuted predictor importance of a saved forest.
    Importance(ImportanceArgs),
    /// One- or two-variable partial dependence of a saved model.
    Pdp(PdpArgs),
    /// Artificial mixes varying the SCM content and curing time.
    Sensitivity(SensitivityArgs),
    /// Closed-form porosity of fly-ash and plain cement mixes.
    Chemomech(ChemomechArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Mix CSV; the embedded 34-record sample when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Print machine-readable JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.75)]
    pub fraction: f64,
    /// Where to write the flagged CSV; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainRfArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub trees: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 3)]
    pub features_per_split: usize,
    /// Error-versus-trees CSV (training, out-of-bag, test MSE).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainGbtArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    pub max_splits: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    /// Folds for the cross-validated error trace.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Error-versus-rounds CSV (training, k-fold CV, test MSE).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub budget: usize,
    /// Cross-validation folds (boosting only).
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Evaluation trace as JSON lines; next to the model when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Which records to score, by their `training` flag.
    #[arg(long, value_enum, default_value_t = Part::All)]
    pub part: Part,
    /// Per-record predictions CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Permutations per tree and predictor.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct PdpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub feature: String,
    #[arg(long)]
    pub feature2: Option<String>,
    /// Grid points per numeric predictor.
    #[arg(long, default_value_t = poroforest::interpret::DEFAULT_GRID_POINTS)]
    pub grid: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Scm {
    FlyAsh,
    Ggbs,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long = "type", value_enum)]
    pub scm: Scm,
    /// Model used for predictions; only the grid is written without it.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ChemomechArgs {
    /// CSV with cement,fly_ash,water[,eps_air] columns (kg/m3) or a mix
    /// CSV; the embedded sample when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Oxide composition JSON; the reference cement and fly ash when omitted.
    #[arg(long)]
    pub composition: Option<PathBuf>,
    /// Mix rows cured for fewer days are skipped.
    #[arg(long, default_value_t = 0)]
    pub min_days: u32,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<poroforest::Error> for CliError {
    fn from(e: poroforest::Error) -> Self {
        use poroforest::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) | E::UnknownFeature(_) => CliError::Usage(msg),
            E::Numerical(_) | E::Infeasible(_) => CliError::Numerical(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
