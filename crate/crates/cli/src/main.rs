//! `smoothmix` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smoothmix::Error;

#[derive(Parser, Debug)]
#[command(name = "smoothmix", version, about = "Learn mixtures of smooth product distributions")]
struct Cli {
    /// JSON file with default parameter values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset and write its ground truth alongside.
    Generate(GenerateArgs),
    /// Fit a model to a dataset or to precomputed triple histograms.
    Fit(FitArgs),
    /// Compare a learned model with the ground truth and/or score label files.
    Eval(EvalArgs),
    /// Assign every record to its most probable component.
    Cluster(ClusterArgs),
    /// Tabulate one learned conditional CDF/PDF on a uniform grid.
    ExportCurves(ExportArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// gaussian, gmm2, gamma, laplace, or toy (the univariate two-Gaussian example).
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub vars: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Number of records M.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    /// Dirichlet concentration of the mixing weights.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dataset CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth model JSON; defaults to `<out>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Dataset CSV.
    #[arg(long, conflicts_with = "histograms", required_unless_present = "histograms")]
    pub data: Option<PathBuf>,
    /// Precomputed histogram JSON (as written by --save-histograms).
    #[arg(long)]
    pub histograms: Option<PathBuf>,
    /// smooth (tensor factorization + sinc) or em (diagonal Gaussian mixture).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// kl or fro.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sinc_pad: Option<usize>,
    #[arg(long)]
    pub clip_lo: Option<f64>,
    #[arg(long)]
    pub clip_hi: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub inner_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the triple histograms used for the fit.
    #[arg(long)]
    pub save_histograms: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth parametric model JSON.
    #[arg(long, requires = "model")]
    pub truth: Option<PathBuf>,
    /// Learned model JSON.
    #[arg(long, requires = "truth")]
    pub model: Option<PathBuf>,
    /// Reference label file (one `label` column, 1-based).
    #[arg(long, requires = "labels_pred")]
    pub labels_true: Option<PathBuf>,
    #[arg(long, requires = "labels_true")]
    pub labels_pred: Option<PathBuf>,
    /// Monte-Carlo test points M'.
    #[arg(long)]
    pub mc_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quadrature points for the conditional L1 errors.
    #[arg(long)]
    pub l1_points: Option<usize>,
    /// Report JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append one row to this sweep CSV (header written when the file is new).
    #[arg(long)]
    pub sweep_csv: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub setting: String,
    #[arg(long, default_value = "")]
    pub method: String,
    /// Training-set size recorded in the sweep row.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Label CSV to write (1-based).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Learned smooth model JSON.
    #[arg(long, conflicts_with = "exact", required_unless_present = "exact")]
    pub model: Option<PathBuf>,
    /// Build the curve from exact CDF samples of this parametric model instead.
    #[arg(long)]
    pub exact: Option<PathBuf>,
    /// Variable index (1-based).
    #[arg(long, default_value_t = 1)]
    pub var: usize,
    /// Component index (1-based).
    #[arg(long, default_value_t = 1)]
    pub component: usize,
    /// Parametric model supplying the true curve columns.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Component of --truth to compare against (1-based); defaults to --component.
    #[arg(long)]
    pub truth_component: Option<usize>,
    #[arg(long, default_value_t = 1001)]
    pub resolution: usize,
    /// Left end of the x-grid; defaults to the support's lower edge.
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Bins for --exact.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub sinc_pad: Option<usize>,
    #[arg(long)]
    pub clip_lo: Option<f64>,
    #[arg(long)]
    pub clip_hi: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit code for each library error; 2 is reserved for usage errors.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 10,
        Error::DimensionMismatch(_) => 11,
        Error::InvalidMode(_) => 12,
        Error::UnusableVariable(_) => 13,
        Error::DegenerateSupport(_) => 14,
        Error::InvalidValue(_) => 15,
        Error::EmptyStatistics => 16,
        Error::InsufficientVariables(_) => 17,
        Error::InvalidFactor(_) => 18,
        Error::UnknownFamily(_) => 19,
        Error::LengthMismatch { .. } => 20,
        Error::TooFewRows { .. } => 21,
        Error::AllMissing => 22,
        Error::ModelKindMismatch { .. } => 23,
        Error::IndexOutOfRange(_) => 24,
        Error::Io(_) => 30,
        Error::Csv(_) => 31,
        Error::Json(_) => 32,
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

    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|cfg| match &cli.command {
        Command::Generate(a) => commands::generate(a, &cfg),
        Command::Fit(a) => commands::fit(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Cluster(a) => commands::cluster(a),
        Command::ExportCurves(a) => commands::export_curves(a, &cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
