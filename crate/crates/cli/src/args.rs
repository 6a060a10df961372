use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (model format 1, bundle format 1)"
);

/// Piecewise-exponential additive models: data transformation, fitting,
/// prediction and simulation.
#[derive(Debug, Parser)]
#[command(name = "pamm", version = VERSION, propagate_version = true)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split survival data into piecewise-exponential data.
    AsPed(AsPedArgs),
    /// Simulate event times from a hazard expression.
    Simulate(SimulateArgs),
    /// Fit a penalized Poisson model to a PED bundle.
    Fit(FitArgs),
    /// Hazards, cumulative hazards and survival probabilities.
    Predict(PredictArgs),
    /// Cumulative coefficients of one covariate.
    CumuCoef(CumuCoefArgs),
    /// Lag-lead weight table.
    LagLead(LagLeadArgs),
    /// Summarize a PED bundle or a model file.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct AsPedArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Exposure tables `(id, tz, values...)`, one per exposure-time variable.
    #[arg(long)]
    pub tdc: Vec<PathBuf>,
    #[arg(long)]
    pub formula: String,
    /// Regular cut points `from:to:step`.
    #[arg(long, conflicts_with = "cut_list")]
    pub cut: Option<String>,
    /// Explicit cut points `v1,v2,...`.
    #[arg(long)]
    pub cut_list: Option<String>,
    #[arg(long)]
    pub max_time: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub hazard: String,
    /// Number of subjects (ignored with --data).
    #[arg(long)]
    pub n: Option<usize>,
    /// Subject covariates; otherwise generated with --covariate.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generated covariate `name=uniform:a,b` or `name=normal:mean,sd`.
    #[arg(long, allow_hyphen_values = true)]
    pub covariate: Vec<String>,
    #[arg(long)]
    pub cut: String,
    /// Exposure grid `from:to:step`.
    #[arg(long, allow_hyphen_values = true)]
    pub tdc_grid: Option<String>,
    /// Exposure process, `ar2:phi1,phi2`.
    #[arg(long, default_value = "ar2:0.8,-0.1", allow_hyphen_values = true)]
    pub tdc_process: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tdc_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub ped: PathBuf,
    #[arg(long)]
    pub model: String,
    /// `gcv` or `fixed:<value>`.
    #[arg(long, default_value = "gcv")]
    pub lambda: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub ped: PathBuf,
    /// JSON object mapping column names to value lists.
    #[arg(long)]
    pub newdata: Option<PathBuf>,
    /// Comma-separated subset of `hazard,cumu,surv`.
    #[arg(long, default_value = "hazard")]
    pub add: String,
    /// `response` or `link` for the hazard columns.
    #[arg(long, default_value = "response")]
    pub scale: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = pamm_core::predict::DEFAULT_DRAWS)]
    pub n_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CumuCoefArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub ped: PathBuf,
    #[arg(long)]
    pub term: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = pamm_core::predict::DEFAULT_DRAWS)]
    pub n_draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LagLeadArgs {
    /// Take cuts, grids and windows from a PED bundle.
    #[arg(long, conflicts_with_all = ["cut", "tz_grid"])]
    pub ped: Option<PathBuf>,
    #[arg(long, requires = "tz_grid")]
    pub cut: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub tz_grid: Option<String>,
    /// `default`, `lag:<l>` or `window:<lag>,<lead>`.
    #[arg(long, default_value = "default")]
    pub ll: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// PED bundle directory or model JSON file.
    pub path: PathBuf,
}
