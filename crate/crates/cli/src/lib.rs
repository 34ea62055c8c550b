//! Command-line surface for `flr`: argument parsing, configuration merging,
//! and the command runners.
//!
//! Exit status is 0 on success, 1 on domain errors (bad data, failed fits,
//! I/O) and 2 on configuration errors.

pub mod commands;
pub mod config;
pub mod model;
pub mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{parse_config, CommandKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Core(#[from] flr_core::FlrError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> CliError {
        CliError::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "flr", version, about = "Smoothness-regularized functional linear regression")]
pub struct Cli {
    /// `key = value` file; flags given on the command line take precedence
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a dataset CSV
    Fit(FitArgs),
    /// Predict responses for new curves with a saved model
    Predict(PredictArgs),
    /// Run Monte Carlo replicates of one simulation cell
    Simulate(SimulateArgs),
    /// Fit log-log convergence rates across simulation result files
    Rates(RatesArgs),
    /// Mercer eigenvalues of a named kernel
    Eigen(EigenArgs),
    /// Simultaneous diagonalization of a kernel and a covariance
    Diag(DiagArgs),
    /// Plot data for the four benchmark figures
    Figures(FiguresArgs),
}

#[derive(Debug, Args, Default)]
pub struct SearchArgs {
    /// log10 of the smallest λ on the search grid [default: -12]
    #[arg(long)]
    pub lambda_lower: Option<f64>,
    /// log10 of the largest λ on the search grid [default: 2]
    #[arg(long)]
    pub lambda_upper: Option<f64>,
    /// number of log-spaced λ values [default: 60]
    #[arg(long)]
    pub lambda_grid: Option<usize>,
    /// golden-section refinement of the grid minimum (fit only) [default: true]
    #[arg(long)]
    pub lambda_refine: Option<bool>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// dataset CSV: header `t,<t_1>,...`, then rows `y,<x(t_1)>,...`
    #[arg(long)]
    pub input: Option<String>,
    /// output model JSON
    #[arg(long)]
    pub model: Option<String>,
    /// Sobolev order m, 1 to 4 [default: 2]
    #[arg(long)]
    pub order: Option<usize>,
    /// `auto` for GCV selection or a positive value [default: auto]
    #[arg(long)]
    pub lambda: Option<String>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// model JSON written by `fit`
    #[arg(long)]
    pub model: Option<String>,
    /// curves in the dataset CSV layout; the response column is ignored
    #[arg(long)]
    pub input: Option<String>,
    /// output CSV with columns index, prediction
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// eigenvalue spacing of the predictor process: well or close [default: well]
    #[arg(long)]
    pub spacing: Option<String>,
    /// decay exponent of the predictor scores, > 1 [default: 2]
    #[arg(long)]
    pub nu: Option<f64>,
    /// noise standard deviation [default: 0.5]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// sample size [default: 100]
    #[arg(long)]
    pub n: Option<usize>,
    /// number of replicates [default: 200]
    #[arg(long)]
    pub reps: Option<usize>,
    /// master seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// output results CSV
    #[arg(long)]
    pub out: Option<String>,
    /// quadrature grid size [default: 201]
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// number of basis terms in the truth and predictors [default: 50]
    #[arg(long)]
    pub series_terms: Option<usize>,
    /// decay exponent of the true slope coefficients [default: 2]
    #[arg(long)]
    pub truth_decay: Option<f64>,
    /// Sobolev order m, 1 to 4 [default: 2]
    #[arg(long)]
    pub order: Option<usize>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    /// glob matching results CSVs written by `simulate`
    #[arg(long = "in")]
    pub input: Option<String>,
    /// output CSV with columns nu, sigma, method, metric, slope, stderr
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct EigenArgs {
    /// sobolev:<m>, brownian or ou [default: sobolev:2]
    #[arg(long)]
    pub kernel: Option<String>,
    /// grid size [default: 401]
    #[arg(long)]
    pub grid: Option<usize>,
    /// number of eigenvalues [default: 50]
    #[arg(long)]
    pub terms: Option<usize>,
    /// output CSV with columns k, eigenvalue
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// reproducing kernel [default: sobolev:2]
    #[arg(long)]
    pub k: Option<String>,
    /// covariance kernel [default: brownian]
    #[arg(long)]
    pub c: Option<String>,
    /// grid size [default: 401]
    #[arg(long)]
    pub grid: Option<usize>,
    /// truncation size [default: 50]
    #[arg(long)]
    pub terms: Option<usize>,
    /// output CSV with columns k, gamma, rho, mu, ratio
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    /// output directory for fig1.csv to fig4.csv and manifest.json
    #[arg(long)]
    pub out: Option<String>,
    /// replicates per cell [default: 200]
    #[arg(long)]
    pub reps: Option<usize>,
    /// master seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// comma-separated sample sizes [default: 50,100,200,500]
    #[arg(long)]
    pub ns: Option<String>,
    /// comma-separated nu values [default: 1.1,1.5,2,4]
    #[arg(long)]
    pub nus: Option<String>,
    /// quadrature grid size [default: 201]
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// number of basis terms [default: 50]
    #[arg(long)]
    pub series_terms: Option<usize>,
    /// decay exponent of the true slope coefficients [default: 2]
    #[arg(long)]
    pub truth_decay: Option<f64>,
    /// Sobolev order m, 1 to 4 [default: 2]
    #[arg(long)]
    pub order: Option<usize>,
    #[command(flatten)]
    pub search: SearchArgs,
}

struct FlagMap(BTreeMap<String, String>);

impl FlagMap {
    fn put<T: ToString>(&mut self, key: &str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.to_string(), v.to_string());
        }
        self
    }

    fn search(&mut self, s: &SearchArgs) -> &mut Self {
        self.put("lambda_lower", &s.lambda_lower)
            .put("lambda_upper", &s.lambda_upper)
            .put("lambda_grid", &s.lambda_grid)
            .put("lambda_refine", &s.lambda_refine)
    }
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Fit(_) => CommandKind::Fit,
            Command::Predict(_) => CommandKind::Predict,
            Command::Simulate(_) => CommandKind::Simulate,
            Command::Rates(_) => CommandKind::Rates,
            Command::Eigen(_) => CommandKind::Eigen,
            Command::Diag(_) => CommandKind::Diag,
            Command::Figures(_) => CommandKind::Figures,
        }
    }

    /// Flags given on the command line, keyed like the config file.
    pub fn flags(&self) -> BTreeMap<String, String> {
        let mut m = FlagMap(BTreeMap::new());
        match self {
            Command::Fit(a) => {
                m.put("input", &a.input)
                    .put("model", &a.model)
                    .put("order", &a.order)
                    .put("lambda", &a.lambda)
                    .search(&a.search);
            }
            Command::Predict(a) => {
                m.put("model", &a.model).put("input", &a.input).put("output", &a.output);
            }
            Command::Simulate(a) => {
                m.put("spacing", &a.spacing)
                    .put("nu", &a.nu)
                    .put("sigma", &a.sigma)
                    .put("n", &a.n)
                    .put("reps", &a.reps)
                    .put("seed", &a.seed)
                    .put("out", &a.out)
                    .put("grid_points", &a.grid_points)
                    .put("series_terms", &a.series_terms)
                    .put("truth_decay", &a.truth_decay)
                    .put("order", &a.order)
                    .search(&a.search);
            }
            Command::Rates(a) => {
                m.put("in", &a.input).put("out", &a.out);
            }
            Command::Eigen(a) => {
                m.put("kernel", &a.kernel)
                    .put("grid", &a.grid)
                    .put("terms", &a.terms)
                    .put("output", &a.output);
            }
            Command::Diag(a) => {
                m.put("k", &a.k)
                    .put("c", &a.c)
                    .put("grid", &a.grid)
                    .put("terms", &a.terms)
                    .put("output", &a.output);
            }
            Command::Figures(a) => {
                m.put("out", &a.out)
                    .put("reps", &a.reps)
                    .put("seed", &a.seed)
                    .put("ns", &a.ns)
                    .put("nus", &a.nus)
                    .put("grid_points", &a.grid_points)
                    .put("series_terms", &a.series_terms)
                    .put("truth_decay", &a.truth_decay)
                    .put("order", &a.order)
                    .search(&a.search);
            }
        }
        m.0
    }
}

/// Parses, validates and runs one invocation.
pub fn execute(cli: &Cli) -> Result<output::Manifest, CliError> {
    let config = parse_config(cli.command.kind(), cli.config.as_deref(), cli.command.flags())?;
    commands::run(&config)
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("flr {}: {e}", cli.command.kind().name());
            e.exit_code()
        }
    }
}
