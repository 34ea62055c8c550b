//! Run configuration: a `key = value` file merged with command-line flags.
//!
//! Flags win over file values. Every key is checked against the command's
//! key set, and every value against the range its consumer accepts, so errors
//! name the offending key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flr_core::estimator::LambdaSearch;
use flr_core::operator::NamedKernel;
use flr_core::simulation::{SimScenario, Spacing};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Fit,
    Predict,
    Simulate,
    Rates,
    Eigen,
    Diag,
    Figures,
}

const SEARCH_KEYS: [&str; 4] = ["lambda_lower", "lambda_upper", "lambda_grid", "lambda_refine"];

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Fit => "fit",
            CommandKind::Predict => "predict",
            CommandKind::Simulate => "simulate",
            CommandKind::Rates => "rates",
            CommandKind::Eigen => "eigen",
            CommandKind::Diag => "diag",
            CommandKind::Figures => "figures",
        }
    }

    /// Keys accepted in the config file and as flags.
    pub fn keys(&self) -> Vec<&'static str> {
        let own: &[&str] = match self {
            CommandKind::Fit => &["input", "model", "order", "lambda"],
            CommandKind::Predict => &["model", "input", "output"],
            CommandKind::Simulate => &[
                "spacing", "nu", "sigma", "n", "reps", "seed", "out", "grid_points",
                "series_terms", "truth_decay", "order",
            ],
            CommandKind::Rates => &["in", "out"],
            CommandKind::Eigen => &["kernel", "grid", "terms", "output"],
            CommandKind::Diag => &["k", "c", "grid", "terms", "output"],
            CommandKind::Figures => &[
                "out", "reps", "seed", "ns", "nus", "grid_points", "series_terms",
                "truth_decay", "order",
            ],
        };
        let mut keys = own.to_vec();
        if matches!(self, CommandKind::Fit | CommandKind::Simulate | CommandKind::Figures) {
            keys.extend(SEARCH_KEYS);
        }
        keys
    }
}

/// Where each effective value came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigSources {
    pub config_file: Option<PathBuf>,
    pub file: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
}

impl ConfigSources {
    pub fn effective(&self) -> BTreeMap<String, String> {
        let mut merged = self.file.clone();
        merged.extend(self.flags.clone());
        merged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSetting {
    Auto(LambdaSearch),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub input: PathBuf,
    pub model: PathBuf,
    pub order: usize,
    pub lambda: LambdaSetting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub model: PathBuf,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub scenario: SimScenario,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesConfig {
    pub pattern: String,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenConfig {
    pub kernel: NamedKernel,
    pub grid: usize,
    pub terms: usize,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagConfig {
    pub kernel: NamedKernel,
    pub covariance: NamedKernel,
    pub grid: usize,
    pub terms: usize,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiguresConfig {
    pub out: PathBuf,
    /// Shared settings; `spacing`, `nu`, `sigma` and `n` vary per cell.
    pub base: SimScenario,
    pub ns: Vec<usize>,
    pub nus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandConfig {
    Fit(FitConfig),
    Predict(PredictConfig),
    Simulate(SimulateConfig),
    Rates(RatesConfig),
    Eigen(EigenConfig),
    Diag(DiagConfig),
    Figures(FiguresConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: CommandKind,
    pub sources: ConfigSources,
    pub command: CommandConfig,
}

/// Parses a `key = value` file; `#` starts a comment, blank lines are skipped.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config("config", format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().replace('-', "_");
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::config(&key, format!("line {}: duplicate key", lineno + 1)));
        }
    }
    Ok(map)
}

/// Merges file and flag values for `kind` and validates them.
pub fn parse_config(
    kind: CommandKind,
    config_file: Option<&Path>,
    flags: BTreeMap<String, String>,
) -> Result<RunConfig, CliError> {
    let file = match config_file {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let allowed = kind.keys();
    for key in file.keys().chain(flags.keys()) {
        if !allowed.contains(&key.as_str()) {
            return Err(CliError::config(key, format!("unknown key for `{}`", kind.name())));
        }
    }
    let sources = ConfigSources {
        config_file: config_file.map(Path::to_path_buf),
        file,
        flags,
    };
    let values = Values(sources.effective());
    let command = match kind {
        CommandKind::Fit => CommandConfig::Fit(fit_config(&values, &sources)?),
        CommandKind::Predict => CommandConfig::Predict(PredictConfig {
            model: values.existing_path("model")?,
            input: values.existing_path("input")?,
            output: values.output_path("output")?,
        }),
        CommandKind::Simulate => CommandConfig::Simulate(SimulateConfig {
            scenario: scenario(&values, true)?,
            out: values.output_path("out")?,
        }),
        CommandKind::Rates => CommandConfig::Rates(RatesConfig {
            pattern: values.required("in")?.to_string(),
            out: values.output_path("out")?,
        }),
        CommandKind::Eigen => {
            let grid = values.usize_in("grid", 401, 2, 5000)?;
            CommandConfig::Eigen(EigenConfig {
                kernel: values.kernel("kernel", NamedKernel::Sobolev(2))?,
                grid,
                terms: values.usize_in("terms", 50.min(grid), 1, grid)?,
                output: values.output_path("output")?,
            })
        }
        CommandKind::Diag => {
            let grid = values.usize_in("grid", 401, 2, 5000)?;
            CommandConfig::Diag(DiagConfig {
                kernel: values.kernel("k", NamedKernel::Sobolev(2))?,
                covariance: values.kernel("c", NamedKernel::Brownian)?,
                grid,
                terms: values.usize_in("terms", 50.min(grid), 1, grid)?,
                output: values.output_path("output")?,
            })
        }
        CommandKind::Figures => {
            let base = scenario(&values, false)?;
            let ns = values.list("ns", vec![50, 100, 200, 500], |s| s.parse::<usize>().ok().filter(|&n| n > base.order + 1))?;
            let nus = values.list("nus", vec![1.1, 1.5, 2.0, 4.0], |s| s.parse::<f64>().ok().filter(|v| *v > 1.0 && v.is_finite()))?;
            CommandConfig::Figures(FiguresConfig {
                out: values.output_path("out")?,
                base,
                ns,
                nus,
            })
        }
    };
    Ok(RunConfig {
        kind,
        sources,
        command,
    })
}

fn fit_config(values: &Values, sources: &ConfigSources) -> Result<FitConfig, CliError> {
    let lambda = match values.get("lambda").unwrap_or("auto") {
        "auto" => LambdaSetting::Auto(search(values)?),
        text => {
            let l: f64 = text
                .parse()
                .ok()
                .filter(|l: &f64| *l > 0.0 && l.is_finite())
                .ok_or_else(|| CliError::config("lambda", format!("expected `auto` or a positive number, got `{text}`")))?;
            if let Some(k) = SEARCH_KEYS.iter().find(|k| sources.flags.contains_key(**k)) {
                return Err(CliError::config(
                    "lambda",
                    format!("a fixed lambda conflicts with the search flag `{k}`"),
                ));
            }
            LambdaSetting::Fixed(l)
        }
    };
    let input = values.existing_path("input")?;
    let model = values.output_path("model")?;
    if model == input {
        return Err(CliError::config("model", "output would overwrite the input dataset"));
    }
    Ok(FitConfig {
        input,
        model,
        order: values.order()?,
        lambda,
    })
}

fn search(values: &Values) -> Result<LambdaSearch, CliError> {
    let defaults = LambdaSearch::default();
    let s = LambdaSearch {
        log10_lower: values.f64_where("lambda_lower", defaults.log10_lower, |v| v.is_finite(), "a finite log10 bound")?,
        log10_upper: values.f64_where("lambda_upper", defaults.log10_upper, |v| v.is_finite(), "a finite log10 bound")?,
        grid_size: values.usize_in("lambda_grid", defaults.grid_size, 2, 100_000)?,
        refine: values.bool("lambda_refine", defaults.refine)?,
    };
    if s.log10_lower >= s.log10_upper {
        return Err(CliError::config("lambda_upper", "must exceed lambda_lower"));
    }
    Ok(s)
}

fn scenario(values: &Values, single_cell: bool) -> Result<SimScenario, CliError> {
    let d = SimScenario::default();
    let order = values.order()?;
    let mut s = SimScenario {
        replicates: values.usize_in("reps", d.replicates, 1, 1_000_000)?,
        seed: values.u64("seed", d.seed)?,
        grid_points: values.usize_in("grid_points", d.grid_points, 3, 5000)?,
        series_terms: values.usize_in("series_terms", d.series_terms, 1, 10_000)?,
        truth_decay: values.f64_where("truth_decay", d.truth_decay, |v| v > 0.0 && v.is_finite(), "a positive number")?,
        order,
        search: LambdaSearch { refine: false, ..search(values)? },
        ..d
    };
    if single_cell {
        s.spacing = match values.get("spacing") {
            Some(text) => text.parse::<Spacing>().map_err(|e| CliError::config("spacing", e.to_string()))?,
            None => d.spacing,
        };
        s.nu = values.f64_where("nu", d.nu, |v| v > 1.0 && v.is_finite(), "a number greater than 1")?;
        s.sigma = values.f64_where("sigma", d.sigma, |v| v > 0.0 && v.is_finite(), "a positive number")?;
        s.n = values.usize_in("n", d.n, order + 2, 1_000_000)?;
    }
    Ok(s)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CliError::config(key, "required but not given"))
    }

    fn existing_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = PathBuf::from(self.required(key)?);
        if !p.exists() {
            return Err(CliError::config(key, format!("path does not exist: {}", p.display())));
        }
        Ok(p)
    }

    fn output_path(&self, key: &str) -> Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.required(key)?))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(text) => text
                .parse()
                .map(Some)
                .map_err(|_| CliError::config(key, format!("expected {what}, got `{text}`"))),
        }
    }

    fn f64_where(&self, key: &str, default: f64, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64, CliError> {
        let v = self.parse::<f64>(key, what)?.unwrap_or(default);
        if ok(v) {
            Ok(v)
        } else {
            Err(CliError::config(key, format!("expected {what}, got {v}")))
        }
    }

    fn usize_in(&self, key: &str, default: usize, lo: usize, hi: usize) -> Result<usize, CliError> {
        let what = format!("an integer in [{lo}, {hi}]");
        let v = self.parse::<usize>(key, &what)?.unwrap_or(default);
        if (lo..=hi).contains(&v) {
            Ok(v)
        } else {
            Err(CliError::config(key, format!("expected {what}, got {v}")))
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64, CliError> {
        Ok(self.parse::<u64>(key, "an unsigned 64-bit integer")?.unwrap_or(default))
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(other) => Err(CliError::config(key, format!("expected true/false, got `{other}`"))),
        }
    }

    fn order(&self) -> Result<usize, CliError> {
        self.usize_in("order", 2, 1, flr_core::kernel::MAX_ORDER)
    }

    fn kernel(&self, key: &str, default: NamedKernel) -> Result<NamedKernel, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(text) => text.parse().map_err(|e: flr_core::FlrError| CliError::config(key, e.to_string())),
        }
    }

    fn list<T>(&self, key: &str, default: Vec<T>, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(text) => {
                let items: Option<Vec<T>> = text.split(',').map(|s| item(s.trim())).collect();
                items
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| CliError::config(key, format!("invalid list `{text}`")))
            }
        }
    }
}
