//! Command runners. Each returns the manifest describing what it wrote.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use flr_core::estimator::Design;
use flr_core::grid::read_dataset_csv;
use flr_core::operator::{mercer, simultaneous_diagonalize};
use flr_core::simulation::{fit_rate, run_replicates, Method, ReplicateBatch, SimScenario, Spacing};
use flr_core::{Grid, SobolevKernel};
use serde::Deserialize;

use crate::config::{
    CommandConfig, DiagConfig, EigenConfig, FiguresConfig, FitConfig, LambdaSetting, PredictConfig,
    RatesConfig, RunConfig, SimulateConfig,
};
use crate::model::{ModelFile, Provenance};
use crate::output::{manifest_path, sha256_hex, Manifest};
use crate::CliError;

pub fn run(config: &RunConfig) -> Result<Manifest, CliError> {
    let mut manifest = Manifest::new(config);
    let manifest_file = match &config.command {
        CommandConfig::Fit(c) => {
            fit(c, &mut manifest)?;
            manifest_path(&c.model)
        }
        CommandConfig::Predict(c) => {
            predict(c, &mut manifest)?;
            manifest_path(&c.output)
        }
        CommandConfig::Simulate(c) => {
            simulate(c, &mut manifest)?;
            manifest_path(&c.out)
        }
        CommandConfig::Rates(c) => {
            rates(c, &mut manifest)?;
            manifest_path(&c.out)
        }
        CommandConfig::Eigen(c) => {
            eigen(c, &mut manifest)?;
            manifest_path(&c.output)
        }
        CommandConfig::Diag(c) => {
            diag(c, &mut manifest)?;
            manifest_path(&c.output)
        }
        CommandConfig::Figures(c) => {
            figures(c, &mut manifest)?;
            c.out.join("manifest.json")
        }
    };
    manifest.save(&manifest_file)?;
    Ok(manifest)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))
}

fn fit(c: &FitConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let bytes = fs::read(&c.input)?;
    let data = read_dataset_csv(bytes.as_slice())?;
    let kernel = SobolevKernel::new(c.order)?;
    let design = Design::new(&data, &kernel)?;
    let lambda = match &c.lambda {
        LambdaSetting::Fixed(l) => *l,
        LambdaSetting::Auto(search) => {
            let sel = design.select_lambda(search)?;
            manifest.notes.insert("gcv_grid_index".into(), sel.grid_index.to_string());
            sel.lambda
        }
    };
    let fit = design.solve(lambda)?;
    fit.validate()?;
    let residual = design.optimality_residual(&fit);
    if residual >= design.optimality_tolerance() {
        return Err(CliError::Invalid(format!("solution failed the optimality check (gradient {residual:e})")));
    }
    let model = ModelFile::from_fit(
        &fit,
        design.centered_response().iter().copied().collect(),
        Provenance {
            dataset_sha256: sha256_hex(&bytes),
            config: manifest.config.clone(),
        },
    );
    let mut text = serde_json::to_string_pretty(&model).map_err(|e| CliError::Invalid(e.to_string()))?;
    text.push('\n');
    manifest.notes.insert("lambda".into(), fit.lambda.to_string());
    manifest.notes.insert("gcv".into(), fit.gcv_value.to_string());
    manifest.write_output(&c.model, text.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn predict(c: &PredictConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let model = load_model(&c.model)?;
    let fit = model.restore()?;
    let data = read_dataset_csv(fs::File::open(&c.input)?)?;
    let grid = fit.grid().clone();
    let rows = data
        .curves()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if x.grid().points() != grid.points() {
                return Err(CliError::Core(flr_core::FlrError::GridMismatch));
            }
            let x = flr_core::Curve::new(grid.clone(), x.values().to_vec())?;
            Ok(vec![(i + 1).to_string(), fit.predict(&x)?.to_string()])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let bytes = csv_bytes(&["index", "prediction"], rows)?;
    manifest.write_output(&c.output, &bytes)?;
    Ok(())
}

pub const RESULT_HEADER: [&str; 5] = ["replicate", "method", "lambda", "est_error", "pred_error"];

pub fn results_csv(batch: &ReplicateBatch) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &RESULT_HEADER,
        batch.results.iter().map(|r| {
            vec![
                r.replicate.to_string(),
                r.method.to_string(),
                r.lambda.to_string(),
                r.est_error.to_string(),
                r.pred_error.to_string(),
            ]
        }),
    )
}

fn simulate(c: &SimulateConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let batch = run_replicates(&c.scenario)?;
    manifest.seeds.push(c.scenario.seed);
    record_scenario(manifest, &c.scenario);
    manifest.notes.insert("failures".into(), batch.failures.len().to_string());
    for (i, msg) in &batch.failures {
        manifest.notes.insert(format!("failure_{i}"), msg.clone());
    }
    manifest.write_output(&c.out, &results_csv(&batch)?)?;
    Ok(())
}

/// Scenario values in the manifest, so `rates` can group result files.
fn record_scenario(manifest: &mut Manifest, s: &SimScenario) {
    let notes = &mut manifest.notes;
    notes.insert("spacing".into(), s.spacing.to_string());
    notes.insert("nu".into(), s.nu.to_string());
    notes.insert("sigma".into(), s.sigma.to_string());
    notes.insert("n".into(), s.n.to_string());
    notes.insert("replicates".into(), s.replicates.to_string());
}

#[derive(Debug, Deserialize)]
struct ResultRow {
    method: String,
    est_error: f64,
    pred_error: f64,
}

/// One results file with the scenario it came from.
struct ResultFile {
    spacing: String,
    nu: String,
    sigma: String,
    n: usize,
    rows: Vec<ResultRow>,
}

fn load_result_file(path: &Path) -> Result<ResultFile, CliError> {
    let mpath = manifest_path(path);
    let m = Manifest::load(&mpath).map_err(|e| CliError::Invalid(format!("{}: {e}", mpath.display())))?;
    let note = |k: &str| {
        m.notes
            .get(k)
            .cloned()
            .ok_or_else(|| CliError::Invalid(format!("{}: missing `{k}`", mpath.display())))
    };
    let n = note("n")?
        .parse()
        .map_err(|_| CliError::Invalid(format!("{}: bad `n`", mpath.display())))?;
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok(ResultFile {
        spacing: note("spacing")?,
        nu: note("nu")?,
        sigma: note("sigma")?,
        n,
        rows,
    })
}

fn rates(c: &RatesConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = glob::glob(&c.pattern)
        .map_err(|e| CliError::config("in", e.to_string()))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let paths: Vec<PathBuf> = paths.into_iter().filter(|p| p != &c.out).collect();
    if paths.is_empty() {
        return Err(CliError::config("in", format!("no files match `{}`", c.pattern)));
    }
    let files = paths.iter().map(|p| load_result_file(p)).collect::<Result<Vec<_>, _>>()?;
    let spacings: BTreeSet<&str> = files.iter().map(|f| f.spacing.as_str()).collect();
    if spacings.len() > 1 {
        return Err(CliError::Invalid(format!(
            "inputs mix spacings {spacings:?}; fit rates per spacing"
        )));
    }

    // (nu, sigma) -> method -> n -> (est, pred) errors
    type Cell = BTreeMap<Method, BTreeMap<usize, (Vec<f64>, Vec<f64>)>>;
    let mut cells: BTreeMap<(String, String), Cell> = BTreeMap::new();
    for f in &files {
        let cell = cells.entry((f.nu.clone(), f.sigma.clone())).or_default();
        for r in &f.rows {
            let method: Method = r.method.parse()?;
            let slot = cell.entry(method).or_default().entry(f.n).or_default();
            slot.0.push(r.est_error);
            slot.1.push(r.pred_error);
        }
    }
    let mut rows = Vec::new();
    for ((nu, sigma), by_method) in &cells {
        for (method, by_n) in by_method {
            for (metric, pick) in [("pred", 1usize), ("est", 0)] {
                let groups: Vec<(usize, Vec<f64>)> = by_n
                    .iter()
                    .map(|(&n, e)| (n, if pick == 0 { e.0.clone() } else { e.1.clone() }))
                    .collect();
                let fit = fit_rate(&groups)?;
                rows.push(vec![
                    nu.clone(),
                    sigma.clone(),
                    method.to_string(),
                    metric.to_string(),
                    fit.slope.to_string(),
                    fit.slope_stderr.to_string(),
                ]);
            }
        }
    }
    manifest.notes.insert("inputs".into(), paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";"));
    let bytes = csv_bytes(&["nu", "sigma", "method", "metric", "slope", "stderr"], rows)?;
    manifest.write_output(&c.out, &bytes)?;
    Ok(())
}

fn eigen(c: &EigenConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let grid = Grid::uniform(c.grid)?;
    let sys = mercer(&c.kernel.matrix(&grid)?, &grid, c.terms)?;
    let rows = sys
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, v)| vec![(k + 1).to_string(), v.to_string()]);
    manifest.write_output(&c.output, &csv_bytes(&["k", "eigenvalue"], rows)?)?;
    Ok(())
}

fn diag(c: &DiagConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let grid = Grid::uniform(c.grid)?;
    let k_sys = mercer(&c.kernel.matrix(&grid)?, &grid, c.terms)?;
    let cov = c.covariance.matrix(&grid)?;
    let c_sys = mercer(&cov, &grid, c.terms)?;
    let pair = simultaneous_diagonalize(&k_sys, &cov, &grid, c.terms)?;
    let rows = (0..c.terms).map(|k| {
        let (g, r, m) = (pair.gamma()[k], k_sys.eigenvalues()[k], c_sys.eigenvalues()[k]);
        vec![
            (k + 1).to_string(),
            g.to_string(),
            r.to_string(),
            m.to_string(),
            (g / (r * m)).to_string(),
        ]
    });
    let bytes = csv_bytes(&["k", "gamma", "rho", "mu", "ratio"], rows)?;
    manifest.write_output(&c.output, &bytes)?;
    Ok(())
}

/// One panel setting of the figure set.
struct FigureSpec {
    file: &'static str,
    spacing: Spacing,
    sigma: f64,
    /// (method, metric) pairs drawn as series.
    series: &'static [(Method, &'static str)],
}

const FIGURES: [FigureSpec; 4] = [
    FigureSpec {
        file: "fig1.csv",
        spacing: Spacing::Well,
        sigma: 0.5,
        series: &[(Method::Gcv, "pred"), (Method::OraclePred, "pred")],
    },
    FigureSpec {
        file: "fig2.csv",
        spacing: Spacing::Well,
        sigma: 0.5,
        series: &[(Method::Gcv, "est"), (Method::OracleEst, "est")],
    },
    FigureSpec {
        file: "fig3.csv",
        spacing: Spacing::Well,
        sigma: 1.0,
        series: &[
            (Method::Gcv, "pred"),
            (Method::Gcv, "est"),
            (Method::OraclePred, "pred"),
            (Method::OracleEst, "est"),
        ],
    },
    FigureSpec {
        file: "fig4.csv",
        spacing: Spacing::Close,
        sigma: 0.5,
        series: &[
            (Method::Gcv, "pred"),
            (Method::Gcv, "est"),
            (Method::OraclePred, "pred"),
            (Method::OracleEst, "est"),
        ],
    },
];

fn figures(c: &FiguresConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    manifest.seeds.push(c.base.seed);
    // (spacing, nu, sigma, n) -> method -> mean (est, pred)
    type Means = BTreeMap<Method, (f64, f64)>;
    let mut cache: BTreeMap<(Spacing, u64, u64, usize), Means> = BTreeMap::new();
    let mut failures = 0usize;
    for spec in &FIGURES {
        let mut rows = Vec::new();
        for &(method, metric) in spec.series {
            for &nu in &c.nus {
                for &n in &c.ns {
                    let key = (spec.spacing, nu.to_bits(), spec.sigma.to_bits(), n);
                    if !cache.contains_key(&key) {
                        let scenario = SimScenario {
                            spacing: spec.spacing,
                            nu,
                            sigma: spec.sigma,
                            n,
                            ..c.base.clone()
                        };
                        let batch = run_replicates(&scenario)?;
                        failures += batch.failures.len();
                        let means = Method::ALL
                            .into_iter()
                            .filter_map(|m| batch.mean_errors(m).map(|e| (m, e)))
                            .collect();
                        cache.insert(key, means);
                    }
                    let (est, pred) = *cache[&key].get(&method).ok_or_else(|| {
                        CliError::Invalid(format!("no successful replicates for n = {n}, nu = {nu}"))
                    })?;
                    let value = if metric == "pred" { pred } else { est };
                    rows.push(vec![
                        (n as f64).ln().to_string(),
                        value.ln().to_string(),
                        format!("{method} {metric} nu={nu}"),
                    ]);
                }
            }
        }
        let bytes = csv_bytes(&["log_n", "log_mean_error", "series"], rows)?;
        manifest.write_output(&c.out.join(spec.file), &bytes)?;
    }
    manifest.notes.insert("failures".into(), failures.to_string());
    Ok(())
}
