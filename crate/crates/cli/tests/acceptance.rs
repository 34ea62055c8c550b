//! Acceptance suite. Each test prints one `PASS`/`FAIL` line per check and
//! then fails if any check failed.
//!
//! Run with `cargo test -p flr-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use flr_core::linalg::{fit_line, log_log_slope};
use flr_core::operator::{deterministic_error, mercer, simultaneous_diagonalize, MercerSystem, NamedKernel};
use flr_core::simulation::{fit_rate, run_replicates, simulate_dataset, Method, ReplicateBatch};
use flr_core::{Design, Grid, SimScenario, SobolevKernel, Spacing, TruthModel};
use nalgebra::{DMatrix, DVector};

#[derive(Default)]
struct Report {
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, label: &str, pass: bool, detail: String) {
        println!("{} {label}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(label.to_string());
        }
    }

    fn within(&mut self, label: &str, elapsed: Duration, limit: Duration) {
        self.check(
            label,
            elapsed < limit,
            format!("{:.2}s (limit {:.0}s)", elapsed.as_secs_f64(), limit.as_secs_f64()),
        );
    }

    fn finish(self) {
        assert!(self.failed.is_empty(), "failed checks: {:?}", self.failed);
    }
}

fn brownian_mu(k: usize) -> f64 {
    4.0 / ((2 * k - 1) as f64 * PI).powi(2)
}

fn sobolev_system(p: usize, terms: usize) -> (Arc<Grid>, MercerSystem) {
    let grid = Grid::uniform(p).unwrap();
    let k = NamedKernel::Sobolev(2).matrix(&grid).unwrap();
    let sys = mercer(&k, &grid, terms).unwrap();
    (grid, sys)
}

#[test]
fn criterion_1_commuting_pair() {
    let mut r = Report::default();
    let start = Instant::now();
    let (grid, sys) = sobolev_system(401, 50);
    let mu: Vec<f64> = (1..=50).map(brownian_mu).collect();
    let psi = sys.basis();
    let scaled = DMatrix::from_fn(psi.nrows(), 50, |i, k| psi[(i, k)] * mu[k]);
    let cov = &scaled * psi.columns(0, 50).transpose();
    let pair = simultaneous_diagonalize(&sys, &cov, &grid, 50).unwrap();

    let mut worst_gamma = 0.0f64;
    let mut worst_omega = 0.0f64;
    for k in 0..30 {
        let expect = sys.eigenvalues()[k] * mu[k];
        worst_gamma = worst_gamma.max((pair.gamma()[k] / expect - 1.0).abs());
        let col = psi.column(k);
        let om = pair.omega_matrix().column(k);
        let sign = if om.dot(&col).is_sign_negative() { -1.0 } else { 1.0 };
        let sup = om
            .iter()
            .zip(col.iter())
            .map(|(o, p)| (sign * o - p / mu[k].sqrt()).abs())
            .fold(0.0, f64::max);
        worst_omega = worst_omega.max(sup);
    }
    let elapsed = start.elapsed();
    r.check("1 gamma = rho*mu", worst_gamma < 1e-10, format!("max relative error {worst_gamma:.2e} (tol 1e-10)"));
    r.check(
        "1 omega = psi/sqrt(mu)",
        worst_omega < 1e-8,
        format!("max sup-norm error {worst_omega:.2e} (tol 1e-8)"),
    );
    r.within("1 runtime", elapsed, Duration::from_secs(10));
    r.finish();
}

#[test]
fn criterion_2_sobolev_brownian_gamma() {
    let mut r = Report::default();
    let start = Instant::now();
    let (grid, sys) = sobolev_system(401, 50);
    let cov = NamedKernel::Brownian.matrix(&grid).unwrap();
    let pair = simultaneous_diagonalize(&sys, &cov, &grid, 50).unwrap();
    let brownian = mercer(&cov, &grid, 30).unwrap();

    let ratios: Vec<f64> = (0..30)
        .map(|k| pair.gamma()[k] / (pair.rho()[k] * brownian.eigenvalues()[k]))
        .collect();
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let slope = log_log_slope(pair.gamma(), 5, 30);
    let elapsed = start.elapsed();
    r.check(
        "2 gamma/(rho*mu) band",
        hi / lo < 10.0,
        format!("max/min = {:.2} over k=1..30 (need < 10; k=1 ratio {:.3}, k=2..30 band {:.2})", hi / lo, ratios[0], {
            let rest = &ratios[1..];
            rest.iter().cloned().fold(f64::MIN, f64::max) / rest.iter().cloned().fold(f64::MAX, f64::min)
        }),
    );
    r.check("2 gamma slope", (slope + 6.0).abs() < 0.5, format!("{slope:.3} over k=5..30 (target -6 ± 0.5)"));
    r.within("2 runtime", elapsed, Duration::from_secs(30));
    r.finish();
}

#[test]
fn criterion_3_eigen_decay() {
    let mut r = Report::default();
    let start = Instant::now();
    let (grid, sys) = sobolev_system(401, 50);
    let slope = log_log_slope(sys.eigenvalues(), 5, 50);
    let brownian = mercer(&NamedKernel::Brownian.matrix(&grid).unwrap(), &grid, 10).unwrap();
    let worst = (1..=10)
        .map(|k| (brownian.eigenvalues()[k - 1] / brownian_mu(k) - 1.0).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    r.check("3 rho slope", (slope + 4.0).abs() < 0.3, format!("{slope:.3} over k=5..50 (target -4 ± 0.3)"));
    r.check("3 Brownian eigenvalues", worst < 0.01, format!("max relative error {worst:.2e} for k<=10 (tol 1e-2)"));
    r.within("3 runtime", elapsed, Duration::from_secs(10));
    r.finish();
}

#[test]
fn criterion_4_deterministic_error_scaling() {
    let mut r = Report::default();
    let start = Instant::now();
    // a_k² = k^{-9.2} keeps Σ γ_k⁻¹ a_k² finite.
    let terms = 20000;
    let gamma: Vec<f64> = (1..=terms).map(|k| (k as f64).powi(-8)).collect();
    let coefs: Vec<f64> = (1..=terms).map(|k| (k as f64).powf(-4.6)).collect();
    let log10_lambda: Vec<f64> = (0..=20).map(|i| -8.0 + 0.25 * i as f64).collect();
    let x: Vec<f64> = log10_lambda.iter().map(|e| e * std::f64::consts::LN_10).collect();
    let mut slopes = Vec::new();
    for a in [0.0, 0.5] {
        let y: Vec<f64> = log10_lambda
            .iter()
            .map(|e| deterministic_error(&gamma, &coefs, 10f64.powf(*e), a).ln())
            .collect();
        slopes.push((a, fit_line(&x, &y).slope));
    }
    let elapsed = start.elapsed();
    for (a, slope) in slopes {
        r.check(
            &format!("4 slope a={a}"),
            (slope - (1.0 - a)).abs() < 0.1,
            format!("{slope:.4} (target {} ± 0.1)", 1.0 - a),
        );
    }
    r.within("4 runtime", elapsed, Duration::from_secs(1));
    r.finish();
}

fn errors(batch: &ReplicateBatch, method: Method, prediction: bool) -> Vec<f64> {
    batch
        .for_method(method)
        .map(|x| if prediction { x.pred_error } else { x.est_error })
        .collect()
}

#[test]
fn criterion_5_rate_reproduction() {
    let mut r = Report::default();
    let start = Instant::now();
    let mut pred = Vec::new();
    let mut est = Vec::new();
    for n in [50, 100, 200, 500] {
        let scenario = SimScenario {
            truth_decay: 3.0,
            nu: 2.0,
            sigma: 0.5,
            n,
            replicates: 200,
            ..SimScenario::default()
        };
        let batch = run_replicates(&scenario).unwrap();
        assert!(batch.failures.is_empty(), "failed replicates: {:?}", batch.failures);
        pred.push((n, errors(&batch, Method::OraclePred, true)));
        est.push((n, errors(&batch, Method::OracleEst, false)));
    }
    let pred_fit = fit_rate(&pred).unwrap();
    let est_fit = fit_rate(&est).unwrap();
    let elapsed = start.elapsed();
    r.check(
        "5 prediction rate",
        (pred_fit.slope + 6.0 / 7.0).abs() < 0.25,
        format!(
            "slope {:.3} ± {:.3} (target -0.857 ± 0.25), means {:?}",
            pred_fit.slope, pred_fit.slope_stderr, pred_fit.mean_errors
        ),
    );
    r.check(
        "5 estimation rate",
        (est_fit.slope + 4.0 / 7.0).abs() < 0.25,
        format!(
            "slope {:.3} ± {:.3} (target -0.571 ± 0.25), means {:?}",
            est_fit.slope, est_fit.slope_stderr, est_fit.mean_errors
        ),
    );
    r.within("5 runtime", elapsed, Duration::from_secs(15 * 60));
    r.finish();
}

const NUS: [f64; 4] = [1.1, 1.5, 2.0, 4.0];
const NS: [usize; 4] = [50, 100, 200, 500];

/// Mean errors per method for each (ν index, n) cell of the figure design.
struct FigureGrid {
    cells: BTreeMap<(usize, usize), BTreeMap<&'static str, (f64, f64)>>,
    elapsed: Duration,
}

fn figure_grid() -> &'static FigureGrid {
    static GRID: OnceLock<FigureGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let start = Instant::now();
        let mut cells = BTreeMap::new();
        for (i, &nu) in NUS.iter().enumerate() {
            for &n in &NS {
                let scenario = SimScenario {
                    spacing: Spacing::Well,
                    nu,
                    sigma: 0.5,
                    n,
                    replicates: 200,
                    truth_decay: 2.0,
                    ..SimScenario::default()
                };
                let batch = run_replicates(&scenario).unwrap();
                assert!(batch.failures.is_empty(), "failed replicates: {:?}", batch.failures);
                let means = Method::ALL
                    .iter()
                    .map(|m| (m.as_str(), batch.mean_errors(*m).unwrap()))
                    .collect();
                cells.insert((i, n), means);
            }
        }
        FigureGrid {
            cells,
            elapsed: start.elapsed(),
        }
    })
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn criterion_6_figure_shape() {
    let mut r = Report::default();
    let fig = figure_grid();
    for (i, nu) in NUS.iter().enumerate() {
        let pred: Vec<f64> = NS.iter().map(|n| fig.cells[&(i, *n)]["oracle_pred"].1).collect();
        r.check(
            &format!("6 oracle_pred prediction error decreasing in n, nu={nu}"),
            pred.windows(2).all(|w| w[1] < w[0]),
            sci(&pred),
        );
    }
    let pred_500: Vec<f64> = (0..NUS.len()).map(|i| fig.cells[&(i, 500)]["oracle_pred"].1).collect();
    let est_500: Vec<f64> = (0..NUS.len()).map(|i| fig.cells[&(i, 500)]["oracle_est"].0).collect();
    r.check(
        "6 n=500 prediction error decreasing in nu",
        pred_500.windows(2).all(|w| w[1] < w[0]),
        sci(&pred_500),
    );
    r.check(
        "6 n=500 estimation error increasing in nu",
        est_500.windows(2).all(|w| w[1] > w[0]),
        sci(&est_500),
    );
    r.within("6 runtime", fig.elapsed, Duration::from_secs(45 * 60));
    r.finish();
}

#[test]
fn criterion_7_gcv_near_oracle() {
    let mut r = Report::default();
    let fig = figure_grid();
    for (i, nu) in NUS.iter().enumerate() {
        for n in NS {
            let cell = &fig.cells[&(i, n)];
            let ratio = cell["gcv"].1 / cell["oracle_pred"].1;
            r.check(
                &format!("7 GCV/oracle prediction error nu={nu} n={n}"),
                ratio <= 2.0,
                format!("ratio {ratio:.3} (limit 2)"),
            );
        }
    }
    r.finish();
}

#[test]
fn criterion_8_solver_properties() {
    let mut r = Report::default();
    let start = Instant::now();
    let scenario = SimScenario {
        n: 100,
        seed: 8,
        ..SimScenario::default()
    };
    let grid = Grid::uniform(scenario.grid_points).unwrap();
    let truth = TruthModel::for_scenario(&scenario);
    let data = simulate_dataset(&scenario, &truth, &grid, 0).unwrap();
    let design = Design::new(&data, &SobolevKernel::new(2).unwrap()).unwrap();
    let lambdas = [1e-9, 1e-6, 1e-3, 1.0];

    let mut worst_grad = 0.0f64;
    let mut worst_hat = 0.0f64;
    for &l in &lambdas {
        let fit = design.solve(l).unwrap();
        worst_grad = worst_grad.max(design.optimality_residual(&fit) / design.optimality_tolerance());
        let h = design.hat_matrix(l).unwrap();
        let fitted =
            design.t_matrix() * DVector::from_column_slice(&fit.d) + design.sigma() * DVector::from_column_slice(&fit.c);
        worst_hat = worst_hat.max((h * design.centered_response() - fitted).amax());
    }
    r.check(
        "8 gradient at solution",
        worst_grad < 1.0,
        format!("max gradient / (1e-8(1+max|y|)) = {worst_grad:.3e}"),
    );
    r.check("8 hat-matrix consistency", worst_hat < 1e-10, format!("max |Hy - fitted| = {worst_hat:.2e} (tol 1e-10)"));

    let heavy = design.solve(1e8).unwrap();
    let t = design.t_matrix();
    let ols = (t.transpose() * t).try_inverse().unwrap() * t.transpose() * design.centered_response();
    let poly_gap = grid
        .points()
        .iter()
        .zip(heavy.beta_on_grid().values())
        .map(|(&s, b)| (b - (ols[0] + ols[1] * s)).abs())
        .fold(0.0, f64::max);
    r.check("8 heavy-penalty polynomial limit", poly_gap < 1e-3, format!("sup-norm gap {poly_gap:.2e} (tol 1e-3)"));

    let fit = design.solve(1e-5).unwrap();
    let h = 1e-5;
    let scale = 1.0 + fit.beta_on_grid().values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let worst_fd = (1..100)
        .map(|i| {
            let s = i as f64 / 100.0;
            let fd = (fit.evaluate_beta(s + h).unwrap() - fit.evaluate_beta(s - h).unwrap()) / (2.0 * h);
            (fd - fit.evaluate_beta_derivative(s, 1).unwrap()).abs() / scale
        })
        .fold(0.0, f64::max);
    r.check(
        "8 derivative vs finite differences",
        worst_fd < 1e-4,
        format!("max scaled gap {worst_fd:.2e} (tol 1e-4)"),
    );
    r.within("8 runtime", start.elapsed(), Duration::from_secs(30));
    r.finish();
}

#[test]
fn criterion_9_simulate_determinism() {
    let mut r = Report::default();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_flr"))
            .args(["simulate", "--n", "60", "--reps", "40", "--seed", "123", "--nu", "1.5", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(Path::new(&out)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    r.check(
        "9 byte-identical simulate output",
        a == b && !a.is_empty(),
        format!("{} and {} bytes, equal = {}", a.len(), b.len(), a == b),
    );
    r.finish();
}
