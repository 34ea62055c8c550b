//! Monte Carlo benchmark: cosine-basis truth, random predictor curves,
//! GCV and oracle tuning, error metrics, and log-log rate fits.
//!
//! Curves are `X = Σ_k ζ_k Z_k φ_k` with `Z_k ~ U[-√3, √3]` and the cosine
//! system `φ_1 = 1`, `φ_{k+1} = √2 cos(kπt)`. The slope is
//! `β₀ = Σ_k b_k φ_k` with `b_k = 4(-1)^{k+1} k^{-decay}`, so the signal
//! `∫ X β₀ = Σ_k ζ_k Z_k b_k` is computed exactly from the coefficients.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::error::{FlrError, Result};
use crate::estimator::{Design, LambdaSearch};
use crate::grid::{inner_product, same_grid, Curve, Dataset, Grid};
use crate::kernel::SobolevKernel;
use crate::linalg::fit_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spacing {
    Well,
    Close,
}

impl fmt::Display for Spacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spacing::Well => "well",
            Spacing::Close => "close",
        })
    }
}

impl FromStr for Spacing {
    type Err = FlrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "well" => Ok(Spacing::Well),
            "close" => Ok(Spacing::Close),
            other => Err(FlrError::InvalidArgument(format!(
                "spacing must be 'well' or 'close', got '{other}'"
            ))),
        }
    }
}

/// How λ was chosen for a replicate's reported fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Gcv,
    OraclePred,
    OracleEst,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gcv, Method::OraclePred, Method::OracleEst];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gcv => "gcv",
            Method::OraclePred => "oracle_pred",
            Method::OracleEst => "oracle_est",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = FlrError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| FlrError::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub spacing: Spacing,
    pub nu: f64,
    pub sigma: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub series_terms: usize,
    pub grid_points: usize,
    pub truth_decay: f64,
    pub order: usize,
    /// λ grid shared by GCV and the oracles; refinement is not used here.
    pub search: LambdaSearch,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            spacing: Spacing::Well,
            nu: 2.0,
            sigma: 0.5,
            n: 100,
            replicates: 200,
            seed: 42,
            series_terms: 50,
            grid_points: 201,
            truth_decay: 2.0,
            order: 2,
            search: LambdaSearch {
                refine: false,
                ..LambdaSearch::default()
            },
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FlrError::InvalidArgument(msg));
        if !(self.nu > 1.0 && self.nu.is_finite()) {
            return bad(format!("nu must exceed 1, got {}", self.nu));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.series_terms == 0 {
            return bad("series_terms must be at least 1".into());
        }
        if self.grid_points < 2 {
            return bad(format!("grid_points must be at least 2, got {}", self.grid_points));
        }
        if !(self.truth_decay > 0.0 && self.truth_decay.is_finite()) {
            return bad(format!("truth_decay must be positive, got {}", self.truth_decay));
        }
        SobolevKernel::new(self.order)?;
        if self.n <= self.order + 1 {
            return bad(format!("n = {} is too small for order {}", self.n, self.order));
        }
        self.search.validate()
    }
}

/// `φ_1 ≡ 1`, `φ_{k+1}(t) = √2 cos(kπt)`.
pub fn cosine_basis(k: usize, t: f64) -> f64 {
    assert!(k >= 1, "cosine basis is indexed from 1");
    if k == 1 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * ((k - 1) as f64 * std::f64::consts::PI * t).cos()
    }
}

/// `ζ_1, …, ζ_K` for the two spacing designs.
pub fn zeta_sequence(spacing: Spacing, nu: f64, terms: usize) -> Vec<f64> {
    (1..=terms)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let kf = k as f64;
            match spacing {
                Spacing::Well => sign * kf.powf(-nu / 2.0),
                Spacing::Close => match k {
                    1 => 1.0,
                    2..=4 => 0.2 * sign * (1.0 - 0.0001 * kf),
                    _ => {
                        let block = (5 * (k / 5)) as f64;
                        0.2 * sign * (block.powf(-nu / 2.0) - 0.0001 * (k % 5) as f64)
                    }
                },
            }
        })
        .collect()
}

/// Coefficients of the true slope and of the predictor process.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub b: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl TruthModel {
    pub fn new(spacing: Spacing, nu: f64, truth_decay: f64, terms: usize) -> TruthModel {
        let b = (1..=terms)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                4.0 * sign * (k as f64).powf(-truth_decay)
            })
            .collect();
        TruthModel {
            b,
            zeta: zeta_sequence(spacing, nu, terms),
        }
    }

    pub fn for_scenario(s: &SimScenario) -> TruthModel {
        TruthModel::new(s.spacing, s.nu, s.truth_decay, s.series_terms)
    }

    pub fn terms(&self) -> usize {
        self.b.len()
    }
}

/// `φ_k(t_p)` as a `K × P` matrix.
fn basis_matrix(terms: usize, grid: &Grid) -> DMatrix<f64> {
    let t = grid.points();
    DMatrix::from_fn(terms, t.len(), |k, p| cosine_basis(k + 1, t[p]))
}

/// `β₀ = Σ_k b_k φ_k` on the grid.
pub fn beta0_on_grid(truth: &TruthModel, grid: &Arc<Grid>) -> Curve {
    Curve::from_fn(grid, |t| {
        truth
            .b
            .iter()
            .enumerate()
            .map(|(k, b)| b * cosine_basis(k + 1, t))
            .sum()
    })
}

/// Deterministic generator for `(seed, replicate)`.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Draws one dataset of `scenario.n` observations.
pub fn simulate_dataset(
    scenario: &SimScenario,
    truth: &TruthModel,
    grid: &Arc<Grid>,
    replicate: usize,
) -> Result<Dataset> {
    let phi = basis_matrix(truth.terms(), grid);
    simulate_with_basis(scenario, truth, grid, &phi, replicate)
}

fn simulate_with_basis(
    scenario: &SimScenario,
    truth: &TruthModel,
    grid: &Arc<Grid>,
    phi: &DMatrix<f64>,
    replicate: usize,
) -> Result<Dataset> {
    let mut rng = replicate_rng(scenario.seed, replicate);
    let half_width = 3f64.sqrt();
    let uniform = Uniform::new_inclusive(-half_width, half_width).expect("finite bounds");
    let noise = Normal::new(0.0, scenario.sigma)
        .map_err(|e| FlrError::InvalidArgument(format!("noise level: {e}")))?;
    let terms = truth.terms();
    let mut scores = DMatrix::zeros(scenario.n, terms);
    let mut responses = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let mut signal = 0.0;
        for k in 0..terms {
            let s = truth.zeta[k] * uniform.sample(&mut rng);
            scores[(i, k)] = s;
            signal += s * truth.b[k];
        }
        responses.push(signal + noise.sample(&mut rng));
    }
    let values = scores * phi;
    let curves = (0..scenario.n)
        .map(|i| Curve::new(Arc::clone(grid), values.row(i).iter().copied().collect()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Arc::clone(grid), curves, responses)
}

/// `‖β̂ - β₀‖²` by quadrature.
pub fn estimation_error(beta_hat: &Curve, beta0: &Curve) -> Result<f64> {
    let diff = beta_hat.combine(1.0, beta0, -1.0)?;
    inner_product(&diff, &diff)
}

/// `Σ_k ζ_k² (⟨β̂, φ_k⟩ - b_k)²`, the squared norm weighted by the covariance.
pub fn prediction_error(beta_hat: &Curve, truth: &TruthModel) -> Result<f64> {
    let grid = beta_hat.grid();
    let mut total = 0.0;
    for k in 0..truth.terms() {
        let coef: f64 = grid
            .points()
            .iter()
            .zip(grid.weights())
            .zip(beta_hat.values())
            .map(|((&t, w), v)| w * v * cosine_basis(k + 1, t))
            .sum();
        total += truth.zeta[k].powi(2) * (coef - truth.b[k]).powi(2);
    }
    Ok(total)
}

/// Errors of one replicate under one tuning method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: Method,
    pub lambda: f64,
    pub est_error: f64,
    pub pred_error: f64,
}

/// All results of a scenario plus the replicates that failed to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateBatch {
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<(usize, String)>,
}

impl ReplicateBatch {
    pub fn for_method(&self, method: Method) -> impl Iterator<Item = &ReplicateResult> {
        self.results.iter().filter(move |r| r.method == method)
    }

    /// Mean `(est_error, pred_error)` for a method.
    pub fn mean_errors(&self, method: Method) -> Option<(f64, f64)> {
        let rows: Vec<_> = self.for_method(method).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|r| r.est_error).sum::<f64>() / n,
            rows.iter().map(|r| r.pred_error).sum::<f64>() / n,
        ))
    }
}

/// Pieces shared by every replicate of a scenario.
struct Workspace {
    grid: Arc<Grid>,
    kernel: SobolevKernel,
    gram: DMatrix<f64>,
    phi: DMatrix<f64>,
    /// `w_p φ_k(t_p)`, for coefficient read-off.
    phi_weighted: DMatrix<f64>,
    beta0: Curve,
    truth: TruthModel,
    lambdas: Vec<f64>,
}

impl Workspace {
    fn new(scenario: &SimScenario) -> Result<Workspace> {
        let grid = Grid::uniform(scenario.grid_points)?;
        let kernel = SobolevKernel::new(scenario.order)?;
        let gram = kernel.gram(&grid);
        let truth = TruthModel::for_scenario(scenario);
        let phi = basis_matrix(truth.terms(), &grid);
        let w = grid.weights();
        let phi_weighted = DMatrix::from_fn(phi.nrows(), phi.ncols(), |k, p| phi[(k, p)] * w[p]);
        let beta0 = beta0_on_grid(&truth, &grid);
        Ok(Workspace {
            grid,
            kernel,
            gram,
            phi,
            phi_weighted,
            beta0,
            truth,
            lambdas: scenario.search.grid(),
        })
    }

    fn errors(&self, beta: &[f64]) -> (f64, f64) {
        let est: f64 = beta
            .iter()
            .zip(self.beta0.values())
            .zip(self.grid.weights())
            .map(|((a, b), w)| w * (a - b).powi(2))
            .sum();
        let coefs = &self.phi_weighted * nalgebra::DVector::from_column_slice(beta);
        let pred: f64 = coefs
            .iter()
            .zip(&self.truth.b)
            .zip(&self.truth.zeta)
            .map(|((c, b), z)| z * z * (c - b).powi(2))
            .sum();
        (est, pred)
    }

    fn replicate(&self, scenario: &SimScenario, index: usize) -> Result<[ReplicateResult; 3]> {
        let data = simulate_with_basis(scenario, &self.truth, &self.grid, &self.phi, index)?;
        let design = Design::with_gram(&data, &self.kernel, &self.gram)?;
        let path = design.spectral()?;

        let errors: Vec<(f64, f64)> = self
            .lambdas
            .iter()
            .map(|&l| self.errors(&path.beta_values(l)))
            .collect();
        let gcv: Vec<f64> = self
            .lambdas
            .iter()
            .map(|&l| path.gcv(l).unwrap_or(f64::INFINITY))
            .collect();
        let gcv_idx = grid_argmin(&gcv).ok_or(FlrError::SelectionFailure)?;
        let pred: Vec<f64> = errors.iter().map(|e| e.1).collect();
        let pred_idx = grid_argmin(&pred).ok_or(FlrError::SelectionFailure)?;
        let est: Vec<f64> = errors.iter().map(|e| e.0).collect();
        let est_idx = grid_argmin(&est).ok_or(FlrError::SelectionFailure)?;

        let record = |method, i: usize| ReplicateResult {
            replicate: index,
            method,
            lambda: self.lambdas[i],
            est_error: errors[i].0,
            pred_error: errors[i].1,
        };
        Ok([
            record(Method::Gcv, gcv_idx),
            record(Method::OraclePred, pred_idx),
            record(Method::OracleEst, est_idx),
        ])
    }
}

/// Index of the smallest finite value, ties going to the larger λ.
fn grid_argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v <= values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Runs every replicate of a scenario in parallel.
///
/// Each replicate fits the whole λ grid once through the spectral path and
/// reports the GCV choice and the two oracle choices over that same grid.
/// Results are ordered by replicate index, then method.
pub fn run_replicates(scenario: &SimScenario) -> Result<ReplicateBatch> {
    scenario.validate()?;
    let search = LambdaSearch {
        refine: false,
        ..scenario.search
    };
    let scenario = SimScenario {
        search,
        ..scenario.clone()
    };
    let ws = Workspace::new(&scenario)?;
    let outcomes: Vec<Result<[ReplicateResult; 3]>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|i| ws.replicate(&scenario, i))
        .collect();
    let mut results = Vec::with_capacity(3 * scenario.replicates);
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => results.extend(r),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    Ok(ReplicateBatch { results, failures })
}

/// Least-squares fit of `log(mean error)` on `log n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub sample_sizes: Vec<usize>,
    pub mean_errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Fits a rate from per-replicate errors grouped by sample size.
pub fn fit_rate(groups: &[(usize, Vec<f64>)]) -> Result<RateFit> {
    let mut sorted: Vec<&(usize, Vec<f64>)> = groups.iter().collect();
    sorted.sort_by_key(|g| g.0);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(FlrError::InvalidArgument(
            "each sample size may appear only once".into(),
        ));
    }
    if sorted.len() < 3 {
        return Err(FlrError::InvalidArgument(format!(
            "rate fit needs at least 3 sample sizes, got {}",
            sorted.len()
        )));
    }
    if let Some(g) = sorted.iter().find(|g| g.1.len() < 30) {
        return Err(FlrError::InvalidArgument(format!(
            "n = {} has {} replicates, at least 30 required",
            g.0,
            g.1.len()
        )));
    }
    let sample_sizes: Vec<usize> = sorted.iter().map(|g| g.0).collect();
    let mean_errors: Vec<f64> = sorted
        .iter()
        .map(|g| g.1.iter().sum::<f64>() / g.1.len() as f64)
        .collect();
    if mean_errors.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(FlrError::InvalidArgument(
            "mean errors must be positive and finite".into(),
        ));
    }
    let x: Vec<f64> = sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = mean_errors.iter().map(|e| e.ln()).collect();
    let line = fit_line(&x, &y);
    Ok(RateFit {
        sample_sizes,
        mean_errors,
        slope: line.slope,
        intercept: line.intercept,
        slope_stderr: line.slope_stderr,
    })
}

/// Checks that a curve lives on the given grid.
pub fn ensure_grid(curve: &Curve, grid: &Arc<Grid>) -> Result<()> {
    if same_grid(curve.grid(), grid) {
        Ok(())
    } else {
        Err(FlrError::GridMismatch)
    }
}
