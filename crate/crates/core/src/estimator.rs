//! Penalized least-squares estimation of the slope function.
//!
//! With centered data the representer expansion
//! `β(t) = Σ_k d_k t^{k-1} + Σ_i c_i ∫ K(t,s)(x_i - x̄)(s) ds`
//! turns the problem into the finite quadratic
//! `(1/n)‖ỹ - (T d + Σ c)‖² + λ cᵀ Σ c`, solved in closed form through
//! `W = Σ + nλI`:
//!
//! ```text
//! d = (Tᵀ W⁻¹ T)⁻¹ Tᵀ W⁻¹ ỹ
//! c = W⁻¹ [I - T (Tᵀ W⁻¹ T)⁻¹ Tᵀ W⁻¹] ỹ
//! ```
//!
//! The intercept follows as `α̂ = ȳ - ∫ x̄ β̂`.
//!
//! For λ sweeps, [`SpectralPath`] diagonalizes the problem once per dataset
//! (QR of `T`, eigendecomposition of `Q₂ᵀ Σ Q₂`) so every λ costs `O(n·P)`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, QR};

use crate::error::{FlrError, Result};
use crate::grid::{center_dataset, inner_product, same_grid, CenteredData, Curve, Dataset, Grid};
use crate::kernel::SobolevKernel;
use crate::linalg::sorted_symmetric_eigen;

/// Condition estimate beyond which the unpenalized block is treated as singular.
const MAX_CONDITION: f64 = 1e12;
/// GCV is undefined once `trace/n` gets this close to one.
const GCV_TRACE_MARGIN: f64 = 1e-9;

/// Log-spaced λ grid with optional golden-section refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSearch {
    pub log10_lower: f64,
    pub log10_upper: f64,
    pub grid_size: usize,
    pub refine: bool,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        LambdaSearch {
            log10_lower: -12.0,
            log10_upper: 2.0,
            grid_size: 60,
            refine: true,
        }
    }
}

impl LambdaSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.log10_lower.is_finite() && self.log10_upper.is_finite())
            || self.log10_lower >= self.log10_upper
        {
            return Err(FlrError::InvalidArgument(format!(
                "lambda search needs lower < upper, got [{}, {}]",
                self.log10_lower, self.log10_upper
            )));
        }
        if self.grid_size < 2 {
            return Err(FlrError::InvalidArgument(format!(
                "lambda search needs at least 2 grid points, got {}",
                self.grid_size
            )));
        }
        Ok(())
    }

    /// `log10 λ` values, ascending.
    pub fn log10_grid(&self) -> Vec<f64> {
        let step = (self.log10_upper - self.log10_lower) / (self.grid_size - 1) as f64;
        (0..self.grid_size)
            .map(|i| {
                if i + 1 == self.grid_size {
                    self.log10_upper
                } else {
                    self.log10_lower + step * i as f64
                }
            })
            .collect()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.log10_grid().into_iter().map(|e| 10f64.powf(e)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Search(LambdaSearch),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlrConfig {
    pub order: usize,
    pub lambda: LambdaChoice,
}

impl Default for FlrConfig {
    fn default() -> Self {
        FlrConfig {
            order: 2,
            lambda: LambdaChoice::Search(LambdaSearch::default()),
        }
    }
}

impl FlrConfig {
    pub fn validate(&self) -> Result<()> {
        SobolevKernel::new(self.order)?;
        match self.lambda {
            LambdaChoice::Fixed(l) if !(l > 0.0 && l.is_finite()) => Err(
                FlrError::InvalidArgument(format!("lambda must be positive, got {l}")),
            ),
            LambdaChoice::Fixed(_) => Ok(()),
            LambdaChoice::Search(s) => s.validate(),
        }
    }
}

/// `Σ_ij = ∫∫ (x_i - x̄)(s) K(t,s) (x_j - x̄)(t) ds dt` by double quadrature.
pub fn assemble_sigma(centered: &Dataset, kernel: &SobolevKernel) -> DMatrix<f64> {
    let gram = kernel.gram(centered.grid());
    let kx = kernel_images(centered, &gram);
    sigma_from_images(centered, &kx)
}

/// `T_ij = ∫ (x_i - x̄)(t) t^{j-1} dt`, `j = 1..m`.
pub fn assemble_t_matrix(centered: &Dataset, m: usize) -> DMatrix<f64> {
    let grid = centered.grid();
    let n = centered.len();
    let mut t = DMatrix::zeros(n, m);
    for (i, c) in centered.curves().iter().enumerate() {
        for j in 0..m {
            t[(i, j)] = grid
                .points()
                .iter()
                .zip(grid.weights())
                .zip(c.values())
                .map(|((&s, w), v)| w * v * s.powi(j as i32))
                .sum();
        }
    }
    t
}

/// `(K(x_i - x̄))(t_p)` for every grid point and observation, `P × n`.
fn kernel_images(centered: &Dataset, gram: &DMatrix<f64>) -> DMatrix<f64> {
    let grid = centered.grid();
    let p = grid.len();
    let n = centered.len();
    let weighted = DMatrix::from_fn(p, n, |q, i| {
        grid.weights()[q] * centered.curves()[i].values()[q]
    });
    gram * weighted
}

fn sigma_from_images(centered: &Dataset, kx: &DMatrix<f64>) -> DMatrix<f64> {
    let w = centered.grid().weights();
    let n = centered.len();
    let mut sigma = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = kx.column(j);
        for i in 0..=j {
            let v: f64 = centered.curves()[i]
                .values()
                .iter()
                .zip(w)
                .zip(col.iter())
                .map(|((x, w), k)| x * w * k)
                .sum();
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    sigma
}

/// Per-dataset quantities shared by every λ: centering, `Σ`, `T`, and the
/// kernel images of the centered curves.
#[derive(Debug, Clone)]
pub struct Design {
    kernel: SobolevKernel,
    centered: CenteredData,
    sigma: DMatrix<f64>,
    t: DMatrix<f64>,
    kx: DMatrix<f64>,
    y: DVector<f64>,
    max_abs_y: f64,
}

impl Design {
    pub fn new(data: &Dataset, kernel: &SobolevKernel) -> Result<Design> {
        let gram = kernel.gram(data.grid());
        Design::with_gram(data, kernel, &gram)
    }

    /// Same as [`Design::new`] with a precomputed `[K(t_p, t_q)]` for the data's grid.
    pub fn with_gram(data: &Dataset, kernel: &SobolevKernel, gram: &DMatrix<f64>) -> Result<Design> {
        let m = kernel.order();
        if data.len() < m {
            return Err(FlrError::InvalidArgument(format!(
                "need at least {m} observations for order {m}, got {}",
                data.len()
            )));
        }
        if gram.nrows() != data.grid().len() {
            return Err(FlrError::GridMismatch);
        }
        let centered = center_dataset(data);
        let kx = kernel_images(&centered.centered, gram);
        let sigma = sigma_from_images(&centered.centered, &kx);
        let t = assemble_t_matrix(&centered.centered, m);
        let y = DVector::from_column_slice(centered.centered.responses());
        let max_abs_y = data.responses().iter().fold(0.0f64, |a, y| a.max(y.abs()));
        Ok(Design {
            kernel: kernel.clone(),
            centered,
            sigma,
            t,
            kx,
            y,
            max_abs_y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn order(&self) -> usize {
        self.kernel.order()
    }

    pub fn kernel(&self) -> &SobolevKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.centered.centered.grid()
    }

    pub fn centered(&self) -> &CenteredData {
        &self.centered
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn t_matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// `P × n` matrix of `(K(x_i - x̄))(t_p)`.
    pub fn kernel_images(&self) -> &DMatrix<f64> {
        &self.kx
    }

    pub fn centered_response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn max_abs_response(&self) -> f64 {
        self.max_abs_y
    }

    /// `(1/n)‖ỹ - T d - Σ c‖² + λ cᵀ Σ c`.
    pub fn objective(&self, lambda: f64, c: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let n = self.n() as f64;
        let sc = &self.sigma * c;
        let r = &self.y - &self.t * d - &sc;
        r.norm_squared() / n + lambda * c.dot(&sc)
    }

    /// Gradient of [`Design::objective`] with respect to `(c, d)`.
    pub fn gradient(
        &self,
        lambda: f64,
        c: &DVector<f64>,
        d: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = self.n() as f64;
        let sc = &self.sigma * c;
        let r = &self.y - &self.t * d - &sc;
        let gc = &self.sigma * (r * (-2.0 / n) + c * (2.0 * lambda));
        let gd = self.t.transpose() * (&self.y - &self.t * d - sc) * (-2.0 / n);
        (gc, gd)
    }

    fn factor_w(&self, lambda: f64) -> Result<Cholesky<f64, Dyn>> {
        let n = self.n();
        let mut w = self.sigma.clone();
        for i in 0..n {
            w[(i, i)] += n as f64 * lambda;
        }
        if let Some(ch) = Cholesky::new(w.clone()) {
            return Ok(ch);
        }
        let jitter = 1e-10 * w.trace() / n as f64;
        for i in 0..n {
            w[(i, i)] += jitter;
        }
        Cholesky::new(w).ok_or(FlrError::FactorizationFailure)
    }

    /// Closed-form linear maps `A = (TᵀW⁻¹T)⁻¹TᵀW⁻¹` (so `d = A ỹ`) and
    /// `B = W⁻¹(I - T A)` (so `c = B ỹ`).
    fn linear_maps(&self, lambda: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        let chol = self.factor_w(lambda)?;
        let winv_t = chol.solve(&self.t);
        let gram = self.t.transpose() * &winv_t;
        let gram_inv = checked_small_inverse(&gram)?;
        // Tᵀ W⁻¹ = (W⁻¹ T)ᵀ since W is symmetric.
        let a = &gram_inv * winv_t.transpose();
        let resid = DMatrix::<f64>::identity(n, n) - &self.t * &a;
        let b = chol.solve(&resid);
        Ok((a, b))
    }

    /// Hat matrix `H(λ) = T A + Σ B` mapping `ỹ` to the centered fitted values.
    pub fn hat_matrix(&self, lambda: f64) -> Result<DMatrix<f64>> {
        check_lambda(lambda)?;
        let (a, b) = self.linear_maps(lambda)?;
        Ok(&self.t * a + &self.sigma * b)
    }

    /// `GCV(λ) = (1/n)‖y - ŷ‖² / (1 - tr(H_full)/n)²` from the explicit hat matrix.
    ///
    /// `ŷ` includes the intercept, so the full smoother is `11ᵀ/n + H` and its
    /// trace is `tr(H) + 1`; the residuals coincide with `ỹ - H ỹ`.
    pub fn gcv(&self, lambda: f64) -> Result<f64> {
        let h = self.hat_matrix(lambda)?;
        let resid = &self.y - &h * &self.y;
        gcv_value(lambda, resid.norm_squared(), h.trace(), self.n())
    }

    /// Fits at a fixed λ.
    pub fn solve(&self, lambda: f64) -> Result<FittedFlr> {
        check_lambda(lambda)?;
        let chol = self.factor_w(lambda)?;
        let winv_t = chol.solve(&self.t);
        let winv_y = chol.solve(&self.y);
        let gram = self.t.transpose() * &winv_t;
        let gram_inv = checked_small_inverse(&gram)?;
        let d = &gram_inv * (self.t.transpose() * &winv_y);
        let c = chol.solve(&(&self.y - &self.t * &d));

        let h = self.hat_matrix(lambda)?;
        let hat_trace = h.trace();
        let resid = &self.y - &h * &self.y;
        let gcv = gcv_value(lambda, resid.norm_squared(), hat_trace, self.n())
            .unwrap_or(f64::INFINITY);
        Ok(self.fitted(lambda, c, d, hat_trace, gcv))
    }

    /// Assembles a [`FittedFlr`] from representer coefficients.
    pub fn fitted(
        &self,
        lambda: f64,
        c: DVector<f64>,
        d: DVector<f64>,
        hat_trace: f64,
        gcv_value: f64,
    ) -> FittedFlr {
        let grid = Arc::clone(self.grid());
        let p = grid.len();
        let mut u = vec![0.0; p];
        for (ci, curve) in c.iter().zip(self.centered.centered.curves()) {
            for (acc, v) in u.iter_mut().zip(curve.values()) {
                *acc += ci * v;
            }
        }
        let representer = Curve::new(Arc::clone(&grid), u).expect("finite combination");
        let beta = self.beta_values(&c, &d);
        let beta_grid = Curve::new(Arc::clone(&grid), beta).expect("finite combination");
        let alpha_hat = self.centered.mean_response
            - inner_product(&self.centered.mean_curve, &beta_grid).expect("shared grid");
        FittedFlr {
            alpha_hat,
            d: d.iter().copied().collect(),
            c: c.iter().copied().collect(),
            mean_curve: self.centered.mean_curve.clone(),
            mean_response: self.centered.mean_response,
            centered_curves: self.centered.centered.curves().to_vec(),
            kernel: self.kernel.clone(),
            lambda,
            hat_trace,
            gcv_value,
            representer,
            beta_grid,
        }
    }

    /// `β̂(t_p)` on the grid from `(c, d)` via the cached kernel images.
    pub fn beta_values(&self, c: &DVector<f64>, d: &DVector<f64>) -> Vec<f64> {
        let kc = &self.kx * c;
        self.grid()
            .points()
            .iter()
            .zip(kc.iter())
            .map(|(&t, k)| {
                let poly: f64 = d
                    .iter()
                    .enumerate()
                    .map(|(j, dj)| dj * t.powi(j as i32))
                    .sum();
                poly + k
            })
            .collect()
    }

    /// Largest absolute gradient entry of the penalized objective at a fit.
    pub fn optimality_residual(&self, fit: &FittedFlr) -> f64 {
        let c = DVector::from_column_slice(&fit.c);
        let d = DVector::from_column_slice(&fit.d);
        let (gc, gd) = self.gradient(fit.lambda, &c, &d);
        gc.amax().max(gd.amax())
    }

    /// Tolerance for [`Design::optimality_residual`].
    pub fn optimality_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.max_abs_y)
    }

    pub fn spectral(&self) -> Result<SpectralPath> {
        SpectralPath::new(self)
    }

    /// GCV-selected λ over `search`, using the spectral path for evaluations.
    pub fn select_lambda(&self, search: &LambdaSearch) -> Result<LambdaSelection> {
        let path = self.spectral()?;
        select_on_profile(search, |l| path.gcv(l).unwrap_or(f64::INFINITY))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(FlrError::InvalidArgument(format!(
            "lambda must be positive and finite, got {lambda}"
        )))
    }
}

fn gcv_value(lambda: f64, rss: f64, hat_trace: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    let trace_ratio = (hat_trace + 1.0) / nf;
    if trace_ratio >= 1.0 - GCV_TRACE_MARGIN {
        return Err(FlrError::GcvUndefined {
            lambda,
            trace_ratio,
        });
    }
    Ok(rss / nf / (1.0 - trace_ratio).powi(2))
}

/// Inverse of the small symmetric `m × m` block, rejecting near-singular ones.
fn checked_small_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(FlrError::DegenerateDesign { condition });
    }
    sym.try_inverse()
        .ok_or(FlrError::DegenerateDesign { condition })
}

/// A fitted model.
#[derive(Debug, Clone)]
pub struct FittedFlr {
    pub alpha_hat: f64,
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub mean_curve: Curve,
    pub mean_response: f64,
    pub centered_curves: Vec<Curve>,
    pub kernel: SobolevKernel,
    pub lambda: f64,
    pub hat_trace: f64,
    pub gcv_value: f64,
    /// `Σ_i c_i (x_i - x̄)` on the grid.
    representer: Curve,
    beta_grid: Curve,
}

/// Stored fields of a fit, enough to rebuild a [`FittedFlr`].
#[derive(Debug, Clone)]
pub struct FittedParts {
    pub alpha_hat: f64,
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub mean_curve: Curve,
    pub mean_response: f64,
    pub centered_curves: Vec<Curve>,
    pub order: usize,
    pub lambda: f64,
    pub hat_trace: f64,
    pub gcv_value: f64,
}

impl FittedFlr {
    /// Rebuilds a fit from its stored fields, recomputing `β̂` on the grid.
    pub fn from_parts(parts: FittedParts) -> Result<FittedFlr> {
        let kernel = SobolevKernel::new(parts.order)?;
        let grid = Arc::clone(parts.mean_curve.grid());
        if parts.c.len() != parts.centered_curves.len() {
            return Err(FlrError::InvalidArgument(format!(
                "{} representer coefficients for {} curves",
                parts.c.len(),
                parts.centered_curves.len()
            )));
        }
        if parts.centered_curves.iter().any(|c| !same_grid(c.grid(), &grid)) {
            return Err(FlrError::GridMismatch);
        }
        let mut u = vec![0.0; grid.len()];
        for (ci, curve) in parts.c.iter().zip(&parts.centered_curves) {
            for (acc, v) in u.iter_mut().zip(curve.values()) {
                *acc += ci * v;
            }
        }
        let representer = Curve::new(Arc::clone(&grid), u)?;
        let gram = kernel.gram(&grid);
        let wu = DVector::from_iterator(
            grid.len(),
            representer.values().iter().zip(grid.weights()).map(|(u, w)| u * w),
        );
        let ku = gram * wu;
        let beta: Vec<f64> = grid
            .points()
            .iter()
            .zip(ku.iter())
            .map(|(&t, k)| {
                let poly: f64 = parts
                    .d
                    .iter()
                    .enumerate()
                    .map(|(j, dj)| dj * t.powi(j as i32))
                    .sum();
                poly + k
            })
            .collect();
        let beta_grid = Curve::new(Arc::clone(&grid), beta)?;
        let fit = FittedFlr {
            alpha_hat: parts.alpha_hat,
            d: parts.d,
            c: parts.c,
            mean_curve: parts.mean_curve,
            mean_response: parts.mean_response,
            centered_curves: parts.centered_curves,
            kernel,
            lambda: parts.lambda,
            hat_trace: parts.hat_trace,
            gcv_value: parts.gcv_value,
            representer,
            beta_grid,
        };
        fit.validate()?;
        Ok(fit)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.mean_curve.grid()
    }

    /// `β̂(t) = Σ_k d_k t^{k-1} + ∫ K(t,s) Σ_i c_i (x_i - x̄)(s) ds`.
    pub fn evaluate_beta(&self, t: f64) -> Result<f64> {
        self.evaluate_beta_derivative(t, 0)
    }

    /// `β̂^{(q)}(t)` for `q < m`.
    pub fn evaluate_beta_derivative(&self, t: f64, q: usize) -> Result<f64> {
        let m = self.kernel.order();
        if q >= m {
            return Err(FlrError::UnsupportedDerivativeOrder { q, order: m });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(FlrError::InvalidArgument(format!(
                "t = {t} lies outside [0, 1]"
            )));
        }
        let poly: f64 = self
            .d
            .iter()
            .enumerate()
            .skip(q)
            .map(|(j, dj)| {
                let coef: f64 = ((j - q + 1)..=j).map(|i| i as f64).product();
                dj * coef * t.powi((j - q) as i32)
            })
            .sum();
        let g = self.grid();
        let kern: f64 = g
            .points()
            .iter()
            .zip(g.weights())
            .zip(self.representer.values())
            .map(|((&s, w), u)| w * self.kernel.partial_t_unchecked(s, t, q) * u)
            .sum();
        Ok(poly + kern)
    }

    /// `β̂` sampled on the training grid.
    pub fn beta_on_grid(&self) -> &Curve {
        &self.beta_grid
    }

    /// `α̂ + ∫ x_new β̂`.
    pub fn predict(&self, x_new: &Curve) -> Result<f64> {
        if !same_grid(x_new.grid(), self.grid()) {
            return Err(FlrError::GridMismatch);
        }
        Ok(self.alpha_hat + inner_product(x_new, &self.beta_grid)?)
    }

    /// Structural invariants: lengths, λ > 0, `0 < tr(H) < n`, finite GCV.
    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        let fail = |msg: String| Err(FlrError::InvalidArgument(msg));
        if self.d.len() != self.kernel.order() {
            return fail(format!("d has {} entries, expected {}", self.d.len(), self.kernel.order()));
        }
        if self.centered_curves.len() != n {
            return fail("c and centered curves differ in length".into());
        }
        if !(self.lambda > 0.0) {
            return fail(format!("lambda = {} is not positive", self.lambda));
        }
        if !(self.hat_trace > 0.0 && self.hat_trace < n as f64) {
            return fail(format!("hat trace {} outside (0, {n})", self.hat_trace));
        }
        if !self.gcv_value.is_finite() {
            return fail("GCV value is not finite".into());
        }
        Ok(())
    }
}

/// Free-function form of [`Design::solve`] driven by a config.
pub fn solve(data: &Dataset, config: &FlrConfig) -> Result<FittedFlr> {
    config.validate()?;
    let kernel = SobolevKernel::new(config.order)?;
    let design = Design::new(data, &kernel)?;
    match config.lambda {
        LambdaChoice::Fixed(l) => design.solve(l),
        LambdaChoice::Search(s) => {
            let sel = design.select_lambda(&s)?;
            design.solve(sel.lambda)
        }
    }
}

pub fn hat_matrix(data: &Dataset, order: usize, lambda: f64) -> Result<DMatrix<f64>> {
    Design::new(data, &SobolevKernel::new(order)?)?.hat_matrix(lambda)
}

pub fn gcv(data: &Dataset, order: usize, lambda: f64) -> Result<f64> {
    Design::new(data, &SobolevKernel::new(order)?)?.gcv(lambda)
}

pub fn select_lambda_gcv(data: &Dataset, order: usize, search: &LambdaSearch) -> Result<LambdaSelection> {
    Design::new(data, &SobolevKernel::new(order)?)?.select_lambda(search)
}

/// The whole λ path of one dataset in diagonal form.
///
/// With `T = [Q₁ Q₂] [R; 0]` and `Q₂ᵀ Σ Q₂ = V diag(e) Vᵀ`:
/// `c = Q₂ V diag(1/(e_j + nλ)) Vᵀ Q₂ᵀ ỹ`, `R d = Q₁ᵀ(ỹ - Σ c)`, and
/// `I - H = nλ Q₂ V diag(1/(e_j + nλ)) Vᵀ Q₂ᵀ`.
#[derive(Debug, Clone)]
pub struct SpectralPath {
    n: usize,
    m: usize,
    eigenvalues: Vec<f64>,
    /// `Vᵀ Q₂ᵀ ỹ`
    z: DVector<f64>,
    /// `Q₂ V`, `n × (n - m)`
    basis: DMatrix<f64>,
    /// `R⁻¹ Q₁ᵀ ỹ`
    d_base: DVector<f64>,
    /// `R⁻¹ Q₁ᵀ Σ Q₂ V`, `m × (n - m)`
    d_coupling: DMatrix<f64>,
    /// `(K(x_i - x̄))(t_p) · Q₂ V`, `P × (n - m)`
    beta_basis: DMatrix<f64>,
    points: Vec<f64>,
}

impl SpectralPath {
    pub fn new(design: &Design) -> Result<SpectralPath> {
        let n = design.n();
        let m = design.order();
        let t = design.t_matrix();

        // Full orthogonal Q whose leading m columns span range(T).
        let mut aug = DMatrix::zeros(n, m + n);
        aug.view_mut((0, 0), (n, m)).copy_from(t);
        aug.view_mut((0, m), (n, n)).copy_from(&DMatrix::<f64>::identity(n, n));
        let q = QR::new(aug).q();
        let q1 = q.columns(0, m).into_owned();
        let q2 = q.columns(m, n - m).into_owned();

        let r = q1.transpose() * t;
        let rtr = r.transpose() * &r;
        checked_small_inverse(&rtr)?;
        let r_inv = r
            .try_inverse()
            .ok_or(FlrError::DegenerateDesign { condition: f64::INFINITY })?;

        let sigma = design.sigma();
        let reduced = q2.transpose() * sigma * &q2;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let (eigenvalues, v) = sorted_symmetric_eigen(reduced);
        let eigenvalues = eigenvalues.into_iter().map(|e| e.max(0.0)).collect();
        let basis = &q2 * v;
        let y = design.centered_response();
        let z = basis.transpose() * y;
        let d_base = &r_inv * (q1.transpose() * y);
        let d_coupling = &r_inv * (q1.transpose() * sigma * &basis);
        let beta_basis = design.kernel_images() * &basis;
        Ok(SpectralPath {
            n,
            m,
            eigenvalues,
            z,
            basis,
            d_base,
            d_coupling,
            beta_basis,
            points: design.grid().points().to_vec(),
        })
    }

    fn shrink(&self, lambda: f64) -> DVector<f64> {
        let nl = self.n as f64 * lambda;
        DVector::from_iterator(
            self.eigenvalues.len(),
            self.eigenvalues
                .iter()
                .zip(self.z.iter())
                .map(|(e, z)| z / (e + nl)),
        )
    }

    /// `tr(H(λ))` for the centered hat matrix.
    pub fn hat_trace(&self, lambda: f64) -> f64 {
        let nl = self.n as f64 * lambda;
        self.n as f64 - self.eigenvalues.iter().map(|e| nl / (e + nl)).sum::<f64>()
    }

    /// `‖ỹ - H(λ) ỹ‖²`
    pub fn residual_ss(&self, lambda: f64) -> f64 {
        let nl = self.n as f64 * lambda;
        self.eigenvalues
            .iter()
            .zip(self.z.iter())
            .map(|(e, z)| (nl * z / (e + nl)).powi(2))
            .sum()
    }

    pub fn gcv(&self, lambda: f64) -> Result<f64> {
        gcv_value(lambda, self.residual_ss(lambda), self.hat_trace(lambda), self.n)
    }

    /// Representer coefficients `(c, d)` at λ.
    pub fn coefficients(&self, lambda: f64) -> (DVector<f64>, DVector<f64>) {
        let s = self.shrink(lambda);
        let c = &self.basis * &s;
        let d = &self.d_base - &self.d_coupling * &s;
        (c, d)
    }

    /// `β̂(t_p)` on the grid at λ.
    pub fn beta_values(&self, lambda: f64) -> Vec<f64> {
        let s = self.shrink(lambda);
        let d = &self.d_base - &self.d_coupling * &s;
        let kc = &self.beta_basis * &s;
        self.points
            .iter()
            .zip(kc.iter())
            .map(|(&t, k)| {
                let poly: f64 = (0..self.m).map(|j| d[j] * t.powi(j as i32)).sum();
                poly + k
            })
            .collect()
    }
}

/// Outcome of a λ search.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub gcv: f64,
    /// Index of the grid argmin.
    pub grid_index: usize,
    /// `(λ, GCV(λ))` ascending in λ; undefined points are `+∞`.
    pub profile: Vec<(f64, f64)>,
}

/// Minimizes `criterion` over the search grid, ties going to the larger λ,
/// then optionally refines by golden section on the bracketing cells in `log10 λ`.
///
/// `criterion` returns `+∞` where it is undefined.
pub fn select_on_profile(
    search: &LambdaSearch,
    criterion: impl Fn(f64) -> f64,
) -> Result<LambdaSelection> {
    search.validate()?;
    let logs = search.log10_grid();
    let profile: Vec<(f64, f64)> = logs
        .iter()
        .map(|&e| {
            let l = 10f64.powf(e);
            let v = criterion(l);
            (l, if v.is_finite() { v } else { f64::INFINITY })
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, &(_, v)) in profile.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v <= profile[b].1) {
            best = Some(i);
        }
    }
    let idx = best.ok_or(FlrError::SelectionFailure)?;
    let (mut lambda, mut value) = profile[idx];

    if search.refine {
        let lo = logs[idx.saturating_sub(1)];
        let hi = logs[(idx + 1).min(logs.len() - 1)];
        let f = |e: f64| criterion(10f64.powf(e));
        let (e, v) = golden_section(f, lo, hi, 60);
        if v.is_finite() && v < value {
            lambda = 10f64.powf(e);
            value = v;
        }
    }
    Ok(LambdaSelection {
        lambda,
        gcv: value,
        grid_index: idx,
        profile,
    })
}

/// Golden-section minimization over `[a, b]` with a fixed iteration count.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iterations {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
