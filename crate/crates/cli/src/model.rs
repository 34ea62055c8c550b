//! JSON form of a fitted model.

use std::collections::BTreeMap;

use flr_core::estimator::{Design, FittedParts};
use flr_core::{Curve, Dataset, FittedFlr, Grid};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Tolerance for the stored `β̂` against the one rebuilt from `(c, d)`.
const BETA_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub alpha_hat: f64,
    pub lambda: f64,
    pub order: usize,
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    pub mean_response: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub beta: Vec<f64>,
    pub hat_trace: f64,
    pub gcv_value: f64,
    pub centered_curves: Vec<Vec<f64>>,
    pub centered_responses: Vec<f64>,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn from_fit(fit: &FittedFlr, centered_responses: Vec<f64>, provenance: Provenance) -> ModelFile {
        ModelFile {
            alpha_hat: fit.alpha_hat,
            lambda: fit.lambda,
            order: fit.kernel.order(),
            grid: fit.grid().points().to_vec(),
            mean_curve: fit.mean_curve.values().to_vec(),
            mean_response: fit.mean_response,
            c: fit.c.clone(),
            d: fit.d.clone(),
            beta: fit.beta_on_grid().values().to_vec(),
            hat_trace: fit.hat_trace,
            gcv_value: fit.gcv_value,
            centered_curves: fit.centered_curves.iter().map(|c| c.values().to_vec()).collect(),
            centered_responses,
            provenance,
        }
    }

    /// Rebuilds the fit and checks its invariants: structural ones, the
    /// stored `β̂` against the one implied by `(c, d)`, and first-order
    /// optimality on the stored training data.
    pub fn restore(&self) -> Result<FittedFlr, CliError> {
        let grid = Grid::from_points(self.grid.clone())?;
        let curve = |v: &Vec<f64>| Curve::new(grid.clone(), v.clone());
        let centered_curves = self.centered_curves.iter().map(curve).collect::<Result<Vec<_>, _>>()?;
        let fit = FittedFlr::from_parts(FittedParts {
            alpha_hat: self.alpha_hat,
            d: self.d.clone(),
            c: self.c.clone(),
            mean_curve: curve(&self.mean_curve)?,
            mean_response: self.mean_response,
            centered_curves: centered_curves.clone(),
            order: self.order,
            lambda: self.lambda,
            hat_trace: self.hat_trace,
            gcv_value: self.gcv_value,
        })?;
        let drift = fit
            .beta_on_grid()
            .values()
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        if self.beta.len() != self.grid.len() || drift > BETA_TOLERANCE {
            return Err(CliError::Invalid(format!(
                "stored slope function disagrees with its coefficients (max drift {drift:e})"
            )));
        }
        let training = Dataset::new(grid, centered_curves, self.centered_responses.clone())?;
        let design = Design::new(&training, &fit.kernel)?;
        let residual = design.optimality_residual(&fit);
        if residual >= design.optimality_tolerance() {
            return Err(CliError::Invalid(format!(
                "stored coefficients are not optimal (gradient {residual:e})"
            )));
        }
        Ok(fit)
    }
}
