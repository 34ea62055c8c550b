//! Mercer decompositions on a quadrature grid and the simultaneous
//! diagonalization of a reproducing kernel `K` with a covariance `C`.
//!
//! Integral operators are discretized as `(Af)(s_p) = Σ_q A(s_p, t_q) w_q f(t_q)`.
//! Symmetrizing with `W^{1/2}` gives an ordinary symmetric eigenproblem whose
//! eigenvectors, rescaled by `W^{-1/2}`, are orthonormal under the quadrature
//! inner product.
//!
//! For the pair `(K, C)` the basis `ω_k` satisfies `⟨Cω_j, ω_k⟩ = δ_jk` and
//! `⟨ω_j, ω_k⟩_R = (1 + γ_k⁻¹) δ_jk`, where `⟨f, g⟩_R = ⟨Cf, g⟩ + ⟨f, g⟩_K`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{FlrError, Result};
use crate::grid::{Curve, Grid};
use crate::kernel::SobolevKernel;
use crate::linalg::{jacobi_eigen, sorted_symmetric_eigen};

const ASYMMETRY_TOLERANCE: f64 = 1e-12;
const CLIP_RATIO: f64 = 1e-12;
const SIGN_THRESHOLD: f64 = 1e-8;

/// `[k(t_p, t_q)]` on the grid.
pub fn kernel_matrix(grid: &Grid, k: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    let t = grid.points();
    DMatrix::from_fn(t.len(), t.len(), |i, j| k(t[i], t[j]))
}

/// Kernels addressable by name from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedKernel {
    /// Reproducing kernel of `W₂^m` with the given order.
    Sobolev(usize),
    /// `min(s, t)`
    Brownian,
    /// `exp(-|s - t|)`
    OrnsteinUhlenbeck,
}

impl NamedKernel {
    pub fn matrix(&self, grid: &Grid) -> Result<DMatrix<f64>> {
        match *self {
            NamedKernel::Sobolev(m) => Ok(SobolevKernel::new(m)?.gram(grid)),
            NamedKernel::Brownian => Ok(kernel_matrix(grid, f64::min)),
            NamedKernel::OrnsteinUhlenbeck => Ok(kernel_matrix(grid, |s, t| (-(s - t).abs()).exp())),
        }
    }
}

impl fmt::Display for NamedKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NamedKernel::Sobolev(m) => write!(f, "sobolev:{m}"),
            NamedKernel::Brownian => f.write_str("brownian"),
            NamedKernel::OrnsteinUhlenbeck => f.write_str("ou"),
        }
    }
}

impl FromStr for NamedKernel {
    type Err = FlrError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "brownian" => Ok(NamedKernel::Brownian),
            "ou" => Ok(NamedKernel::OrnsteinUhlenbeck),
            _ => {
                let order = s
                    .strip_prefix("sobolev:")
                    .and_then(|m| m.parse::<usize>().ok())
                    .ok_or_else(|| {
                        FlrError::InvalidArgument(format!(
                            "unknown kernel '{s}' (expected sobolev:<m>, brownian or ou)"
                        ))
                    })?;
                SobolevKernel::new(order)?;
                Ok(NamedKernel::Sobolev(order))
            }
        }
    }
}

/// Leading eigenpairs of a kernel's integral operator.
#[derive(Debug, Clone)]
pub struct MercerSystem {
    grid: Arc<Grid>,
    eigenvalues: Vec<f64>,
    /// Eigenfunction values, `P × M`.
    basis: DMatrix<f64>,
}

impl MercerSystem {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenfunctions as columns sampled on the grid.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenfunction(&self, k: usize) -> Curve {
        Curve::new(Arc::clone(&self.grid), self.basis.column(k).iter().copied().collect())
            .expect("finite eigenvector")
    }

    pub fn eigenfunctions(&self) -> Vec<Curve> {
        (0..self.len()).map(|k| self.eigenfunction(k)).collect()
    }

    /// `Σ_k λ_k e_k(t_p) e_k(t_q)`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.basis.nrows(), self.len(), |p, k| {
            self.basis[(p, k)] * self.eigenvalues[k]
        });
        scaled * self.basis.transpose()
    }
}

fn sqrt_weights(grid: &Grid) -> Vec<f64> {
    grid.weights().iter().map(|w| w.sqrt()).collect()
}

/// Leading `terms` eigenpairs of the integral operator with the given kernel matrix.
pub fn mercer(kernel: &DMatrix<f64>, grid: &Arc<Grid>, terms: usize) -> Result<MercerSystem> {
    let p = grid.len();
    if kernel.nrows() != p || kernel.ncols() != p {
        return Err(FlrError::GridMismatch);
    }
    if terms == 0 || terms > p {
        return Err(FlrError::InvalidArgument(format!(
            "number of terms must be in [1, {p}], got {terms}"
        )));
    }
    let scale = kernel.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (kernel - kernel.transpose()).amax() / scale;
    if asymmetry > ASYMMETRY_TOLERANCE {
        return Err(FlrError::InvalidKernel { asymmetry });
    }

    let sw = sqrt_weights(grid);
    let sym = DMatrix::from_fn(p, p, |i, j| {
        0.5 * sw[i] * (kernel[(i, j)] + kernel[(j, i)]) * sw[j]
    });
    let (values, vectors) = sorted_symmetric_eigen(sym);
    let top = values[0].max(0.0);
    let eigenvalues: Vec<f64> = values[..terms]
        .iter()
        .map(|&v| if v < CLIP_RATIO * top { 0.0 } else { v })
        .collect();

    let mut basis = DMatrix::zeros(p, terms);
    for k in 0..terms {
        let col = vectors.column(k);
        let sign = match col.iter().find(|v| v.abs() > SIGN_THRESHOLD) {
            Some(&v) if v < 0.0 => -1.0,
            _ => 1.0,
        };
        for i in 0..p {
            basis[(i, k)] = sign * col[i] / sw[i];
        }
    }
    Ok(MercerSystem {
        grid: Arc::clone(grid),
        eigenvalues,
        basis,
    })
}

/// The `(γ_k, ν_k, ω_k)` system of a kernel/covariance pair in a truncated
/// eigenbasis of the kernel.
#[derive(Debug, Clone)]
pub struct DiagonalizedPair {
    grid: Arc<Grid>,
    covariance: DMatrix<f64>,
    rho: Vec<f64>,
    psi: DMatrix<f64>,
    gamma: Vec<f64>,
    nu: Vec<f64>,
    /// `ω_k` as columns, `P × M`.
    omega: DMatrix<f64>,
}

impl DiagonalizedPair {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Kernel eigenvalues used in the truncation.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn omega_matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn omega(&self, k: usize) -> Curve {
        Curve::new(Arc::clone(&self.grid), self.omega.column(k).iter().copied().collect())
            .expect("finite basis function")
    }

    pub fn omegas(&self) -> Vec<Curve> {
        (0..self.len()).map(|k| self.omega(k)).collect()
    }

    /// `(Cf)(t_p)` by quadrature.
    pub fn apply_covariance(&self, f: &Curve) -> Result<Vec<f64>> {
        self.check_grid(f)?;
        let wf: Vec<f64> = f
            .values()
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * w)
            .collect();
        let wf = nalgebra::DVector::from_vec(wf);
        Ok((&self.covariance * wf).iter().copied().collect())
    }

    /// `⟨Cf, g⟩`
    pub fn covariance_inner(&self, f: &Curve, g: &Curve) -> Result<f64> {
        self.check_grid(g)?;
        let cf = self.apply_covariance(f)?;
        Ok(weighted_dot(self.grid.weights(), &cf, g.values()))
    }

    /// `⟨f, ψ_j⟩` for the truncated kernel basis.
    pub fn psi_coefficients(&self, f: &Curve) -> Result<Vec<f64>> {
        self.check_grid(f)?;
        Ok((0..self.psi.ncols())
            .map(|j| {
                let col: Vec<f64> = self.psi.column(j).iter().copied().collect();
                weighted_dot(self.grid.weights(), f.values(), &col)
            })
            .collect())
    }

    /// The curve `Σ_j a_j ψ_j`.
    pub fn psi_combination(&self, a: &[f64]) -> Result<Curve> {
        if a.len() != self.psi.ncols() {
            return Err(FlrError::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.psi.ncols(),
                a.len()
            )));
        }
        let v = &self.psi * nalgebra::DVector::from_column_slice(a);
        Curve::new(Arc::clone(&self.grid), v.iter().copied().collect())
    }

    fn check_grid(&self, f: &Curve) -> Result<()> {
        if crate::grid::same_grid(f.grid(), &self.grid) {
            Ok(())
        } else {
            Err(FlrError::GridMismatch)
        }
    }
}

fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Diagonalizes `C` against the first `terms` eigenfunctions of `K`.
///
/// With `C̃_jk = ⟨Cψ_j, ψ_k⟩` and `D_ρ^{1/2} C̃ D_ρ^{1/2} v_k = γ_k v_k`,
/// `ω_k = Σ_j ρ_j^{1/2} v_jk ψ_j / γ_k^{1/2}`.
pub fn simultaneous_diagonalize(
    kernel_system: &MercerSystem,
    covariance: &DMatrix<f64>,
    grid: &Arc<Grid>,
    terms: usize,
) -> Result<DiagonalizedPair> {
    let p = grid.len();
    if !crate::grid::same_grid(kernel_system.grid(), grid)
        || covariance.nrows() != p
        || covariance.ncols() != p
    {
        return Err(FlrError::GridMismatch);
    }
    if terms == 0 || terms > kernel_system.len() {
        return Err(FlrError::Truncation(format!(
            "requested {terms} terms from a kernel system with {}",
            kernel_system.len()
        )));
    }
    let rho: Vec<f64> = kernel_system.eigenvalues()[..terms].to_vec();
    if let Some(k) = rho.iter().position(|&r| !(r > 0.0)) {
        return Err(FlrError::Truncation(format!(
            "kernel eigenvalue {} is not positive",
            k + 1
        )));
    }
    let psi = kernel_system.basis().columns(0, terms).into_owned();
    let w = grid.weights();
    let wpsi = DMatrix::from_fn(p, terms, |i, j| w[i] * psi[(i, j)]);
    let c_tilde = wpsi.transpose() * covariance * &wpsi;
    let sqrt_rho: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    let graded = DMatrix::from_fn(terms, terms, |i, j| {
        0.5 * sqrt_rho[i] * (c_tilde[(i, j)] + c_tilde[(j, i)]) * sqrt_rho[j]
    });
    let (gamma, v) = jacobi_eigen(&graded);
    if let Some(k) = gamma.iter().position(|&g| !(g > 0.0)) {
        return Err(FlrError::Truncation(format!(
            "diagonalized eigenvalue {} is not positive",
            k + 1
        )));
    }
    let coef = DMatrix::from_fn(terms, terms, |j, k| sqrt_rho[j] * v[(j, k)] / gamma[k].sqrt());
    let omega = &psi * coef;
    let nu = gamma.iter().map(|g| g / (1.0 + g)).collect();
    Ok(DiagonalizedPair {
        grid: Arc::clone(grid),
        covariance: covariance.clone(),
        rho,
        psi,
        gamma,
        nu,
        omega,
    })
}

/// `f_k = ⟨Cf, ω_k⟩`, the coordinates of `f` in the `ω` basis.
pub fn coefficients_in_omega(pair: &DiagonalizedPair, f: &Curve) -> Result<Vec<f64>> {
    let cf = pair.apply_covariance(f)?;
    let w = pair.grid.weights();
    Ok((0..pair.len())
        .map(|k| {
            cf.iter()
                .zip(w)
                .zip(pair.omega.column(k).iter())
                .map(|((c, w), o)| c * w * o)
                .sum()
        })
        .collect())
}

/// `⟨f, g⟩_R = ⟨Cf, g⟩ + Σ_j ⟨f,ψ_j⟩⟨g,ψ_j⟩ / ρ_j` in the truncated basis.
pub fn r_inner(pair: &DiagonalizedPair, f: &Curve, g: &Curve) -> Result<f64> {
    let a = pair.psi_coefficients(f)?;
    let b = pair.psi_coefficients(g)?;
    let penalty: f64 = a
        .iter()
        .zip(&b)
        .zip(&pair.rho)
        .map(|((a, b), r)| a * b / r)
        .sum();
    Ok(pair.covariance_inner(f, g)? + penalty)
}

/// `‖f‖_a² = Σ_k (1 + γ_k^{-a}) f_k²` from `ω` coordinates.
pub fn norm_a(pair: &DiagonalizedPair, coefficients: &[f64], a: f64) -> Result<f64> {
    norm_a_with(pair.gamma(), coefficients, a)
}

/// [`norm_a`] for a bare `γ` sequence.
pub fn norm_a_with(gamma: &[f64], coefficients: &[f64], a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(FlrError::InvalidArgument(format!(
            "norm index a must lie in [0, 1], got {a}"
        )));
    }
    if coefficients.len() > gamma.len() {
        return Err(FlrError::InvalidArgument(format!(
            "{} coefficients for {} basis functions",
            coefficients.len(),
            gamma.len()
        )));
    }
    Ok(coefficients
        .iter()
        .zip(gamma)
        .map(|(f, g)| (1.0 + g.powf(-a)) * f * f)
        .sum())
}

/// `Σ_k (1 + γ_k^{-a}) (λγ_k⁻¹ / (1 + λγ_k⁻¹))² a_k²`, the squared `‖·‖_a`
/// distance between the noiseless penalized solution and the truth.
pub fn deterministic_error(gamma: &[f64], coefficients: &[f64], lambda: f64, a: f64) -> f64 {
    gamma
        .iter()
        .zip(coefficients)
        .map(|(&g, &c)| {
            let r = lambda / g;
            let shrink = r / (1.0 + r);
            (1.0 + g.powf(-a)) * shrink * shrink * c * c
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::log_log_slope;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn brownian_mu(k: usize) -> f64 {
        4.0 / ((2 * k - 1) as f64 * PI).powi(2)
    }

    fn sobolev_system(p: usize, terms: usize) -> (Arc<Grid>, MercerSystem) {
        let g = Grid::uniform(p).unwrap();
        let k = NamedKernel::Sobolev(2).matrix(&g).unwrap();
        let sys = mercer(&k, &g, terms).unwrap();
        (g, sys)
    }

    /// `Σ_k μ_k ψ_k(s) ψ_k(t)` from the kernel's own eigenfunctions.
    fn commuting_covariance(sys: &MercerSystem, mu: &[f64]) -> DMatrix<f64> {
        let psi = sys.basis();
        let scaled = DMatrix::from_fn(psi.nrows(), mu.len(), |i, k| psi[(i, k)] * mu[k]);
        &scaled * psi.columns(0, mu.len()).transpose()
    }

    #[test]
    fn kernel_names_round_trip() {
        for s in ["sobolev:1", "sobolev:4", "brownian", "ou"] {
            assert_eq!(s.parse::<NamedKernel>().unwrap().to_string(), s);
        }
        assert!("sobolev:5".parse::<NamedKernel>().is_err());
        assert!("gauss".parse::<NamedKernel>().is_err());
    }

    #[test]
    fn rank_one_kernel() {
        let g = Grid::uniform(101).unwrap();
        let u = |t: f64| 1.0 + t * t;
        let k = kernel_matrix(&g, |s, t| u(s) * u(t));
        let sys = mercer(&k, &g, 3).unwrap();
        let uc = Curve::from_fn(&g, u);
        let norm2 = crate::grid::inner_product(&uc, &uc).unwrap();
        assert!((sys.eigenvalues()[0] / norm2 - 1.0).abs() < 1e-12);
        assert_eq!(&sys.eigenvalues()[1..], &[0.0, 0.0]);
        let e = sys.eigenfunction(0);
        for (a, b) in e.values().iter().zip(uc.values()) {
            assert!((a - b / norm2.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenfunctions_orthonormal_and_reconstruct() {
        let g = Grid::uniform(121).unwrap();
        let k = NamedKernel::OrnsteinUhlenbeck.matrix(&g).unwrap();
        let sys = mercer(&k, &g, 121).unwrap();
        let w = g.weights();
        let b = sys.basis();
        let wb = DMatrix::from_fn(121, 121, |i, j| w[i] * b[(i, j)]);
        let gram = b.transpose() * wb;
        assert!((gram - DMatrix::<f64>::identity(121, 121)).amax() < 1e-8);
        let rel = (sys.reconstruct() - &k).norm() / k.norm();
        assert!(rel < 1e-6, "reconstruction error {rel}");
        assert!(sys.eigenvalues().windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn sign_convention() {
        let (_, sys) = sobolev_system(101, 10);
        for k in 0..10 {
            let first = sys.basis().column(k).iter().copied().find(|v| v.abs() > 1e-8).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn asymmetric_kernel_rejected() {
        let g = Grid::uniform(11).unwrap();
        let k = kernel_matrix(&g, |s, t| s * t + 1e-6 * s);
        assert!(matches!(mercer(&k, &g, 3), Err(FlrError::InvalidKernel { .. })));
        assert!(mercer(&kernel_matrix(&g, f64::min), &g, 12).is_err());
    }

    #[test]
    fn brownian_eigenvalues_match_analytic() {
        let g = Grid::uniform(401).unwrap();
        let sys = mercer(&NamedKernel::Brownian.matrix(&g).unwrap(), &g, 10).unwrap();
        for k in 1..=10 {
            let rel = sys.eigenvalues()[k - 1] / brownian_mu(k) - 1.0;
            assert!(rel.abs() < 0.01, "k={k}: {rel}");
        }
    }

    #[test]
    fn sobolev_eigenvalue_decay() {
        let (_, sys) = sobolev_system(401, 50);
        let slope = log_log_slope(sys.eigenvalues(), 5, 50);
        assert!((slope + 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn commuting_pair_is_exact() {
        let (g, sys) = sobolev_system(401, 50);
        let mu: Vec<f64> = (1..=50).map(brownian_mu).collect();
        let c = commuting_covariance(&sys, &mu);
        let pair = simultaneous_diagonalize(&sys, &c, &g, 50).unwrap();
        for k in 0..30 {
            let expect = sys.eigenvalues()[k] * mu[k];
            assert!((pair.gamma()[k] / expect - 1.0).abs() < 1e-10, "k={k}");
            let psi = sys.basis().column(k);
            let om = pair.omega_matrix().column(k);
            let scale = mu[k].sqrt();
            let sign = if om.dot(&psi) >= 0.0 { 1.0 } else { -1.0 };
            let sup = om
                .iter()
                .zip(psi.iter())
                .map(|(o, p)| (sign * o - p / scale).abs())
                .fold(0.0, f64::max);
            assert!(sup < 1e-8, "k={k}: {sup}");
        }
    }

    #[test]
    fn identical_kernels_square_eigenvalues() {
        let (g, sys) = sobolev_system(201, 30);
        let k = NamedKernel::Sobolev(2).matrix(&g).unwrap();
        let pair = simultaneous_diagonalize(&sys, &k, &g, 20).unwrap();
        for j in 0..20 {
            let rho = sys.eigenvalues()[j];
            assert!((pair.gamma()[j] / (rho * rho) - 1.0).abs() < 1e-10, "j={j}");
        }
    }

    #[test]
    fn sobolev_brownian_gamma_decay() {
        let (g, sys) = sobolev_system(401, 50);
        let c = NamedKernel::Brownian.matrix(&g).unwrap();
        let pair = simultaneous_diagonalize(&sys, &c, &g, 50).unwrap();
        let slope = log_log_slope(pair.gamma(), 5, 30);
        assert!((slope + 6.0).abs() < 0.5, "slope {slope}");
        assert!(pair.nu().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    fn brownian_pair() -> DiagonalizedPair {
        let (g, sys) = sobolev_system(201, 30);
        let c = NamedKernel::Brownian.matrix(&g).unwrap();
        simultaneous_diagonalize(&sys, &c, &g, 30).unwrap()
    }

    #[test]
    fn omega_biorthogonality() {
        let pair = brownian_pair();
        let om = pair.omegas();
        for j in 0..pair.len() {
            for k in 0..pair.len() {
                let c = pair.covariance_inner(&om[j], &om[k]).unwrap();
                let delta = if j == k { 1.0 } else { 0.0 };
                assert!((c - delta).abs() < 1e-6, "C ({j},{k}) {c}");
                let r = r_inner(&pair, &om[j], &om[k]).unwrap();
                let expect = delta / pair.nu()[k];
                let scale = (1.0 / (pair.nu()[j] * pair.nu()[k])).sqrt();
                assert!((r - expect).abs() < 1e-6 * scale, "R ({j},{k}) {r} vs {expect}");
            }
        }
    }

    #[test]
    fn omega_coefficients() {
        let pair = brownian_pair();
        let f = pair.omega(2);
        let coefs = coefficients_in_omega(&pair, &f).unwrap();
        for (k, c) in coefs.iter().enumerate() {
            let delta = if k == 2 { 1.0 } else { 0.0 };
            assert!((c - delta).abs() < 1e-8);
        }
        let g = pair.grid().clone();
        let a = Curve::from_fn(&g, |t| t.sin());
        let b = Curve::from_fn(&g, |t| (3.0 * t).cos());
        let comb = a.combine(2.0, &b, -0.5).unwrap();
        let (ca, cb, cc) = (
            coefficients_in_omega(&pair, &a).unwrap(),
            coefficients_in_omega(&pair, &b).unwrap(),
            coefficients_in_omega(&pair, &comb).unwrap(),
        );
        for k in 0..pair.len() {
            assert!((cc[k] - (2.0 * ca[k] - 0.5 * cb[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_identities_on_psi_span() {
        let pair = brownian_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<f64> = (0..pair.len()).map(|j| rng.random_range(-1.0..1.0) / (1.0 + j as f64)).collect();
            let f = pair.psi_combination(&a).unwrap();
            let fk = coefficients_in_omega(&pair, &f).unwrap();
            let cff = pair.covariance_inner(&f, &f).unwrap();
            let sum: f64 = fk.iter().map(|v| v * v).sum();
            assert!((sum / cff - 1.0).abs() < 1e-6);
            let rff = r_inner(&pair, &f, &f).unwrap();
            let diag: f64 = fk.iter().zip(pair.gamma()).map(|(v, g)| (1.0 + 1.0 / g) * v * v).sum();
            assert!((diag / rff - 1.0).abs() < 1e-6, "{diag} vs {rff}");
        }
    }

    #[test]
    fn norm_a_examples() {
        let pair = brownian_pair();
        let f = pair.psi_combination(&(0..pair.len()).map(|j| 1.0 / (1.0 + j as f64).powi(2)).collect::<Vec<_>>()).unwrap();
        let fk = coefficients_in_omega(&pair, &f).unwrap();
        let n0 = norm_a(&pair, &fk, 0.0).unwrap();
        assert!((n0 / (2.0 * pair.covariance_inner(&f, &f).unwrap()) - 1.0).abs() < 1e-6);

        let mut unit = vec![0.0; pair.len()];
        unit[0] = 1.0;
        for a in [0.0, 0.3, 1.0] {
            let v = norm_a(&pair, &unit, a).unwrap();
            assert!((v - (1.0 + pair.gamma()[0].powf(-a))).abs() < 1e-12);
        }
        assert!(norm_a(&pair, &fk, 1.5).is_err());
        assert!(norm_a(&pair, &fk, -0.1).is_err());
    }

    #[test]
    fn norm_a_commuting_oracle() {
        let (g, sys) = sobolev_system(201, 30);
        let mu: Vec<f64> = (1..=30).map(brownian_mu).collect();
        let c = commuting_covariance(&sys, &mu);
        let pair = simultaneous_diagonalize(&sys, &c, &g, 30).unwrap();
        let a: Vec<f64> = (0..30).map(|j| (-1f64).powi(j) / (1.0 + j as f64).powi(3)).collect();
        let f = pair.psi_combination(&a).unwrap();
        let fk = coefficients_in_omega(&pair, &f).unwrap();
        // In the commuting case f = Σ a_j ψ_j has ⟨Cf,f⟩ = Σ μ_j a_j² and
        // Σ γ⁻¹ f_k² = Σ a_j² / ρ_j.
        let rho = sys.eigenvalues();
        let oracle: f64 = (0..30).map(|j| mu[j] * a[j] * a[j] + a[j] * a[j] / rho[j]).sum();
        let v = norm_a(&pair, &fk, 1.0).unwrap();
        assert!((v / oracle - 1.0).abs() < 1e-6, "{v} vs {oracle}");
    }

    #[test]
    fn deterministic_error_examples() {
        let gamma: Vec<f64> = (1..=40).map(|k| (k as f64).powi(-8)).collect();
        let mut single = vec![0.0; 40];
        single[0] = 1.0;
        let l = 1e-3;
        let r = l / gamma[0];
        let expect = 2.0 * (r / (1.0 + r)).powi(2);
        assert!((deterministic_error(&gamma, &single, l, 0.0) - expect).abs() < 1e-15);

        let coefs: Vec<f64> = (1..=40).map(|k| (k as f64).powf(-4.6)).collect();
        let mut prev = f64::INFINITY;
        for e in [-2, -6, -10, -14] {
            let v = deterministic_error(&gamma, &coefs, 10f64.powi(e), 0.5);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn deterministic_error_scaling() {
        // a_k² = k^{-9.2}: Σ γ_k⁻¹ a_k² converges, and the bias scales like λ^{1-a}.
        let gamma: Vec<f64> = (1..=20000).map(|k| (k as f64).powi(-8)).collect();
        let coefs: Vec<f64> = (1..=20000).map(|k| (k as f64).powf(-4.6)).collect();
        let logs: Vec<f64> = (0..=20).map(|i| -8.0 + 0.25 * i as f64).collect();
        for a in [0.0, 0.5] {
            let vals: Vec<f64> = logs
                .iter()
                .map(|e| deterministic_error(&gamma, &coefs, 10f64.powf(*e), a).ln())
                .collect();
            let x: Vec<f64> = logs.iter().map(|e| e * std::f64::consts::LN_10).collect();
            let slope = crate::linalg::fit_line(&x, &vals).slope;
            assert!((slope - (1.0 - a)).abs() < 0.1, "a={a}: slope {slope}");
        }
    }

    #[test]
    fn truncation_errors() {
        let g = Grid::uniform(51).unwrap();
        let u = kernel_matrix(&g, |s, t| s * t);
        let sys = mercer(&u, &g, 5).unwrap();
        let c = NamedKernel::Brownian.matrix(&g).unwrap();
        assert!(matches!(
            simultaneous_diagonalize(&sys, &c, &g, 3),
            Err(FlrError::Truncation(_))
        ));
        assert!(simultaneous_diagonalize(&sys, &c, &g, 1).is_ok());
        assert!(simultaneous_diagonalize(&sys, &c, &g, 6).is_err());
    }
}
