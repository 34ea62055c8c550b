//! Regularized functional linear regression in a reproducing kernel Hilbert space.
//!
//! The model is `Y = α + ∫ X(t) β(t) dt + ε` on `T = [0, 1]`, with the slope
//! function estimated by penalized least squares over the Sobolev space
//! `W₂^m`. All functions are sampled on a shared quadrature [`Grid`], and every
//! integral in the crate goes through its weights.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`grid`] | quadrature grid, sampled curves, datasets, CSV I/O |
//! | [`kernel`] | Bernoulli polynomials and the order-`m` Sobolev kernel |
//! | [`estimator`] | Σ/T assembly, closed-form solve, hat matrix, GCV |
//! | [`operator`] | Mercer decompositions, simultaneous diagonalization, `‖·‖ₐ` norms |
//! | [`simulation`] | Monte Carlo benchmark and convergence-rate fits |

pub mod error;
pub mod estimator;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod operator;
pub mod simulation;

pub use error::{FlrError, Result};
pub use estimator::{Design, FittedFlr, FittedParts, FlrConfig, LambdaChoice, LambdaSearch, SpectralPath};
pub use grid::{Curve, Dataset, Grid};
pub use kernel::{BernoulliTable, SobolevKernel};
pub use operator::{DiagonalizedPair, MercerSystem};
pub use simulation::{RateFit, ReplicateResult, SimScenario, Spacing, TruthModel};
