//! Bernoulli polynomials and the order-`m` Sobolev reproducing kernel
//!
//! `K(s,t) = B_m(s) B_m(t) / (m!)² + (-1)^{m-1} B_{2m}(|s-t|) / (2m)!`,
//! the kernel of the penalized part of `W₂^m[0,1]` whose null space is spanned
//! by the monomials `1, t, …, t^{m-1}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_rational::Ratio;

use crate::error::{FlrError, Result};
use crate::grid::{Curve, Grid};

/// Largest supported kernel order.
pub const MAX_ORDER: usize = 4;

/// Monomial coefficients of `B_0, …, B_max_degree`.
///
/// Built from `B_0 = 1`, `B_j' = j·B_{j-1}` and `∫₀¹ B_j = 0` in exact
/// rational arithmetic, then rounded to `f64` once.
#[derive(Debug, Clone)]
pub struct BernoulliTable {
    coeffs: Vec<Vec<f64>>,
}

impl BernoulliTable {
    pub fn new(max_degree: usize) -> BernoulliTable {
        let mut exact: Vec<Vec<Ratio<i64>>> = vec![vec![Ratio::from_integer(1)]];
        for j in 1..=max_degree {
            let prev = &exact[j - 1];
            let mut next = vec![Ratio::from_integer(0); j + 1];
            for (k, c) in prev.iter().enumerate() {
                next[k + 1] = c * Ratio::from_integer(j as i64) / Ratio::from_integer(k as i64 + 1);
            }
            let mean: Ratio<i64> = next
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c / Ratio::from_integer(k as i64 + 1))
                .sum();
            next[0] = -mean;
            exact.push(next);
        }
        let coeffs = exact
            .iter()
            .map(|row| {
                row.iter()
                    .map(|r| *r.numer() as f64 / *r.denom() as f64)
                    .collect()
            })
            .collect();
        BernoulliTable { coeffs }
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficients of `B_j` in increasing powers of `x`.
    pub fn coefficients(&self, j: usize) -> Option<&[f64]> {
        self.coeffs.get(j).map(Vec::as_slice)
    }

    /// `B_j(x)`.
    pub fn eval(&self, j: usize, x: f64) -> Result<f64> {
        if j > self.max_degree() {
            return Err(FlrError::InvalidArgument(format!(
                "Bernoulli degree {j} exceeds table maximum {}",
                self.max_degree()
            )));
        }
        Ok(self.eval_unchecked(j, x))
    }

    #[inline]
    fn eval_unchecked(&self, j: usize, x: f64) -> f64 {
        self.coeffs[j].iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `k! / (k - q)!`
fn falling_factorial(k: usize, q: usize) -> f64 {
    ((k - q + 1)..=k).map(|i| i as f64).product()
}

/// The Sobolev kernel of order `m` together with its null-space basis.
#[derive(Debug, Clone)]
pub struct SobolevKernel {
    order: usize,
    bernoulli: BernoulliTable,
    scale_m: f64,
    scale_2m: f64,
}

impl SobolevKernel {
    pub fn new(order: usize) -> Result<SobolevKernel> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(FlrError::InvalidArgument(format!(
                "kernel order must lie in [1, {MAX_ORDER}], got {order}"
            )));
        }
        let fm = factorial(order);
        let sign = if order % 2 == 1 { 1.0 } else { -1.0 };
        Ok(SobolevKernel {
            order,
            bernoulli: BernoulliTable::new(2 * order),
            scale_m: 1.0 / (fm * fm),
            scale_2m: sign / factorial(2 * order),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Dimension of the penalty's null space.
    pub fn null_space_dim(&self) -> usize {
        self.order
    }

    pub fn bernoulli(&self) -> &BernoulliTable {
        &self.bernoulli
    }

    fn check_unit(x: f64, name: &str) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(FlrError::InvalidArgument(format!(
                "{name} = {x} lies outside [0, 1]"
            )))
        }
    }

    /// `K(s, t)`.
    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        Self::check_unit(s, "s")?;
        Self::check_unit(t, "t")?;
        Ok(self.eval_unchecked(s, t))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, s: f64, t: f64) -> f64 {
        let m = self.order;
        let b = &self.bernoulli;
        b.eval_unchecked(m, s) * b.eval_unchecked(m, t) * self.scale_m
            + b.eval_unchecked(2 * m, (s - t).abs()) * self.scale_2m
    }

    /// `∂^q K(s, t) / ∂t^q` for `q < m`.
    ///
    /// On the diagonal `s = t` the two one-sided limits agree and that common
    /// value is returned (odd-index Bernoulli numbers above 1 vanish).
    pub fn partial_t(&self, s: f64, t: f64, q: usize) -> Result<f64> {
        if q >= self.order {
            return Err(FlrError::UnsupportedDerivativeOrder {
                q,
                order: self.order,
            });
        }
        Self::check_unit(s, "s")?;
        Self::check_unit(t, "t")?;
        Ok(self.partial_t_unchecked(s, t, q))
    }

    pub(crate) fn partial_t_unchecked(&self, s: f64, t: f64, q: usize) -> f64 {
        if q == 0 {
            return self.eval_unchecked(s, t);
        }
        let m = self.order;
        let b = &self.bernoulli;
        let smooth =
            b.eval_unchecked(m, s) * falling_factorial(m, q) * b.eval_unchecked(m - q, t) * self.scale_m;
        let sign = if t > s {
            1.0
        } else if t < s {
            if q % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        } else if q % 2 == 0 {
            1.0
        } else {
            0.0
        };
        let kink = if sign == 0.0 {
            0.0
        } else {
            sign * falling_factorial(2 * m, q)
                * b.eval_unchecked(2 * m - q, (s - t).abs())
                * self.scale_2m
        };
        smooth + kink
    }

    /// `(K f)(t) = ∫ K(t, s) f(s) ds` by grid quadrature.
    pub fn apply(&self, f: &Curve, t: f64) -> Result<f64> {
        Self::check_unit(t, "t")?;
        let g = f.grid();
        Ok(g.points()
            .iter()
            .zip(g.weights())
            .zip(f.values())
            .map(|((&s, w), v)| w * self.eval_unchecked(t, s) * v)
            .sum())
    }

    /// `[K(t_i, t_j)]` on the grid, filled from the upper triangle.
    pub fn gram(&self, grid: &Grid) -> DMatrix<f64> {
        let pts = grid.points();
        let p = pts.len();
        let mut k = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j {
                let v = self.eval_unchecked(pts[i], pts[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Monomials `1, t, …, t^{m-1}` sampled on `grid`.
    pub fn null_space_basis(&self, grid: &Arc<Grid>) -> Vec<Curve> {
        (0..self.order)
            .map(|j| Curve::from_fn(grid, |t| t.powi(j as i32)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bernoulli values from the classical generating recurrence
    /// `B_n(x) = Σ_k C(n,k) B_k x^{n-k}` with Bernoulli numbers
    /// `Σ_{k<n+1} C(n+1,k) B_k = 0`, independent of the table construction.
    fn bernoulli_oracle(n: usize, x: f64) -> f64 {
        let binom = |n: usize, k: usize| -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let mut numbers = vec![1.0];
        for j in 1..=n {
            let s: f64 = (0..j).map(|k| binom(j + 1, k) * numbers[k]).sum();
            numbers.push(-s / (j + 1) as f64);
        }
        (0..=n).map(|k| binom(n, k) * numbers[k] * x.powi((n - k) as i32)).sum()
    }

    #[test]
    fn bernoulli_known_values() {
        let b = BernoulliTable::new(8);
        assert_eq!(b.eval(1, 0.5).unwrap(), 0.0);
        assert!((b.eval(2, 0.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((b.eval(4, 0.0).unwrap() + 1.0 / 30.0).abs() < 1e-15);
        assert!(b.eval(9, 0.1).is_err());
    }

    #[test]
    fn bernoulli_matches_generating_recurrence() {
        let b = BernoulliTable::new(8);
        for j in 0..=8 {
            for &x in &[0.0, 0.13, 0.5, 0.77, 1.0] {
                let diff = (b.eval(j, x).unwrap() - bernoulli_oracle(j, x)).abs();
                assert!(diff < 1e-13, "B_{j}({x}) off by {diff}");
            }
        }
    }

    #[test]
    fn bernoulli_table_invariants() {
        let b = BernoulliTable::new(8);
        assert_eq!(b.coefficients(0).unwrap(), &[1.0]);
        for j in 1..=8 {
            let cj = b.coefficients(j).unwrap();
            let prev = b.coefficients(j - 1).unwrap();
            for k in 1..cj.len() {
                let d = cj[k] * k as f64;
                assert!((d - j as f64 * prev[k - 1]).abs() < 1e-13);
            }
            let integral: f64 = cj.iter().enumerate().map(|(k, c)| c / (k + 1) as f64).sum();
            assert!(integral.abs() < 1e-14, "∫B_{j} = {integral}");
        }
    }

    #[test]
    fn null_space_monomials() {
        let g = Grid::uniform(11).unwrap();
        let k2 = SobolevKernel::new(2).unwrap();
        let basis = k2.null_space_basis(&g);
        assert_eq!(basis.len(), 2);
        assert!(basis[0].values().iter().all(|&v| v == 1.0));
        assert_eq!(basis[1].values(), g.points());
        assert_eq!(SobolevKernel::new(1).unwrap().null_space_basis(&g).len(), 1);
    }

    #[test]
    fn null_space_gram_nonsingular() {
        let g = Grid::uniform(5).unwrap();
        for m in 1..=4 {
            let k = SobolevKernel::new(m).unwrap();
            let basis = k.null_space_basis(&g);
            let gram = DMatrix::from_fn(m, m, |i, j| inner_product(&basis[i], &basis[j]).unwrap());
            assert!(gram.determinant().abs() > 1e-10, "m={m}");
        }
    }

    #[test]
    fn kernel_symmetry_is_exact() {
        let k = SobolevKernel::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (s, t): (f64, f64) = (rng.random(), rng.random());
            assert_eq!(k.eval(s, t).unwrap(), k.eval(t, s).unwrap());
        }
    }

    #[test]
    fn kernel_closed_form_values() {
        let k2 = SobolevKernel::new(2).unwrap();
        let b2 = bernoulli_oracle(2, 0.0);
        let b4 = bernoulli_oracle(4, 0.0);
        let expected = 0.25 * b2 * b2 - b4 / 24.0;
        assert!((expected - 1.0 / 120.0).abs() < 1e-15);
        assert!((k2.eval(0.0, 0.0).unwrap() - expected).abs() < 1e-15);

        let k1 = SobolevKernel::new(1).unwrap();
        let expected = bernoulli_oracle(1, 0.5).powi(2) + bernoulli_oracle(2, 0.0) / 2.0;
        assert!((expected - 1.0 / 12.0).abs() < 1e-15);
        assert!((k1.eval(0.5, 0.5).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_outside_unit_interval() {
        let k = SobolevKernel::new(2).unwrap();
        assert!(k.eval(-0.1, 0.5).is_err());
        assert!(k.eval(0.5, 1.1).is_err());
        assert!(SobolevKernel::new(0).is_err());
        assert!(SobolevKernel::new(5).is_err());
    }

    #[test]
    fn zeroth_partial_is_kernel() {
        let k = SobolevKernel::new(3).unwrap();
        for &(s, t) in &[(0.1, 0.7), (0.5, 0.5), (0.9, 0.2)] {
            assert_eq!(k.partial_t(s, t, 0).unwrap(), k.eval(s, t).unwrap());
        }
    }

    #[test]
    fn first_partial_on_diagonal() {
        let k = SobolevKernel::new(2).unwrap();
        let h = 1e-6;
        for &s in &[0.2, 0.5, 0.8] {
            let right = (k.eval(s, s + h).unwrap() - k.eval(s, s).unwrap()) / h;
            let left = (k.eval(s, s).unwrap() - k.eval(s, s - h).unwrap()) / h;
            assert!((right - left).abs() < 1e-5);
            let d = k.partial_t(s, s, 1).unwrap();
            assert!((d - 0.5 * (left + right)).abs() < 1e-5);
        }
    }

    #[test]
    fn partial_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for m in 2..=4 {
            let k = SobolevKernel::new(m).unwrap();
            for _ in 0..100 {
                let s: f64 = rng.random_range(0.01..0.99);
                let t: f64 = rng.random_range(0.01..0.99);
                let fd = (k.eval(s, t + h).unwrap() - k.eval(s, t - h).unwrap()) / (2.0 * h);
                let d = k.partial_t(s, t, 1).unwrap();
                assert!((fd - d).abs() < 1e-6, "m={m} s={s} t={t}: {fd} vs {d}");
            }
        }
        // second derivative for m = 3
        let k = SobolevKernel::new(3).unwrap();
        let h = 1e-4;
        for _ in 0..50 {
            let s: f64 = rng.random_range(0.01..0.99);
            let t: f64 = rng.random_range(0.01..0.99);
            let fd = (k.partial_t(s, t + h, 1).unwrap() - k.partial_t(s, t - h, 1).unwrap()) / (2.0 * h);
            assert!((fd - k.partial_t(s, t, 2).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn unsupported_derivative_orders() {
        let k1 = SobolevKernel::new(1).unwrap();
        assert!(matches!(
            k1.partial_t(0.2, 0.3, 1),
            Err(FlrError::UnsupportedDerivativeOrder { q: 1, order: 1 })
        ));
        let k2 = SobolevKernel::new(2).unwrap();
        assert!(k2.partial_t(0.2, 0.3, 2).is_err());
    }

    #[test]
    fn apply_zero_linear_and_constant() {
        let g = Grid::uniform(201).unwrap();
        let k = SobolevKernel::new(2).unwrap();
        let zero = Curve::zeros(&g);
        assert_eq!(k.apply(&zero, 0.3).unwrap(), 0.0);

        let f = Curve::from_fn(&g, |t| (5.0 * t).sin());
        let h = Curve::from_fn(&g, |t| t * t - 0.2);
        let combo = f.combine(2.5, &h, -1.5).unwrap();
        for &t in &[0.0, 0.37, 1.0] {
            let lhs = k.apply(&combo, t).unwrap();
            let rhs = 2.5 * k.apply(&f, t).unwrap() - 1.5 * k.apply(&h, t).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }

        // ∫K(0,s)ds = B_2(0)·∫B_2/4 − ∫B_4/24 = 0.
        let one = Curve::from_fn(&g, |_| 1.0);
        assert!(k.apply(&one, 0.0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn gram_is_psd() {
        let g = Grid::uniform(41).unwrap();
        for m in 1..=4 {
            let k = SobolevKernel::new(m).unwrap().gram(&g);
            assert_eq!(k, k.transpose());
            let min = k.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "m={m}: min eigenvalue {min}");
        }
    }
}
