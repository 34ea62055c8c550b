//! Dense linear-algebra helpers shared by the estimator and the operator code.

use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
///
/// Eigenvector `k` is column `k` of the returned matrix.
pub fn sorted_symmetric_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Cyclic Jacobi eigensolver for symmetric matrices, sorted descending.
///
/// Rotations are skipped once `|a_pq| ≤ ε·sqrt(|a_pp a_qq|)`, which gives
/// eigenvalues with small *relative* error for graded positive definite
/// matrices `D A D` where a QR-based solver only bounds the absolute error.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    assert!(a.is_square());
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let eps = f64::EPSILON;

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                if apq.abs() <= eps * (app.abs() * aqq.abs()).sqrt() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let g = a[(r, p)];
                        let h = a[(r, q)];
                        let rp = c * g - s * h;
                        let rq = s * g + c * h;
                        a[(r, p)] = rp;
                        a[(p, r)] = rp;
                        a[(r, q)] = rq;
                        a[(q, r)] = rq;
                    }
                }
                for r in 0..n {
                    let g = v[(r, p)];
                    let h = v[(r, q)];
                    v[(r, p)] = c * g - s * h;
                    v[(r, q)] = s * g + c * h;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Ordinary least-squares line `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `NaN` with fewer than three points.
    pub slope_stderr: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Slope of `log(values[k-1])` against `log k` over the 1-based window `[k_lo, k_hi]`.
pub fn log_log_slope(values: &[f64], k_lo: usize, k_hi: usize) -> f64 {
    let ks: Vec<f64> = (k_lo..=k_hi).map(|k| (k as f64).ln()).collect();
    let vs: Vec<f64> = (k_lo..=k_hi).map(|k| values[k - 1].ln()).collect();
    fit_line(&ks, &vs).slope
}
