//! Exact and approximate Gaussian kernel matrices and their spectral-norm gap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, GaussianKernel};

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 10_000;

/// Symmetric `n x n` kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(pub DMatrix<f64>);

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn spectral_norm(&self) -> f64 {
        power_spectral_norm(&self.0)
    }
}

/// `K_ij = exp(-|x_i - x_j|^2 / c)` over the rows of `x`.
pub fn exact_gaussian_kernel(x: &DMatrix<f64>, kernel: GaussianKernel) -> Result<KernelMatrix> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = kernel.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix(k))
}

/// `K_hat = Z Z^T / m`.
pub fn approx_kernel(z: &FeatureMatrix) -> Result<KernelMatrix> {
    if z.samples() == 0 || z.features() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let zm = z.matrix();
    let mut k = zm * zm.transpose();
    k /= z.features() as f64;
    // The product is symmetric only up to rounding.
    let n = k.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix(k))
}

/// Largest singular value of `a - b`.
pub fn spectral_error(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::DimensionMismatch {
            expected: a.size(),
            actual: b.size(),
        });
    }
    Ok(power_spectral_norm(&(&a.0 - &b.0)))
}

/// Power iteration on `E^T E`; the iterate `|E v|` converges to the largest
/// singular value even when `E` has eigenvalues `+s` and `-s`.
pub fn power_spectral_norm(e: &DMatrix<f64>) -> f64 {
    let n = e.ncols();
    if n == 0 || e.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // Deterministic start, with a ramp so it is not orthogonal to simple
    // eigenvectors such as the all-ones vector's complement.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v.normalize_mut();
    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let ev = e * &v;
        let next_sigma = ev.norm();
        if next_sigma == 0.0 {
            return 0.0;
        }
        let mut w = e.transpose() * ev;
        let wn = w.norm();
        if wn == 0.0 {
            return next_sigma;
        }
        w /= wn;
        v = w;
        if (next_sigma - sigma).abs() <= POWER_TOL * next_sigma {
            return next_sigma;
        }
        sigma = next_sigma;
    }
    sigma
}

/// Closed-form upper bound on `E |K_hat - K|` for `n` points and `m` features:
///
/// ```text
/// sqrt(2) n (m+1) ln n / (m (m-1))
///   + 4 sqrt(2) n^2 (m+1)^2 / (m (m-1)^2)
///   + sqrt(6 n^2 ln n / m + 12 n^3 (m+1) / (m (m-1)))
/// ```
pub fn expected_error_bound(n: usize, m: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::param("n", "bound needs at least 2 points"));
    }
    if m < 2 {
        return Err(Error::param(
            "m",
            "bound is undefined for fewer than 2 features",
        ));
    }
    let (n, m) = (n as f64, m as f64);
    let ln_n = n.ln();
    let t1 = std::f64::consts::SQRT_2 * n * (m + 1.0) * ln_n / (m * (m - 1.0));
    let t2 = 4.0 * std::f64::consts::SQRT_2 * n * n * (m + 1.0).powi(2) / (m * (m - 1.0).powi(2));
    let t3 = (6.0 * n * n * ln_n / m + 12.0 * n.powi(3) * (m + 1.0) / (m * (m - 1.0))).sqrt();
    Ok(t1 + t2 + t3)
}

/// Median of pairwise squared distances over an evenly strided subsample of
/// at most `cap` rows. Deterministic given `x`.
pub fn median_heuristic_width(x: &DMatrix<f64>, cap: usize) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let take = n.min(cap.max(2));
    let rows: Vec<Vec<f64>> = (0..take)
        .map(|k| x.row(k * n / take).iter().copied().collect())
        .collect();
    let mut d2 = Vec::with_capacity(take * (take - 1) / 2);
    for i in 0..take {
        for j in (i + 1)..take {
            d2.push(
                rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
    }
    d2.sort_by(f64::total_cmp);
    let mid = d2.len() / 2;
    let med = if d2.len() % 2 == 0 {
        0.5 * (d2[mid - 1] + d2[mid])
    } else {
        d2[mid]
    };
    if med <= 0.0 {
        return Err(Error::Numeric("median pairwise distance is zero".into()));
    }
    Ok(med)
}
